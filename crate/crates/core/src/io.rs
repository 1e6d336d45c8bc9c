//! On-disk formats.
//!
//! # Raw float container (`.smcf`)
//!
//! Little-endian throughout:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `SMCF`                            |
//! | 4      | 4    | version, `u32` = 1                      |
//! | 8      | 4    | rows, `u32`                             |
//! | 12     | 4    | cols, `u32`                             |
//! | 16     | 4    | frames, `u32`                           |
//! | 20     | …    | `frames·rows·cols` × `f32`, row-major   |
//!
//! Measurements use `frames = 1`, `rows` = readings per slot, `cols` = slots.
//!
//! # Schedule container (`.smcs`)
//!
//! | offset | size        | field                                       |
//! |--------|-------------|---------------------------------------------|
//! | 0      | 8           | magic `SMCSCHED`                            |
//! | 8      | 2           | version, `u16` = 1                          |
//! | 10     | 1           | row order, 0 = natural, 1 = shuffled        |
//! | 11     | 1           | reserved, 0                                 |
//! | 12     | 4           | order `N`, `u32`                            |
//! | 16     | 4           | count `T`, `u32`                            |
//! | 20     | 8           | seed, `u64`                                 |
//! | 28     | 4           | mean-track period, `u32`, 0 = disabled      |
//! | 32     | 4·N         | column permutation, `u32` each              |
//! | …      | 4·N         | row sequence, `u32` each                    |
//! | …      | T·⌈N/8⌉     | codes, one row per slot, MSB-first bits     |
//!
//! A textual manifest (`key = value` lines) accompanies the binary file.
//!
//! # Measurement sidecar (`.json`)
//!
//! Serialized [`MeasurementMeta`].

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::codes::{PatternSchedule, RowOrder, ScheduleParams};
use crate::error::{Error, Result};
use crate::recovery::TraceRecord;
use crate::simulator::{Acquisition, Coding, MeasurementSet};

const RAW_MAGIC: &[u8; 4] = b"SMCF";
const RAW_VERSION: u32 = 1;
const SCHEDULE_MAGIC: &[u8; 8] = b"SMCSCHED";
const SCHEDULE_VERSION: u16 = 1;

fn format_err(kind: &'static str, path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        kind,
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Little-endian cursor over a byte buffer.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    kind: &'static str,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                format_err(
                    self.kind,
                    self.path,
                    format!("truncated at byte {}", self.pos),
                )
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn encode_raw(volume: &Array3<f64>) -> Vec<u8> {
    let (frames, rows, cols) = volume.dim();
    let mut out = Vec::with_capacity(20 + 4 * volume.len());
    out.extend_from_slice(RAW_MAGIC);
    for v in [RAW_VERSION, rows as u32, cols as u32, frames as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in volume.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<Array3<f64>> {
    let mut c = Cursor {
        buf: bytes,
        pos: 0,
        kind: "raw float",
        path,
    };
    if c.take(4)? != RAW_MAGIC {
        return Err(format_err("raw float", path, "bad magic"));
    }
    let version = c.u32()?;
    if version != RAW_VERSION {
        return Err(format_err(
            "raw float",
            path,
            format!("unsupported version {version}"),
        ));
    }
    let (rows, cols, frames) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
    let n = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(frames))
        .ok_or_else(|| format_err("raw float", path, "dimensions overflow"))?;
    let data = c.take(
        n.checked_mul(4)
            .ok_or_else(|| format_err("raw float", path, "dimensions overflow"))?,
    )?;
    if c.pos != bytes.len() {
        return Err(format_err(
            "raw float",
            path,
            format!("{} trailing bytes", bytes.len() - c.pos),
        ));
    }
    let values: Vec<f64> = data
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(Array3::from_shape_vec((frames, rows, cols), values).expect("size checked"))
}

pub fn write_raw(path: &Path, volume: &Array3<f64>) -> Result<()> {
    write_all(path, &encode_raw(volume))
}

pub fn read_raw(path: &Path) -> Result<Array3<f64>> {
    decode_raw(&read_all(path)?, path)
}

/// Round every value through `f32`, as the raw container does.
pub fn quantize_f32(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v as f32 as f64);
}

/// Read an 8- or 16-bit graymap, scaled to `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<Array2<f64>> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match &img {
        image::DynamicImage::ImageLuma8(g) => {
            g.as_raw().iter().map(|&v| v as f64 / 255.0).collect()
        }
        image::DynamicImage::ImageLuma16(g) => {
            g.as_raw().iter().map(|&v| v as f64 / 65535.0).collect()
        }
        other => {
            return Err(format_err(
                "graymap",
                path,
                format!("not a grayscale image ({:?})", other.color()),
            ))
        }
    };
    Ok(Array2::from_shape_vec((h, w), data).expect("buffer matches dimensions"))
}

/// Write a 16-bit binary graymap (`P5`, maxval 65535, big-endian samples);
/// values are clamped to `[0, 1]`.
pub fn write_pgm16(path: &Path, img: &Array2<f64>) -> Result<()> {
    let (rows, cols) = img.dim();
    let mut bytes = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    bytes.reserve(2 * img.len());
    for &v in img.iter() {
        bytes.extend_from_slice(&((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes());
    }
    write_all(path, &bytes)
}

/// Load a scene from a `.smcf` container, a single graymap, or a directory
/// of graymaps (sorted by file name).
pub fn read_scene_frames(path: &Path) -> Result<Vec<Array2<f64>>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(format_err("scene", path, "directory holds no .pgm files"));
        }
        let frames = files
            .iter()
            .map(|f| read_pgm(f))
            .collect::<Result<Vec<_>>>()?;
        return Ok(frames);
    }
    match path.extension().and_then(|x| x.to_str()) {
        Some("smcf") => Ok(read_raw(path)?.outer_iter().map(|f| f.to_owned()).collect()),
        Some("pgm") => Ok(vec![read_pgm(path)?]),
        _ => Err(format_err(
            "scene",
            path,
            "expected a .smcf file, a .pgm file or a directory",
        )),
    }
}

pub fn encode_schedule(s: &PatternSchedule) -> Vec<u8> {
    let p = s.params();
    let n = p.order;
    let row_bytes = n.div_ceil(8);
    let mut out = Vec::with_capacity(32 + 8 * n + p.count * row_bytes);
    out.extend_from_slice(SCHEDULE_MAGIC);
    out.extend_from_slice(&SCHEDULE_VERSION.to_le_bytes());
    out.push(match p.row_order {
        RowOrder::Natural => 0,
        RowOrder::Shuffled => 1,
    });
    out.push(0);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(p.count as u32).to_le_bytes());
    out.extend_from_slice(&p.seed.to_le_bytes());
    out.extend_from_slice(&(p.mean_track_period.unwrap_or(0) as u32).to_le_bytes());
    for &v in s.permutation().iter().chain(s.row_sequence()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for row in s.patterns().rows() {
        let mut packed = vec![0u8; row_bytes];
        for (j, &b) in row.iter().enumerate() {
            packed[j / 8] |= b << (7 - j % 8);
        }
        out.extend_from_slice(&packed);
    }
    out
}

pub fn decode_schedule(bytes: &[u8], path: &Path) -> Result<PatternSchedule> {
    let kind = "schedule";
    let mut c = Cursor {
        buf: bytes,
        pos: 0,
        kind,
        path,
    };
    if c.take(8)? != SCHEDULE_MAGIC {
        return Err(format_err(kind, path, "bad magic"));
    }
    let version = c.u16()?;
    if version != SCHEDULE_VERSION {
        return Err(format_err(
            kind,
            path,
            format!("unsupported version {version}"),
        ));
    }
    let row_order = match c.take(2)?[0] {
        0 => RowOrder::Natural,
        1 => RowOrder::Shuffled,
        other => return Err(format_err(kind, path, format!("unknown row order {other}"))),
    };
    let order = c.u32()? as usize;
    let count = c.u32()? as usize;
    let seed = c.u64()?;
    let period = match c.u32()? {
        0 => None,
        p => Some(p as usize),
    };
    let params = ScheduleParams {
        order,
        count,
        seed,
        mean_track_period: period,
        row_order,
    };
    params
        .validate()
        .map_err(|e| format_err(kind, path, e.to_string()))?;
    let read_u32s =
        |c: &mut Cursor<'_>| -> Result<Vec<u32>> { (0..order).map(|_| c.u32()).collect() };
    let permutation = read_u32s(&mut c)?;
    let row_sequence = read_u32s(&mut c)?;
    let row_bytes = order.div_ceil(8);
    let mut patterns = Array2::<u8>::zeros((count, order));
    for t in 0..count {
        let packed = c.take(row_bytes)?;
        for j in 0..order {
            patterns[[t, j]] = (packed[j / 8] >> (7 - j % 8)) & 1;
        }
    }
    if c.pos != bytes.len() {
        return Err(format_err(
            kind,
            path,
            format!("{} trailing bytes", bytes.len() - c.pos),
        ));
    }
    PatternSchedule::from_parts(params, &permutation, &row_sequence, &patterns)
        .map_err(|e| format_err(kind, path, e.to_string()))
}

/// `key = value` summary of a schedule.
pub fn schedule_manifest(s: &PatternSchedule) -> String {
    let p = s.params();
    let tracking = s.mean_track_indices();
    format!(
        "format = smcam-schedule\nversion = {SCHEDULE_VERSION}\nid = {}\norder = {}\ncount = {}\nseed = {}\nmean_track_period = {}\nrow_order = {}\nmean_track_slots = {}\n",
        s.id(),
        p.order,
        p.count,
        p.seed,
        p.mean_track_period.unwrap_or(0),
        p.row_order.as_str(),
        tracking.len(),
    )
}

/// Writes `<stem>.smcs` and `<stem>.manifest`.
pub fn write_schedule(stem: &Path, s: &PatternSchedule) -> Result<()> {
    write_all(&stem.with_extension("smcs"), &encode_schedule(s))?;
    write_all(
        &stem.with_extension("manifest"),
        schedule_manifest(s).as_bytes(),
    )
}

pub fn read_schedule(path: &Path) -> Result<PatternSchedule> {
    decode_schedule(&read_all(path)?, path)
}

/// Metadata stored next to a measurement container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementMeta {
    pub format: String,
    pub version: u32,
    pub rows: usize,
    pub count: usize,
    pub timestamps: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub schedule_ref: String,
    pub first_slot: usize,
    pub coding: Coding,
    pub acquisition: Acquisition,
}

/// Writes `<stem>.smcf` (values as `f32`) and `<stem>.json`.
pub fn write_measurements(stem: &Path, m: &MeasurementSet) -> Result<()> {
    let volume = m.values.clone().insert_axis(ndarray::Axis(0));
    write_raw(&stem.with_extension("smcf"), &volume)?;
    let meta = MeasurementMeta {
        format: "smcam-measurements".into(),
        version: 1,
        rows: m.values.nrows(),
        count: m.values.ncols(),
        timestamps: m.timestamps.clone(),
        noise_sigma: m.noise_sigma,
        seed: m.seed,
        schedule_ref: m.schedule_ref.clone(),
        first_slot: m.first_slot,
        coding: m.coding,
        acquisition: m.acquisition,
    };
    let json = serde_json::to_string_pretty(&meta)?;
    write_all(&stem.with_extension("json"), json.as_bytes())
}

pub fn read_measurements(stem: &Path) -> Result<MeasurementSet> {
    let json_path = stem.with_extension("json");
    let meta: MeasurementMeta = serde_json::from_slice(&read_all(&json_path)?)?;
    let raw_path = stem.with_extension("smcf");
    let raw = read_raw(&raw_path)?;
    let (frames, rows, cols) = raw.dim();
    if frames != 1 || rows != meta.rows || cols != meta.count || meta.timestamps.len() != cols {
        return Err(format_err(
            "measurement",
            &raw_path,
            format!(
                "container is {frames}×{rows}×{cols}, sidecar says {}×{}",
                meta.rows, meta.count
            ),
        ));
    }
    Ok(MeasurementSet {
        values: raw.index_axis_move(ndarray::Axis(0), 0),
        timestamps: meta.timestamps,
        noise_sigma: meta.noise_sigma,
        seed: meta.seed,
        schedule_ref: meta.schedule_ref,
        first_slot: meta.first_slot,
        coding: meta.coding,
        acquisition: meta.acquisition,
    })
}

/// Solver trace as `iteration,residual,tv` CSV.
pub fn write_trace_csv<W: Write>(out: W, trace: &[TraceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in trace {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("trace", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::build_schedule;
    use proptest::prelude::*;

    #[test]
    fn raw_layout_is_exact() {
        let v = Array3::from_shape_vec((1, 2, 3), vec![0.0, 1.0, -2.0, 0.5, 3.25, 8.0]).unwrap();
        let bytes = encode_raw(&v);
        assert_eq!(&bytes[..4], b"SMCF");
        assert_eq!(
            &bytes[4..20],
            &[1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0]
        );
        assert_eq!(&bytes[24..28], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 6 * 4);
        assert_eq!(decode_raw(&bytes, Path::new("x")).unwrap(), v);
    }

    #[test]
    fn raw_rejects_corruption() {
        let v = Array3::<f64>::zeros((2, 2, 2));
        let mut bytes = encode_raw(&v);
        assert!(decode_raw(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        bytes[0] = b'X';
        assert!(matches!(
            decode_raw(&bytes, Path::new("x")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Array2::from_shape_fn((5, 7), |(i, j)| (i * 7 + j) as f64 / 34.0);
        let path = dir.path().join("a.pgm");
        write_pgm16(&path, &img).unwrap();
        let head = std::fs::read(&path).unwrap();
        assert_eq!(&head[..2], b"P5");
        let back = read_pgm(&path).unwrap();
        assert!(back
            .iter()
            .zip(img.iter())
            .all(|(a, b)| (a - b).abs() <= 0.5 / 65535.0 + 1e-12));
    }

    #[test]
    fn pgm_8bit_and_directories() {
        let dir = tempfile::tempdir().unwrap();
        for (k, name) in ["f1.pgm", "f0.pgm"].iter().enumerate() {
            let mut bytes = b"P5\n# comment\n3 2\n255\n".to_vec();
            bytes.extend_from_slice(&[0, 51, 255, 102, 153, k as u8]);
            std::fs::write(dir.path().join(name), bytes).unwrap();
        }
        let frames = read_scene_frames(dir.path()).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].dim(), (2, 3));
        assert_eq!(frames[0][[0, 1]], 0.2);
        assert_eq!(frames[0][[1, 2]], 1.0 / 255.0);
        assert_eq!(frames[1][[1, 2]], 0.0);
        assert!(read_scene_frames(&dir.path().join("missing.txt")).is_err());
    }

    #[test]
    fn schedule_container() {
        let dir = tempfile::tempdir().unwrap();
        let s = build_schedule(64, 150, 3, Some(100)).unwrap();
        let stem = dir.path().join("schedule");
        write_schedule(&stem, &s).unwrap();
        let back = read_schedule(&stem.with_extension("smcs")).unwrap();
        assert_eq!(back, s);
        let manifest = std::fs::read_to_string(stem.with_extension("manifest")).unwrap();
        assert!(manifest.contains("mean_track_slots = 2"));

        let mut bytes = encode_schedule(&s);
        assert_eq!(&bytes[..8], b"SMCSCHED");
        assert_eq!(bytes.len(), 32 + 8 * 64 + 150 * 8);
        // Flip one code bit: no longer consistent with the seed.
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert!(decode_schedule(&bytes, Path::new("s")).is_err());
    }

    #[test]
    fn measurement_container() {
        let dir = tempfile::tempdir().unwrap();
        let m = MeasurementSet {
            values: Array2::from_shape_fn((3, 4), |(i, j)| (i + 2 * j) as f64 * 0.1),
            timestamps: vec![0.0, 0.1, 0.2, 0.3],
            noise_sigma: 0.01,
            seed: 9,
            schedule_ref: "hadamard-n4-t4-s0-p0-shuffled".into(),
            first_slot: 0,
            coding: Coding::Binary,
            acquisition: Acquisition::LineSensor,
        };
        let stem = dir.path().join("meas");
        write_measurements(&stem, &m).unwrap();
        let back = read_measurements(&stem).unwrap();
        let mut expect = m.clone();
        quantize_f32(&mut expect.values);
        assert_eq!(back, expect);
    }

    proptest! {
        #[test]
        fn raw_round_trip_is_f32_exact(frames in 1usize..3, rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let mut state = seed;
            let v = Array3::from_shape_fn((frames, rows, cols), |_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            });
            let back = decode_raw(&encode_raw(&v), Path::new("p")).unwrap();
            for (a, b) in back.iter().zip(v.iter()) {
                prop_assert_eq!(*a, *b as f32 as f64);
            }
        }
    }
}
