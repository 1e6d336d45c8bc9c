//! Under-sampling ratio, reconstruction SNR and experiment reports.

use std::io::Write;

use ndarray::{ArrayBase, Data, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n1·n2 / m`: image dimensionality over measurement count.
pub fn under_sampling(n1: usize, n2: usize, m: usize) -> Result<f64> {
    if n1 == 0 || n2 == 0 || m == 0 {
        return Err(Error::invalid(
            "under_sampling",
            format!("counts must be positive, got {n1}×{n2} with {m}"),
        ));
    }
    Ok((n1 * n2) as f64 / m as f64)
}

/// Measurements gathered in `duration` seconds at `rate` measurements/s,
/// rounded down.
pub fn measurements_in(duration: f64, rate: f64) -> usize {
    (duration * rate + 1e-9).floor() as usize
}

/// Reconstruction SNR in dB, `−20·log₁₀(‖x_ref − x̂‖ / ‖x_ref‖)`.
///
/// An exact reconstruction yields `+∞`.
pub fn rsnr<S1, S2, D>(x_ref: &ArrayBase<S1, D>, x_hat: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    if x_ref.shape() != x_hat.shape() {
        return Err(Error::mismatch(
            "rsnr",
            format!("{:?}", x_ref.shape()),
            format!("{:?}", x_hat.shape()),
        ));
    }
    let (err, sig) = Zip::from(x_ref)
        .and(x_hat)
        .fold((0.0, 0.0), |(e, s), r, h| {
            (e + (r - h) * (r - h), s + r * r)
        });
    if sig == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(-20.0 * (err.sqrt() / sig.sqrt()).log10())
}

/// `"exact"` for infinite SNR, otherwise two decimals.
pub fn format_db(db: f64) -> String {
    if db.is_infinite() && db > 0.0 {
        "exact".to_string()
    } else {
        format!("{db:.2}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraModel {
    Lisens,
    Spc,
}

impl CameraModel {
    pub fn as_str(self) -> &'static str {
        match self {
            CameraModel::Lisens => "lisens",
            CameraModel::Spc => "spc",
        }
    }
}

impl std::str::FromStr for CameraModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lisens" => Ok(CameraModel::Lisens),
            "spc" => Ok(CameraModel::Spc),
            other => Err(Error::invalid(
                "camera",
                format!("expected `lisens` or `spc`, got `{other}`"),
            )),
        }
    }
}

/// What the RSNR of a run was measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    /// The simulated ground-truth scene.
    Scene,
    /// A Nyquist-rate pseudoinverse reconstruction.
    Nyquist,
}

impl Reference {
    pub fn as_str(self) -> &'static str {
        match self {
            Reference::Scene => "scene",
            Reference::Nyquist => "nyquist",
        }
    }
}

impl std::str::FromStr for Reference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scene" => Ok(Reference::Scene),
            "nyquist" => Ok(Reference::Nyquist),
            other => Err(Error::invalid(
                "reference",
                format!("expected `scene` or `nyquist`, got `{other}`"),
            )),
        }
    }
}

/// One row of an experiment report. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scene_id: String,
    pub camera: CameraModel,
    pub frame: usize,
    pub capture_duration_s: f64,
    pub measurements: usize,
    pub under_sampling: f64,
    pub rsnr_db: String,
    pub reference: Reference,
    pub solver: String,
    pub iterations: usize,
    pub residual: f64,
    pub tv: f64,
    pub converged: bool,
}

impl RunRecord {
    pub fn under_sampling_ok(&self, n1: usize, n2: usize) -> bool {
        self.under_sampling < 1.0 || self.measurements <= n1 * n2
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub records: Vec<RunRecord>,
}

pub const REPORT_COLUMNS: [&str; 13] = [
    "scene_id",
    "camera",
    "frame",
    "capture_duration_s",
    "measurements",
    "under_sampling",
    "rsnr_db",
    "reference",
    "solver",
    "iterations",
    "residual",
    "tv",
    "converged",
];

impl ExperimentReport {
    pub fn push(&mut self, record: RunRecord) {
        self.records.push(record);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        w.write_record(REPORT_COLUMNS)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("report", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let records = rd
            .deserialize()
            .collect::<std::result::Result<Vec<RunRecord>, _>>()?;
        Ok(ExperimentReport { records })
    }

    pub fn all_converged(&self) -> bool {
        self.records.iter().all(|r| r.converged)
    }
}
