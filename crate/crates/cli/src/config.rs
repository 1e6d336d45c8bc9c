//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comments start with '#'
//! include = common.conf     # relative to the including file
//! preset = paper-lisens     # camera preset, see below
//! camera = lisens
//! scene = phantom:ellipses
//! duration = 0.0352
//! ```
//!
//! Later assignments override earlier ones; an `include` is expanded in
//! place. `preset = NAME` loads `NAME.conf` from the preset directory
//! (`$SMCAM_PRESET_DIR`) when present, otherwise one of the built-in camera
//! presets `paper-lisens`, `paper-spc` or `case-study`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use smcam::codes::RowOrder;
use smcam::metrics::{CameraModel, Reference};
use smcam::optics::{BurstTiming, CameraConfig};
use smcam::recovery::{RecoveryParams, TvWeights};

pub const PRESET_DIR_ENV: &str = "SMCAM_PRESET_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {reason}")]
    Syntax {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("include cycle through {0}")]
    IncludeCycle(PathBuf),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

type Result<T> = std::result::Result<T, ConfigError>;

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Raw assignments in resolution order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut raw = RawConfig::default();
        raw.merge_file(path, &mut HashSet::new())?;
        Ok(raw)
    }

    pub fn parse_str(text: &str, origin: &str, base: &Path) -> Result<Self> {
        let mut raw = RawConfig::default();
        raw.merge_text(text, origin, base, &mut HashSet::new())?;
        Ok(raw)
    }

    fn merge_file(&mut self, path: &Path, stack: &mut HashSet<PathBuf>) -> Result<()> {
        let canonical = path.canonicalize().map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if !stack.insert(canonical.clone()) {
            return Err(ConfigError::IncludeCycle(canonical));
        }
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        self.merge_text(&text, &path.display().to_string(), base, stack)?;
        stack.remove(&canonical);
        Ok(())
    }

    fn merge_text(
        &mut self,
        text: &str,
        origin: &str,
        base: &Path,
        stack: &mut HashSet<PathBuf>,
    ) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: origin.to_string(),
                line: n + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    path: origin.to_string(),
                    line: n + 1,
                    reason: "empty key".into(),
                });
            }
            match key {
                "include" => self.merge_file(&base.join(value), stack)?,
                "preset" => {
                    self.apply_preset(value, stack)?;
                    self.set("preset", value);
                }
                _ => self.set(key, value),
            }
        }
        Ok(())
    }

    /// Expand a camera preset, preferring a file in the preset directory.
    pub fn apply_preset(&mut self, name: &str, stack: &mut HashSet<PathBuf>) -> Result<()> {
        if let Some(dir) = std::env::var_os(PRESET_DIR_ENV) {
            let file = Path::new(&dir).join(format!("{name}.conf"));
            if file.is_file() {
                return self.merge_file(&file, stack);
            }
        }
        let camera = CameraConfig::preset(name)
            .ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
        for (k, v) in camera_assignments(&camera) {
            self.set(k, v);
        }
        if name == "paper-spc" {
            self.set("camera", "spc");
        } else if name == "paper-lisens" {
            self.set("camera", "lisens");
        }
        Ok(())
    }
}

fn camera_assignments(c: &CameraConfig) -> Vec<(&'static str, String)> {
    let mut out = vec![
        ("sensor_pixels", c.sensor_pixels.to_string()),
        ("dmd_rate", c.dmd_rate.to_string()),
        ("adc_rate", c.adc_rate.to_string()),
        ("dmd_cols", c.dmd_cols.to_string()),
        ("dmd_rows", c.dmd_rows.to_string()),
    ];
    match c.burst {
        Some(b) => {
            out.push(("burst_frames", b.frames.to_string()));
            out.push(("burst_frame_period", b.frame_period.to_string()));
            out.push(("burst_cooldown", b.cooldown.to_string()));
        }
        None => out.push(("burst_frames", "0".into())),
    }
    out
}

/// Where the scene comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    /// Built-in still phantom (`phantom:NAME`).
    Phantom(String),
    /// Built-in translating square (`square`).
    Square,
    /// `.smcf` container, `.pgm` file or a directory of `.pgm` frames.
    File(PathBuf),
}

impl fmt::Display for SceneSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SceneSource::Phantom(name) => write!(f, "phantom:{name}"),
            SceneSource::Square => write!(f, "square"),
            SceneSource::File(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    Absolute(f64),
    /// Fraction of the mean noiseless measurement magnitude.
    Relative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Tv,
    Pinv,
}

impl Solver {
    pub fn as_str(self) -> &'static str {
        match self {
            Solver::Tv => "tv",
            Solver::Pinv => "pinv",
        }
    }
}

/// Capture length, given directly or through a target under-sampling ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Capture {
    Duration(f64),
    UnderSampling(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scene: SceneSource,
    pub scene_rows: usize,
    pub scene_cols: usize,
    pub scene_frames: usize,
    /// Scene frames per second; `None` spreads the frames over the capture.
    pub scene_fps: Option<f64>,
    pub square_size: usize,
    /// Square motion per frame, `(down, right)` pixels.
    pub square_velocity: (usize, usize),
    pub camera: CameraModel,
    pub preset: Option<String>,
    pub camera_config: CameraConfig,
    pub capture: Capture,
    /// Recovered frames `Q`.
    pub frames: usize,
    pub schedule_seed: u64,
    pub mean_track_period: Option<usize>,
    pub row_order: RowOrder,
    pub noise: Noise,
    pub solver: Solver,
    /// `None` derives the radius from the noise level.
    pub epsilon: Option<f64>,
    pub recovery: RecoveryParams,
    /// `None` filters when at least three frames are recovered.
    pub median: Option<bool>,
    pub reference: Reference,
    pub out: PathBuf,
    pub seed: u64,
}

const KEYS: &[&str] = &[
    "preset",
    "scene",
    "scene_rows",
    "scene_cols",
    "scene_frames",
    "scene_fps",
    "square_size",
    "square_dy",
    "square_dx",
    "camera",
    "sensor_pixels",
    "dmd_rate",
    "adc_rate",
    "dmd_cols",
    "dmd_rows",
    "burst_frames",
    "burst_frame_period",
    "burst_cooldown",
    "duration",
    "under_sampling",
    "frames",
    "schedule_seed",
    "mean_track_period",
    "row_order",
    "noise_sigma",
    "noise_relative",
    "solver",
    "epsilon",
    "max_iterations",
    "tolerance",
    "tv_spatial",
    "tv_temporal",
    "include_mean_track",
    "median",
    "reference",
    "out",
    "seed",
];

fn parse<T: FromStr>(raw: &RawConfig, key: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    raw.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|e| invalid(key, format!("`{v}`: {e}")))
        })
        .transpose()
}

fn parse_or<T: FromStr>(raw: &RawConfig, key: &str, default: T) -> Result<T>
where
    T::Err: fmt::Display,
{
    Ok(parse(raw, key)?.unwrap_or(default))
}

fn auto_or<T: FromStr>(raw: &RawConfig, key: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    match raw.get(key) {
        None | Some("auto") => Ok(None),
        Some(_) => parse(raw, key),
    }
}

impl ExperimentConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        if let Some((k, _)) = raw.iter().find(|(k, _)| !KEYS.contains(k)) {
            return Err(ConfigError::UnknownKey(k.to_string()));
        }
        let scene = match raw.get("scene") {
            None => return Err(invalid("scene", "missing")),
            Some("square") => SceneSource::Square,
            Some(v) => match v.strip_prefix("phantom:") {
                Some(name) => SceneSource::Phantom(name.to_string()),
                None => SceneSource::File(PathBuf::from(v)),
            },
        };
        let camera: CameraModel =
            parse(raw, "camera")?.ok_or_else(|| invalid("camera", "missing"))?;

        let base = match raw.get("preset") {
            Some(name) => CameraConfig::preset(name).unwrap_or_else(CameraConfig::case_study),
            None => CameraConfig::case_study(),
        };
        let burst_frames = parse_or(raw, "burst_frames", base.burst.map_or(0, |b| b.frames))?;
        let burst = if burst_frames == 0 {
            None
        } else {
            let b = base.burst.unwrap_or(BurstTiming {
                frames: burst_frames,
                frame_period: 0.0,
                cooldown: 0.0,
            });
            Some(BurstTiming {
                frames: burst_frames,
                frame_period: parse(raw, "burst_frame_period")?
                    .or((b.frame_period > 0.0).then_some(b.frame_period))
                    .ok_or_else(|| invalid("burst_frame_period", "required with burst_frames"))?,
                cooldown: parse_or(raw, "burst_cooldown", b.cooldown)?,
            })
        };
        let camera_config = CameraConfig {
            sensor_pixels: parse_or(raw, "sensor_pixels", base.sensor_pixels)?,
            dmd_rate: parse_or(raw, "dmd_rate", base.dmd_rate)?,
            adc_rate: parse_or(raw, "adc_rate", base.adc_rate)?,
            dmd_cols: parse_or(raw, "dmd_cols", base.dmd_cols)?,
            dmd_rows: parse_or(raw, "dmd_rows", base.dmd_rows)?,
            burst,
        };
        camera_config
            .validate()
            .map_err(|e| invalid("camera", e.to_string()))?;

        let capture = match (
            parse::<f64>(raw, "duration")?,
            parse::<f64>(raw, "under_sampling")?,
        ) {
            (Some(_), Some(_)) => {
                return Err(invalid(
                    "duration",
                    "give either duration or under_sampling, not both",
                ))
            }
            (Some(d), None) if d.is_finite() && d > 0.0 => Capture::Duration(d),
            (Some(d), None) => {
                return Err(invalid("duration", format!("must be positive, got {d}")))
            }
            (None, Some(u)) if u.is_finite() && u > 0.0 => Capture::UnderSampling(u),
            (None, Some(u)) => {
                return Err(invalid(
                    "under_sampling",
                    format!("must be positive, got {u}"),
                ))
            }
            (None, None) => return Err(invalid("duration", "missing (or give under_sampling)")),
        };

        let noise = match (
            parse::<f64>(raw, "noise_sigma")?,
            parse::<f64>(raw, "noise_relative")?,
        ) {
            (Some(_), Some(_)) => {
                return Err(invalid(
                    "noise_sigma",
                    "give either noise_sigma or noise_relative",
                ))
            }
            (Some(s), None) => Noise::Absolute(s),
            (None, Some(r)) => Noise::Relative(r),
            (None, None) => Noise::Absolute(0.0),
        };
        match noise {
            Noise::Absolute(v) | Noise::Relative(v) if !(v.is_finite() && v >= 0.0) => {
                return Err(invalid("noise", format!("must be non-negative, got {v}")))
            }
            _ => {}
        }

        let solver = match raw.get("solver").unwrap_or("tv") {
            "tv" => Solver::Tv,
            "pinv" => Solver::Pinv,
            other => {
                return Err(invalid(
                    "solver",
                    format!("expected `tv` or `pinv`, got `{other}`"),
                ))
            }
        };
        let defaults = RecoveryParams::default();
        let recovery = RecoveryParams {
            epsilon: 0.0,
            max_iterations: parse_or(raw, "max_iterations", defaults.max_iterations)?,
            tolerance: parse_or(raw, "tolerance", defaults.tolerance)?,
            tv_weights: TvWeights {
                spatial: parse_or(raw, "tv_spatial", defaults.tv_weights.spatial)?,
                temporal: parse_or(raw, "tv_temporal", defaults.tv_weights.temporal)?,
            },
            include_mean_track: parse_or(raw, "include_mean_track", defaults.include_mean_track)?,
        };
        recovery
            .validate()
            .map_err(|e| invalid("recovery", e.to_string()))?;
        let epsilon = auto_or::<f64>(raw, "epsilon")?;
        if let Some(e) = epsilon {
            if !(e.is_finite() && e >= 0.0) {
                return Err(invalid("epsilon", format!("must be non-negative, got {e}")));
            }
        }

        let seed = parse_or(raw, "seed", 0u64)?;
        let scene_cols = parse_or(raw, "scene_cols", 64usize)?;
        let frames = parse_or(raw, "frames", 1usize)?;
        if frames == 0 {
            return Err(invalid("frames", "must be positive"));
        }
        let scene_fps = auto_or::<f64>(raw, "scene_fps")?;
        if let Some(f) = scene_fps {
            if !(f.is_finite() && f > 0.0) {
                return Err(invalid("scene_fps", format!("must be positive, got {f}")));
            }
        }
        let mean_track_period = match parse_or(raw, "mean_track_period", 0usize)? {
            0 => None,
            p => Some(p),
        };

        Ok(ExperimentConfig {
            scene,
            scene_rows: parse_or(raw, "scene_rows", 64)?,
            scene_cols,
            scene_frames: parse_or(raw, "scene_frames", 16)?,
            scene_fps,
            square_size: parse_or(raw, "square_size", scene_cols / 4)?,
            square_velocity: (
                parse_or(raw, "square_dy", 0)?,
                parse_or(raw, "square_dx", 1)?,
            ),
            camera,
            preset: raw.get("preset").map(str::to_string),
            camera_config,
            capture,
            frames,
            schedule_seed: parse_or(raw, "schedule_seed", seed)?,
            mean_track_period,
            row_order: parse_or(raw, "row_order", RowOrder::Shuffled)?,
            noise,
            solver,
            epsilon,
            recovery,
            median: auto_or(raw, "median")?,
            reference: parse_or(raw, "reference", Reference::Scene)?,
            out: PathBuf::from(raw.get("out").unwrap_or("out")),
            seed,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_raw(&RawConfig::load(path)?)
    }

    /// Every setting as `key = value` lines; loading the text back yields
    /// the same configuration.
    pub fn to_text(&self) -> String {
        let mut lines: Vec<(String, String)> = vec![
            ("scene".into(), self.scene.to_string()),
            ("scene_rows".into(), self.scene_rows.to_string()),
            ("scene_cols".into(), self.scene_cols.to_string()),
            ("scene_frames".into(), self.scene_frames.to_string()),
            (
                "scene_fps".into(),
                self.scene_fps.map_or("auto".into(), |f| f.to_string()),
            ),
            ("square_size".into(), self.square_size.to_string()),
            ("square_dy".into(), self.square_velocity.0.to_string()),
            ("square_dx".into(), self.square_velocity.1.to_string()),
            ("camera".into(), self.camera.as_str().into()),
        ];
        for (k, v) in camera_assignments(&self.camera_config) {
            lines.push((k.into(), v));
        }
        lines.push(match self.capture {
            Capture::Duration(d) => ("duration".into(), d.to_string()),
            Capture::UnderSampling(u) => ("under_sampling".into(), u.to_string()),
        });
        lines.push(("frames".into(), self.frames.to_string()));
        lines.push(("schedule_seed".into(), self.schedule_seed.to_string()));
        lines.push((
            "mean_track_period".into(),
            self.mean_track_period.unwrap_or(0).to_string(),
        ));
        lines.push(("row_order".into(), self.row_order.as_str().into()));
        lines.push(match self.noise {
            Noise::Absolute(s) => ("noise_sigma".into(), s.to_string()),
            Noise::Relative(r) => ("noise_relative".into(), r.to_string()),
        });
        lines.push(("solver".into(), self.solver.as_str().into()));
        lines.push((
            "epsilon".into(),
            self.epsilon.map_or("auto".into(), |e| e.to_string()),
        ));
        lines.push((
            "max_iterations".into(),
            self.recovery.max_iterations.to_string(),
        ));
        lines.push(("tolerance".into(), self.recovery.tolerance.to_string()));
        lines.push((
            "tv_spatial".into(),
            self.recovery.tv_weights.spatial.to_string(),
        ));
        lines.push((
            "tv_temporal".into(),
            self.recovery.tv_weights.temporal.to_string(),
        ));
        lines.push((
            "include_mean_track".into(),
            self.recovery.include_mean_track.to_string(),
        ));
        lines.push((
            "median".into(),
            self.median.map_or("auto".into(), |m| m.to_string()),
        ));
        lines.push(("reference".into(), self.reference.as_str().into()));
        lines.push(("out".into(), self.out.display().to_string()));
        lines.push(("seed".into(), self.seed.to_string()));
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_text(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_raw(&RawConfig::parse_str(text, "test", Path::new("."))?)
    }

    #[test]
    fn builtin_presets() {
        let c =
            parse_text("preset = paper-lisens\nscene = phantom:blocks\nduration = 0.11\n").unwrap();
        assert_eq!(c.camera, CameraModel::Lisens);
        assert_eq!(c.camera_config, CameraConfig::paper_lisens());
        let c =
            parse_text("preset = paper-spc\nscene = phantom:blocks\nduration = 0.11\n").unwrap();
        assert_eq!(c.camera, CameraModel::Spc);
        assert_eq!(c.camera_config, CameraConfig::paper_spc());
    }

    #[test]
    fn later_keys_override() {
        let c = parse_text(
            "preset = paper-lisens\nscene = square\nduration = 1\nsensor_pixels = 64 # binned\n",
        )
        .unwrap();
        assert_eq!(c.camera_config.sensor_pixels, 64);
        assert_eq!(c.scene, SceneSource::Square);
    }

    #[test]
    fn includes_and_cycles() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("a.conf"),
            "include = b.conf\ncamera = spc\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("b.conf"),
            "scene = phantom:ellipses\nduration = 2\ncamera = lisens\n",
        )
        .unwrap();
        let c = ExperimentConfig::load(&dir.path().join("a.conf")).unwrap();
        assert_eq!(c.camera, CameraModel::Spc);
        assert_eq!(c.capture, Capture::Duration(2.0));

        std::fs::write(dir.path().join("b.conf"), "include = a.conf\n").unwrap();
        assert!(matches!(
            RawConfig::load(&dir.path().join("a.conf")),
            Err(ConfigError::IncludeCycle(_))
        ));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            parse_text("scene = square\ncamera = lisens\nduration = 0\n"),
            Err(ConfigError::Invalid { .. })
        ));
        assert!(matches!(
            parse_text("scene = square\ncamera = lisens\nduraton = 1\n"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            parse_text("scene square\n"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_text("preset = nope\n"),
            Err(ConfigError::UnknownPreset(_))
        ));
        assert!(
            parse_text("scene = square\ncamera = lisens\nduration = 1\nunder_sampling = 8\n")
                .is_err()
        );
        assert!(
            parse_text("scene = square\ncamera = lisens\nduration = 1\nnoise_sigma = -1\n")
                .is_err()
        );
    }

    #[test]
    fn text_round_trip() {
        let c = parse_text(
            "preset = paper-lisens\nscene = phantom:ramp\nunder_sampling = 4\nframes = 2\nmean_track_period = 8\nnoise_relative = 0.01\nepsilon = 0.5\nmedian = false\nseed = 3\n",
        )
        .unwrap();
        let back = parse_text(&c.to_text()).unwrap();
        assert_eq!(
            ExperimentConfig {
                preset: None,
                ..c.clone()
            },
            back
        );
    }
}
