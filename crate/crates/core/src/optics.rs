//! Measurement-rate design space and first-order optical layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sensor readout in bursts: `frames` exposures of `frame_period` seconds,
/// then `cooldown` seconds of dead time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstTiming {
    pub frames: usize,
    pub frame_period: f64,
    pub cooldown: f64,
}

/// Sensor and DMD rates of a spatial-multiplexing camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    /// Sensor pixel count `F`.
    pub sensor_pixels: usize,
    /// DMD pattern switching rate in Hz.
    pub dmd_rate: f64,
    /// Readout converter rate in samples/s.
    pub adc_rate: f64,
    pub dmd_cols: usize,
    pub dmd_rows: usize,
    pub burst: Option<BurstTiming>,
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            name,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sensor_pixels == 0 {
            return Err(Error::invalid("sensor_pixels", "must be positive"));
        }
        if self.dmd_cols == 0 || self.dmd_rows == 0 {
            return Err(Error::invalid("dmd resolution", "must be positive"));
        }
        positive("dmd_rate", self.dmd_rate)?;
        positive("adc_rate", self.adc_rate)?;
        if let Some(b) = &self.burst {
            if b.frames == 0 {
                return Err(Error::invalid("burst_frames", "must be positive"));
            }
            positive("frame_period", b.frame_period)?;
            if !(b.cooldown.is_finite() && b.cooldown >= 0.0) {
                return Err(Error::invalid("cooldown", "must be non-negative"));
            }
        }
        Ok(())
    }

    /// LiSens prototype: 1024-pixel line sensor read in bursts of 100 frames
    /// of 500 µs followed by 60 ms of cool-down, 1024×768 DMD at 20 kHz.
    pub fn paper_lisens() -> Self {
        CameraConfig {
            sensor_pixels: 1024,
            dmd_rate: 20e3,
            adc_rate: 10e6,
            dmd_cols: 1024,
            dmd_rows: 768,
            burst: Some(BurstTiming {
                frames: 100,
                frame_period: 500e-6,
                cooldown: 60e-3,
            }),
        }
    }

    /// Single-pixel camera on the same 20 kHz DMD.
    pub fn paper_spc() -> Self {
        CameraConfig {
            sensor_pixels: 1,
            dmd_rate: 20e3,
            adc_rate: 10e6,
            dmd_cols: 1024,
            dmd_rows: 768,
            burst: None,
        }
    }

    /// DMD at 10 kHz, ADC at 10 MHz, 1000-pixel sensor.
    pub fn case_study() -> Self {
        CameraConfig {
            sensor_pixels: 1000,
            dmd_rate: 1e4,
            adc_rate: 1e7,
            dmd_cols: 1024,
            dmd_rows: 768,
            burst: None,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper-lisens" => Some(Self::paper_lisens()),
            "paper-spc" => Some(Self::paper_spc()),
            "case-study" => Some(Self::case_study()),
            _ => None,
        }
    }

    pub fn with_sensor_pixels(mut self, f: usize) -> Self {
        self.sensor_pixels = f;
        self
    }

    /// Sensor frames (= DMD patterns) per second without burst limits.
    pub fn pattern_rate(&self) -> f64 {
        self.dmd_rate.min(self.adc_rate / self.sensor_pixels as f64)
    }

    /// Measurements per second actually delivered: the burst-limited rate
    /// when burst timing is present, the ideal rate otherwise.
    pub fn effective_rate(&self) -> f64 {
        match burst_rate(self) {
            Ok(b) => b.measurements_per_second,
            Err(_) => measurement_rate(self),
        }
    }

    /// Sensor frames per second actually delivered.
    pub fn effective_frame_rate(&self) -> f64 {
        match burst_rate(self) {
            Ok(b) => b.frames_per_second,
            Err(_) => self.pattern_rate(),
        }
    }

    /// Acquisition time of each of `count` consecutive patterns.
    ///
    /// Without burst timing patterns are spaced by `1/pattern_rate`. With it,
    /// frames inside a burst are `frame_period` apart and consecutive bursts
    /// are separated by an extra `cooldown`.
    pub fn timestamps(&self, count: usize) -> Vec<f64> {
        match &self.burst {
            Some(b) => {
                let cycle = b.frames as f64 * b.frame_period + b.cooldown;
                (0..count)
                    .map(|t| {
                        let (burst, frame) = (t / b.frames, t % b.frames);
                        burst as f64 * cycle + frame as f64 * b.frame_period
                    })
                    .collect()
            }
            None => {
                let dt = 1.0 / self.pattern_rate();
                (0..count).map(|t| t as f64 * dt).collect()
            }
        }
    }
}

/// `F · min(R_DMD, R_ADC / F)` measurements per second.
pub fn measurement_rate(config: &CameraConfig) -> f64 {
    let f = config.sensor_pixels as f64;
    f * config.dmd_rate.min(config.adc_rate / f)
}

/// Smallest pixel count at which the measurement rate saturates,
/// `⌈R_ADC / R_DMD⌉` (at least one pixel).
pub fn f_min(config: &CameraConfig) -> u64 {
    let ratio = config.adc_rate / config.dmd_rate;
    // Guard against 1000.0000000000001 style round-off above an integer.
    let nearest = ratio.round();
    let ceil = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        ratio.ceil()
    };
    (ceil as u64).max(1)
}

/// Measurement rate over a set of pixel counts, for design-space plots.
pub fn rate_curve(config: &CameraConfig, pixel_counts: &[usize]) -> Vec<(usize, f64)> {
    pixel_counts
        .iter()
        .map(|&f| (f, measurement_rate(&config.with_sensor_pixels(f))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstRate {
    pub frames_per_second: f64,
    pub measurements_per_second: f64,
}

/// Sustained frame and measurement rates under burst readout.
pub fn burst_rate(config: &CameraConfig) -> Result<BurstRate> {
    let b = config.burst.ok_or(Error::MissingTiming)?;
    let fps = b.frames as f64 / (b.frames as f64 * b.frame_period + b.cooldown);
    Ok(BurstRate {
        frames_per_second: fps,
        measurements_per_second: config.sensor_pixels as f64 * fps,
    })
}

/// Cylindrical lens that focuses the relay aperture onto the line sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylindricalDesign {
    /// `2 f_r · h_L d_r / (d_r + h_L)²`
    pub focal_exact: f64,
    /// `2 f_r · h_L / d_r`
    pub focal_approx: f64,
    /// Distance from the lens to the sensor.
    pub u_c: f64,
    /// Distance from the lens to the relay lens.
    pub v_c: f64,
}

/// Solve `u + v = 2 f_r`, `1/u + 1/v = 1/f_c`, `u/v = h_L/d_r` for the
/// cylindrical lens. All lengths share one unit (mm by convention).
pub fn design_cylindrical(f_r: f64, d_r: f64, h_l: f64) -> Result<CylindricalDesign> {
    positive("f_r", f_r)?;
    positive("d_r", d_r)?;
    positive("h_L", h_l)?;
    let sum = d_r + h_l;
    let u_c = 2.0 * f_r * h_l / sum;
    let v_c = 2.0 * f_r * d_r / sum;
    Ok(CylindricalDesign {
        focal_exact: 2.0 * f_r * (h_l / sum) * (d_r / sum),
        focal_approx: 2.0 * f_r * h_l / d_r,
        u_c,
        v_c,
    })
}

/// Relay magnification mapping a DMD of width `w_d` onto a sensor of width `w_l`.
pub fn relay_magnification(w_d: f64, w_l: f64) -> Result<f64> {
    positive("w_D", w_d)?;
    positive("w_L", w_l)?;
    Ok(w_l / w_d)
}

/// Physical layout from the DMD through the relay to the line sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalDesign {
    pub w_d: f64,
    pub h_d: f64,
    pub w_l: f64,
    pub h_l: f64,
    pub f_r: f64,
    pub d_r: f64,
    pub f_c: f64,
    pub u_c: f64,
    pub v_c: f64,
}

impl OpticalDesign {
    /// Complete a layout by solving for the cylindrical lens (exact form).
    pub fn solve(w_d: f64, h_d: f64, w_l: f64, h_l: f64, f_r: f64, d_r: f64) -> Result<Self> {
        positive("w_D", w_d)?;
        positive("h_D", h_d)?;
        positive("w_L", w_l)?;
        let cyl = design_cylindrical(f_r, d_r, h_l)?;
        Ok(OpticalDesign {
            w_d,
            h_d,
            w_l,
            h_l,
            f_r,
            d_r,
            f_c: cyl.focal_exact,
            u_c: cyl.u_c,
            v_c: cyl.v_c,
        })
    }

    pub fn magnification(&self) -> f64 {
        self.w_l / self.w_d
    }

    /// Largest relative violation among the three placement constraints.
    pub fn constraint_error(&self) -> f64 {
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        let spacing = rel(self.u_c + self.v_c, 2.0 * self.f_r);
        let thin_lens = rel(1.0 / self.u_c + 1.0 / self.v_c, 1.0 / self.f_c);
        let ratio = rel(self.u_c / self.v_c, self.h_l / self.d_r);
        spacing.max(thin_lens).max(ratio)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_D", self.w_d),
            ("h_D", self.h_d),
            ("w_L", self.w_l),
            ("h_L", self.h_l),
            ("f_r", self.f_r),
            ("d_r", self.d_r),
            ("f_c", self.f_c),
            ("u_c", self.u_c),
            ("v_c", self.v_c),
        ] {
            positive(name, v)?;
        }
        let err = self.constraint_error();
        if err > 1e-9 {
            return Err(Error::invalid(
                "optical design",
                format!("placement constraints violated by {err:.3e} (relative)"),
            ));
        }
        Ok(())
    }
}
