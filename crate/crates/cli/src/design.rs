//! `design` subcommand: rate model and optical layout summaries.

use std::fmt::Write;

use smcam::optics::{burst_rate, f_min, measurement_rate, rate_curve, CameraConfig, OpticalDesign};

/// Relay and sensor geometry in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub dmd_width: f64,
    pub dmd_height: f64,
    pub sensor_width: f64,
    pub sensor_height: f64,
    pub relay_focal: f64,
    pub relay_aperture: f64,
}

/// `key = value` summary of a camera's measurement rates.
pub fn rate_summary(camera: &CameraConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "sensor_pixels = {}", camera.sensor_pixels);
    let _ = writeln!(out, "pattern_rate_hz = {}", camera.pattern_rate());
    let _ = writeln!(out, "measurement_rate = {}", measurement_rate(camera));
    let _ = writeln!(out, "f_min = {}", f_min(camera));
    if let Ok(b) = burst_rate(camera) {
        let _ = writeln!(out, "burst_frames_per_second = {:.4}", b.frames_per_second);
        let _ = writeln!(
            out,
            "burst_measurements_per_second = {:.1}",
            b.measurements_per_second
        );
    }
    let mut counts: Vec<usize> = (0..=14).map(|k| 1usize << k).collect();
    counts.push(f_min(camera) as usize);
    counts.sort_unstable();
    counts.dedup();
    for (f, rate) in rate_curve(camera, &counts) {
        let _ = writeln!(out, "rate[F={f}] = {rate}");
    }
    out
}

pub fn optics_summary(g: &Geometry) -> smcam::Result<String> {
    let d = OpticalDesign::solve(
        g.dmd_width,
        g.dmd_height,
        g.sensor_width,
        g.sensor_height,
        g.relay_focal,
        g.relay_aperture,
    )?;
    d.validate()?;
    let approx = 2.0 * g.relay_focal * g.sensor_height / g.relay_aperture;
    let mut out = String::new();
    let _ = writeln!(out, "relay_magnification = {}", d.magnification());
    let _ = writeln!(out, "cylindrical_focal_mm = {}", d.f_c);
    let _ = writeln!(out, "cylindrical_focal_approx_mm = {approx}");
    let _ = writeln!(out, "lens_to_sensor_mm = {}", d.u_c);
    let _ = writeln!(out, "lens_to_relay_mm = {}", d.v_c);
    let _ = writeln!(out, "constraint_error = {:e}", d.constraint_error());
    Ok(out)
}
