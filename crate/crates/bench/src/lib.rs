//! Shared fixtures for the criterion benchmarks.

use smcam::codes::{build_schedule, PatternSchedule};
use smcam::optics::CameraConfig;
use smcam::phantom;
use smcam::simulator::SceneVideo;

/// Still ellipses phantom of size `n × n`.
pub fn still_scene(n: usize) -> SceneVideo {
    SceneVideo::still(phantom::ellipses(n, n).expect("valid size")).expect("non-empty scene")
}

/// Schedule with `n / ratio` codes of length `n`.
pub fn schedule(n: usize, ratio: usize) -> PatternSchedule {
    build_schedule(n, n / ratio, 0, None).expect("valid schedule")
}

/// Line-sensor timing with one pixel per scene row.
pub fn camera(rows: usize) -> CameraConfig {
    CameraConfig::case_study().with_sensor_pixels(rows)
}
