//! Synthetic scenes with known ground truth.

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::simulator::SceneVideo;

/// Axis-aligned box in fractional coordinates `[0, 1]²`.
#[derive(Debug, Clone, Copy)]
struct Box2 {
    top: f64,
    left: f64,
    bottom: f64,
    right: f64,
    value: f64,
}

fn paint(img: &mut Array2<f64>, b: Box2) {
    let (rows, cols) = img.dim();
    let r0 = (b.top * rows as f64).round() as usize;
    let r1 = ((b.bottom * rows as f64).round() as usize).min(rows);
    let c0 = (b.left * cols as f64).round() as usize;
    let c1 = ((b.right * cols as f64).round() as usize).min(cols);
    for i in r0..r1 {
        for j in c0..c1 {
            img[[i, j]] = b.value;
        }
    }
}

fn check_dim(rows: usize, cols: usize) -> Result<()> {
    if rows < 8 || cols < 8 {
        return Err(Error::invalid(
            "phantom size",
            format!("need at least 8×8, got {rows}×{cols}"),
        ));
    }
    Ok(())
}

/// Piecewise-constant test image of nested and overlapping rectangles.
pub fn blocks(rows: usize, cols: usize) -> Result<Array2<f64>> {
    check_dim(rows, cols)?;
    let mut img = Array2::from_elem((rows, cols), 0.1);
    for b in [
        Box2 {
            top: 0.125,
            left: 0.125,
            bottom: 0.875,
            right: 0.75,
            value: 0.45,
        },
        Box2 {
            top: 0.25,
            left: 0.25,
            bottom: 0.5,
            right: 0.5,
            value: 0.9,
        },
        Box2 {
            top: 0.5625,
            left: 0.1875,
            bottom: 0.8125,
            right: 0.4375,
            value: 0.7,
        },
        Box2 {
            top: 0.3125,
            left: 0.5625,
            bottom: 0.75,
            right: 0.6875,
            value: 0.2,
        },
        Box2 {
            top: 0.0625,
            left: 0.8125,
            bottom: 0.375,
            right: 0.9375,
            value: 0.8,
        },
        Box2 {
            top: 0.625,
            left: 0.8125,
            bottom: 0.9375,
            right: 0.9375,
            value: 0.6,
        },
    ] {
        paint(&mut img, b);
    }
    Ok(img)
}

/// Piecewise-constant image of a few filled ellipses.
pub fn ellipses(rows: usize, cols: usize) -> Result<Array2<f64>> {
    check_dim(rows, cols)?;
    // (center row, center col, semi-axis rows, semi-axis cols, value), fractional.
    let shapes = [
        (0.5, 0.5, 0.42, 0.34, 0.5),
        (0.38, 0.4, 0.12, 0.1, 0.95),
        (0.62, 0.6, 0.14, 0.09, 0.25),
        (0.7, 0.36, 0.06, 0.08, 0.8),
    ];
    let mut img = Array2::from_elem((rows, cols), 0.05);
    for ((i, j), v) in img.indexed_iter_mut() {
        let y = (i as f64 + 0.5) / rows as f64;
        let x = (j as f64 + 0.5) / cols as f64;
        for &(cy, cx, ay, ax, val) in &shapes {
            if ((y - cy) / ay).powi(2) + ((x - cx) / ax).powi(2) <= 1.0 {
                *v = val;
            }
        }
    }
    Ok(img)
}

/// Horizontal bands over a vertical intensity ramp with two bright squares.
/// Not piecewise constant.
pub fn ramp_and_squares(rows: usize, cols: usize) -> Result<Array2<f64>> {
    check_dim(rows, cols)?;
    let mut img = Array2::from_shape_fn((rows, cols), |(i, _)| 0.15 + 0.5 * i as f64 / rows as f64);
    paint(
        &mut img,
        Box2 {
            top: 0.2,
            left: 0.15,
            bottom: 0.45,
            right: 0.4,
            value: 0.95,
        },
    );
    paint(
        &mut img,
        Box2 {
            top: 0.55,
            left: 0.6,
            bottom: 0.85,
            right: 0.85,
            value: 0.05,
        },
    );
    Ok(img)
}

/// Square of side `size` on a flat background, moving `velocity =
/// (down, right)` pixels per frame.
pub fn translating_square(
    rows: usize,
    cols: usize,
    frames: usize,
    size: usize,
    velocity: (usize, usize),
    frame_rate: f64,
) -> Result<SceneVideo> {
    check_dim(rows, cols)?;
    if frames == 0 || size == 0 {
        return Err(Error::invalid(
            "translating square",
            "needs frames and a positive size",
        ));
    }
    let (vy, vx) = velocity;
    let travel_y = (frames - 1) * vy;
    let travel_x = (frames - 1) * vx;
    if size + travel_x + 2 > cols || size + travel_y + 2 > rows {
        return Err(Error::invalid(
            "translating square",
            "square leaves the frame",
        ));
    }
    let top0 = (rows - size - travel_y) / 2;
    let left0 = (cols - size - travel_x) / 2;
    let video = (0..frames)
        .map(|k| {
            let mut img = Array2::from_elem((rows, cols), 0.25);
            let (top, left) = (top0 + k * vy, left0 + k * vx);
            img.slice_mut(s![top..top + size, left..left + size])
                .fill(0.85);
            img
        })
        .collect();
    SceneVideo::new(video, frame_rate)
}

/// Built-in scene by name.
pub fn by_name(name: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
    match name {
        "blocks" => blocks(rows, cols),
        "ellipses" => ellipses(rows, cols),
        "ramp" => ramp_and_squares(rows, cols),
        other => Err(Error::invalid(
            "phantom",
            format!("unknown phantom `{other}`"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Count non-zero forward differences by brute force.
    fn gradient_support(img: &Array2<f64>) -> usize {
        let (r, c) = img.dim();
        let mut n = 0;
        for i in 0..r {
            for j in 0..c {
                let dx = if j + 1 < c {
                    img[[i, j + 1]] - img[[i, j]]
                } else {
                    0.0
                };
                let dy = if i + 1 < r {
                    img[[i + 1, j]] - img[[i, j]]
                } else {
                    0.0
                };
                if dx != 0.0 || dy != 0.0 {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn blocks_is_gradient_sparse() {
        let img = blocks(128, 128).unwrap();
        let support = gradient_support(&img);
        assert!(support > 0 && support < 128 * 128 / 10, "{support}");
        let mut levels: Vec<f64> = img.iter().copied().collect();
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        levels.dedup();
        assert_eq!(levels.len(), 7);
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn ellipses_are_piecewise_constant() {
        let img = ellipses(64, 64).unwrap();
        let mut levels: Vec<f64> = img.iter().copied().collect();
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        levels.dedup();
        assert_eq!(levels.len(), 5);
        assert!(gradient_support(&img) < 64 * 64 / 4);
    }

    #[test]
    fn square_moves() {
        let v = translating_square(64, 64, 16, 14, (1, 2), 10.0).unwrap();
        assert_eq!(v.len(), 16);
        let mass = |k: usize| v.frames()[k].iter().filter(|&&x| x > 0.5).count();
        assert_eq!(mass(0), 14 * 14);
        assert_eq!(mass(15), 14 * 14);
        assert_ne!(v.frames()[0], v.frames()[1]);
        assert_eq!(v.frames()[1][[18, 12]], 0.85);
        assert_eq!(v.frames()[1][[17, 12]], 0.25);
        assert!(translating_square(32, 32, 16, 14, (1, 2), 10.0).is_err());
    }

    #[test]
    fn unknown_name() {
        assert!(by_name("lena", 16, 16).is_err());
        assert!(by_name("ramp", 4, 16).is_err());
    }
}
