use std::path::Path;

use ndarray::{Array2, Array3};
use proptest::prelude::*;

use smcam::codes::{build_schedule, demean, fwht, PatternSchedule, RowOrder, ScheduleParams};
use smcam::io::{decode_schedule, encode_schedule};
use smcam::operators::{LineSensing, Sensing};
use smcam::optics::CameraConfig;
use smcam::simulator::{group_frames, simulate_lisens, Coding, SceneVideo};

fn order() -> impl Strategy<Value = usize> {
    (1u32..7).prop_map(|k| 1usize << k)
}

fn image(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut s = seed | 1;
    Array2::from_shape_fn((rows, cols), |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    })
}

fn camera(rows: usize) -> CameraConfig {
    CameraConfig::case_study().with_sensor_pixels(rows)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn schedule_structure(n in order(), extra in 0usize..40, seed in any::<u64>(), period in 0usize..6, natural in any::<bool>()) {
        let period = (period > 1).then_some(period);
        let count = n + extra;
        let mut params = ScheduleParams::new(n, count, seed, period);
        if natural {
            params = params.with_row_order(RowOrder::Natural);
        }
        let s = PatternSchedule::build(params).unwrap();
        prop_assert_eq!(s.len(), count);
        prop_assert_eq!(s.row_sequence()[0], 0);
        let mut perm = s.permutation().to_vec();
        perm.sort_unstable();
        prop_assert_eq!(perm, (0..n as u32).collect::<Vec<_>>());

        let mut seen = Vec::new();
        for t in 0..count {
            let tracking = period.is_some_and(|p| t % p == 0);
            prop_assert_eq!(s.is_mean_track(t), tracking);
            if tracking {
                prop_assert!(s.pattern(t).iter().all(|&b| b == 1));
            } else {
                seen.push(s.hadamard_row(t).unwrap());
            }
        }
        // Rows cycle through the whole order before repeating.
        for w in seen.chunks(n) {
            let mut d = w.to_vec();
            d.sort_unstable();
            d.dedup();
            prop_assert_eq!(d.len(), w.len());
        }

        prop_assert_eq!(&PatternSchedule::build(params).unwrap(), &s);
    }

    #[test]
    fn signed_codes_are_orthogonal(n in order(), seed in any::<u64>()) {
        let s = build_schedule(n, n, seed, None).unwrap();
        let phi = s.code_matrix(0..n, Coding::Signed);
        let gram = phi.t().dot(&phi);
        prop_assert_eq!(gram, Array2::from_diag_elem(n, n as f64));
    }

    #[test]
    fn schedule_container_round_trip(n in order(), extra in 0usize..20, seed in any::<u64>(), period in 0usize..5) {
        let s = build_schedule(n, n + extra, seed, (period > 1).then_some(period)).unwrap();
        let back = decode_schedule(&encode_schedule(&s), Path::new("mem")).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn demean_is_exact_without_noise(n in order(), rows in 1usize..6, seed in any::<u64>(), period in 0usize..5) {
        let period = (period > 1).then_some(period);
        let x = image(rows, n, seed);
        let s = build_schedule(n, 2 * n, seed, period).unwrap();
        let ms = simulate_lisens(&SceneVideo::still(x.clone()).unwrap(), &s, 0.0, 0, &camera(rows)).unwrap();
        let d = demean(&ms, &s, None).unwrap();
        prop_assert_eq!(d.coding, Coding::Signed);
        let expected = x.dot(&s.code_matrix(0..s.len(), Coding::Signed));
        let err = (&d.values - &expected).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        prop_assert!(err < 1e-9, "{}", err);
    }

    #[test]
    fn frame_groups_partition_slots(count in 1usize..200, q in 1usize..40, seed in any::<u64>()) {
        prop_assume!(q <= count);
        let s = build_schedule(8, count, seed, None).unwrap();
        let x = image(2, 8, seed);
        let ms = simulate_lisens(&SceneVideo::still(x).unwrap(), &s, 0.0, 0, &camera(2)).unwrap();
        let blocks = group_frames(&ms, &s, q).unwrap();
        prop_assert_eq!(blocks.len(), q);
        let mut next = 0;
        for (k, b) in blocks.iter().enumerate() {
            prop_assert_eq!(b.index, k);
            prop_assert_eq!(b.slots.start, next);
            next = b.slots.end;
            prop_assert!(b.len() == count / q || b.len() == count / q + 1);
            if k > 0 {
                prop_assert!(b.len() <= blocks[k - 1].len());
            }
            prop_assert_eq!(b.values.ncols(), b.len());
        }
        prop_assert_eq!(next, count);
    }

    #[test]
    fn line_sensing_adjoint(rows in 1usize..8, cols in 1usize..8, t in 1usize..10, seed in any::<u64>()) {
        let op = LineSensing::new(image(cols, t, seed) - 0.5, rows);
        let x = image(rows, cols, seed ^ 1);
        let y = image(rows, t, seed ^ 2);
        let lhs = (&op.apply(x.view()) * &y).sum();
        let rhs = (&x * &op.adjoint(y.view())).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn fwht_is_self_inverse_up_to_order(n in order(), seed in any::<u64>()) {
        let v: Vec<f64> = image(1, n, seed).iter().copied().collect();
        let mut w = v.clone();
        fwht(&mut w).unwrap();
        fwht(&mut w).unwrap();
        for (a, b) in v.iter().zip(&w) {
            prop_assert!((a * n as f64 - b).abs() < 1e-9);
        }
    }

    #[test]
    fn seeded_simulation_is_deterministic(seed in any::<u64>(), sigma in 0.0f64..0.5) {
        let s = build_schedule(16, 24, seed, Some(4)).unwrap();
        let frames: Vec<_> = (0..3).map(|k| image(4, 16, seed.wrapping_add(k))).collect();
        let scene = SceneVideo::new(frames, 1000.0).unwrap();
        let a = simulate_lisens(&scene, &s, sigma, seed, &camera(4)).unwrap();
        let b = simulate_lisens(&scene, &s, sigma, seed, &camera(4)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn raw_volume_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.smcf");
    let v = Array3::from_shape_fn((2, 3, 5), |(f, r, c)| (f * 15 + r * 5 + c) as f64 / 8.0);
    smcam::io::write_raw(&path, &v).unwrap();
    assert_eq!(smcam::io::read_raw(&path).unwrap(), v);
}
