use proptest::prelude::*;

use intent_core::phase::{find_filtered_peaks, merge_peaks, rising_onset, PeakEvent, Series};
use intent_core::signals::{projected_power, raw_power};
use intent_core::Vec2;

fn vec2(range: f64) -> impl Strategy<Value = Vec2> {
    (-range..range, -range..range).prop_map(|(x, y)| Vec2::new(x, y))
}

fn rotate(v: &Vec2, angle: f64) -> Vec2 {
    nalgebra::Rotation2::new(angle) * v
}

fn peaks() -> impl Strategy<Value = Vec<PeakEvent>> {
    prop::collection::vec((0.0..10.0f64, 0.01..10.0f64), 0..40).prop_map(|raw| {
        raw.into_iter()
            .map(|(t, m)| PeakEvent { index: (t * 200.0) as usize, t_dominant: t, magnitude: m, channel: "c".into() })
            .collect()
    })
}

/// A smooth-ish random channel: sum of a few bumps on a small random floor.
fn channel() -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec((0.0..4.0f64, 0.05..0.6f64, 0.1..10.0f64), 1..6), prop::collection::vec(0.0..0.05f64, 800))
        .prop_map(|(bumps, floor)| {
            floor
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let t = i as f64 / 200.0;
                    f + bumps.iter().map(|(c, w, a)| a * (-((t - c) / w).powi(2)).exp()).sum::<f64>()
                })
                .collect()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn projected_power_is_bounded_by_the_magnitudes(f in vec2(30.0), v in vec2(2.0), g in vec2(1.0), goal in vec2(1.0)) {
        prop_assume!((goal - g).norm() > 1e-3);
        let p = projected_power(&f, &v, &g, &goal).unwrap();
        prop_assert!(p.abs() <= f.norm() * v.norm() * (1.0 + 1e-12));
    }

    #[test]
    fn power_is_unchanged_by_a_common_rotation(
        f in vec2(30.0), v in vec2(2.0), g in vec2(1.0), goal in vec2(1.0), angle in -3.2..3.2f64,
    ) {
        prop_assume!((goal - g).norm() > 1e-3);
        let scale = f.norm() * v.norm() + 1.0;
        let raw = raw_power(&f, &v) - raw_power(&rotate(&f, angle), &rotate(&v, angle));
        prop_assert!(raw.abs() <= 1e-9 * scale);
        let p = projected_power(&f, &v, &g, &goal).unwrap();
        let q = projected_power(&rotate(&f, angle), &rotate(&v, angle), &rotate(&g, angle), &rotate(&goal, angle)).unwrap();
        prop_assert!((p - q).abs() <= 1e-9 * scale);
    }

    #[test]
    fn merging_twice_changes_nothing(p in peaks(), gap in 0.05..1.0f64) {
        let once = merge_peaks(p, gap);
        prop_assert_eq!(merge_peaks(once.clone(), gap), once);
    }

    #[test]
    fn survivors_respect_the_reaction_time(p in peaks(), gap in 0.05..1.0f64) {
        let merged = merge_peaks(p, gap);
        for w in merged.windows(2) {
            prop_assert!(w[1].t_dominant - w[0].t_dominant >= gap - 1e-9);
        }
    }

    #[test]
    fn filtered_peaks_are_spaced_and_shrink_with_eta(x in channel(), gap in 0.1..0.5f64, eta in 0.05..0.9f64, more in 0.0..0.5f64) {
        let series = Series::new("c", 0.0, 200.0, &x);
        let loose = find_filtered_peaks(series, gap, eta);
        let strict = find_filtered_peaks(series, gap, (eta + more).min(0.99));
        prop_assert!(strict.len() <= loose.len());
        for w in loose.windows(2) {
            prop_assert!(w[1].t_dominant - w[0].t_dominant >= gap - 1e-9);
        }
        for p in &loose {
            prop_assert!(p.magnitude > 0.0);
            let rise = rising_onset(series, p, 0.1);
            prop_assert!(rise.t_start <= rise.t_dominant);
            if !rise.truncated && rise.t_start < rise.t_dominant {
                let j = (rise.t_start * 200.0).floor() as usize;
                let level = 0.1 * p.magnitude;
                prop_assert!(x[j] <= level + 1e-9 && x[j + 1] >= level - 1e-9);
            }
        }
    }
}
