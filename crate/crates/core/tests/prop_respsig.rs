use proptest::prelude::*;

use thermoresp::frames::ThermalFrame;
use thermoresp::respsig::*;
use thermoresp::track::{Roi, RoiTrack, TrackEntry, TrackStatus};

fn status() -> impl Strategy<Value = TrackStatus> {
    prop_oneof![
        6 => Just(TrackStatus::Tracked),
        1 => Just(TrackStatus::Relocalized),
        1 => Just(TrackStatus::Lost),
    ]
}

fn random_frames(w: usize, h: usize, n: usize, fps: f64, seed: u64) -> Vec<ThermalFrame> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let temps = (0..w * h).map(|_| rng.gen_range(20.0..36.0f32)).collect();
            ThermalFrame::new(w, h, i as f64 / fps, temps).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn voxel_ignores_pixel_order(
        mut temps in prop::collection::vec(20.0..40.0f64, 1..400),
        t_delta in 20.0..40.0f64,
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let v = voxel_value(&temps, t_delta);
        temps.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let v2 = voxel_value(&temps, t_delta);
        prop_assert!((v - v2).abs() <= 1e-9 * (1.0 + v.abs()));
    }

    #[test]
    fn voxel_is_translation_covariant(
        temps in prop::collection::vec(20.0..40.0f64, 1..400),
        t_delta in 20.0..40.0f64,
        c in -50.0..50.0f64,
    ) {
        let v = voxel_value(&temps, t_delta);
        let moved: Vec<f64> = temps.iter().map(|u| u + c).collect();
        let v2 = voxel_value(&moved, t_delta + c);
        // pixels within rounding of the boundary may flip side; each contributes < 1e-12
        prop_assert!((v - v2).abs() <= 1e-9 * (1.0 + v.abs()), "{} vs {}", v, v2);
    }

    #[test]
    fn cooling_a_cold_pixel_raises_voxel(
        temps in prop::collection::vec(20.0..40.0f64, 1..400),
        t_delta in 25.0..40.0f64,
        pick in any::<prop::sample::Index>(),
        drop in 1e-3..5.0f64,
    ) {
        let cold: Vec<usize> = (0..temps.len()).filter(|&i| temps[i] < t_delta).collect();
        prop_assume!(!cold.is_empty());
        let i = cold[pick.index(cold.len())];
        let mut cooler = temps.clone();
        cooler[i] -= drop;
        prop_assert!(voxel_value(&cooler, t_delta) > voxel_value(&temps, t_delta));
    }

    #[test]
    fn mean_method_is_the_plain_crop_average(
        w in 4usize..20,
        h in 4usize..20,
        n in 2usize..8,
        rois in prop::collection::vec((-3.0..18.0f64, -3.0..18.0f64, 1.0..8.0f64), 8),
        seed in any::<u64>(),
    ) {
        let frames = random_frames(w, h, n, 9.0, seed);
        let track = RoiTrack {
            entries: (0..n)
                .map(|i| TrackEntry {
                    roi: Roi::new(rois[i].0, rois[i].1, rois[i].2),
                    status: TrackStatus::Tracked,
                    n_points: 100,
                    fb_median: 0.0,
                })
                .collect(),
        };
        let params = ExtractParams { method: SignalMethod::Mean, ..Default::default() };
        let series = match extract_frame_series(&frames, &track, &params) {
            Ok(s) => s,
            Err(_) => return Ok(()),
        };
        for (i, frame) in frames.iter().enumerate() {
            let (x0, y0, x1, y1) = track.entries[i].roi.pixel_bounds();
            let (mut sum, mut count) = (0.0f64, 0usize);
            for y in y0.max(0)..y1.min(h as i64) {
                for x in x0.max(0)..x1.min(w as i64) {
                    sum += frame.at(x as usize, y as usize) as f64;
                    count += 1;
                }
            }
            if count > 0 && series.flags[i] & FLAG_HELD == 0 {
                prop_assert_eq!(series.values[i], sum / count as f64);
            }
        }
    }

    #[test]
    fn signal_length_depends_only_on_span_and_rate(
        n in 3usize..40,
        statuses in prop::collection::vec(status(), 40),
        method in prop_oneof![Just(SignalMethod::Voxel), Just(SignalMethod::Mean)],
        fps in prop_oneof![Just(9.0), Just(8.7), Just(30.0), Just(4.0)],
        seed in any::<u64>(),
    ) {
        let frames = random_frames(12, 12, n, 9.0, seed);
        let mut statuses = statuses[..n].to_vec();
        statuses[0] = TrackStatus::Tracked;
        let track = RoiTrack {
            entries: statuses
                .iter()
                .map(|&status| TrackEntry {
                    roi: Roi::new(2.0, 2.0, 6.0),
                    status,
                    n_points: 100,
                    fb_median: 0.0,
                })
                .collect(),
        };
        let params = ExtractParams { method, ..Default::default() };
        let span = frames[n - 1].timestamp() - frames[0].timestamp();
        let out = extract_signal(&frames, &track, &params, fps);
        if grid_len(span, fps) < 2 {
            prop_assert!(matches!(out, Err(thermoresp::Error::InsufficientData(_))));
        } else {
            prop_assert_eq!(out.unwrap().len(), grid_len(span, fps));
        }
    }
}
