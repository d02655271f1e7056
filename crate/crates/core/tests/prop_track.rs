use proptest::prelude::*;

use thermoresp::frames::{generate_synthetic, NostrilPath, SynthScenario};
use thermoresp::quantize::QuantMode;
use thermoresp::track::*;

/// Smooth random texture: a sum of Gaussian blobs on a `w x h` canvas.
fn blobs(w: usize, h: usize, spec: &[(f64, f64, f64, f64)], shift: (f64, f64)) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.0;
            for &(cx, cy, s, a) in spec {
                let dx = x as f64 - cx - shift.0;
                let dy = y as f64 - cy - shift.1;
                v += a * (-(dx * dx + dy * dy) / (2.0 * s * s)).exp();
            }
            out[y * w + x] = v;
        }
    }
    out
}

fn crop(canvas: &[f64], cw: usize, x0: usize, y0: usize, w: usize, h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(w * h);
    for y in y0..y0 + h {
        out.extend_from_slice(&canvas[y * cw + x0..y * cw + x0 + w]);
    }
    out
}

/// Jittered lattice of blobs every 10 px, so every ROI sees texture.
fn blob_spec() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
    prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, 2.0..5.0f64, 20.0..120.0f64), 225).prop_map(
        |jitter| {
            jitter
                .iter()
                .enumerate()
                .map(|(i, &(jx, jy, s, a))| {
                    let (gx, gy) = ((i % 15) as f64, (i / 15) as f64);
                    (10.0 + 10.0 * gx + jx, 10.0 + 10.0 * gy + jy, s, a)
                })
                .collect()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn gradient_ignores_offsets_and_scales_linearly(
        w in 3usize..24,
        h in 3usize..24,
        seed in prop::collection::vec(-50.0..50.0f64, 576),
        c in -1000.0..1000.0f64,
        alpha in 0.01..100.0f64,
    ) {
        let u = &seed[..w * h];
        let g = gradient_magnitude_of(w, h, u);
        let shifted: Vec<f64> = u.iter().map(|v| v + c).collect();
        let scaled: Vec<f64> = u.iter().map(|v| v * alpha).collect();
        let gs = gradient_magnitude_of(w, h, &shifted);
        let ga = gradient_magnitude_of(w, h, &scaled);
        let tol = 1e-9 * (1.0 + c.abs());
        for i in 0..w * h {
            prop_assert!((gs.mag[i] - g.mag[i]).abs() <= tol, "offset at {}", i);
            prop_assert!((ga.mag[i] - alpha * g.mag[i]).abs() <= 1e-9 * alpha * (1.0 + g.mag[i]));
        }
    }

    #[test]
    fn ncc_is_invariant_to_affine_intensity(
        n in 2usize..20,
        a in prop::collection::vec(-100.0..100.0f64, 400),
        b in prop::collection::vec(-100.0..100.0f64, 400),
        alpha in 0.1..10.0f64,
        beta in -50.0..50.0f64,
    ) {
        let (a, b) = (&a[..n * n], &b[..n * n]);
        let g = ncc_coefficient(a, b).unwrap();
        let moved: Vec<f64> = b.iter().map(|v| alpha * v + beta).collect();
        let g2 = ncc_coefficient(a, &moved).unwrap();
        prop_assert!((g - g2).abs() <= 1e-9, "{} vs {}", g, g2);
    }

    #[test]
    fn median_flow_step_is_translation_equivariant(
        spec in blob_spec(),
        motion in (-2.5..2.5f64, -2.5..2.5f64),
        shift in (-8i64..=8, -8i64..=8),
        roi in (43.0..60.0f64, 43.0..60.0f64, 12.0..24.0f64),
    ) {
        // the coarsest KLT window spans +/-20 px plus the blur support, so
        // the ROI keeps 35 px clear of the crop border in both placements
        let (cw, ch) = (150usize, 150usize);
        let a = blobs(cw, ch, &spec, (0.0, 0.0));
        let b = blobs(cw, ch, &spec, motion);
        let (w, h) = (130usize, 130usize);
        let params = TrackParams::default();
        let step = |ox: usize, oy: usize, r: Roi| {
            let ga = gradient_magnitude_of(w, h, &crop(&a, cw, ox, oy, w, h));
            let gb = gradient_magnitude_of(w, h, &crop(&b, cw, ox, oy, w, h));
            let pa = Pyramid::new(&ga, params.klt.levels);
            let pb = Pyramid::new(&gb, params.klt.levels);
            median_flow_step(&r, &pa, &pb, &params)
        };
        let base = Roi::new(roi.0, roi.1, roi.2);
        let out = step(10, 10, base);
        // moving the crop window by -s moves the content by +s
        let ox = (10 - shift.0) as usize;
        let oy = (10 - shift.1) as usize;
        let moved = step(ox, oy, base.translated(shift.0 as f64, shift.1 as f64));
        prop_assert_eq!(out.point_loss, moved.point_loss);
        prop_assert_eq!(out.n_points, moved.n_points);
        prop_assert!((moved.roi.x - out.roi.x - shift.0 as f64).abs() <= 1e-6, "{:?} {:?}", out, moved);
        prop_assert!((moved.roi.y - out.roi.y - shift.1 as f64).abs() <= 1e-6, "{:?} {:?}", out, moved);
        prop_assert!((moved.roi.size - out.roi.size).abs() <= 1e-6);
    }

    #[test]
    fn fb_error_is_symmetric_under_time_reversal(
        spec in blob_spec(),
        motion in (-1.5..1.5f64, -1.5..1.5f64),
        pts in prop::collection::vec((45.0..105.0f64, 45.0..105.0f64), 5..20),
    ) {
        let (w, h) = (150usize, 150usize);
        let seq: Vec<GradientMap> = (0..3)
            .map(|k| {
                let s = (motion.0 * k as f64, motion.1 * k as f64);
                gradient_magnitude_of(w, h, &blobs(w, h, &spec, s))
            })
            .collect();
        let rev: Vec<GradientMap> = seq.iter().rev().cloned().collect();
        let pts: Vec<Point> = pts.iter().map(|&(x, y)| Point::new(x, y)).collect();
        let params = KltParams::default();
        let fwd = fb_error(&seq, &pts, &params);
        let bwd = fb_error(&rev, &pts, &params);
        for (e1, e2) in fwd.iter().zip(&bwd) {
            if e1.is_finite() && e2.is_finite() {
                prop_assert!((e1 - e2).abs() <= 0.1, "{} vs {}", e1, e2);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn track_has_one_entry_per_frame(
        frames in 2usize..7,
        center in (38.0..42.0f64, 38.0..42.0f64),
        occluded in prop::option::of((0usize..6, 1usize..4)),
        static_q in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let fps = 9.0;
        let scene = SynthScenario {
            width: 80,
            height: 80,
            duration: frames as f64 / fps,
            path: NostrilPath::fixed(center.0, center.1),
            occlusions: occluded
                .map(|(s, l)| vec![(s as f64 / fps, (s + l) as f64 / fps)])
                .unwrap_or_default(),
            ..Default::default()
        };
        let seq = generate_synthetic(&scene, seed).unwrap();
        let quant = if static_q { QuantMode::static_baseline() } else { QuantMode::optimal() };
        let track = track_sequence(&seq.frames, seq.truth.boxes[0], &TrackParams::default(), &quant)
            .unwrap();
        prop_assert_eq!(track.len(), seq.frames.len());
    }
}
