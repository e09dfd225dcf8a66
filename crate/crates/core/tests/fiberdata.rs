use dmvfc::fiberdata::{
    downsample_bold, downsample_indices, load_bundle, parse_bundle_text, resample_fiber, save_bundle, save_bundle_text,
    synth_bundle, Point3, SynthConfig,
};
use dmvfc::metrics::pearson;
use proptest::prelude::*;

fn d(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Arc-length position of `p` along `raw`, taken on the segment that
/// passes closest to it.
fn arc_position(raw: &[Point3], p: &Point3) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    let mut start = 0.0;
    for w in raw.windows(2) {
        let len = d(&w[0], &w[1]);
        let t = if len > 0.0 {
            let dot: f64 = (0..3).map(|k| (p[k] - w[0][k]) * (w[1][k] - w[0][k])).sum();
            (dot / (len * len)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = [0, 1, 2].map(|k| w[0][k] + t * (w[1][k] - w[0][k]));
        let off = d(&q, p);
        if off < best.0 - 1e-12 {
            best = (off, start + t * len);
        }
        start += len;
    }
    best.1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resampled_points_are_evenly_spaced_by_arc(
        steps in prop::collection::vec((0.2f64..4.0, -1.0f64..1.0, -1.0f64..1.0), 2..30),
        n in 3usize..40,
    ) {
        // a monotone walk, so every point sits on exactly one segment
        let mut raw = vec![[0.0, 0.0, 0.0]];
        for (dx, dy, dz) in &steps {
            let l = *raw.last().unwrap();
            raw.push([l[0] + dx, l[1] + dy, l[2] + dz]);
        }
        let f = resample_fiber(&raw, n).unwrap();
        prop_assert_eq!(f.len(), n);
        prop_assert_eq!(f.points()[0], raw[0]);
        prop_assert_eq!(f.points()[n - 1], *raw.last().unwrap());
        let pos: Vec<f64> = f.points().iter().map(|p| arc_position(&raw, p)).collect();
        let gaps: Vec<f64> = pos.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        for g in gaps {
            prop_assert!((g - mean).abs() <= 1e-9 * mean, "gap {} vs {}", g, mean);
        }
    }

    #[test]
    fn collinear_resampling_has_equal_chords(cuts in prop::collection::vec(0.01f64..0.99, 1..10), n in 2usize..30) {
        let mut ts = cuts.clone();
        ts.sort_by(f64::total_cmp);
        let mut raw = vec![[0.0, 0.0, 0.0]];
        raw.extend(ts.iter().map(|t| [3.0 * t, -2.0 * t, 6.0 * t]));
        raw.push([3.0, -2.0, 6.0]);
        let f = resample_fiber(&raw, n).unwrap();
        let step = 7.0 / (n - 1) as f64;
        for w in f.points().windows(2) {
            prop_assert!((d(&w[0], &w[1]) - step).abs() <= 1e-9 * step);
        }
    }

    #[test]
    fn downsampling_keeps_order_and_shares_indices(seed in any::<u64>(), len in 2usize..300, frac in 0.01f64..1.0) {
        let target = ((len as f64 * frac) as usize).clamp(1, len);
        let idx = downsample_indices(len, target, seed).unwrap();
        prop_assert_eq!(idx.len(), target);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.iter().all(|&i| i < len));
        let a: Vec<f64> = (0..len).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..len).map(|i| 1000.0 + i as f64).collect();
        if target >= 2 {
            let pair = downsample_bold(&a, &b, target, seed).unwrap();
            let from_a: Vec<usize> = pair.endpoint_a().iter().map(|&v| v as usize).collect();
            let from_b: Vec<usize> = pair.endpoint_b().iter().map(|&v| v as usize - 1000).collect();
            prop_assert_eq!(&from_a, &idx);
            prop_assert_eq!(&from_b, &idx);
        }
    }

    #[test]
    fn bundles_round_trip_bit_exactly(seed in 0u64..1000, n in 1usize..12) {
        let cfg = SynthConfig { n_fibers: n, groups: 2, subgroups: 1, ..SynthConfig::default() };
        let b = synth_bundle(&cfg, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.dmvf");
        save_bundle(&b, &p).unwrap();
        let back = load_bundle(&p).unwrap();
        prop_assert_eq!(back.records(), b.records());
        let tp = dir.path().join("b.txt");
        save_bundle_text(&b, &tp).unwrap();
        let text = std::fs::read_to_string(&tp).unwrap();
        let parsed = parse_bundle_text(&text, "b").unwrap();
        prop_assert_eq!(parsed.records(), b.records());
    }
}

#[test]
fn noiseless_bold_gives_f_latents_per_group() {
    let cfg = SynthConfig { n_fibers: 96, groups: 3, subgroups: 4, sigma_bold: 0.0, ..SynthConfig::default() };
    let b = synth_bundle(&cfg, 2).unwrap();
    for g in 0..3 {
        let mut latents: Vec<Vec<f64>> = Vec::new();
        for r in b.records().iter().filter(|r| r.truth_label.unwrap() as usize / 4 == g) {
            let a = r.bold.endpoint_a();
            if !latents.iter().any(|l| pearson(l, a).unwrap() > 1.0 - 1e-9) {
                latents.push(a.to_vec());
            }
        }
        assert_eq!(latents.len(), 4, "group {g}");
    }
}

#[test]
fn generator_is_seed_deterministic() {
    let cfg = SynthConfig::reference();
    let a = synth_bundle(&cfg, 7).unwrap();
    assert_eq!(a.records(), synth_bundle(&cfg, 7).unwrap().records());
    assert_ne!(a.records(), synth_bundle(&cfg, 8).unwrap().records());
    assert_eq!(a.len(), 400);
    assert_eq!(a.n_points(), 25);
    assert_eq!(a.bold_len(), 600);
}
