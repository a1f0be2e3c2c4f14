use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use veinatn::metrics::{
    det_curve, eer, eer_from_det, fmr_fnmr, parse_det_csv, tar_at_fmr, write_det_csv, ScoreSet, FMR_TARGETS,
};

/// Rates at every candidate threshold by direct counting.
fn brute_rates(g: &[f64], i: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut cands: Vec<f64> = g.iter().chain(i).copied().collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let top = *cands.last().unwrap();
    cands.push(top.next_up());
    cands
        .into_iter()
        .map(|t| {
            let fa = i.iter().filter(|&&s| s >= t).count() as f64 / i.len() as f64;
            let fr = g.iter().filter(|&&s| s < t).count() as f64 / g.len() as f64;
            (t, fa, fr)
        })
        .collect()
}

fn brute_eer(g: &[f64], i: &[f64]) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for (t, fa, fr) in brute_rates(g, i) {
        if (fa - fr).abs() < best.0 {
            best = ((fa - fr).abs(), (fa + fr) / 2.0, t);
        }
    }
    (best.1, best.2)
}

fn brute_tar(g: &[f64], i: &[f64], target: f64) -> (f64, f64) {
    let (t, _, fr) = brute_rates(g, i).into_iter().find(|&(_, fa, _)| fa <= target).unwrap();
    (1.0 - fr, t)
}

fn random_set(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ng = rng.random_range(1..60);
    let ni = rng.random_range(1..400);
    // Coarse quantization on some sets to force ties.
    let q = if seed % 3 == 0 { 20.0 } else { 1e6 };
    let shift: f64 = rng.random_range(0.0..0.6);
    let g = (0..ng).map(|_| ((rng.random::<f64>() * 0.7 + shift).min(1.0) * q).round() / q).collect();
    let i = (0..ni).map(|_| (rng.random::<f64>() * 0.7 * q).round() / q).collect();
    (g, i)
}

#[test]
fn eer_tar_det_match_brute_force_on_100_sets() {
    for seed in 0..100 {
        let (g, i) = random_set(seed);
        let set = ScoreSet::new(g.clone(), i.clone()).unwrap();
        let curve = det_curve(&set);
        let brute = brute_rates(&g, &i);
        assert_eq!(curve.len(), brute.len(), "seed {seed}");
        for (p, &(t, fa, fr)) in curve.iter().zip(&brute) {
            assert_eq!((p.threshold, p.fmr, p.fnmr), (t, fa, fr), "seed {seed}");
            assert_eq!(fmr_fnmr(&set, t), (fa, fr), "seed {seed}");
        }
        let e = eer(&set);
        assert_eq!((e.eer, e.threshold), brute_eer(&g, &i), "seed {seed}");
        for target in FMR_TARGETS.into_iter().chain([0.05, 0.5]) {
            let t = tar_at_fmr(&set, target);
            assert_eq!((t.tar, t.threshold), brute_tar(&g, &i, target), "seed {seed} target {target}");
        }
    }
}

#[test]
fn det_csv_reingestion_gives_identical_eer() {
    for seed in 0..20 {
        let (g, i) = random_set(seed);
        let curve = det_curve(&ScoreSet::new(g, i).unwrap());
        let back = parse_det_csv(write_det_csv(&curve).as_bytes()).unwrap();
        assert_eq!(back, curve);
        assert_eq!(eer_from_det(&back).unwrap(), eer_from_det(&curve).unwrap());
    }
}

#[test]
fn eer_of_separated_and_inverted_sets() {
    let perfect = ScoreSet::new(vec![0.9, 0.8], vec![0.1, 0.2, 0.3]).unwrap();
    assert_eq!(eer(&perfect).eer, 0.0);
    let inverted = ScoreSet::new(vec![0.1, 0.2], vec![0.8, 0.9]).unwrap();
    assert_eq!(eer(&inverted).eer, 1.0);
}

fn scores() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(0u32..1000, 1..40), prop::collection::vec(0u32..1000, 1..80)).prop_map(|(g, i)| {
        let f = |v: Vec<u32>| v.into_iter().map(|x| x as f64 / 1000.0).collect::<Vec<_>>();
        (f(g), f(i))
    })
}

proptest! {
    #[test]
    fn eer_is_invariant_under_increasing_transforms((g, i) in scores(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let set = ScoreSet::new(g, i).unwrap();
        let base = eer(&set).eer;
        prop_assert_eq!(eer(&set.map(|s| a * s + b).unwrap()).eer, base);
        prop_assert_eq!(eer(&set.map(|s| (3.0 * s).exp()).unwrap()).eer, base);
        prop_assert_eq!(eer(&set.map(|s| s.powi(3) + s).unwrap()).eer, base);
    }

    #[test]
    fn det_rates_are_monotone_and_bounded((g, i) in scores()) {
        let curve = det_curve(&ScoreSet::new(g, i).unwrap());
        prop_assert_eq!((curve[0].fmr, curve[0].fnmr), (1.0, 0.0));
        let last = curve[curve.len() - 1];
        prop_assert_eq!((last.fmr, last.fnmr), (0.0, 1.0));
        for w in curve.windows(2) {
            prop_assert!(w[0].threshold < w[1].threshold);
            prop_assert!(w[1].fmr <= w[0].fmr && w[1].fnmr >= w[0].fnmr);
        }
    }

    #[test]
    fn eer_lies_in_unit_interval((g, i) in scores()) {
        let e = eer(&ScoreSet::new(g, i).unwrap()).eer;
        prop_assert!((0.0..=1.0).contains(&e));
    }
}
