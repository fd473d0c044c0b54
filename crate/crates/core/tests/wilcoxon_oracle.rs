use panelguide_core::analytics::{
    wilcoxon_batch, wilcoxon_signed_rank, wilcoxon_signed_rank_with, Method, MethodChoice,
    PairedSamples,
};
use panelguide_core::Execution;
use proptest::prelude::*;

/// Average ranks of |d| over the nonzero differences, computed by counting.
fn oracle_ranks(diffs: &[f64]) -> Vec<(f64, bool)> {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    nz.iter()
        .map(|d| {
            let below = nz.iter().filter(|x| x.abs() < d.abs()).count() as f64;
            let equal = nz.iter().filter(|x| x.abs() == d.abs()).count() as f64;
            (below + (equal + 1.0) / 2.0, *d > 0.0)
        })
        .collect()
}

/// Two-sided p by enumerating all 2^n sign assignments.
fn oracle_p(diffs: &[f64]) -> (f64, f64) {
    let ranked = oracle_ranks(diffs);
    let n = ranked.len();
    let total: f64 = ranked.iter().map(|(r, _)| r).sum();
    let w: f64 = ranked.iter().filter(|(_, p)| *p).map(|(r, _)| r).sum();
    let dev = (w - total / 2.0).abs();
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| ranked[i].0)
            .sum();
        if (s - total / 2.0).abs() >= dev - 1e-9 {
            extreme += 1;
        }
    }
    (w, extreme as f64 / (1u64 << n) as f64)
}

fn from_diffs(d: &[f64]) -> PairedSamples {
    PairedSamples::new("a", "b", d.iter().map(|x| (*x, 0.0)).collect())
}

#[test]
fn seven_up_one_down() {
    let d = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, -8.0];
    let (w, p) = oracle_p(&d);
    assert_eq!(w, 28.0);
    let r = wilcoxon_signed_rank(&from_diffs(&d)).unwrap();
    assert_eq!(r.w_statistic, 28.0);
    assert_eq!(r.method, Method::Exact);
    assert!((r.p_two_sided - p).abs() < 1e-12, "{} vs {p}", r.p_two_sided);
    // 25 subsets of 1..=8 sum to at most 8, mirrored above 28.
    assert!((p - 50.0 / 256.0).abs() < 1e-12);
}

#[test]
fn batch_strategies_agree() {
    let sets: Vec<PairedSamples> = (0..40)
        .map(|k| {
            from_diffs(
                &(0..12)
                    .map(|i| ((i * 7 + k * 3) % 11) as f64 - 5.0)
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let a: Vec<_> = wilcoxon_batch(&sets, Execution::Sequential)
        .into_iter()
        .map(|r| r.unwrap())
        .collect();
    let b: Vec<_> = wilcoxon_batch(&sets, Execution::Parallel)
        .into_iter()
        .map(|r| r.unwrap())
        .collect();
    assert_eq!(a, b);
}

fn diffs_strategy(max: usize) -> impl Strategy<Value = Vec<f64>> {
    // Small integer magnitudes give plenty of ties and zeros.
    prop::collection::vec((-6i32..=6).prop_map(f64::from), 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn exact_matches_enumeration(d in diffs_strategy(14)) {
        let r = wilcoxon_signed_rank(&from_diffs(&d)).unwrap();
        let nz = d.iter().filter(|x| **x != 0.0).count();
        if nz == 0 {
            prop_assert_eq!(r.p_two_sided, 1.0);
        } else {
            let (w, p) = oracle_p(&d);
            prop_assert!((r.w_statistic - w).abs() < 1e-9);
            prop_assert!((r.p_two_sided - p).abs() < 1e-9, "{} vs {}", r.p_two_sided, p);
        }
    }

    #[test]
    fn sign_flip_keeps_p(d in diffs_strategy(18)) {
        let a = wilcoxon_signed_rank(&from_diffs(&d)).unwrap();
        let flipped: Vec<f64> = d.iter().map(|x| -x).collect();
        let b = wilcoxon_signed_rank(&from_diffs(&flipped)).unwrap();
        prop_assert!((a.p_two_sided - b.p_two_sided).abs() < 1e-12);
        let total = a.n_effective as f64 * (a.n_effective as f64 + 1.0) / 2.0;
        prop_assert!((a.w_statistic + b.w_statistic - total).abs() < 1e-9);
    }

    #[test]
    fn positive_scale_invariance(d in diffs_strategy(30), k in 0.01f64..1000.0) {
        let a = wilcoxon_signed_rank(&from_diffs(&d)).unwrap();
        let scaled: Vec<f64> = d.iter().map(|x| x * k).collect();
        let b = wilcoxon_signed_rank(&from_diffs(&scaled)).unwrap();
        prop_assert_eq!(a.n_effective, b.n_effective);
        prop_assert!((a.p_two_sided - b.p_two_sided).abs() < 1e-12);
    }

    #[test]
    fn p_is_a_probability(d in diffs_strategy(40)) {
        let r = wilcoxon_signed_rank(&from_diffs(&d)).unwrap();
        prop_assert!(r.p_two_sided > 0.0 && r.p_two_sided <= 1.0);
    }

    #[test]
    fn normal_tracks_exact_at_fifteen(d in prop::collection::vec(
        (1i32..=200, any::<bool>()).prop_map(|(m, s)| if s { f64::from(m) } else { -f64::from(m) }),
        15,
    )) {
        let s = from_diffs(&d);
        let e = wilcoxon_signed_rank_with(&s, MethodChoice::Exact).unwrap();
        let n = wilcoxon_signed_rank_with(&s, MethodChoice::Normal).unwrap();
        prop_assert!((e.p_two_sided - n.p_two_sided).abs() < 0.02,
            "exact {} normal {}", e.p_two_sided, n.p_two_sided);
    }
}
