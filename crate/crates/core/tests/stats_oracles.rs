//! Independent textbook-formula oracles for the statistical battery. The
//! oracles compute every statistic from first principles and use statrs for
//! the distribution functions, so they share nothing with the library path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realism_core::stats::special;
use realism_core::stats::{
    anova_f, pearson, t_one_tailed, t_one_tailed_variant, wald_ci, z_prop_cc, Direction,
    TTestVariant,
};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal, StudentsT};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

#[test]
fn distribution_cdfs_within_1e_10_of_reference() {
    let normal = std_normal();
    let mut worst: f64 = 0.0;
    for i in -80..=80 {
        let x = i as f64 * 0.1;
        worst = worst.max((special::normal_cdf(x) - normal.cdf(x)).abs());
    }
    assert!(worst < 1e-10, "normal cdf worst abs error {worst}");

    let mut worst_t: f64 = 0.0;
    for df in [1.0, 2.0, 5.0, 10.5, 30.0, 126.0] {
        let dist = StudentsT::new(0.0, 1.0, df).unwrap();
        for i in -60..=60 {
            let t = i as f64 * 0.2;
            worst_t = worst_t.max((special::t_cdf(t, df) - dist.cdf(t)).abs());
        }
    }
    assert!(worst_t < 1e-10, "t cdf worst abs error {worst_t}");

    let mut worst_f: f64 = 0.0;
    for (d1, d2) in [(1.0, 1.0), (2.0, 10.0), (6.0, 120.0), (7.0, 875.0)] {
        let dist = FisherSnedecor::new(d1, d2).unwrap();
        for i in 1..=120 {
            let f = i as f64 * 0.1;
            worst_f = worst_f.max((special::f_cdf(f, d1, d2) - dist.cdf(f)).abs());
        }
    }
    assert!(worst_f < 1e-10, "F cdf worst abs error {worst_f}");
}

fn oracle_z(k1: u64, n1: u64, k2: u64, n2: u64) -> Option<(f64, f64)> {
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let p1 = k1 as f64 / n1f;
    let p2 = k2 as f64 / n2f;
    let pooled = (k1 + k2) as f64 / (n1f + n2f);
    let se = (pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f)).sqrt();
    if se == 0.0 {
        return None;
    }
    let diff = p1 - p2;
    let cc = 0.5 * (1.0 / n1f + 1.0 / n2f);
    let corrected = (diff.abs() - cc).max(0.0);
    let z = if diff >= 0.0 { corrected } else { -corrected } / se;
    Some((z, 1.0 - std_normal().cdf(z)))
}

#[test]
fn z_test_matches_oracle_on_fuzzed_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0;
    while checked < 100 {
        let n1 = rng.gen_range(1..200u64);
        let n2 = rng.gen_range(1..200u64);
        let k1 = rng.gen_range(0..=n1);
        let k2 = rng.gen_range(0..=n2);
        let Some((oz, op)) = oracle_z(k1, n1, k2, n2) else {
            continue;
        };
        let r = z_prop_cc(k1, n1, k2, n2).unwrap();
        assert!((r.statistic - oz).abs() < 1e-9, "z mismatch");
        assert!((r.p_value - op).abs() < 1e-6, "p mismatch: {} vs {op}", r.p_value);
        checked += 1;
    }
}

#[test]
fn z_test_paper_shaped_fixture_matches_oracle() {
    let (oz, op) = oracle_z(71, 84, 38, 60).unwrap();
    let r = z_prop_cc(71, 84, 38, 60).unwrap();
    assert!((r.statistic - oz).abs() < 1e-12);
    assert!((r.p_value - op).abs() < 1e-6);
}

fn oracle_welch(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let nx = x.len() as f64;
    let ny = y.len() as f64;
    let mx = x.iter().sum::<f64>() / nx;
    let my = y.iter().sum::<f64>() / ny;
    let vx = x.iter().map(|v| (v - mx) * (v - mx)).sum::<f64>() / (nx - 1.0);
    let vy = y.iter().map(|v| (v - my) * (v - my)).sum::<f64>() / (ny - 1.0);
    let a = vx / nx;
    let b = vy / ny;
    let t = (mx - my) / (a + b).sqrt();
    let df = (a + b) * (a + b) / (a * a / (nx - 1.0) + b * b / (ny - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    (t, df, 1.0 - dist.cdf(t))
}

#[test]
fn welch_t_matches_oracle_on_fuzzed_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..100 {
        let nx = rng.gen_range(2..60);
        let ny = rng.gen_range(2..60);
        let x: Vec<f64> = (0..nx).map(|_| rng.gen::<f64>() * 3.0).collect();
        let y: Vec<f64> = (0..ny).map(|_| rng.gen::<f64>() * 3.0 + 0.4).collect();
        let (ot, odf, op) = oracle_welch(&x, &y);
        let r = t_one_tailed(&x, &y, Direction::XGreater).unwrap();
        assert!((r.statistic - ot).abs() < 1e-9);
        assert!((r.df.unwrap().0 - odf).abs() < 1e-9);
        assert!((r.p_value - op).abs() < 1e-6);
    }
}

#[test]
fn welch_t_size_126_fixture_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let x: Vec<f64> = (0..126).map(|_| 1.19 + 0.14 * (rng.gen::<f64>() - 0.5)).collect();
    let y: Vec<f64> = (0..126).map(|_| 1.25 + 0.14 * (rng.gen::<f64>() - 0.5)).collect();
    let (ot, _, op) = oracle_welch(&x, &y);
    let r = t_one_tailed(&x, &y, Direction::XGreater).unwrap();
    assert!((r.statistic - ot).abs() < 1e-9);
    assert!((r.p_value - op).abs() < 1e-6);
}

fn oracle_anova(groups: &[Vec<f64>]) -> (f64, f64) {
    let n: f64 = groups.iter().map(|g| g.len() as f64).sum();
    let k = groups.len() as f64;
    let grand: f64 = groups.iter().flatten().sum::<f64>() / n;
    let ssb: f64 = groups
        .iter()
        .map(|g| {
            let m = g.iter().sum::<f64>() / g.len() as f64;
            g.len() as f64 * (m - grand) * (m - grand)
        })
        .sum();
    let ssw: f64 = groups
        .iter()
        .map(|g| {
            let m = g.iter().sum::<f64>() / g.len() as f64;
            g.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
        })
        .sum();
    let f = (ssb / (k - 1.0)) / (ssw / (n - k));
    let dist = FisherSnedecor::new(k - 1.0, n - k).unwrap();
    (f, 1.0 - dist.cdf(f))
}

#[test]
fn anova_matches_oracle_on_fuzzed_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for _ in 0..100 {
        let k = rng.gen_range(2..7);
        let groups: Vec<Vec<f64>> = (0..k)
            .map(|gi| {
                let n = rng.gen_range(2..40);
                (0..n)
                    .map(|_| rng.gen::<f64>() + 0.3 * gi as f64)
                    .collect()
            })
            .collect();
        let (of, op) = oracle_anova(&groups);
        let r = anova_f(&groups).unwrap();
        assert!((r.statistic - of).abs() / of.max(1.0) < 1e-9);
        assert!((r.p_value - op).abs() < 1e-6);
    }
}

#[test]
fn anova_strong_effect_seven_groups_of_126() {
    // planted mean shifts large enough to drive p far below 1e-10
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let groups: Vec<Vec<f64>> = (0..7)
        .map(|gi| {
            (0..126)
                .map(|_| rng.gen::<f64>() * 0.2 + 0.25 * gi as f64)
                .collect()
        })
        .collect();
    let (of, op) = oracle_anova(&groups);
    let r = anova_f(&groups).unwrap();
    assert!((r.statistic - of).abs() / of < 1e-9);
    assert!((r.p_value - op).abs() < 1e-6);
    assert!(r.p_value < 1e-10, "strong-effect p was {}", r.p_value);
}

#[test]
fn anova_equals_pooled_t_squared_for_two_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for _ in 0..20 {
        let x: Vec<f64> = (0..rng.gen_range(2..30))
            .map(|_| rng.gen::<f64>() * 2.0)
            .collect();
        let y: Vec<f64> = (0..rng.gen_range(2..30))
            .map(|_| rng.gen::<f64>() * 2.0 + 0.5)
            .collect();
        let f = anova_f(&[x.clone(), y.clone()]).unwrap().statistic;
        let t = t_one_tailed_variant(&x, &y, Direction::XGreater, TTestVariant::Pooled)
            .unwrap()
            .statistic;
        assert!(
            (f - t * t).abs() < 1e-9 * f.max(1.0),
            "F = {f}, t^2 = {}",
            t * t
        );
    }
}

#[test]
fn pearson_matches_oracle_on_random_fixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let n = 20;
    let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|v| 0.6 * v + 0.4 * rng.gen::<f64>())
        .collect();
    // oracle from the covariance formula + statrs t
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>().sqrt();
    let sy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum::<f64>().sqrt();
    let or = cov / (sx * sy);
    let df = n as f64 - 2.0;
    let ot = or * (df / (1.0 - or * or)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    let op = 2.0 * (1.0 - dist.cdf(ot.abs()));
    let r = pearson(&x, &y).unwrap();
    assert!((r.statistic - or).abs() < 1e-9);
    assert!((r.p_value - op).abs() < 1e-9);
}

#[test]
fn fuzzed_p_values_stay_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for _ in 0..300 {
        let n1 = rng.gen_range(1..50u64);
        let n2 = rng.gen_range(1..50u64);
        let r = z_prop_cc(rng.gen_range(0..=n1), n1, rng.gen_range(0..=n2), n2).unwrap();
        assert!((0.0..=1.0).contains(&r.p_value));
    }
    for _ in 0..200 {
        let gen_sample = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let n = rng.gen_range(2..20);
            (0..n).map(|_| rng.gen::<f64>() * 10.0 - 5.0).collect()
        };
        let x = gen_sample(&mut rng);
        let y = gen_sample(&mut rng);
        if let Ok(r) = t_one_tailed(&x, &y, Direction::XGreater) {
            assert!((0.0..=1.0).contains(&r.p_value));
        }
        if let Ok(r) = anova_f(&[x.clone(), y.clone()]) {
            assert!((0.0..=1.0).contains(&r.p_value));
        }
        if x.len() == y.len() && x.len() >= 3 {
            if let Ok(r) = pearson(&x, &y) {
                assert!((0.0..=1.0).contains(&r.p_value));
            }
        }
    }
}

#[test]
fn wald_ci_against_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let normal = std_normal();
    for _ in 0..100 {
        let n = rng.gen_range(1..500u64);
        let k = rng.gen_range(0..=n);
        let alpha = rng.gen_range(0.001..0.5);
        let (lo, hi) = wald_ci(k, n, alpha).unwrap();
        let p = k as f64 / n as f64;
        let z = normal.inverse_cdf(1.0 - alpha / 2.0);
        let half = z * (p * (1.0 - p) / n as f64).sqrt();
        assert!((lo - (p - half).max(0.0)).abs() < 1e-9);
        assert!((hi - (p + half).min(1.0)).abs() < 1e-9);
    }
}
