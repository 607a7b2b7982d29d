//! The statistical battery used to compare corpora: Wald binomial intervals,
//! the one-tailed two-proportion Z-test with continuity correction, one-tailed
//! T-tests (Welch by default, pooled behind a flag), one-way ANOVA, Pearson
//! correlation, and the fixed-size subset resampling harness.
//!
//! All operations are pure functions.

pub mod special;

mod resample;
pub use resample::{resample_subsets, SubsetPlan};

use special::{f_sf, normal_quantile, normal_sf, t_cdf, t_sf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFamily {
    WaldCi,
    ZPropCc,
    TOneTailed,
    AnovaF,
    Pearson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    Left,
    Right,
    Two,
}

/// Which sample the one-tailed alternative favors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    XGreater,
    XLess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TTestVariant {
    Welch,
    Pooled,
}

/// Summary of one input sample, carried in the result for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatResult {
    pub statistic: f64,
    pub p_value: f64,
    pub test: TestFamily,
    pub tail: Tail,
    pub samples: Vec<SampleSummary>,
    /// Degrees of freedom where the test has them: (df,) or (df1, df2).
    pub df: Option<(f64, f64)>,
    /// Set when the inputs were degenerate and the statistic is a limit
    /// value rather than a finite estimate.
    pub degenerate: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n − 1 denominator).
fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn summarize(xs: &[f64]) -> SampleSummary {
    SampleSummary {
        n: xs.len(),
        mean: mean(xs),
        var: if xs.len() > 1 { sample_var(xs) } else { 0.0 },
    }
}

fn check_finite(xs: &[f64], name: &str) -> Result<(), StatsError> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::InvalidArgument(format!(
            "{name} contains non-finite values"
        )));
    }
    Ok(())
}

/// Wald binomial confidence interval, clipped to [0, 1].
pub fn wald_ci(k: u64, n: u64, alpha: f64) -> Result<(f64, f64), StatsError> {
    if n == 0 {
        return Err(StatsError::InvalidArgument("n must be >= 1".into()));
    }
    if k > n {
        return Err(StatsError::InvalidArgument(format!("k={k} exceeds n={n}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidArgument(format!(
            "alpha={alpha} outside (0,1)"
        )));
    }
    let p_hat = k as f64 / n as f64;
    let z = normal_quantile(1.0 - alpha / 2.0);
    let half = z * (p_hat * (1.0 - p_hat) / n as f64).sqrt();
    Ok(((p_hat - half).max(0.0), (p_hat + half).min(1.0)))
}

/// One-tailed two-proportion Z-test with Yates continuity correction.
/// Tests H0: p1 <= p2 against H1: p1 > p2; right-tail p-value.
///
/// The correction `(1/n1 + 1/n2)/2` is subtracted from |p̂1 − p̂2| but capped
/// so it can never reverse the sign of the observed difference.
pub fn z_prop_cc(k1: u64, n1: u64, k2: u64, n2: u64) -> Result<StatResult, StatsError> {
    if n1 == 0 || n2 == 0 {
        return Err(StatsError::InvalidArgument("n1 and n2 must be >= 1".into()));
    }
    if k1 > n1 || k2 > n2 {
        return Err(StatsError::InvalidArgument(
            "successes exceed trial counts".into(),
        ));
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let p1 = k1 as f64 / n1f;
    let p2 = k2 as f64 / n2f;
    let pooled = (k1 + k2) as f64 / (n1f + n2f);
    let samples = vec![
        SampleSummary { n: n1 as usize, mean: p1, var: p1 * (1.0 - p1) },
        SampleSummary { n: n2 as usize, mean: p2, var: p2 * (1.0 - p2) },
    ];

    let se = (pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f)).sqrt();
    if se == 0.0 {
        // Pooled proportion 0 or 1 forces p̂1 = p̂2.
        let p_value = if p1 <= p2 { 1.0 } else { 0.0 };
        return Ok(StatResult {
            statistic: 0.0,
            p_value,
            test: TestFamily::ZPropCc,
            tail: Tail::Right,
            samples,
            df: None,
            degenerate: true,
        });
    }

    let diff = p1 - p2;
    let cc = 0.5 * (1.0 / n1f + 1.0 / n2f);
    let corrected = (diff.abs() - cc).max(0.0);
    let z = diff.signum() * corrected / se;
    Ok(StatResult {
        statistic: z,
        p_value: normal_sf(z),
        test: TestFamily::ZPropCc,
        tail: Tail::Right,
        samples,
        df: None,
        degenerate: false,
    })
}

/// One-tailed two-sample T-test, Welch's unequal-variance form.
pub fn t_one_tailed(
    x: &[f64],
    y: &[f64],
    direction: Direction,
) -> Result<StatResult, StatsError> {
    t_one_tailed_variant(x, y, direction, TTestVariant::Welch)
}

pub fn t_one_tailed_variant(
    x: &[f64],
    y: &[f64],
    direction: Direction,
    variant: TTestVariant,
) -> Result<StatResult, StatsError> {
    if x.len() < 2 || y.len() < 2 {
        return Err(StatsError::InvalidArgument(
            "each sample needs at least 2 values".into(),
        ));
    }
    check_finite(x, "x")?;
    check_finite(y, "y")?;
    let (sx, sy) = (summarize(x), summarize(y));
    let (nx, ny) = (sx.n as f64, sy.n as f64);

    let (se2, df) = match variant {
        TTestVariant::Welch => {
            let a = sx.var / nx;
            let b = sy.var / ny;
            let se2 = a + b;
            let df = if se2 > 0.0 {
                se2 * se2 / (a * a / (nx - 1.0) + b * b / (ny - 1.0))
            } else {
                nx + ny - 2.0
            };
            (se2, df)
        }
        TTestVariant::Pooled => {
            let df = nx + ny - 2.0;
            let sp2 = ((nx - 1.0) * sx.var + (ny - 1.0) * sy.var) / df;
            (sp2 * (1.0 / nx + 1.0 / ny), df)
        }
    };

    let diff = sx.mean - sy.mean;
    if se2 == 0.0 {
        if diff == 0.0 {
            return Err(StatsError::DegenerateData(
                "zero variance in both samples and equal means".into(),
            ));
        }
        let favored = match direction {
            Direction::XGreater => diff > 0.0,
            Direction::XLess => diff < 0.0,
        };
        return Ok(StatResult {
            statistic: if diff > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
            p_value: if favored { 0.0 } else { 1.0 },
            test: TestFamily::TOneTailed,
            tail: tail_of(direction),
            samples: vec![sx, sy],
            df: Some((df, 0.0)),
            degenerate: true,
        });
    }

    let t = diff / se2.sqrt();
    let p_value = match direction {
        Direction::XGreater => t_sf(t, df),
        Direction::XLess => t_cdf(t, df),
    };
    Ok(StatResult {
        statistic: t,
        p_value,
        test: TestFamily::TOneTailed,
        tail: tail_of(direction),
        samples: vec![sx, sy],
        df: Some((df, 0.0)),
        degenerate: false,
    })
}

fn tail_of(direction: Direction) -> Tail {
    match direction {
        Direction::XGreater => Tail::Right,
        Direction::XLess => Tail::Left,
    }
}

/// One-way ANOVA F-test over two or more groups.
pub fn anova_f(groups: &[Vec<f64>]) -> Result<StatResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::InvalidArgument(
            "ANOVA needs at least 2 groups".into(),
        ));
    }
    for (i, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(StatsError::InvalidArgument(format!(
                "group {i} has fewer than 2 values"
            )));
        }
        check_finite(g, "group")?;
    }
    let k = groups.len() as f64;
    let n_total: usize = groups.iter().map(Vec::len).sum();
    let n = n_total as f64;
    let grand = groups.iter().flatten().sum::<f64>() / n;

    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = mean(g);
        ss_between += g.len() as f64 * (m - grand) * (m - grand);
        ss_within += g.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    }
    let df1 = k - 1.0;
    let df2 = n - k;
    let samples = groups.iter().map(|g| summarize(g)).collect();

    if ss_within == 0.0 {
        if ss_between == 0.0 {
            return Err(StatsError::DegenerateData("all values identical".into()));
        }
        return Ok(StatResult {
            statistic: f64::INFINITY,
            p_value: 0.0,
            test: TestFamily::AnovaF,
            tail: Tail::Right,
            samples,
            df: Some((df1, df2)),
            degenerate: true,
        });
    }

    let f = (ss_between / df1) / (ss_within / df2);
    Ok(StatResult {
        statistic: f,
        p_value: f_sf(f, df1, df2),
        test: TestFamily::AnovaF,
        tail: Tail::Right,
        samples,
        df: Some((df1, df2)),
        degenerate: false,
    })
}

/// Sample Pearson correlation with a two-tailed p-value from the exact
/// t transform with n − 2 degrees of freedom. The reported statistic is r.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<StatResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::InvalidArgument("length mismatch".into()));
    }
    if x.len() < 3 {
        return Err(StatsError::InvalidArgument(
            "pearson needs at least 3 pairs".into(),
        ));
    }
    check_finite(x, "x")?;
    check_finite(y, "y")?;
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateData(
            "zero variance in an input".into(),
        ));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = n - 2.0;
    let samples = vec![summarize(x), summarize(y)];
    if 1.0 - r * r <= f64::EPSILON {
        return Ok(StatResult {
            statistic: r,
            p_value: 0.0,
            test: TestFamily::Pearson,
            tail: Tail::Two,
            samples,
            df: Some((df, 0.0)),
            degenerate: true,
        });
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    Ok(StatResult {
        statistic: r,
        p_value: 2.0 * t_sf(t.abs(), df),
        test: TestFamily::Pearson,
        tail: Tail::Two,
        samples,
        df: Some((df, 0.0)),
        degenerate: false,
    })
}
