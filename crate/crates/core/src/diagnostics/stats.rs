use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Result};

/// Sample Pearson correlation with its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStat {
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

/// Welch's unequal-variance two-sample t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Two-sided tail probability of `|t|` under Student's t with `df` degrees of freedom.
fn two_sided_p(t: f64, df: f64) -> Result<f64> {
    if t.is_infinite() {
        return Ok(0.0);
    }
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| invalid(format!("t distribution: {e}")))?;
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}

pub fn pearson_r_p(x: &[f64], y: &[f64]) -> Result<CorrelationStat> {
    let n = x.len();
    if n != y.len() {
        return Err(invalid(format!("correlation inputs differ in length: {n} vs {}", y.len())));
    }
    if n < 3 {
        return Err(invalid(format!("correlation needs at least 3 points, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("correlation inputs must be finite"));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(invalid("correlation undefined for a zero-variance input"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 { 0.0 } else { two_sided_p(r * (df / (1.0 - r * r)).sqrt(), df)? };
    Ok(CorrelationStat { r, p, n })
}

/// Welch t-test of `a` against `b`. Each group needs two or more samples.
/// Two zero-variance groups give `t = 0, p = 1` when their means agree and
/// an infinite `t` with `p = 0` otherwise.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(invalid(format!("t-test needs two samples per group, got {} and {}", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(invalid("t-test inputs must be finite"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / (na - 1.0);
    let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / (nb - 1.0);
    let (qa, qb) = (va / na, vb / nb);
    let se2 = qa + qb;
    if se2 == 0.0 {
        let df = na + nb - 2.0;
        return Ok(if ma == mb {
            WelchTest { t: 0.0, df, p: 1.0, mean_a: ma, mean_b: mb }
        } else {
            WelchTest { t: (ma - mb).signum() * f64::INFINITY, df, p: 0.0, mean_a: ma, mean_b: mb }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    Ok(WelchTest { t, df, p: two_sided_p(t, df)?, mean_a: ma, mean_b: mb })
}

/// First-component fraction against normalised accuracy: correlation, plus a
/// t-test between points with fraction below 0.5 and the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstComponentAnalysis {
    pub correlation: CorrelationStat,
    pub split_test: WelchTest,
    pub below: usize,
    pub at_or_above: usize,
}

pub const FIRST_COMPONENT_SPLIT: f64 = 0.5;

/// `points` are `(fraction explained by the first component, normalised accuracy)`.
pub fn first_component_analysis(points: &[(f64, f64)]) -> Result<FirstComponentAnalysis> {
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let correlation = pearson_r_p(&x, &y)?;
    let low: Vec<f64> = points.iter().filter(|(f, _)| *f < FIRST_COMPONENT_SPLIT).map(|p| p.1).collect();
    let high: Vec<f64> = points.iter().filter(|(f, _)| *f >= FIRST_COMPONENT_SPLIT).map(|p| p.1).collect();
    if low.is_empty() || high.is_empty() {
        return Err(invalid(format!(
            "both sides of the {FIRST_COMPONENT_SPLIT} split must be populated ({} below, {} at or above)",
            low.len(),
            high.len()
        )));
    }
    let split_test = welch_t_test(&low, &high)?;
    Ok(FirstComponentAnalysis { correlation, split_test, below: low.len(), at_or_above: high.len() })
}

/// One CSV row per pretext: `pretext,r,p,n`, values to two decimals.
pub fn render_correlation_table(rows: &[(String, CorrelationStat)]) -> String {
    let mut out = String::from("pretext,r,p,n\n");
    for (name, s) in rows {
        out.push_str(&format!("{name},{:.2},{:.2},{}\n", s.r, s.p, s.n));
    }
    out
}
