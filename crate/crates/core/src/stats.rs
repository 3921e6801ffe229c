//! Small statistics toolbox: Pearson correlation plus the significance
//! tests the experiment harness reports.

use crate::error::{Error, Result};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} observations", xs.len()),
            got: format!("{}", ys.len()),
        });
    }
    if xs.len() < 2 {
        return Err(Error::InvalidConfig("pearson needs at least 2 observations".into()));
    }
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// One-sided paired t test for H1: mean(a - b) > 0.
/// Returns (t statistic, p value).
pub fn paired_t_one_sided(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidConfig("paired test needs matched samples, n >= 2".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let m = mean(&diffs);
    let sd = std_dev(&diffs);
    if sd == 0.0 {
        // all differences identical: significance degenerates to the sign
        return Ok(if m > 0.0 { (f64::INFINITY, 0.0) } else { (f64::NEG_INFINITY, 1.0) });
    }
    let n = diffs.len() as f64;
    let t = m / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::InvalidConfig(format!("t distribution: {e}")))?;
    Ok((t, 1.0 - dist.cdf(t)))
}

/// Exact one-sided sign test: P(X >= n_pos) for X ~ Binomial(n_pos + n_neg, 1/2).
pub fn sign_test_pvalue(n_pos: usize, n_neg: usize) -> f64 {
    let n = n_pos + n_neg;
    if n == 0 {
        return 1.0;
    }
    let mut tail = 0.0;
    for k in n_pos..=n {
        tail += binomial_coeff(n, k);
    }
    tail / 2f64.powi(n as i32)
}

fn binomial_coeff(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Pearson chi-square statistic against uniform expected counts.
pub fn chi_square_uniform(observed: &[u64]) -> f64 {
    let total: u64 = observed.iter().sum();
    let expected = total as f64 / observed.len() as f64;
    observed
        .iter()
        .map(|&o| {
            let d = o as f64 - expected;
            d * d / expected
        })
        .sum()
}

/// Upper critical value of the chi-square distribution.
pub fn chi_square_critical(dof: usize, alpha: f64) -> f64 {
    ChiSquared::new(dof as f64)
        .expect("valid dof")
        .inverse_cdf(1.0 - alpha)
}
