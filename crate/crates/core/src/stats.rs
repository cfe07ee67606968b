//! Small numeric helpers shared by the choose rules and the metrics.

use alloc::vec::Vec;

use crate::{Error, Result};

/// Pearson correlation coefficient of two equally long samples.
///
/// Fails with [`Error::ConstantVector`] when either sample has zero spread,
/// where the coefficient is undefined.
pub fn pearson_r(p: &[f64], r: &[f64]) -> Result<f64> {
    if p.len() != r.len() {
        return Err(Error::LengthMismatch("pearson inputs differ in length"));
    }
    if p.len() < 2 {
        return Err(Error::LengthMismatch("pearson needs at least two points"));
    }
    let n = p.len() as f64;
    let mp = p.iter().sum::<f64>() / n;
    let mr = r.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vr) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.iter().zip(r) {
        let (da, db) = (a - mp, b - mr);
        cov += da * db;
        vp += da * da;
        vr += db * db;
    }
    if vp == 0.0 || vr == 0.0 {
        return Err(Error::ConstantVector);
    }
    Ok((cov / (libm::sqrt(vp) * libm::sqrt(vr))).clamp(-1.0, 1.0))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    libm::sqrt(ss / (xs.len() - 1) as f64)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(xs.iter().map(|x| libm::exp(x - max)).sum::<f64>())
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}
