//! Rank and circular correlation coefficients.

use crate::error::{Error, Result};

fn check(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least two samples"));
    }
    Ok(())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("constant sample in correlation".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// 1-based ranks; ties share their average rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check(x, y)?;
    pearson(&ranks(x), &ranks(y))
}

/// Direction of the resultant vector, in `(-pi, pi]`.
pub fn circular_mean(angles: &[f64]) -> f64 {
    let (s, c) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    s.atan2(c)
}

/// Circular-circular correlation of Jammalamadaka and SenGupta.
pub fn circular_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    check(a, b)?;
    let ma = circular_mean(a);
    let mb = circular_mean(b);
    let mut num = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let sa = (x - ma).sin();
        let sb = (y - mb).sin();
        num += sa * sb;
        saa += sa * sa;
        sbb += sb * sb;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("angles concentrated at their mean".into()));
    }
    Ok(num / (saa * sbb).sqrt())
}
