//! Kernel-scale rules.

use std::fmt::Debug;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::registry::{Registry, StrategySpec};

pub trait EpsilonRule: Send + Sync + Debug {
    /// Picks a kernel scale from a symmetric distance matrix.
    fn select(&self, distances: &DMatrix<f64>) -> Result<f64>;
}

pub fn registry() -> Registry<dyn EpsilonRule> {
    let mut reg: Registry<dyn EpsilonRule> = Registry::new("epsilon");
    reg.register(
        "median",
        "factor times the median of the strictly-lower-triangle distances",
        |spec| {
            spec.check_keys(&["factor"])?;
            let factor = spec.param("factor", 5.0);
            if !(factor > 0.0 && factor.is_finite()) {
                return Err(Error::invalid("median factor must be positive"));
            }
            Ok(Box::new(MedianRule { factor }))
        },
    );
    reg.register("fixed", "a fixed, user-supplied scale", |spec| {
        spec.check_keys(&["value"])?;
        let value = spec
            .params
            .get("value")
            .copied()
            .ok_or_else(|| Error::invalid("fixed epsilon needs `value`"))?;
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::invalid("fixed epsilon must be positive"));
        }
        Ok(Box::new(FixedRule { value }))
    });
    reg
}

/// One median. A bare `median` means five medians.
pub fn default_spec() -> StrategySpec {
    StrategySpec::named("median").with("factor", 1.0)
}

#[derive(Debug, Clone)]
pub struct MedianRule {
    pub factor: f64,
}

impl EpsilonRule for MedianRule {
    fn select(&self, distances: &DMatrix<f64>) -> Result<f64> {
        let med = lower_triangle_median(distances)?;
        if !(med > 0.0) {
            return Err(Error::Degenerate(
                "median pairwise distance is zero".into(),
            ));
        }
        Ok(self.factor * med)
    }
}

#[derive(Debug, Clone)]
pub struct FixedRule {
    pub value: f64,
}

impl EpsilonRule for FixedRule {
    fn select(&self, distances: &DMatrix<f64>) -> Result<f64> {
        if distances.nrows() < 2 {
            return Err(Error::Degenerate("need at least two points".into()));
        }
        Ok(self.value)
    }
}

/// Median of `{d_ij : i > j}`; an even count averages the two central values.
pub fn lower_triangle_median(distances: &DMatrix<f64>) -> Result<f64> {
    let m = distances.nrows();
    if m < 2 || distances.ncols() != m {
        return Err(Error::Degenerate(
            "need a square distance matrix with at least two points".into(),
        ));
    }
    let mut v = Vec::with_capacity(m * (m - 1) / 2);
    for j in 0..m {
        for i in j + 1..m {
            v.push(distances[(i, j)]);
        }
    }
    Ok(median(&mut v))
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, hi, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Distance matrix whose strict lower triangle holds `vals` (column-major).
    fn from_lower(m: usize, vals: &[f64]) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(m, m);
        let mut k = 0;
        for j in 0..m {
            for i in j + 1..m {
                d[(i, j)] = vals[k];
                d[(j, i)] = vals[k];
                k += 1;
            }
        }
        d
    }

    #[test]
    fn median_rule_examples() {
        let rule = MedianRule { factor: 5.0 };
        // 3 points: 3 distances
        assert_eq!(rule.select(&from_lower(3, &[3.0, 1.0, 2.0])).unwrap(), 10.0);
        // 4 points: 6 distances with median 2.5
        let d = from_lower(4, &[1.0, 4.0, 2.0, 3.0, 2.0, 3.0]);
        assert_eq!(rule.select(&d).unwrap(), 12.5);
        let d = from_lower(4, &[0.7; 6]);
        assert!((rule.select(&d).unwrap() - 3.5).abs() < 1e-15);
    }

    #[test]
    fn even_count_median() {
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&mut [2.0, 1.0, 3.0]), 2.0);
    }

    #[test]
    fn degenerate_inputs() {
        let rule = MedianRule { factor: 5.0 };
        assert!(matches!(
            rule.select(&DMatrix::zeros(3, 3)),
            Err(Error::Degenerate(_))
        ));
        assert!(rule.select(&DMatrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn registry_entries() {
        let reg = registry();
        let fixed = reg.create(&"fixed:value=2.5".parse().unwrap()).unwrap();
        assert_eq!(fixed.select(&from_lower(2, &[1.0])).unwrap(), 2.5);
        assert!(reg.create(&"fixed".parse().unwrap()).is_err());
        let med = reg.create(&default_spec()).unwrap();
        assert_eq!(med.select(&from_lower(2, &[1.0])).unwrap(), 1.0);
        let five = reg.create(&"median".parse().unwrap()).unwrap();
        assert_eq!(five.select(&from_lower(2, &[1.0])).unwrap(), 5.0);
    }
}
