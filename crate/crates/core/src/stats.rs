//! Small order statistics shared by calibration code.

use crate::error::{Error, Result};

/// Lower nearest-rank quantile: the `floor(q * n)`-th smallest value (1-based),
/// clamped to the smallest element.
///
/// Whenever `q * n >= 1` and the value at that rank is not tied, at least
/// `(1 - q) * n` of the inputs lie strictly above the result.
pub fn nearest_rank_lower(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("quantile of an empty set"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile level must be in [0, 1], got {q}")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("quantile input contains NaN"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64) + 1e-9).floor().max(1.0) as usize;
    Ok(v[rank.min(v.len()) - 1])
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn examples() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        assert_eq!(nearest_rank_lower(&v, 0.01).unwrap(), 0.01);
        let w: Vec<f64> = (1..=10).rev().map(|i| i as f64 / 10.0).collect();
        assert_eq!(nearest_rank_lower(&w, 0.10).unwrap(), 0.1);
        assert_eq!(nearest_rank_lower(&[0.3; 7], 0.5).unwrap(), 0.3);
        assert!(nearest_rank_lower(&[], 0.1).is_err());
    }

    proptest! {
        #[test]
        fn strictly_above_fraction(v in prop::collection::btree_set(0u32..1_000_000, 1..300), q in 0.0f64..0.5) {
            let v: Vec<f64> = v.into_iter().map(|x| x as f64 / 1e6).collect();
            let t = nearest_rank_lower(&v, q).unwrap();
            let above = v.iter().filter(|&&x| x > t).count() as f64;
            let n = v.len() as f64;
            if q * n >= 1.0 {
                prop_assert!(above >= (1.0 - q) * n - 1e-9);
            } else {
                prop_assert_eq!(above, n - 1.0);
            }
        }
    }
}
