//! Small descriptive statistics shared across modules.

use alloc::vec::Vec;

use crate::math;

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Population (1/n) variance.
pub fn variance(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    Some(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64)
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> Option<f64> {
    variance(xs).map(math::sqrt)
}

/// Median of the finite values; `None` when there are none.
pub fn median(xs: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Pearson correlation. Undefined (None) for fewer than `min_points` pairs or
/// when either side has zero variance.
pub fn pearson_min(xs: &[f64], ys: &[f64], min_points: usize) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < min_points.max(2) {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs[..n].iter().zip(&ys[..n]) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / math::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Pearson correlation with the usual three-point minimum.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    pearson_min(xs, ys, 3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn pearson_basic() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 4.0, 6.0, 8.0];
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let y2 = [8.0, 6.0, 4.0, 2.0];
        assert!((pearson(&x, &y2).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&x[..2], &y[..2]), None);
        assert_eq!(pearson(&x, &[1.0; 4]), None);
    }

    #[test]
    fn population_std() {
        assert!((std_dev(&[0.0, 10.0]).unwrap() - 5.0).abs() < 1e-15);
    }
}
