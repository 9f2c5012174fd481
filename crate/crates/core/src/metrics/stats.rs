//! Rank correlation, fit, alignment and interval statistics.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::env::clear_market;

/// 1-based ranks with ties sharing the average of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson: length mismatch");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// Two-sided p-value from the t approximation with `n - 2` degrees of
    /// freedom.
    pub p_value: f64,
}

/// Spearman rank correlation. `None` for fewer than 3 points or a constant
/// input, where the coefficient is undefined.
pub fn spearman(pred: &[f64], actual: &[f64]) -> Option<Spearman> {
    assert_eq!(pred.len(), actual.len(), "spearman: length mismatch");
    let n = pred.len();
    if n < 3 {
        return None;
    }
    let rho = pearson(&average_ranks(pred), &average_ranks(actual))?;
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Some(Spearman { rho, p_value })
}

/// `1 - SS_res / SS_tot`. `None` when `actual` is constant or shorter than 2.
pub fn r_squared(pred: &[f64], actual: &[f64]) -> Option<f64> {
    assert_eq!(pred.len(), actual.len(), "r_squared: length mismatch");
    if actual.len() < 2 {
        return None;
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = pred.iter().zip(actual).map(|(p, a)| (a - p) * (a - p)).sum();
    Some(1.0 - ss_res / ss_tot)
}

/// R² on natural-log prices. `None` if any price is not positive.
pub fn log_r_squared(pred: &[f64], actual: &[f64]) -> Option<f64> {
    if pred.iter().chain(actual).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lp: Vec<f64> = pred.iter().map(|v| v.ln()).collect();
    let la: Vec<f64> = actual.iter().map(|v| v.ln()).collect();
    r_squared(&lp, &la)
}

/// Number of actual winners that the predicted prices also select.
pub fn winner_matches(pred_prices: &[f64], actual_winners: &[bool], x: usize) -> usize {
    assert_eq!(pred_prices.len(), actual_winners.len(), "alignment: length mismatch");
    let predicted = clear_market(pred_prices, x).winners;
    predicted
        .iter()
        .zip(actual_winners)
        .filter(|(p, a)| **p && **a)
        .count()
}

/// Share of the `x` winner slots on which prediction and reality agree.
pub fn winner_alignment(pred_prices: &[f64], actual_winners: &[bool], x: usize) -> f64 {
    if x == 0 {
        return f64::NAN;
    }
    winner_matches(pred_prices, actual_winners, x) as f64 / x as f64
}

/// Aggregates `(matched, slots)` per drug: slot-weighted (micro) and plain
/// mean of per-drug rates (macro).
pub fn aggregate_alignment(per_drug: &[(usize, usize)]) -> (f64, f64) {
    let slots: usize = per_drug.iter().map(|d| d.1).sum();
    let matched: usize = per_drug.iter().map(|d| d.0).sum();
    let micro = if slots == 0 {
        f64::NAN
    } else {
        matched as f64 / slots as f64
    };
    let rates: Vec<f64> = per_drug
        .iter()
        .filter(|d| d.1 > 0)
        .map(|&(m, s)| m as f64 / s as f64)
        .collect();
    let macro_ = if rates.is_empty() {
        f64::NAN
    } else {
        rates.iter().sum::<f64>() / rates.len() as f64
    };
    (micro, macro_)
}

pub fn bid_ceiling_ratio(prices: &[f64], p_max: f64) -> Vec<f64> {
    assert!(p_max > 0.0, "price ceiling must be positive");
    prices.iter().map(|p| p / p_max).collect()
}

/// Mean with a 95% confidence interval: Student t for fewer than 10 samples,
/// normal otherwise. The interval is NaN for fewer than 2 samples.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let q = if n < 10 {
        StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("df >= 1")
            .inverse_cdf(0.975)
    } else {
        Normal::standard().inverse_cdf(0.975)
    };
    (mean, mean - q * se, mean + q * se)
}

/// Linear-interpolated quantile (`q` in `[0, 1]`) of unsorted data.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}
