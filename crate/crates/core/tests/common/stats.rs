use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Asymptotic Kolmogorov-Smirnov p-value (with Stephens' small-sample
/// correction) for `samples` against the standard normal.
pub fn ks_standard_normal(samples: &[f64]) -> f64 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = normal.cdf(*x);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..=100).map(|k| {
        let k = k as f64;
        2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
    }).sum();
    p.clamp(0.0, 1.0)
}

/// Upper-tail p-value of Pearson's χ² statistic for observed counts against
/// expected probabilities.
pub fn chi_square_p(counts: &[usize], probs: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}
