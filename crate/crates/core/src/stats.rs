//! Small numerical helpers: moments, standard errors, quadrature weights.

/// Arithmetic mean; 0 for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; 0 when fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the mean, treating the values as independent.
pub fn std_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means. Trailing values that do not fill a batch are dropped from
/// the error estimate only.
pub fn batch_means_error(xs: &[f64], batches: usize) -> f64 {
    let batches = batches.max(2).min(xs.len());
    if batches < 2 {
        return 0.0;
    }
    let len = xs.len() / batches;
    let means: Vec<f64> = xs.chunks_exact(len).take(batches).map(mean).collect();
    std_error(&means)
}

/// `log(sum_i exp(a_i))`, stable; `-inf` for an empty input.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Wilson score interval for `hits` successes out of `n` trials at `z` sigmas.
pub fn wilson_interval(hits: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = hits as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Weights of the composite Simpson rule on an arbitrary increasing grid.
///
/// Pairs of intervals use the three-point rule for unequal spacing; an odd
/// trailing interval falls back to the trapezoid rule.
pub fn simpson_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    if n < 2 {
        return w;
    }
    let mut i = 0;
    while i + 2 < n {
        let h0 = grid[i + 1] - grid[i];
        let h1 = grid[i + 2] - grid[i + 1];
        let total = h0 + h1;
        w[i] += total / 6.0 * (2.0 - h1 / h0);
        w[i + 1] += total / 6.0 * total * total / (h0 * h1);
        w[i + 2] += total / 6.0 * (2.0 - h0 / h1);
        i += 2;
    }
    if i + 1 < n {
        let h = grid[i + 1] - grid[i];
        w[i] += h / 2.0;
        w[i + 1] += h / 2.0;
    }
    w
}

/// Weights of the composite trapezoid rule.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let h = grid[i + 1] - grid[i];
        w[i] += h / 2.0;
        w[i + 1] += h / 2.0;
    }
    w
}

/// Cumulative Simpson integrals `int_{grid[0]}^{grid[j]}` for every even `j`
/// (and the final node), by applying [`simpson_weights`] to each prefix.
pub fn cumulative_simpson(grid: &[f64], values: &[f64]) -> Vec<f64> {
    (0..grid.len())
        .map(|j| {
            let w = simpson_weights(&grid[..=j]);
            w.iter().zip(values).map(|(a, b)| a * b).sum()
        })
        .collect()
}
