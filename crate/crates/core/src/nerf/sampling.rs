//! Ray sample placement: stratified bins, evaluation-mode bin centers, and
//! depth-guided sampling around a prior.

use crate::rng::Rng;

/// One uniform draw per equal-width bin over [t_near, t_far]; sorted by
/// construction.
pub fn stratified_sample(t_near: f64, t_far: f64, n: usize, rng: &mut Rng) -> Vec<f64> {
    assert!(n >= 2 && t_near < t_far);
    let bin = (t_far - t_near) / n as f64;
    (0..n)
        .map(|i| t_near + (i as f64 + rng.uniform()) * bin)
        .collect()
}

/// Deterministic bin centers, used for evaluation-mode rendering.
pub fn eval_centers(t_near: f64, t_far: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && t_near < t_far);
    let bin = (t_far - t_near) / n as f64;
    (0..n).map(|i| t_near + (i as f64 + 0.5) * bin).collect()
}

/// Mix of Gaussian samples around a depth prior and stratified coverage.
///
/// `ceil(fraction * n)` samples are drawn from N(prior_depth, prior_sigma^2)
/// clamped to the range; the remainder is stratified over the full range.
/// Falls back to plain stratified sampling when the prior is absent or out
/// of range. Duplicate or out-of-order samples after the merge are nudged
/// apart by 1e-9.
pub fn depth_guided_sample(
    t_near: f64,
    t_far: f64,
    n: usize,
    prior: Option<(f64, f64)>,
    fraction_guided: f64,
    rng: &mut Rng,
) -> Vec<f64> {
    assert!(n >= 2 && t_near < t_far);
    assert!((0.0..=1.0).contains(&fraction_guided));
    let prior = prior.filter(|(depth, _)| (t_near..=t_far).contains(depth));
    let n_guided = match prior {
        Some(_) => (fraction_guided * n as f64).ceil() as usize,
        None => 0,
    };
    if n_guided == 0 {
        return stratified_sample(t_near, t_far, n, rng);
    }
    let (prior_depth, prior_sigma) = prior.unwrap();
    let mut ts = Vec::with_capacity(n);
    for _ in 0..n_guided {
        ts.push((prior_depth + prior_sigma * rng.normal()).clamp(t_near, t_far));
    }
    let n_strat = n - n_guided;
    if n_strat >= 2 {
        ts.extend(stratified_sample(t_near, t_far, n_strat, rng));
    } else if n_strat == 1 {
        ts.push(rng.range(t_near, t_far));
    }
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Jitter exact duplicates so spacings stay strictly positive.
    for i in 1..ts.len() {
        if ts[i] <= ts[i - 1] {
            ts[i] = ts[i - 1] + 1e-9;
        }
    }
    ts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stratified_one_sample_per_bin() {
        let mut rng = Rng::new(3);
        for _ in 0..100 {
            let ts = stratified_sample(0.0, 1.0, 2, &mut rng);
            assert!((0.0..0.5).contains(&ts[0]));
            assert!((0.5..1.0).contains(&ts[1]));
        }
    }

    #[test]
    fn stratified_deterministic_for_seed() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        assert_eq!(
            stratified_sample(0.05, 10.0, 32, &mut a),
            stratified_sample(0.05, 10.0, 32, &mut b)
        );
    }

    #[test]
    fn stratified_bin_means_match_uniform_statistics() {
        // 1e5 draws over 8 bins: each bin's sample mean approaches the bin
        // center; the standard error of a U(bin) mean is width/sqrt(12 m).
        let mut rng = Rng::new(11);
        let n = 8;
        let m = 100_000 / n;
        let mut sums = vec![0.0; n];
        for _ in 0..m {
            let ts = stratified_sample(0.0, 1.0, n, &mut rng);
            for (s, t) in sums.iter_mut().zip(&ts) {
                *s += t;
            }
        }
        let bin = 1.0 / n as f64;
        let se = bin / (12.0f64 * m as f64).sqrt();
        for (i, s) in sums.iter().enumerate() {
            let mean = s / m as f64;
            let center = (i as f64 + 0.5) * bin;
            assert!(
                (mean - center).abs() < 3.0 * se,
                "bin {i}: mean {mean} center {center} (3se {})",
                3.0 * se
            );
        }
    }

    #[test]
    fn zero_fraction_identical_to_stratified() {
        let mut a = Rng::new(5);
        let mut b = Rng::new(5);
        let guided = depth_guided_sample(0.1, 4.0, 16, Some((2.0, 0.3)), 0.0, &mut a);
        let plain = stratified_sample(0.1, 4.0, 16, &mut b);
        assert_eq!(guided, plain);
    }

    #[test]
    fn absent_prior_falls_back_to_stratified() {
        let mut a = Rng::new(5);
        let mut b = Rng::new(5);
        assert_eq!(
            depth_guided_sample(0.1, 4.0, 16, None, 0.5, &mut a),
            stratified_sample(0.1, 4.0, 16, &mut b)
        );
        // Out-of-range prior behaves like no prior.
        let mut c = Rng::new(5);
        assert_eq!(
            depth_guided_sample(0.1, 4.0, 16, Some((9.0, 0.1)), 0.5, &mut c),
            depth_guided_sample(0.1, 4.0, 16, None, 0.5, &mut Rng::new(5))
        );
    }

    #[test]
    fn full_fraction_tiny_sigma_collapses_to_prior() {
        let mut rng = Rng::new(9);
        let ts = depth_guided_sample(0.1, 4.0, 8, Some((1.7, 1e-300)), 1.0, &mut rng);
        // Post-clamp, pre-jitter all samples equal the prior; the dedupe
        // jitter separates them by at most (n-1) * 1e-9.
        for t in &ts {
            assert!((t - 1.7).abs() <= 8.0 * 1e-9);
        }
    }

    #[test]
    fn half_fraction_concentrates_density_near_prior() {
        let mut rng = Rng::new(13);
        let prior = 2.0;
        let sigma = 0.1;
        let mut near = 0usize;
        let mut total = 0usize;
        for _ in 0..2000 {
            let ts = depth_guided_sample(0.0, 10.0, 16, Some((prior, sigma)), 0.5, &mut rng);
            for t in ts {
                total += 1;
                if (t - prior).abs() < 0.2 {
                    near += 1;
                }
            }
        }
        // Uniform baseline would put 4% of samples within +-0.2 of the prior.
        let frac = near as f64 / total as f64;
        assert!(frac > 0.3, "near-prior fraction {frac}");
    }

    #[test]
    fn samples_strictly_increasing() {
        let mut rng = Rng::new(17);
        for _ in 0..200 {
            let ts = depth_guided_sample(0.05, 10.0, 24, Some((3.0, 0.05)), 0.7, &mut rng);
            for w in ts.windows(2) {
                assert!(w[1] > w[0]);
            }
        }
    }
}
