//! Volume rendering that propagates separate color and depth Gaussians.
//!
//! Quadrature weights: w_i = T_i (1 - exp(-tau_i delta_i)) with
//! T_i = exp(-sum_{j<i} tau_j delta_j) and delta_i = t_{i+1} - t_i; the last
//! spacing is capped at t_far - t_N. A rendered pixel carries
//! C = sum w_i c_i with variance sum w_i^2 var_i per channel, plus expected
//! depth z = sum w_i t_i with variance sum w_i (t_i - z)^2.

use super::field::{FieldArch, FieldOutput, EPS_VAR};
use super::NerfError;
use crate::diff::{ParamSet, Tape, Tensor, Var};
use crate::geom::{CameraView, Vec3};
use crate::par;

/// Rendered pixel as two Gaussians plus total opacity.
#[derive(Debug, Clone, Copy)]
pub struct GaussianPixel {
    pub color_mean: [f64; 3],
    pub color_var: [f64; 3],
    pub depth_mean: f64,
    /// Raw quadrature value sum w_i (t_i - z)^2; floored only inside losses.
    pub depth_var: f64,
    pub opacity: f64,
}

impl GaussianPixel {
    pub fn color_var_channel_mean(&self) -> f64 {
        (self.color_var[0] + self.color_var[1] + self.color_var[2]) / 3.0
    }
}

/// Sorted ray samples with their field outputs and quadrature terms.
#[derive(Debug, Clone)]
pub struct RaySampleSet {
    pub ts: Vec<f64>,
    pub deltas: Vec<f64>,
    pub outputs: Vec<FieldOutput>,
    pub weights: Vec<f64>,
    pub transmittances: Vec<f64>,
}

impl RaySampleSet {
    /// Build the quadrature terms for sorted sample depths.
    pub fn compose(ts: Vec<f64>, outputs: Vec<FieldOutput>, t_far: f64) -> Result<Self, NerfError> {
        let n = ts.len();
        if n < 2 || outputs.len() != n {
            return Err(NerfError::BadSamples);
        }
        if ts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(NerfError::BadSamples);
        }
        for o in &outputs {
            if !o.density.is_finite()
                || o.radiance.iter().any(|v| !v.is_finite())
                || o.radiance_var.iter().any(|v| !v.is_finite())
            {
                return Err(NerfError::NonFinite);
            }
        }
        let mut deltas = Vec::with_capacity(n);
        for i in 0..n - 1 {
            deltas.push(ts[i + 1] - ts[i]);
        }
        deltas.push(t_far - ts[n - 1]);
        let mut weights = Vec::with_capacity(n);
        let mut transmittances = Vec::with_capacity(n);
        let mut acc = 0.0f64;
        for i in 0..n {
            let tr = (-acc).exp();
            transmittances.push(tr);
            let alpha = 1.0 - (-outputs[i].density * deltas[i]).exp();
            weights.push(tr * alpha);
            acc += outputs[i].density * deltas[i];
        }
        Ok(RaySampleSet {
            ts,
            deltas,
            outputs,
            weights,
            transmittances,
        })
    }

    pub fn gaussian_pixel(&self) -> GaussianPixel {
        let mut color_mean = [0.0; 3];
        let mut color_var = [0.0; 3];
        let mut depth_mean = 0.0;
        let mut opacity = 0.0;
        for (i, o) in self.outputs.iter().enumerate() {
            let w = self.weights[i];
            for ch in 0..3 {
                color_mean[ch] += w * o.radiance[ch];
                color_var[ch] += w * w * o.radiance_var[ch];
            }
            depth_mean += w * self.ts[i];
            opacity += w;
        }
        let mut depth_var = 0.0;
        for (i, _) in self.outputs.iter().enumerate() {
            let dev = self.ts[i] - depth_mean;
            depth_var += self.weights[i] * dev * dev;
        }
        GaussianPixel {
            color_mean,
            color_var,
            depth_mean,
            depth_var,
            opacity,
        }
    }
}

/// Evaluate the field along one ray and composite the pixel Gaussians.
pub fn render_ray(
    arch: &FieldArch,
    ps: &ParamSet,
    origin: Vec3,
    dir: Vec3,
    ts: Vec<f64>,
    t_far: f64,
) -> Result<GaussianPixel, NerfError> {
    let points: Vec<[f64; 3]> = ts.iter().map(|&t| (origin + dir * t).to_array()).collect();
    let dirs: Vec<[f64; 3]> = vec![dir.to_array(); ts.len()];
    let outputs = arch.eval_outputs(ps, &points, &dirs)?;
    Ok(RaySampleSet::compose(ts, outputs, t_far)?.gaussian_pixel())
}

/// Full-resolution rendered maps for one camera.
#[derive(Debug, Clone)]
pub struct ViewMaps {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    /// Channel mean of the per-pixel color variance.
    pub color_var: Vec<f64>,
    pub depth_var: Vec<f64>,
    pub opacity: Vec<f64>,
}

/// Evaluation-mode render: fixed bin-center sampling, no jitter, so repeated
/// calls are bit-identical.
pub fn render_view(
    arch: &FieldArch,
    ps: &ParamSet,
    camera: &CameraView,
    n_samples: usize,
    t_near: f64,
    t_far: f64,
) -> Result<ViewMaps, NerfError> {
    let (w, h) = (camera.width, camera.height);
    let ts = super::sampling::eval_centers(t_near, t_far, n_samples);
    let rows: Vec<Result<Vec<GaussianPixel>, NerfError>> = par::map_collect(h, |py| {
        let mut points = Vec::with_capacity(w * n_samples);
        let mut dirs = Vec::with_capacity(w * n_samples);
        for px in 0..w {
            let (o, d) = camera
                .ray_for_pixel(px as f64, py as f64)
                .expect("pixel in bounds");
            for &t in &ts {
                points.push((o + d * t).to_array());
                dirs.push(d.to_array());
            }
        }
        let outputs = arch.eval_outputs(ps, &points, &dirs)?;
        let mut out = Vec::with_capacity(w);
        for px in 0..w {
            let slice = outputs[px * n_samples..(px + 1) * n_samples].to_vec();
            out.push(RaySampleSet::compose(ts.clone(), slice, t_far)?.gaussian_pixel());
        }
        Ok(out)
    });
    let mut maps = ViewMaps {
        width: w,
        height: h,
        color: Vec::with_capacity(w * h),
        depth: Vec::with_capacity(w * h),
        color_var: Vec::with_capacity(w * h),
        depth_var: Vec::with_capacity(w * h),
        opacity: Vec::with_capacity(w * h),
    };
    for row in rows {
        for px in row? {
            maps.color.push(px.color_mean);
            maps.depth.push(px.depth_mean);
            maps.color_var.push(px.color_var_channel_mean());
            maps.depth_var.push(px.depth_var);
            maps.opacity.push(px.opacity);
        }
    }
    Ok(maps)
}

/// Tape-recorded render of a ray batch; vars are [rays, 1] columns.
pub struct RayBatchVars {
    pub color_mean: [Var; 3],
    pub color_var: [Var; 3],
    pub depth_mean: Var,
    pub depth_var: Var,
}

/// Record the field forward and quadrature for a batch of rays with
/// per-ray sample depths (all rays share the sample count).
pub fn render_rays_tape(
    tape: &mut Tape,
    ps: &ParamSet,
    arch: &FieldArch,
    rays: &[(Vec3, Vec3)],
    ts: &[Vec<f64>],
    t_far: f64,
) -> Result<RayBatchVars, NerfError> {
    let n_rays = rays.len();
    assert!(n_rays > 0 && ts.len() == n_rays);
    let n = ts[0].len();
    assert!(n >= 2 && ts.iter().all(|t| t.len() == n));
    let total = n_rays * n;

    let mut enc_pos = Vec::with_capacity(total * arch.pos_width());
    let mut enc_dir = Vec::with_capacity(total * arch.dir_width());
    let mut t_flat = Vec::with_capacity(total);
    let mut d_flat = Vec::with_capacity(total);
    for (ri, (o, d)) in rays.iter().enumerate() {
        let row = &ts[ri];
        for (i, &t) in row.iter().enumerate() {
            let p = *o + *d * t;
            super::field::positional_encode(&p.to_array(), arch.pos_freqs, &mut enc_pos);
            super::field::positional_encode(&d.to_array(), arch.dir_freqs, &mut enc_dir);
            t_flat.push(t);
            let delta = if i + 1 < n { row[i + 1] - t } else { t_far - t };
            d_flat.push(delta);
        }
    }
    let enc_pos = tape.constant(Tensor::new(vec![total, arch.pos_width()], enc_pos).unwrap());
    let enc_dir = tape.constant(Tensor::new(vec![total, arch.dir_width()], enc_dir).unwrap());
    let t_const = tape.constant(Tensor::new(vec![n_rays, n], t_flat).unwrap());
    let delta_const = tape.constant(Tensor::new(vec![n_rays, n], d_flat).unwrap());

    let (tau_raw, radiance, v_raw) = arch.tape_forward(tape, ps, enc_pos, enc_dir)?;
    let tau = tape.softplus(tau_raw);
    let tau_m = tape.reshape(tau, vec![n_rays, n]);
    let taud = tape.mul(tau_m, delta_const);
    let neg_taud = tape.neg(taud);
    let exp_nt = tape.exp(neg_taud);
    let alpha = tape.sub_from_const(1.0, exp_nt);
    let cum = tape.cumsum_exclusive_row(taud);
    let neg_cum = tape.neg(cum);
    let trans = tape.exp(neg_cum);
    let weights = tape.mul(trans, alpha);
    let weights_sq = tape.square(weights);

    let mut color_mean = Vec::with_capacity(3);
    let mut color_var = Vec::with_capacity(3);
    for ch in 0..3 {
        let c_col = tape.slice_cols(radiance, ch, ch + 1);
        let c_m = tape.reshape(c_col, vec![n_rays, n]);
        let wc = tape.mul(weights, c_m);
        color_mean.push(tape.sum_axis1(wc));

        let v_col = tape.slice_cols(v_raw, ch, ch + 1);
        let v_sp = tape.softplus(v_col);
        let v_act = tape.add_const(v_sp, EPS_VAR);
        let v_m = tape.reshape(v_act, vec![n_rays, n]);
        let wv = tape.mul(weights_sq, v_m);
        color_var.push(tape.sum_axis1(wv));
    }

    let wt = tape.mul(weights, t_const);
    let depth_mean = tape.sum_axis1(wt);
    let z_broad = tape.broadcast_col(depth_mean, n);
    let dev = tape.sub(t_const, z_broad);
    let dev_sq = tape.square(dev);
    let wdev = tape.mul(weights, dev_sq);
    let depth_var = tape.sum_axis1(wdev);

    Ok(RayBatchVars {
        color_mean: [color_mean[0], color_mean[1], color_mean[2]],
        color_var: [color_var[0], color_var[1], color_var[2]],
        depth_mean,
        depth_var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nerf::sampling::eval_centers;
    use crate::rng::Rng;
    use approx::assert_abs_diff_eq;

    fn flat_output(density: f64, radiance: [f64; 3], var: [f64; 3]) -> FieldOutput {
        FieldOutput {
            density,
            radiance,
            radiance_var: var,
        }
    }

    #[test]
    fn single_opaque_sample_dominates() {
        // The first sample is effectively opaque (tau*delta >> 1); a distant
        // second sample keeps n >= 2 but receives ~zero weight.
        let ts = vec![2.0, 5.0];
        let outs = vec![
            flat_output(1e4, [0.3, 0.6, 0.9], [0.01, 0.01, 0.01]),
            flat_output(1.0, [1.0, 1.0, 1.0], [0.5, 0.5, 0.5]),
        ];
        let px = RaySampleSet::compose(ts, outs, 10.0)
            .unwrap()
            .gaussian_pixel();
        for (got, want) in px.color_mean.iter().zip(&[0.3, 0.6, 0.9]) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-9);
        }
        for v in px.color_var {
            assert_abs_diff_eq!(v, 0.01, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(px.depth_mean, 2.0, epsilon = 1e-9);
        assert!(px.depth_var.abs() < 1e-9);
        assert_abs_diff_eq!(px.opacity, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn two_sample_quadrature_matches_direct_evaluation() {
        // Independent oracle: evaluate the closed-form terms longhand.
        let (t1, t2): (f64, f64) = (1.0, 2.0);
        let (tau1, tau2): (f64, f64) = (0.5, 10.0);
        let (d1, d2): (f64, f64) = (1.0, 1.0);
        let w1 = 1.0 * (1.0 - (-tau1 * d1).exp());
        let t_big1 = (-tau1 * d1).exp();
        let w2 = t_big1 * (1.0 - (-tau2 * d2).exp());
        assert_abs_diff_eq!(w1, 0.39347, epsilon = 1e-5);
        assert_abs_diff_eq!(w2, 0.60650, epsilon = 1e-5);
        let z = w1 * t1 + w2 * t2;
        let z_var = w1 * (t1 - z).powi(2) + w2 * (t2 - z).powi(2);
        assert_abs_diff_eq!(z, 1.6065, epsilon = 1e-4);
        assert_abs_diff_eq!(z_var, 0.2387, epsilon = 1e-4);

        // Sample 1 is red with variance on R; sample 2 green with variance on G.
        let outs = vec![
            flat_output(tau1, [1.0, 0.0, 0.0], [0.01, 0.0, 0.0]),
            flat_output(tau2, [0.0, 1.0, 0.0], [0.0, 0.04, 0.0]),
        ];
        let px = RaySampleSet::compose(vec![t1, t2], outs, t2 + d2)
            .unwrap()
            .gaussian_pixel();
        assert_abs_diff_eq!(px.color_mean[0], 0.3935, epsilon = 1e-4);
        assert_abs_diff_eq!(px.color_mean[1], 0.6065, epsilon = 1e-4);
        assert_abs_diff_eq!(px.color_mean[2], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(px.color_var[0], w1 * w1 * 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(px.color_var[0], 0.001548, epsilon = 1e-6);
        assert_abs_diff_eq!(px.color_var[1], w2 * w2 * 0.04, epsilon = 1e-12);
        assert_abs_diff_eq!(px.color_var[1], 0.014714, epsilon = 1e-6);
        assert_abs_diff_eq!(px.depth_mean, z, epsilon = 1e-12);
        assert_abs_diff_eq!(px.depth_var, z_var, epsilon = 1e-12);
    }

    /// Monte-Carlo oracle: sample radiances c_i ~ N(mean_i, var_i), composite
    /// with fixed weights, compare the empirical compositing variance.
    #[test]
    fn color_variance_matches_monte_carlo_compositing() {
        let mut rng = Rng::new(314);
        for _ in 0..5 {
            let n = 2 + rng.below(6);
            let ts: Vec<f64> = {
                let mut v: Vec<f64> = (0..n).map(|_| rng.range(0.2, 8.0)).collect();
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for i in 1..v.len() {
                    if v[i] <= v[i - 1] {
                        v[i] = v[i - 1] + 1e-6;
                    }
                }
                v
            };
            let outs: Vec<FieldOutput> = (0..n)
                .map(|_| {
                    flat_output(
                        rng.range(0.0, 3.0),
                        [rng.uniform(), rng.uniform(), rng.uniform()],
                        [
                            rng.range(0.001, 0.05),
                            rng.range(0.001, 0.05),
                            rng.range(0.001, 0.05),
                        ],
                    )
                })
                .collect();
            let set = RaySampleSet::compose(ts, outs.clone(), 10.0).unwrap();
            let px = set.gaussian_pixel();

            let draws = 100_000;
            let mut sums = [0.0f64; 3];
            let mut sq = [0.0f64; 3];
            for _ in 0..draws {
                for ch in 0..3 {
                    let mut c = 0.0;
                    for (i, o) in outs.iter().enumerate() {
                        let sample = o.radiance[ch] + o.radiance_var[ch].sqrt() * rng.normal();
                        c += set.weights[i] * sample;
                    }
                    sums[ch] += c;
                    sq[ch] += c * c;
                }
            }
            for ch in 0..3 {
                let mean = sums[ch] / draws as f64;
                let var = sq[ch] / draws as f64 - mean * mean;
                // Standard error of a sample variance ~ var * sqrt(2/(n-1)).
                let se = px.color_var[ch] * (2.0 / (draws as f64 - 1.0)).sqrt();
                assert!(
                    (var - px.color_var[ch]).abs() < 3.0 * se + 1e-12,
                    "ch {ch}: mc {var} vs analytic {} (3se {})",
                    px.color_var[ch],
                    3.0 * se
                );
            }
        }
    }

    #[test]
    fn weight_sum_matches_closed_form() {
        let mut rng = Rng::new(55);
        for _ in 0..50 {
            let n = 2 + rng.below(30);
            let mut ts: Vec<f64> = (0..n).map(|_| rng.range(0.05, 9.0)).collect();
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for i in 1..ts.len() {
                if ts[i] <= ts[i - 1] {
                    ts[i] = ts[i - 1] + 1e-6;
                }
            }
            let outs: Vec<FieldOutput> = (0..n)
                .map(|_| flat_output(rng.range(0.0, 5.0), [0.5; 3], [0.01; 3]))
                .collect();
            let set = RaySampleSet::compose(ts, outs, 10.0).unwrap();
            let sum_w: f64 = set.weights.iter().sum();
            let total_od: f64 = set
                .outputs
                .iter()
                .zip(&set.deltas)
                .map(|(o, d)| o.density * d)
                .sum();
            let closed = 1.0 - (-total_od).exp();
            assert!(
                (sum_w - closed).abs() < 1e-12,
                "sum w {sum_w} vs closed form {closed}"
            );
            assert!(sum_w <= 1.0 + 1e-12);
            assert!(set.weights.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn increasing_any_sample_variance_increases_pixel_variance() {
        let ts = vec![1.0, 1.5, 2.0];
        let outs = vec![
            flat_output(0.8, [0.2, 0.4, 0.6], [0.01; 3]),
            flat_output(0.5, [0.3, 0.3, 0.3], [0.02; 3]),
            flat_output(2.0, [0.9, 0.1, 0.5], [0.03; 3]),
        ];
        let base = RaySampleSet::compose(ts.clone(), outs.clone(), 4.0)
            .unwrap()
            .gaussian_pixel();
        for i in 0..3 {
            let mut bumped = outs.clone();
            bumped[i].radiance_var[1] += 0.5;
            let px = RaySampleSet::compose(ts.clone(), bumped, 4.0)
                .unwrap()
                .gaussian_pixel();
            assert!(px.color_var[1] > base.color_var[1]);
        }
    }

    #[test]
    fn depth_variance_zero_iff_single_support() {
        // All mass at one sample: variance exactly zero.
        let ts = vec![1.0, 3.0];
        let outs = vec![
            flat_output(1e5, [0.5; 3], [0.01; 3]),
            flat_output(3.0, [0.5; 3], [0.01; 3]),
        ];
        let px = RaySampleSet::compose(ts, outs, 5.0).unwrap().gaussian_pixel();
        assert!(px.depth_var < 1e-30);
        // Mass on two depths: strictly positive.
        let ts = vec![1.0, 3.0];
        let outs = vec![
            flat_output(0.4, [0.5; 3], [0.01; 3]),
            flat_output(0.4, [0.5; 3], [0.01; 3]),
        ];
        let px = RaySampleSet::compose(ts, outs, 5.0).unwrap().gaussian_pixel();
        assert!(px.depth_var > 1e-6);
    }

    #[test]
    fn unsorted_samples_rejected() {
        let outs = vec![flat_output(1.0, [0.5; 3], [0.01; 3]); 2];
        assert!(matches!(
            RaySampleSet::compose(vec![2.0, 1.0], outs.clone(), 5.0),
            Err(NerfError::BadSamples)
        ));
        assert!(matches!(
            RaySampleSet::compose(vec![2.0], outs[..1].to_vec(), 5.0),
            Err(NerfError::BadSamples)
        ));
    }

    #[test]
    fn non_finite_field_output_is_numeric_error() {
        let outs = vec![
            flat_output(f64::NAN, [0.5; 3], [0.01; 3]),
            flat_output(1.0, [0.5; 3], [0.01; 3]),
        ];
        assert!(matches!(
            RaySampleSet::compose(vec![1.0, 2.0], outs, 5.0),
            Err(NerfError::NonFinite)
        ));
    }

    #[test]
    fn tape_render_matches_eval_render() {
        let arch = FieldArch::new(3, 2, 12, 2);
        let mut rng = Rng::new(2024);
        let ps = arch.init_params(&mut rng);
        let o = Vec3::new(0.1, -0.2, 0.0);
        let d = Vec3::new(0.1, 0.2, 0.97).normalized();
        let ts = eval_centers(0.05, 6.0, 8);

        let eval_px = render_ray(&arch, &ps, o, d, ts.clone(), 6.0).unwrap();

        let mut tape = Tape::new();
        let vars = render_rays_tape(&mut tape, &ps, &arch, &[(o, d)], &[ts], 6.0).unwrap();
        for ch in 0..3 {
            assert_abs_diff_eq!(
                tape.value(vars.color_mean[ch]).item(),
                eval_px.color_mean[ch],
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                tape.value(vars.color_var[ch]).item(),
                eval_px.color_var[ch],
                epsilon = 1e-12
            );
        }
        assert_abs_diff_eq!(
            tape.value(vars.depth_mean).item(),
            eval_px.depth_mean,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            tape.value(vars.depth_var).item(),
            eval_px.depth_var,
            epsilon = 1e-12
        );
    }

    #[test]
    fn evaluation_render_is_deterministic() {
        let arch = FieldArch::new(2, 1, 8, 1);
        let mut rng = Rng::new(31);
        let ps = arch.init_params(&mut rng);
        let cam = CameraView::new(
            crate::geom::Pose::identity(),
            crate::geom::Intrinsics {
                fx: 12.0,
                fy: 12.0,
                cx: 8.0,
                cy: 8.0,
            },
            16,
            16,
        )
        .unwrap();
        let a = render_view(&arch, &ps, &cam, 8, 0.05, 6.0).unwrap();
        let b = render_view(&arch, &ps, &cam, 8, 0.05, 6.0).unwrap();
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.color, b.color);
        assert_eq!(a.color_var, b.color_var);
        // Uncertainty maps strictly positive.
        assert!(a.color_var.iter().all(|&v| v > 0.0));
    }
}
