//! Field optimization over a set of posed RGB-D views.

use super::field::FieldArch;
use super::loss::{loss_color_tape, loss_depth_tape, loss_overall};
use super::render::render_rays_tape;
use super::sampling::depth_guided_sample;
use super::NerfError;
use crate::diff::{opt_step, OptState, ParamSet, Tape};
use crate::geom::Vec3;
use crate::par;
use crate::rng::Rng;
use crate::views::PosedImage;

/// Rays per gradient chunk. Chunks evaluate in parallel; their gradients are
/// folded in chunk order, so results do not depend on the thread count.
const RAY_CHUNK: usize = 64;

/// Gaussian width of the depth prior used for guided sampling during
/// training, meters.
const PRIOR_SIGMA: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct UnerfConfig {
    pub pos_freqs: usize,
    pub dir_freqs: usize,
    pub hidden: usize,
    pub trunk_layers: usize,
    pub n_samples: usize,
    pub t_near: f64,
    pub t_far: f64,
    pub zeta: f64,
    pub lambda_depth: f64,
    pub steps: usize,
    pub lr: f64,
    pub batch_rays: usize,
    pub guided_fraction: f64,
    pub log_every: usize,
}

impl Default for UnerfConfig {
    fn default() -> Self {
        UnerfConfig {
            pos_freqs: 6,
            dir_freqs: 4,
            hidden: 128,
            trunk_layers: 4,
            n_samples: 32,
            t_near: 0.05,
            t_far: 10.0,
            zeta: 0.5,
            lambda_depth: 0.1,
            steps: 3000,
            lr: 1e-3,
            batch_rays: 1024,
            guided_fraction: 0.5,
            log_every: 100,
        }
    }
}

impl UnerfConfig {
    pub fn arch(&self) -> FieldArch {
        FieldArch::new(self.pos_freqs, self.dir_freqs, self.hidden, self.trunk_layers)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainLogRow {
    pub step: usize,
    /// Per-ray color loss of the logged batch.
    pub color_loss: f64,
    /// Per-valid-ray depth loss of the logged batch.
    pub depth_loss: f64,
    pub total_loss: f64,
}

/// Optimize field parameters on the given views. Deterministic for a fixed
/// seed; returns the parameters and a per-interval loss log.
pub fn train_unerf(
    views: &[PosedImage],
    cfg: &UnerfConfig,
    seed: u64,
) -> Result<(ParamSet, Vec<TrainLogRow>), NerfError> {
    if views.len() < 2 {
        return Err(NerfError::TooFewViews(views.len()));
    }
    let arch = cfg.arch();
    let mut rng = Rng::derive(seed, "train-unerf");
    let mut ps = arch.init_params(&mut rng);
    let mut log = Vec::new();
    if cfg.steps == 0 {
        return Ok((ps, log));
    }
    let mut opt = OptState::new(&ps, cfg.lr);
    let mut snapshot = ps.clone();

    for step in 0..cfg.steps {
        // Assemble the ray batch sequentially so the rng stream is fixed.
        let mut rays: Vec<(Vec3, Vec3)> = Vec::with_capacity(cfg.batch_rays);
        let mut ts: Vec<Vec<f64>> = Vec::with_capacity(cfg.batch_rays);
        let mut target_color: Vec<[f64; 3]> = Vec::with_capacity(cfg.batch_rays);
        let mut target_depth: Vec<f64> = Vec::with_capacity(cfg.batch_rays);
        let mut valid: Vec<bool> = Vec::with_capacity(cfg.batch_rays);
        for _ in 0..cfg.batch_rays {
            let view = &views[rng.below(views.len())];
            let idx = rng.below(view.pixel_count());
            let (px, py) = (idx % view.camera.width, idx / view.camera.width);
            let (o, d) = view
                .camera
                .ray_for_pixel(px as f64, py as f64)
                .expect("pixel in bounds");
            let depth = view.depth[idx];
            let prior = (depth > 0.0).then_some((depth, PRIOR_SIGMA));
            rays.push((o, d));
            ts.push(depth_guided_sample(
                cfg.t_near,
                cfg.t_far,
                cfg.n_samples,
                prior,
                cfg.guided_fraction,
                &mut rng,
            ));
            target_color.push(view.color[idx]);
            target_depth.push(depth);
            valid.push(depth > 0.0);
        }

        // Parallel per-chunk forward/backward with a fixed-order fold.
        let chunks = par::chunk_map_collect(cfg.batch_rays, RAY_CHUNK, |range| {
            let mut tape = Tape::new();
            let batch = render_rays_tape(
                &mut tape,
                &ps,
                &arch,
                &rays[range.clone()],
                &ts[range.clone()],
                cfg.t_far,
            )?;
            let lc = loss_color_tape(&mut tape, &batch, &target_color[range.clone()], cfg.zeta)?;
            let lc_val = tape.value(lc).item();
            let chunk_valid = &valid[range.clone()];
            let (loss, ld_val) = if chunk_valid.iter().any(|&v| v) {
                let ld =
                    loss_depth_tape(&mut tape, &batch, &target_depth[range.clone()], chunk_valid)?;
                let ld_val = tape.value(ld).item();
                (loss_overall(&mut tape, lc, ld, cfg.lambda_depth), ld_val)
            } else {
                (lc, 0.0)
            };
            let store = tape.backward(loss)?;
            Ok::<_, NerfError>((store, lc_val, ld_val))
        });

        let mut merged = crate::diff::GradStore::default();
        let mut color_sum = 0.0;
        let mut depth_sum = 0.0;
        let mut bad = false;
        for chunk in chunks {
            match chunk {
                Ok((store, lc, ld)) => {
                    merged.merge(store);
                    color_sum += lc;
                    depth_sum += ld;
                }
                Err(_) => {
                    bad = true;
                    break;
                }
            }
        }
        let n_valid = valid.iter().filter(|&&v| v).count().max(1);
        let total = (color_sum + cfg.lambda_depth * depth_sum) / cfg.batch_rays as f64;
        if bad || !total.is_finite() {
            return Err(NerfError::Diverged {
                step,
                last_good: Box::new(snapshot),
            });
        }
        merged.scale(1.0 / cfg.batch_rays as f64);
        ps.accumulate(&merged)?;
        opt_step(&mut ps, &mut opt)?;

        if step % cfg.log_every.max(1) == 0 || step + 1 == cfg.steps {
            log.push(TrainLogRow {
                step,
                color_loss: color_sum / cfg.batch_rays as f64,
                depth_loss: depth_sum / n_valid as f64,
                total_loss: total,
            });
            snapshot = ps.clone();
        }
    }
    Ok((ps, log))
}
