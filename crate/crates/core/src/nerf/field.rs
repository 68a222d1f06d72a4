//! The radiance field network: a single MLP trunk over encoded positions,
//! a density head before direction injection, and color mean / color
//! variance heads after it.

use crate::diff::linalg::{matmul_acc, sigmoid, softplus};
use crate::diff::{
    eval_mlp, forward_mlp, init_mlp, Activation, DiffError, MlpArch, ParamSet, Tape, Tensor, Var,
};
use crate::rng::Rng;

/// Variance floor applied to activated radiance and depth variances.
pub const EPS_VAR: f64 = 1e-6;

/// Frequency encoding: for j in 0..L emit sin(2^j x) then cos(2^j x),
/// componentwise, giving 2*k*L values for k inputs.
pub fn positional_encode(x: &[f64], freqs: usize, out: &mut Vec<f64>) {
    assert!(freqs >= 1);
    for j in 0..freqs {
        let scale = (1u64 << j) as f64;
        for &v in x {
            out.push((scale * v).sin());
        }
        for &v in x {
            out.push((scale * v).cos());
        }
    }
}

pub fn encoded_width(k: usize, freqs: usize) -> usize {
    2 * k * freqs
}

/// Field response at one 3D sample: density and the radiance Gaussian.
#[derive(Debug, Clone, Copy)]
pub struct FieldOutput {
    /// Volume density after softplus, >= 0.
    pub density: f64,
    /// Radiance mean per channel, in [0,1] via sigmoid.
    pub radiance: [f64; 3],
    /// Activated radiance variance per channel: softplus(raw) + EPS_VAR.
    pub radiance_var: [f64; 3],
}

/// Network shape; the parameter tensors live in a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct FieldArch {
    pub pos_freqs: usize,
    pub dir_freqs: usize,
    pub hidden: usize,
    pub trunk_layers: usize,
}

impl FieldArch {
    pub fn new(pos_freqs: usize, dir_freqs: usize, hidden: usize, trunk_layers: usize) -> Self {
        assert!(trunk_layers >= 1 && hidden >= 4);
        FieldArch {
            pos_freqs,
            dir_freqs,
            hidden,
            trunk_layers,
        }
    }

    pub fn pos_width(&self) -> usize {
        encoded_width(3, self.pos_freqs)
    }

    pub fn dir_width(&self) -> usize {
        encoded_width(3, self.dir_freqs)
    }

    fn branch_width(&self) -> usize {
        (self.hidden / 2).max(4)
    }

    fn trunk_arch(&self) -> MlpArch {
        let mut widths = vec![self.pos_width()];
        widths.extend(std::iter::repeat(self.hidden).take(self.trunk_layers));
        MlpArch::new(widths, Activation::Relu, Activation::Relu)
    }

    /// Register freshly initialized parameters for this architecture.
    pub fn init_params(&self, rng: &mut Rng) -> ParamSet {
        let mut ps = ParamSet::new();
        init_mlp(&mut ps, "trunk", &self.trunk_arch(), rng).unwrap();
        let h = self.hidden;
        let bw = self.branch_width();
        let add = |ps: &mut ParamSet, name: &str, shape: Vec<usize>, std: f64, rng: &mut Rng| {
            ps.add(name, Tensor::randn(shape, std, rng)).unwrap();
        };
        let std_h = (2.0 / h as f64).sqrt();
        add(&mut ps, "density.w", vec![h, 1], std_h, rng);
        ps.add("density.b", Tensor::zeros(vec![1])).unwrap();
        add(&mut ps, "feat.w", vec![h, h], std_h, rng);
        ps.add("feat.b", Tensor::zeros(vec![h])).unwrap();
        add(&mut ps, "branch.wf", vec![h, bw], std_h, rng);
        add(
            &mut ps,
            "branch.wd",
            vec![self.dir_width(), bw],
            (2.0 / self.dir_width() as f64).sqrt(),
            rng,
        );
        ps.add("branch.b", Tensor::zeros(vec![bw])).unwrap();
        let std_b = (2.0 / bw as f64).sqrt();
        add(&mut ps, "color.w", vec![bw, 3], std_b, rng);
        ps.add("color.b", Tensor::zeros(vec![3])).unwrap();
        add(&mut ps, "cvar.w", vec![bw, 3], std_b, rng);
        ps.add("cvar.b", Tensor::zeros(vec![3])).unwrap();
        ps
    }

    /// Tape forward over a batch of encoded samples. Returns
    /// (raw density [s,1], radiance mean [s,3], raw radiance variance [s,3]).
    pub fn tape_forward(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        enc_pos: Var,
        enc_dir: Var,
    ) -> Result<(Var, Var, Var), DiffError> {
        let trunk = forward_mlp(tape, ps, "trunk", enc_pos, &self.trunk_arch())?;
        let dw = tape.param(ps, "density.w")?;
        let db = tape.param(ps, "density.b")?;
        let tau_raw = tape.matmul(trunk, dw);
        let tau_raw = tape.add_bias(tau_raw, db);

        let fw = tape.param(ps, "feat.w")?;
        let fb = tape.param(ps, "feat.b")?;
        let feat = tape.matmul(trunk, fw);
        let feat = tape.add_bias(feat, fb);

        let bwf = tape.param(ps, "branch.wf")?;
        let bwd = tape.param(ps, "branch.wd")?;
        let bb = tape.param(ps, "branch.b")?;
        let from_feat = tape.matmul(feat, bwf);
        let from_dir = tape.matmul(enc_dir, bwd);
        let merged = tape.add(from_feat, from_dir);
        let merged = tape.add_bias(merged, bb);
        let branch = tape.relu(merged);

        let cw = tape.param(ps, "color.w")?;
        let cb = tape.param(ps, "color.b")?;
        let c_lin = tape.matmul(branch, cw);
        let c_lin = tape.add_bias(c_lin, cb);
        let radiance = tape.sigmoid(c_lin);

        let vw = tape.param(ps, "cvar.w")?;
        let vb = tape.param(ps, "cvar.b")?;
        let v_raw = tape.matmul(branch, vw);
        let v_raw = tape.add_bias(v_raw, vb);

        Ok((tau_raw, radiance, v_raw))
    }

    /// Evaluation-mode forward for world points and unit view directions;
    /// activations already applied.
    pub fn eval_outputs(
        &self,
        ps: &ParamSet,
        points: &[[f64; 3]],
        dirs: &[[f64; 3]],
    ) -> Result<Vec<FieldOutput>, DiffError> {
        assert_eq!(points.len(), dirs.len());
        let s = points.len();
        let mut enc_pos = Vec::with_capacity(s * self.pos_width());
        let mut enc_dir = Vec::with_capacity(s * self.dir_width());
        for (p, d) in points.iter().zip(dirs) {
            positional_encode(p, self.pos_freqs, &mut enc_pos);
            positional_encode(d, self.dir_freqs, &mut enc_dir);
        }
        let enc_pos = Tensor::new(vec![s, self.pos_width()], enc_pos)?;
        let trunk = eval_mlp(ps, "trunk", &enc_pos, &self.trunk_arch())?;
        let h = self.hidden;
        let bw = self.branch_width();

        let affine = |x: &Tensor, w: &Tensor, b: &Tensor| -> Vec<f64> {
            let (n, k, m) = (x.rows(), x.cols(), w.cols());
            let mut out = vec![0.0; n * m];
            matmul_acc(x.data(), n, k, w.data(), m, &mut out);
            for i in 0..n {
                for j in 0..m {
                    out[i * m + j] += b.data()[j];
                }
            }
            out
        };

        let tau_raw = affine(&trunk, ps.value("density.w")?, ps.value("density.b")?);
        let feat = Tensor::new(
            vec![s, h],
            affine(&trunk, ps.value("feat.w")?, ps.value("feat.b")?),
        )?;
        let mut branch = affine(&feat, ps.value("branch.wf")?, ps.value("branch.b")?);
        let enc_dir_t = Tensor::new(vec![s, self.dir_width()], enc_dir)?;
        matmul_acc(
            enc_dir_t.data(),
            s,
            self.dir_width(),
            ps.value("branch.wd")?.data(),
            bw,
            &mut branch,
        );
        branch.iter_mut().for_each(|v| *v = v.max(0.0));
        let branch = Tensor::new(vec![s, bw], branch)?;
        let c_lin = affine(&branch, ps.value("color.w")?, ps.value("color.b")?);
        let v_raw = affine(&branch, ps.value("cvar.w")?, ps.value("cvar.b")?);

        let mut out = Vec::with_capacity(s);
        for i in 0..s {
            let o = FieldOutput {
                density: softplus(tau_raw[i]),
                radiance: [
                    sigmoid(c_lin[i * 3]),
                    sigmoid(c_lin[i * 3 + 1]),
                    sigmoid(c_lin[i * 3 + 2]),
                ],
                radiance_var: [
                    softplus(v_raw[i * 3]) + EPS_VAR,
                    softplus(v_raw[i * 3 + 1]) + EPS_VAR,
                    softplus(v_raw[i * 3 + 2]) + EPS_VAR,
                ],
            };
            if !o.density.is_finite()
                || o.radiance.iter().any(|v| !v.is_finite())
                || o.radiance_var.iter().any(|v| !v.is_finite())
            {
                return Err(DiffError::NonFinite("field output".into()));
            }
            out.push(o);
        }
        Ok(out)
    }
}
