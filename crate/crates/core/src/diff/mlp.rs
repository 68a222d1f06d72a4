//! Plain affine+activation stacks over the tape.

use super::{DiffError, ParamSet, Tape, Tensor, Var};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Softplus,
    Sigmoid,
}

impl Activation {
    fn apply(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Linear => v,
            Activation::Relu => tape.relu(v),
            Activation::Softplus => tape.softplus(v),
            Activation::Sigmoid => tape.sigmoid(v),
        }
    }
}

/// Layer widths (input first, output last) plus activations.
#[derive(Debug, Clone)]
pub struct MlpArch {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpArch {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        MlpArch {
            widths,
            hidden,
            output,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    fn weight_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}.w{layer}")
    }

    fn bias_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}.b{layer}")
    }
}

/// Register He-initialized weights and zero biases for the stack.
pub fn init_mlp(
    ps: &mut ParamSet,
    prefix: &str,
    arch: &MlpArch,
    rng: &mut Rng,
) -> Result<(), DiffError> {
    for l in 0..arch.layer_count() {
        let (fan_in, fan_out) = (arch.widths[l], arch.widths[l + 1]);
        let std = (2.0 / fan_in as f64).sqrt();
        ps.add(
            &MlpArch::weight_name(prefix, l),
            Tensor::randn(vec![fan_in, fan_out], std, rng),
        )?;
        ps.add(&MlpArch::bias_name(prefix, l), Tensor::zeros(vec![fan_out]))?;
    }
    Ok(())
}

/// Run the affine+activation stack on a [n, widths[0]] input var.
///
/// Intermediate activations stay recorded on the tape for the backward pass.
pub fn forward_mlp(
    tape: &mut Tape,
    ps: &ParamSet,
    prefix: &str,
    input: Var,
    arch: &MlpArch,
) -> Result<Var, DiffError> {
    let got = tape.value(input).cols();
    if got != arch.widths[0] {
        return Err(DiffError::Dimension(format!(
            "mlp {prefix:?} expects input width {}, got {got}",
            arch.widths[0]
        )));
    }
    let mut h = input;
    for l in 0..arch.layer_count() {
        let w = tape.param(ps, &MlpArch::weight_name(prefix, l))?;
        let b = tape.param(ps, &MlpArch::bias_name(prefix, l))?;
        let lin = tape.matmul(h, w);
        let lin = tape.add_bias(lin, b);
        let act = if l + 1 == arch.layer_count() {
            arch.output
        } else {
            arch.hidden
        };
        h = act.apply(tape, lin);
    }
    if !tape.value(h).all_finite() {
        return Err(DiffError::NonFinite(format!("mlp {prefix:?} output")));
    }
    Ok(h)
}

/// Evaluation-mode forward without a tape, for rendering paths.
pub fn eval_mlp(
    ps: &ParamSet,
    prefix: &str,
    input: &Tensor,
    arch: &MlpArch,
) -> Result<Tensor, DiffError> {
    if input.cols() != arch.widths[0] {
        return Err(DiffError::Dimension(format!(
            "mlp {prefix:?} expects input width {}, got {}",
            arch.widths[0],
            input.cols()
        )));
    }
    let n = input.rows();
    let mut h = input.data().to_vec();
    let mut width = arch.widths[0];
    for l in 0..arch.layer_count() {
        let w = ps.value(&MlpArch::weight_name(prefix, l))?;
        let b = ps.value(&MlpArch::bias_name(prefix, l))?;
        let out_w = arch.widths[l + 1];
        let mut out = vec![0.0; n * out_w];
        super::linalg::matmul_acc(&h, n, width, w.data(), out_w, &mut out);
        for i in 0..n {
            for j in 0..out_w {
                out[i * out_w + j] += b.data()[j];
            }
        }
        let act = if l + 1 == arch.layer_count() {
            arch.output
        } else {
            arch.hidden
        };
        match act {
            Activation::Linear => {}
            Activation::Relu => out.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Softplus => out.iter_mut().for_each(|v| *v = super::linalg::softplus(*v)),
            Activation::Sigmoid => out.iter_mut().for_each(|v| *v = super::linalg::sigmoid(*v)),
        }
        h = out;
        width = out_w;
    }
    Tensor::new(vec![n, width], h)
}
