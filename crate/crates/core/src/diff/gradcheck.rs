//! Central finite-difference verification of tape gradients.

use super::{DiffError, ParamSet, Tape, Var};

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub pass: bool,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compare tape gradients of `build`'s scalar loss against central finite
/// differences with step `h`, elementwise over every parameter.
///
/// `build` must be a deterministic function of the parameter values.
pub fn grad_check<F>(
    build: F,
    ps: &mut ParamSet,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape, &ParamSet) -> Var,
{
    // Analytic gradients.
    ps.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, ps);
    tape.backward_into(loss, ps)?;
    let analytic: Vec<Vec<f64>> = ps
        .entries()
        .iter()
        .map(|e| e.grad.data().to_vec())
        .collect();

    let eval = |ps: &ParamSet| -> Result<f64, DiffError> {
        let mut tape = Tape::new();
        let loss = build(&mut tape, ps);
        tape.value_scalar(loss)
    };

    let names: Vec<String> = ps.entries().iter().map(|e| e.name.clone()).collect();
    let mut per_param = Vec::with_capacity(names.len());
    let mut overall: f64 = 0.0;
    for (pidx, name) in names.iter().enumerate() {
        let n_vals = ps.entries()[pidx].value.len();
        let mut worst: f64 = 0.0;
        for i in 0..n_vals {
            let orig = ps.entries[pidx].value.data()[i];
            ps.entries[pidx].value.data_mut()[i] = orig + h;
            let up = eval(ps)?;
            ps.entries[pidx].value.data_mut()[i] = orig - h;
            let down = eval(ps)?;
            ps.entries[pidx].value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic[pidx][i], numeric));
        }
        overall = overall.max(worst);
        per_param.push(ParamCheck {
            name: name.clone(),
            max_rel_err: worst,
        });
    }
    ps.zero_grads();
    Ok(GradCheckReport {
        per_param,
        max_rel_err: overall,
        pass: overall <= tol,
    })
}
