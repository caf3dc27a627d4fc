//! Central-difference gradient checks for tape programs.

use super::{Bound, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `|a - n| / max(|a|, |n|)` in the Euclidean norm; the plain difference
/// when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn scalar(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.numel() != 1 {
        return Err(Error::Contract(format!("gradient check needs a scalar, got {:?}", t.shape())));
    }
    Ok(t.item())
}

/// Central differences of a scalar program with respect to every input element.
pub fn numeric_gradients(
    inputs: &[Tensor],
    f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
    eps: f64,
) -> Result<Vec<Vec<f64>>> {
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar(&tape, out)
    };
    let mut xs = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].numel()];
        for (j, gj) in g.iter_mut().enumerate() {
            let x0 = xs[i].data()[j];
            xs[i].data_mut()[j] = x0 + eps;
            let plus = eval(&xs)?;
            xs[i].data_mut()[j] = x0 - eps;
            let minus = eval(&xs)?;
            xs[i].data_mut()[j] = x0;
            *gj = (plus - minus) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

/// Worst per-input relative error between backward and central differences.
pub fn check_inputs(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>, eps: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let numeric = numeric_gradients(inputs, f, eps)?;
    Ok(vars
        .iter()
        .zip(&numeric)
        .map(|(v, n)| {
            let a = grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n.len()]);
            relative_error(&a, n)
        })
        .fold(0.0, f64::max))
}

/// Worst per-parameter relative error between the backward pass of
/// `analytic` and central differences of `numeric`, both over the tensors
/// of `store`. Passing the same program twice checks it against itself;
/// a separate `numeric` program checks estimators such as straight-through
/// against the surrogate they differentiate.
pub fn check_params_against(
    store: &ParamStore,
    analytic: &dyn Fn(&mut Tape, &Bound) -> Result<Var>,
    numeric: &dyn Fn(&mut Tape, &Bound) -> Result<Var>,
    eps: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, true);
    let out = analytic(&mut tape, &bound)?;
    let mut grads = tape.backward(out)?;
    let analytic_grads = bound.gradients(store, &mut grads);

    let mut probe = store.clone();
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = s.bind(&mut tape, false);
        let out = numeric(&mut tape, &bound)?;
        scalar(&tape, out)
    };
    let mut worst: f64 = 0.0;
    for (i, a) in analytic_grads.iter().enumerate() {
        let mut n = vec![0.0; a.len()];
        for (j, nj) in n.iter_mut().enumerate() {
            let x0 = probe.tensors()[i].data()[j];
            probe.tensors_mut()[i].data_mut()[j] = x0 + eps;
            let plus = eval(&probe)?;
            probe.tensors_mut()[i].data_mut()[j] = x0 - eps;
            let minus = eval(&probe)?;
            probe.tensors_mut()[i].data_mut()[j] = x0;
            *nj = (plus - minus) / (2.0 * eps);
        }
        worst = worst.max(relative_error(a, &n));
    }
    Ok(worst)
}

/// [`check_params_against`] with one program for both sides.
pub fn check_params(store: &ParamStore, f: &dyn Fn(&mut Tape, &Bound) -> Result<Var>, eps: f64) -> Result<f64> {
    check_params_against(store, f, f, eps)
}
