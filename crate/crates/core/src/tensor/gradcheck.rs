use crate::error::{Error, Result};

use super::{NodeId, ParamId, ParamStore, Tape, Tensor};

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn scalar_of(tape: &Tape<f64>, out: NodeId) -> Result<f64> {
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

/// Compares the taped gradient of the scalar function `f` at `x` with central
/// differences `(f(x+h·e) − f(x−h·e)) / 2h`, returning the largest relative
/// error over all coordinates.
pub fn grad_check<Func>(f: Func, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    Func: Fn(&mut Tape<f64>, NodeId) -> Result<NodeId>,
{
    let eval = |values: Vec<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(Tensor::new(x.shape(), values)?);
        let out = f(&mut tape, leaf)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone().with_grad());
    let out = f(&mut tape, leaf)?;
    scalar_of(&tape, out)?;
    tape.backward(out)?;
    let analytic = tape
        .grad(leaf)
        .map(|g| g.to_vec())
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.values().to_vec();
        plus[i] += h;
        let mut minus = x.values().to_vec();
        minus[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}

/// Finite-difference check of a loss over a parameter store. Returns the
/// largest relative error for each requested parameter, in order.
pub fn grad_check_params<Func>(
    store: &ParamStore<f64>,
    ids: &[ParamId],
    loss: Func,
    h: f64,
) -> Result<Vec<f64>>
where
    Func: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let out = loss(&mut tape, store)?;
    scalar_of(&tape, out)?;
    tape.backward(out)?;
    let grads = tape.gradients(store);

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let o = loss(&mut t, s)?;
        scalar_of(&t, o)
    };

    let mut probe = store.clone();
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let mut worst = 0.0f64;
        for i in 0..store.values(id).len() {
            let orig = store.values(id)[i];
            probe.values_mut(id)[i] = orig + h;
            let fp = eval(&probe)?;
            probe.values_mut(id)[i] = orig - h;
            let fm = eval(&probe)?;
            probe.values_mut(id)[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(relative_error(grads.get(id)[i], numeric));
        }
        out.push(worst);
    }
    Ok(out)
}
