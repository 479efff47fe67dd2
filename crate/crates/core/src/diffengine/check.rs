use std::collections::BTreeMap;

use super::{forward, Leaves, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Central-difference estimate of the gradient of `build` at `leaves`.
pub fn central_differences<F>(build: &F, leaves: &Leaves, step: f64) -> Result<BTreeMap<String, Tensor>>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {step}")));
    }
    let mut out = BTreeMap::new();
    let mut probe = leaves.clone();
    for (name, value) in leaves {
        let mut grad = Tensor::zeros(value.shape());
        for i in 0..value.len() {
            let base = value.data()[i];
            set(&mut probe, name, i, base + step);
            let (plus, _) = forward(&probe, build)?;
            set(&mut probe, name, i, base - step);
            let (minus, _) = forward(&probe, build)?;
            set(&mut probe, name, i, base);
            grad.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        out.insert(name.clone(), grad);
    }
    Ok(out)
}

fn set(leaves: &mut Leaves, name: &str, i: usize, value: f64) {
    leaves.get_mut(name).expect("leaf present").data_mut()[i] = value;
}

/// Largest relative disagreement between analytic and central-difference
/// gradients, `|a - c| / max(1e-8, |c|)`, over every leaf component.
pub fn finite_diff_check<F>(build: F, leaves: &Leaves, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    let numeric = central_differences(&build, leaves, step)?;
    let (_, tape) = forward(leaves, &build)?;
    let analytic = tape.backward()?;
    let mut worst = 0.0f64;
    for (name, a) in &analytic {
        let c = &numeric[name];
        for (x, y) in a.data().iter().zip(c.data()) {
            worst = worst.max((x - y).abs() / y.abs().max(1e-8));
        }
    }
    Ok(worst)
}
