//! Reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records primitive operations as they are evaluated. Calling
//! [`Tape::backward`] on a tape whose output is a scalar returns the gradient
//! of that scalar with respect to every named leaf. The primitive set is
//! deliberately small: affine maps, matrix products, last-axis concatenation,
//! `tanh`/`relu`/`sigmoid`, elementwise arithmetic, row scaling, gather and
//! row scatter-add, axis sums, and the mean-squared-error reduction.
//!
//! Tapes are rebuilt for every evaluation; nothing is cached between calls.

mod check;
mod tape;
mod tensor;

use std::collections::BTreeMap;

pub use check::{central_differences, finite_diff_check};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Named leaf tensors, iterated in name order.
pub type Leaves = BTreeMap<String, Tensor>;

/// Evaluate `build` on a fresh tape seeded with `leaves`.
///
/// The builder receives the tape and the leaf handles and returns the node
/// holding the loss, which must contain exactly one value.
pub fn forward<F>(leaves: &Leaves, build: F) -> Result<(f64, Tape)>
where
    F: FnOnce(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let mut vars = BTreeMap::new();
    for (name, value) in leaves {
        vars.insert(name.clone(), tape.leaf(name.clone(), value.clone())?);
    }
    let out = build(&mut tape, &vars)?;
    tape.set_output(out);
    let loss = tape.value(out).item().ok_or_else(|| {
        Error::Contract(format!(
            "loss must be a scalar, got shape {:?}",
            tape.value(out).shape()
        ))
    })?;
    Ok((loss, tape))
}

pub fn backward(tape: &Tape) -> Result<BTreeMap<String, Tensor>> {
    tape.backward()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn leaves(items: &[(&str, Tensor)]) -> Leaves {
        items.iter().map(|(n, v)| (n.to_string(), v.clone())).collect()
    }

    #[test]
    fn mse_of_identical_inputs_is_zero() {
        let l = leaves(&[("x", t(&[2, 3], &[0.3, -1.0, 2.0, 4.0, 0.0, -7.5]))]);
        let (loss, _) = forward(&l, |tape, v| tape.mse(v["x"], v["x"])).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn mse_closed_form() {
        let l = leaves(&[("x", t(&[2], &[1.0, 2.0]))]);
        let (loss, _) = forward(&l, |tape, v| {
            let zero = tape.constant(Tensor::zeros(&[2]))?;
            tape.mse(v["x"], zero)
        })
        .unwrap();
        assert_eq!(loss, 2.5);
    }

    #[test]
    fn square_gradient() {
        let l = leaves(&[("x", t(&[1], &[3.0]))]);
        let (loss, tape) = forward(&l, |tape, v| {
            let zero = tape.constant(Tensor::zeros(&[1]))?;
            tape.mse(v["x"], zero)
        })
        .unwrap();
        assert_eq!(loss, 9.0);
        assert_eq!(backward(&tape).unwrap()["x"].data(), &[6.0]);
    }

    #[test]
    fn unreachable_leaf_gets_zeros() {
        let l = leaves(&[("unused", t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]))]);
        let (_, tape) = forward(&l, |tape, _| {
            let c = tape.constant(t(&[2], &[1.0, 1.0]))?;
            let target = tape.constant(Tensor::zeros(&[2]))?;
            tape.mse(c, target)
        })
        .unwrap();
        let grads = backward(&tape).unwrap();
        assert_eq!(grads["unused"], Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn non_scalar_output_is_a_contract_error() {
        let mut tape = Tape::new();
        let x = tape.leaf("x", t(&[2], &[1.0, 2.0])).unwrap();
        let y = tape.tanh(x).unwrap();
        tape.set_output(y);
        assert!(matches!(tape.backward(), Err(Error::Contract(_))));

        let l = leaves(&[("x", t(&[2], &[1.0, 2.0]))]);
        assert!(matches!(forward(&l, |tape, v| tape.tanh(v["x"])), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_mismatch_names_the_operation() {
        let mut tape = Tape::new();
        let a = tape.leaf("a", Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.leaf("b", Tensor::zeros(&[2, 3])).unwrap();
        match tape.matmul(a, b) {
            Err(Error::Dimension { op, .. }) => assert_eq!(op, "matmul"),
            other => panic!("expected dimension error, got {other:?}"),
        }
        let c = tape.leaf("c", Tensor::zeros(&[3, 2])).unwrap();
        match tape.add(a, c) {
            Err(Error::Dimension { op, .. }) => assert_eq!(op, "add"),
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn overflow_reports_node_index() {
        let mut tape = Tape::new();
        let x = tape.leaf("x", t(&[1], &[1e200])).unwrap();
        let y = tape.mul(x, x).unwrap_err();
        assert!(matches!(y, Error::Numeric { node: 1, op: "mul" }), "{y:?}");
    }

    #[test]
    fn tensor_rejects_bad_input() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }

    /// Two-layer tanh network checked against a forward pass written out by hand.
    #[test]
    fn two_layer_tanh_matches_hand_coded_forward() {
        let x = [0.3, -0.7, 1.2, 0.05];
        let w1: Vec<f64> = (0..12).map(|i| ((i * 7 % 11) as f64 - 5.0) / 6.0).collect();
        let b1 = [0.1, -0.2, 0.3];
        let w2 = [0.5, -1.1, 0.8];
        let b2 = [0.25];
        let target = [0.4];

        let mut h = [0.0; 3];
        for j in 0..3 {
            let mut s = b1[j];
            for i in 0..4 {
                s += x[i] * w1[i * 3 + j];
            }
            h[j] = s.tanh();
        }
        let mut y = b2[0];
        for j in 0..3 {
            y += h[j] * w2[j];
        }
        let expected = (y.tanh() - target[0]).powi(2);

        let l = leaves(&[
            ("x", t(&[1, 4], &x)),
            ("w1", t(&[4, 3], &w1)),
            ("b1", t(&[3], &b1)),
            ("w2", t(&[3, 1], &w2)),
            ("b2", t(&[1], &b2)),
        ]);
        let (loss, tape) = forward(&l, |tape, v| {
            let h = tape.affine(v["x"], v["w1"], v["b1"])?;
            let h = tape.tanh(h)?;
            let o = tape.affine(h, v["w2"], v["b2"])?;
            let o = tape.tanh(o)?;
            let target = tape.constant(t(&[1, 1], &target))?;
            tape.mse(o, target)
        })
        .unwrap();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
        assert!(tape.verify_replay().unwrap());
    }

    #[test]
    fn linear_map_derivative_is_exact() {
        let l = leaves(&[("x", t(&[3], &[0.5, -2.0, 7.0]))]);
        let err = finite_diff_check(
            |tape, v| {
                let y = tape.scale(v["x"], 2.0)?;
                tape.sum_axis(y, 0)
            },
            &l,
            1e-2,
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn sigmoid_chain_passes_finite_differences() {
        let l = leaves(&[("x", t(&[4], &[0.3, -1.2, 2.0, 0.7]))]);
        let err = finite_diff_check(
            |tape, v| {
                let mut y = v["x"];
                for _ in 0..3 {
                    y = tape.sigmoid(y)?;
                }
                let target = tape.constant(Tensor::zeros(&[4]))?;
                tape.mse(y, target)
            },
            &l,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn non_positive_step_is_rejected() {
        let l = leaves(&[("x", t(&[1], &[1.0]))]);
        assert!(finite_diff_check(|tape, v| tape.sum_axis(v["x"], 0), &l, 0.0).is_err());
    }
}
