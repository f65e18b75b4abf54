//! Taylor-net attention: trainable combinations of monomials of `δx`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Exponent tuples of every monomial in `ndim` variables with total degree
/// `≤ degree`, in graded lexicographic order. For two variables and degree 3:
/// `1, x, y, x², xy, y², x³, x²y, xy², y³`.
pub fn monomial_exponents(ndim: usize, degree: usize) -> Vec<Vec<u32>> {
    fn fill(prefix: &mut Vec<u32>, vars_left: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
        if vars_left == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            fill(prefix, vars_left - 1, remaining - e, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if ndim == 0 {
        return out;
    }
    for d in 0..=degree as u32 {
        fill(&mut Vec::with_capacity(ndim), ndim, d, &mut out);
    }
    out
}

fn eval_monomials(dx: &[f64], exps: &[Vec<u32>]) -> Vec<f64> {
    exps.iter()
        .map(|e| e.iter().zip(dx).map(|(&p, &x)| x.powi(p as i32)).product())
        .collect()
}

/// Monomial features for every row of `offsets` (`E × ndim` → `E × Q`).
pub fn monomial_features(offsets: &Tensor, degree: usize) -> Result<Tensor> {
    let ndim = offsets.cols();
    let exps = monomial_exponents(ndim, degree);
    let q = exps.len();
    let rows = offsets.rows();
    let mut data = Vec::with_capacity(rows * q);
    for r in 0..rows {
        data.extend(eval_monomials(offsets.row(r), &exps));
    }
    Tensor::new(vec![rows, q], data)
}

/// `Σ_k w[c][k] · p_k(δx)` for every output channel `c` of `weights` (`C × Q`).
pub fn taylor_eval(dx: &[f64], weights: &Tensor, degree: usize) -> Result<Vec<f64>> {
    let exps = monomial_exponents(dx.len(), degree);
    if weights.cols() != exps.len() {
        return Err(Error::shape(
            "taylor_eval",
            format!("{} weights per channel, {} monomials", weights.cols(), exps.len()),
        ));
    }
    let feats = eval_monomials(dx, &exps);
    Ok((0..weights.rows())
        .map(|c| weights.row(c).iter().zip(&feats).map(|(w, p)| w * p).sum())
        .collect())
}
