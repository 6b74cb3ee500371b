//! `P(A) <= E[phi 1_A] / inf_A phi` for nonnegative `phi`.

use num_traits::{One, Zero};
use serde::Serialize;
use std::ops::{Add, Div, Mul};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovBound<T> {
    pub bound: T,
    pub p_estimate: T,
    pub holds: bool,
}

/// Weighted-sample form: `weights` are probability masses (normalized
/// here), `phi` the function values (or exact cell averages) and `in_set`
/// the indicator of `A`. `inf_phi` must be a certified lower bound of `phi`
/// on `A`. Works for floats and for exact rationals.
pub fn generalized_markov_bound<T>(phi: &[T], weights: &[T], in_set: &[bool], inf_phi: T) -> Result<MarkovBound<T>>
where
    T: Clone + PartialOrd + Zero + One + Add<Output = T> + Mul<Output = T> + Div<Output = T>,
{
    if phi.len() != weights.len() || phi.len() != in_set.len() || phi.is_empty() {
        return Err(Error::DimensionMismatch(
            "phi, weights and set indicator must have equal, nonzero length".into(),
        ));
    }
    if !(inf_phi > T::zero()) {
        return Err(Error::ZeroInfimum);
    }
    let mut total = T::zero();
    let mut mass = T::zero();
    let mut tail = T::zero();
    for ((p, w), a) in phi.iter().zip(weights).zip(in_set) {
        total = total + w.clone();
        if *a {
            mass = mass + w.clone();
            tail = tail + p.clone() * w.clone();
        }
    }
    if !(total > T::zero()) {
        return Err(Error::InvalidSpec("weights must have positive total mass".into()));
    }
    let bound = tail / total.clone() / inf_phi;
    let p_estimate = mass / total;
    Ok(MarkovBound {
        holds: p_estimate <= bound,
        bound,
        p_estimate,
    })
}
