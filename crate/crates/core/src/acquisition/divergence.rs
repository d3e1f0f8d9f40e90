//! Probability flooring, support restriction and symmetrised KL divergence.

use crate::{Error, Result};

/// Floor applied to every probability before a KL computation.
pub const PROB_FLOOR: f64 = 1e-12;

fn floor_and_normalize(p: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = p.iter().map(|&x| x.max(PROB_FLOOR)).collect();
    let sum: f64 = floored.iter().sum();
    floored.into_iter().map(|x| x / sum).collect()
}

/// Keeps the first `n_original` entries of `dist`, floors them and
/// renormalizes to a distribution over the original positions.
pub fn restrict_renormalize(dist: &[f64], n_original: usize) -> Result<Vec<f64>> {
    if n_original == 0 || n_original > dist.len() {
        return Err(Error::argument(format!(
            "cannot restrict {} positions to {n_original}",
            dist.len()
        )));
    }
    Ok(floor_and_normalize(&dist[..n_original]))
}

/// `KL(p || q) + KL(q || p)` in nats, after flooring both inputs.
///
/// Computed as `sum (p_i - q_i)(ln p_i - ln q_i)`, which is the same quantity
/// and is exactly symmetric in floating point.
pub fn sym_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::argument(format!(
            "length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let p = floor_and_normalize(p);
    let q = floor_and_normalize(q);
    Ok(p.iter()
        .zip(&q)
        .map(|(a, b)| (a - b) * (a.ln() - b.ln()))
        .sum())
}
