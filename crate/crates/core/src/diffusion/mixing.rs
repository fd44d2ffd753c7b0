use crate::error::{Error, Result};

/// Weight of the directional (transitional) predictions at inference index
/// `k_index` (counting down from `k_infer`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixWeight {
    pub r: f64,
    pub conditioned: bool,
}

pub fn mixing_weight(k_index: usize, k_infer: usize, conditioned: bool) -> Result<MixWeight> {
    if k_infer == 0 || k_index > k_infer {
        return Err(Error::invalid(format!("k_index {k_index} outside [0, {k_infer}]")));
    }
    let r = if conditioned { (k_index as f64 / k_infer as f64).powi(3) } else { 1.0 };
    Ok(MixWeight { r, conditioned })
}

/// `r * mean(directional) + (1 - r) * semantic`. Without a semantic input
/// the directional mean is returned as is; without directional inputs the
/// semantic input is.
pub fn phase_mix(eps_f: Option<&[f64]>, eps_b: Option<&[f64]>, eps_c: Option<&[f64]>, r: f64) -> Result<Vec<f64>> {
    let len = [eps_f, eps_b, eps_c]
        .iter()
        .flatten()
        .map(|e| e.len())
        .next()
        .ok_or_else(|| Error::invalid("phase_mix needs at least one prediction"))?;
    if [eps_f, eps_b, eps_c].iter().flatten().any(|e| e.len() != len) {
        return Err(Error::invalid("phase_mix inputs differ in length"));
    }
    let directional: Option<Vec<f64>> = match (eps_f, eps_b) {
        (Some(f), Some(b)) => Some(f.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()),
        (Some(one), None) | (None, Some(one)) => Some(one.to_vec()),
        (None, None) => None,
    };
    Ok(match (directional, eps_c) {
        (Some(d), Some(c)) => d.iter().zip(c).map(|(x, y)| r * x + (1.0 - r) * y).collect(),
        (Some(d), None) => d,
        (None, Some(c)) => c.to_vec(),
        (None, None) => unreachable!("checked above"),
    })
}
