use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::rng::Rng;

/// Gradients whose magnitude is below this are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

/// Compares tape gradients against central differences on `n_probes`
/// randomly chosen parameter entries and returns the worst relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
///
/// `build` must construct the same scalar loss from the store every time.
pub fn finite_diff_check<F>(build: F, store: &ParamStore, n_probes: usize, h: f64, rng: &mut Rng) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    if n_probes == 0 {
        return Err(NnError::Invalid("n_probes must be >= 1".into()));
    }
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let grads = g.backward(loss)?.params();
    let entries: Vec<(&str, usize)> = store.iter().map(|(n, t)| (n, t.len())).collect();
    let total: usize = entries.iter().map(|e| e.1).sum();
    if total == 0 {
        return Err(NnError::Invalid("no parameters to probe".into()));
    }
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::inference();
        let l = build(&mut g, s)?;
        Ok(g.value(l).data()[0])
    };
    let mut worst = 0.0f64;
    let mut probe = store.clone();
    for _ in 0..n_probes {
        let mut flat = rng.below(total);
        let (name, idx) = entries
            .iter()
            .find_map(|(n, len)| {
                if flat < *len {
                    Some((*n, flat))
                } else {
                    flat -= len;
                    None
                }
            })
            .expect("index within total");
        let analytic = grads
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.data()[idx])
            .unwrap_or(0.0);
        let orig = store.get(name).expect("probed name exists").data()[idx];
        probe.get_mut(name).unwrap().data_mut()[idx] = orig + h;
        let fp = eval(&probe)?;
        probe.get_mut(name).unwrap().data_mut()[idx] = orig - h;
        let fm = eval(&probe)?;
        probe.get_mut(name).unwrap().data_mut()[idx] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}
