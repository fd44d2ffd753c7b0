//! Joint denoising of a chain of latents.
//!
//! Nodes alternate semantic and transitional segments. At every inference
//! step each free node collects a semantic prediction (if it has a prompt)
//! and a directional prediction from each neighbor, reading the neighbor's
//! clean-latent estimate from the previous step. The predictions are mixed in
//! noise space and one DDIM update advances all nodes together.

use phasecomp_nn::Rng;

use crate::diffusion::{add_noise, ddim_step, mixing_weight, phase_mix, Condition, DenoiseInput, DenoiserKind, DiffusionSchedule};
use crate::error::{Error, Result};

/// The three noise predictors behind one interface.
pub trait EpsModel {
    fn schedule(&self) -> &DiffusionSchedule;
    fn latent_dim(&self) -> usize;
    fn predict(&self, kind: DenoiserKind, inputs: &[DenoiseInput]) -> Result<Vec<Vec<f64>>>;

    /// Bound applied to every clean-latent estimate before it is cached and
    /// used for the next step. `None` leaves estimates unclipped.
    fn x0_clip(&self) -> Option<f64> {
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeRole {
    /// Semantic segment; `None` means no semantic model is applied.
    Semantic(Option<Vec<String>>),
    Transition,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub role: NodeRole,
    /// Fixed normalized latent; frozen nodes are never denoised.
    pub frozen: Option<Vec<f64>>,
    /// Noise stream of the node's initial latent.
    pub stream: u64,
}

impl Node {
    pub fn semantic(text: Option<Vec<String>>, stream: u64) -> Self {
        Self { role: NodeRole::Semantic(text), frozen: None, stream }
    }

    pub fn transition(stream: u64) -> Self {
        Self { role: NodeRole::Transition, frozen: None, stream }
    }

    pub fn frozen(latent: Vec<f64>, stream: u64) -> Self {
        Self { role: NodeRole::Semantic(None), frozen: Some(latent), stream }
    }

    fn text(&self) -> Option<&[String]> {
        match &self.role {
            NodeRole::Semantic(Some(t)) => Some(t),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    /// One call per model and step.
    Batched,
    /// One call per prediction.
    Sequential,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainOutput {
    /// Final clean latents, normalized, one per node.
    pub latents: Vec<Vec<f64>>,
    /// Scheduler sweeps performed.
    pub sweeps: usize,
    /// Model invocations issued.
    pub calls: usize,
}

#[derive(Clone, Copy)]
enum Slot {
    Semantic,
    Forward,
    Backward,
}

pub fn denoise_chain(model: &dyn EpsModel, nodes: &[Node], seed: u64, mode: ExecMode) -> Result<ChainOutput> {
    let dim = model.latent_dim();
    let sched = model.schedule();
    for (i, n) in nodes.iter().enumerate() {
        if n.frozen.as_ref().is_some_and(|f| f.len() != dim) {
            return Err(Error::invalid(format!("frozen latent of node {i} has the wrong size")));
        }
        let has_neighbor = i > 0 || i + 1 < nodes.len();
        if n.frozen.is_none() && n.text().is_none() && !has_neighbor {
            return Err(Error::invalid(format!("node {i} has neither a prompt nor a neighbor")));
        }
    }
    let mut pk: Vec<Vec<f64>> = nodes
        .iter()
        .map(|n| Rng::with_stream(seed, n.stream).normal_vec(dim))
        .collect();
    let mut cache: Vec<Vec<f64>> = nodes
        .iter()
        .zip(&pk)
        .map(|(n, p)| n.frozen.clone().unwrap_or_else(|| p.clone()))
        .collect();

    let k_infer = sched.timesteps.len();
    let (mut sweeps, mut calls) = (0, 0);
    for (step, &k) in sched.timesteps.iter().enumerate() {
        let k_index = k_infer - step;
        let mut requests: [Vec<(usize, Slot)>; 3] = Default::default();
        for (i, n) in nodes.iter().enumerate() {
            if n.frozen.is_some() {
                continue;
            }
            if n.text().is_some() {
                requests[0].push((i, Slot::Semantic));
            }
            if i > 0 {
                requests[1].push((i, Slot::Forward));
            }
            if i + 1 < nodes.len() {
                requests[2].push((i, Slot::Backward));
            }
        }
        let kinds = [DenoiserKind::Spdm, DenoiserKind::TpdmForward, DenoiserKind::TpdmBackward];
        let mut eps: Vec<[Option<Vec<f64>>; 3]> = vec![Default::default(); nodes.len()];
        for ((kind, reqs), col) in kinds.iter().zip(&requests).zip(0..) {
            let inputs: Vec<DenoiseInput> = reqs
                .iter()
                .map(|&(i, slot)| DenoiseInput {
                    k,
                    pk: &pk[i],
                    cond: match slot {
                        Slot::Semantic => Condition::Text(nodes[i].text().expect("requested")),
                        Slot::Forward => Condition::Neighbor(&cache[i - 1]),
                        Slot::Backward => Condition::Neighbor(&cache[i + 1]),
                    },
                })
                .collect();
            let preds = match mode {
                ExecMode::Batched if inputs.is_empty() => Vec::new(),
                ExecMode::Batched => {
                    calls += 1;
                    model.predict(*kind, &inputs)?
                }
                ExecMode::Sequential => {
                    let mut out = Vec::with_capacity(inputs.len());
                    for inp in &inputs {
                        calls += 1;
                        out.push(model.predict(*kind, std::slice::from_ref(inp))?.remove(0));
                    }
                    out
                }
            };
            for (&(i, _), p) in reqs.iter().zip(preds) {
                eps[i][col] = Some(p);
            }
        }
        let k_prev = sched.prev_timestep(step);
        for (i, n) in nodes.iter().enumerate() {
            if n.frozen.is_some() {
                continue;
            }
            let [c, f, b] = &eps[i];
            let w = mixing_weight(k_index, k_infer, n.text().is_some())?;
            let mixed = phase_mix(f.as_deref(), b.as_deref(), c.as_deref(), w.r)?;
            let (mut next, mut x0) = ddim_step(&pk[i], &mixed, k, k_prev, sched)?;
            if let Some(c) = model.x0_clip() {
                x0.iter_mut().for_each(|v| *v = v.clamp(-c, c));
                next = add_noise(&x0, &mixed, k_prev, sched)?;
            }
            pk[i] = next;
            cache[i] = x0;
        }
        sweeps += 1;
    }
    Ok(ChainOutput { latents: cache, sweeps, calls })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_schedule;

    /// Predicts `scale * pk + shift(kind)` so that each model's contribution
    /// is visible in the result.
    struct Affine {
        sched: DiffusionSchedule,
    }

    impl EpsModel for Affine {
        fn schedule(&self) -> &DiffusionSchedule {
            &self.sched
        }
        fn latent_dim(&self) -> usize {
            4
        }
        fn predict(&self, kind: DenoiserKind, inputs: &[DenoiseInput]) -> Result<Vec<Vec<f64>>> {
            Ok(inputs
                .iter()
                .map(|i| {
                    let shift = match (kind, i.cond) {
                        (_, Condition::Text(t)) => t.len() as f64,
                        (_, Condition::Neighbor(n)) => 0.1 * n[0],
                    };
                    i.pk.iter().map(|v| 0.5 * v + shift).collect()
                })
                .collect())
        }
    }

    fn toy() -> Affine {
        Affine { sched: make_schedule(100, 10).unwrap() }
    }

    #[test]
    fn frozen_nodes_are_untouched() {
        let frozen = vec![0.25, -1.0, 3.0, 1e-7];
        let nodes = [Node::frozen(frozen.clone(), 0), Node::transition(1), Node::semantic(None, 2)];
        let out = denoise_chain(&toy(), &nodes, 3, ExecMode::Batched).unwrap();
        assert_eq!(out.latents[0], frozen);
        assert_eq!(out.sweeps, 10);
    }

    #[test]
    fn batched_matches_sequential() {
        let t = vec!["walk".to_string()];
        let nodes = [Node::semantic(Some(t.clone()), 0), Node::transition(1), Node::semantic(Some(t), 2)];
        let a = denoise_chain(&toy(), &nodes, 5, ExecMode::Batched).unwrap();
        let b = denoise_chain(&toy(), &nodes, 5, ExecMode::Sequential).unwrap();
        assert_eq!(a.latents, b.latents);
        assert_eq!(a.calls, 30);
        assert_eq!(b.calls, 60);
    }

    struct Clipped(Affine, f64);

    impl EpsModel for Clipped {
        fn schedule(&self) -> &DiffusionSchedule {
            self.0.schedule()
        }
        fn latent_dim(&self) -> usize {
            4
        }
        fn predict(&self, kind: DenoiserKind, inputs: &[DenoiseInput]) -> Result<Vec<Vec<f64>>> {
            self.0.predict(kind, inputs)
        }
        fn x0_clip(&self) -> Option<f64> {
            Some(self.1)
        }
    }

    #[test]
    fn clipped_estimates_stay_in_range() {
        let t = vec!["wave".to_string(), "spin".to_string()];
        let nodes = [Node::semantic(Some(t.clone()), 0), Node::transition(1), Node::semantic(Some(t), 2)];
        let free = denoise_chain(&toy(), &nodes, 7, ExecMode::Batched).unwrap();
        assert!(free.latents.iter().flatten().any(|v| v.abs() > 0.5));
        let out = denoise_chain(&Clipped(toy(), 0.5), &nodes, 7, ExecMode::Batched).unwrap();
        assert!(out.latents.iter().flatten().all(|v| v.abs() <= 0.5));
        let wide = denoise_chain(&Clipped(toy(), 1e9), &nodes, 7, ExecMode::Batched).unwrap();
        assert_eq!(wide.latents, free.latents);
    }

    #[test]
    fn lonely_unconditioned_node_rejected() {
        assert!(denoise_chain(&toy(), &[Node::semantic(None, 0)], 0, ExecMode::Batched).is_err());
        assert!(denoise_chain(&toy(), &[Node::semantic(Some(vec![]), 0)], 0, ExecMode::Batched).is_ok());
    }
}
