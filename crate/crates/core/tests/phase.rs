use std::f64::consts::PI;

use phasecomp::motion::{ChannelLayout, MotionSegment};
use phasecomp::phase::*;
use phasecomp::synth::{gen_action, ActionTemplate};
use phasecomp_nn::{finite_diff_check, sinusoidal_row, AdamConfig, Rng, TransformerConfig};
use proptest::prelude::*;

fn params(q: usize, rng: &mut Rng) -> PhaseParams {
    let mut v = |lo: f64, hi: f64| (0..q).map(|_| rng.uniform(lo, hi)).collect::<Vec<_>>();
    PhaseParams { f: v(-3.0, 3.0), a: v(-2.0, 2.0), b: v(-1.0, 1.0), s: v(-4.0, 4.0), normalized: false }
}

fn small_config() -> PaeConfig {
    PaeConfig {
        q: 8,
        pe_dim: 4,
        model: TransformerConfig { d_model: 16, heads: 2, d_ff: 24, layers: 1 },
        ..PaeConfig::default()
    }
}

fn clip(name: &str, n: usize, seed: u64) -> MotionSegment {
    gen_action(&ActionTemplate::by_name(name, 0.05).unwrap(), n, 24.0, seed).unwrap()
}

#[test]
fn eq1_scalar_oracle() {
    let p = PhaseParams { f: vec![1.0, 2.0], a: vec![1.0, 0.5], b: vec![0.0, 1.0], s: vec![0.0, PI / 4.0], normalized: false };
    let w = build_time_window(3, 2, WindowMode::Frame, 1).unwrap();
    let sig = phase_reparameterize(&p, &w).unwrap();
    for t in 0..3 {
        let x = t as f64 - 1.0;
        assert!((sig.at(t, 0) - x.sin()).abs() < 1e-15);
        assert!((sig.at(t, 1) - (0.5 * (2.0 * (x - PI / 4.0)).sin() + 1.0)).abs() < 1e-15);
    }
}

#[test]
fn comp_pe_shifted_blocks() {
    let d = 6;
    let pe = comp_pe(7, d).unwrap();
    for t in 0..7 {
        let row = pe.row_slice(t);
        assert_eq!(&row[..d], sinusoidal_row(t as f64, d).as_slice());
        assert_eq!(&row[d..2 * d], sinusoidal_row(t as f64 - 3.0, d).as_slice());
        let end: Vec<f64> = (0..d / 2)
            .flat_map(|i| {
                let w = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
                let x = (t as f64 - 6.0) * w;
                [x.sin(), x.cos()]
            })
            .collect();
        for (a, b) in row[2 * d..].iter().zip(&end) {
            assert!((a - b).abs() < 1e-15);
        }
    }
    let one = comp_pe(1, d).unwrap();
    assert_eq!(&one.row_slice(0)[..d], &one.row_slice(0)[d..2 * d]);
    assert_eq!(&comp_pe(5, d).unwrap().row_slice(2)[d..2 * d], sinusoidal_row(0.0, d).as_slice());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn eq1_invariants(seed in any::<u64>(), n in 2usize..40, anchor_frac in 0.0f64..1.0, delta in -5.0f64..5.0) {
        let q = 6;
        let anchor = ((n - 1) as f64 * anchor_frac) as usize;
        let mut rng = Rng::new(seed);
        let p = params(q, &mut rng);
        let w = build_time_window(n, q, WindowMode::Mix, anchor).unwrap();
        let sig = phase_reparameterize(&p, &w).unwrap();
        for t in 0..n {
            for j in 0..q {
                let v = sig.at(t, j);
                prop_assert!(v >= p.b[j] - p.a[j].abs() - 1e-12 && v <= p.b[j] + p.a[j].abs() + 1e-12);
            }
        }
        let zero = PhaseParams { a: vec![0.0; q], ..p.clone() };
        let z = phase_reparameterize(&zero, &w).unwrap();
        for t in 0..n {
            prop_assert_eq!(z.row_slice(t), p.b.as_slice());
        }
        let shifted = PhaseParams { b: p.b.iter().map(|b| b + delta).collect(), ..p.clone() };
        let s = phase_reparameterize(&shifted, &w).unwrap();
        for (x, y) in s.data().iter().zip(sig.data()) {
            prop_assert!((x - y - delta).abs() < 1e-9);
        }
        // Frame-time columns are periodic: moving T by one period leaves the signal unchanged.
        let fw = build_time_window(n, q, WindowMode::Frame, anchor).unwrap();
        let base = phase_reparameterize(&p, &fw).unwrap();
        let mut moved = fw.clone();
        let mut data = moved.t.data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            let f = p.f[i % q];
            if f != 0.0 {
                *v += 2.0 * PI / f.abs();
            }
        }
        moved.t = phasecomp_nn::Tensor::matrix(n, q, data).unwrap();
        let per = phase_reparameterize(&p, &moved).unwrap();
        for (x, y) in per.data().iter().zip(base.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn norm_window_anchor_and_endpoints(n in 2usize..120, anchor_frac in 0.0f64..1.0) {
        let anchor = ((n - 1) as f64 * anchor_frac).round() as usize;
        let w = build_time_window(n, 2, WindowMode::Norm, anchor).unwrap();
        prop_assert_eq!(w.t.at(anchor, 0), 0.0);
        if anchor > 0 {
            prop_assert_eq!(w.t.at(0, 0), -1.0);
        }
        if anchor < n - 1 {
            prop_assert_eq!(w.t.at(n - 1, 0), 1.0);
        }
        for t in 0..n {
            prop_assert!(w.t.at(t, 1).abs() <= 1.0);
        }
        for t in 1..n {
            prop_assert!(w.t.at(t, 0) > w.t.at(t - 1, 0));
        }
    }

    #[test]
    fn frame_window_bounds(n in 1usize..80, anchor_frac in 0.0f64..1.0) {
        let anchor = ((n - 1) as f64 * anchor_frac) as usize;
        let w = build_time_window(n, 4, WindowMode::Mix, anchor).unwrap();
        for t in 0..n {
            prop_assert_eq!(w.t.at(t, 0), t as f64 - anchor as f64);
            prop_assert!(w.t.at(t, 3).abs() <= 1.0);
        }
    }
}

#[test]
fn encode_accepts_every_length_in_range() {
    let cfg = small_config();
    let pae = ActPae::new(cfg.clone(), 1).unwrap();
    for n in [cfg.n_min, 37, 50, cfg.n_max] {
        let m = clip("walk", n, n as u64);
        let p = pae.encode(&m).unwrap();
        assert_eq!(p.to_flat().len(), 4 * cfg.q);
        assert!(p.is_finite());
        assert_eq!(pae.encode(&m).unwrap(), p);
        let out = pae.decode(&p, n, n / 2).unwrap();
        assert_eq!((out.frames(), out.channels()), (n, 16));
        assert_eq!(pae.decode(&p, n, n / 2).unwrap(), out);
        let mut rev: Vec<f64> = Vec::new();
        for t in (0..n).rev() {
            rev.extend_from_slice(m.frame(t));
        }
        let r = MotionSegment::new(rev, n, 24.0, ChannelLayout::planar()).unwrap();
        assert!(pae.encode(&r).unwrap().is_finite());
    }
    assert!(pae.encode(&clip("walk", cfg.n_min - 1, 0)).is_err());
    assert!(pae.decode(&pae.encode(&clip("walk", 30, 0)).unwrap(), cfg.n_max + 1, 10).is_err());
}

#[test]
fn autoencoder_gradients() {
    let pae = ActPae::new(small_config(), 2).unwrap();
    let (a, b) = (clip("walk", 26, 3), clip("wave", 31, 4));
    let batch = [(&a, 13), (&b, 20)];
    let build = |g: &mut phasecomp_nn::Graph, s: &phasecomp_nn::ParamStore| {
        let mut m = pae.clone();
        m.store = s.clone();
        m.loss_on_graph(g, &batch).map_err(|e| phasecomp_nn::NnError::Invalid(e.to_string()))
    };
    let err = finite_diff_check(build, &pae.store, 12, 1e-5, &mut Rng::new(3)).unwrap();
    assert!(err < 1e-4, "{err}");
}

fn tiny_data() -> Vec<(MotionSegment, usize)> {
    ["walk", "wave", "squat", "spin", "reach", "idle", "walk", "squat"]
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let n = 24 + 5 * i;
            (clip(name, n, i as u64), n / 2)
        })
        .collect()
}

#[test]
fn training_is_reproducible_and_fits_stats() {
    let data = tiny_data();
    let tcfg = PaeTrainConfig { epochs: 1, max_updates: None, batch: 4, adam: AdamConfig::default(), clip: 1.0, seed: 9 };
    let (m1, l1) = train_actpae(&data, &small_config(), &tcfg).unwrap();
    let (m2, l2) = train_actpae(&data, &small_config(), &tcfg).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(m1.store, m2.store);

    let stats = m1.stats().unwrap();
    let z: Vec<Vec<f64>> = data
        .iter()
        .map(|(m, a)| stats.normalize_flat(&m1.encode_anchored(m, *a).unwrap().to_flat()).unwrap())
        .collect();
    for j in 0..z[0].len() {
        let mean = z.iter().map(|v| v[j]).sum::<f64>() / z.len() as f64;
        let var = z.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 1e-6, "{mean}");
        if stats.std[j] > 1e-8 {
            assert!((var.sqrt() - 1.0).abs() < 1e-6, "{var}");
        }
    }
    assert!(train_actpae(&[], &small_config(), &tcfg).is_err());
}

#[test]
fn loss_decreases_over_epochs() {
    let data = tiny_data();
    let tcfg = PaeTrainConfig {
        epochs: 10,
        max_updates: None,
        batch: 4,
        adam: AdamConfig { lr: 1e-3, ..Default::default() },
        clip: 1.0,
        seed: 1,
    };
    let (_, log) = train_actpae(&data, &small_config(), &tcfg).unwrap();
    assert!(log.epoch_loss[9] < log.epoch_loss[0], "{:?}", log.epoch_loss);
}

#[test]
fn checkpoint_roundtrip() {
    let data = tiny_data();
    let tcfg = PaeTrainConfig { epochs: 1, max_updates: Some(1), batch: 4, adam: AdamConfig::default(), clip: 1.0, seed: 2 };
    let (m, _) = train_actpae(&data, &small_config(), &tcfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pae.ck");
    m.to_checkpoint().save(&path).unwrap();
    let back = ActPae::from_checkpoint(&phasecomp_nn::Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back.stats().unwrap(), m.stats().unwrap());
    let x = &data[0].0;
    assert_eq!(back.encode(x).unwrap(), m.encode(x).unwrap());
}
