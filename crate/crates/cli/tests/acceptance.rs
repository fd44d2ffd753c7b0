//! Acceptance criteria 1-12, run in order with one PASS/FAIL line each.
//!
//! The trained stack uses the default run configuration. Set
//! `PHASECOMP_ACCEPTANCE_CACHE=<dir>` to reuse checkpoints between runs.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use phasecomp::composer::{compose_long, ChainSpec, ExecMode, Stack};
use phasecomp::diffusion::{
    add_noise, ddim_step, encode_pairs, eps_to_x0, heldout_l1, make_schedule, mixing_weight, phase_mix, train_denoisers,
    Condition, DenoiseInput, Denoiser, DenoiserConfig, DenoiserKind, LatentPair,
};
use phasecomp::phase::{build_time_window, phase_reparameterize, train_actpae, ActPae, LatentStats, PaeConfig, PhaseParams, WindowMode};
use phasecomp::synth::{gen_action, pae_segments, ActionTemplate, Corpus, Pair, Split};
use phasecomp_cli::evaluate::{self, FrequencyClassifier, GapSummary};
use phasecomp_cli::RunConfig;
use phasecomp_nn::{finite_diff_check, Checkpoint, Graph, NnError, ParamStore, Rng, Tensor, TransformerConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn report(id: usize, name: &str, limit_s: Option<f64>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    let secs = t.elapsed().as_secs_f64();
    let in_time = limit_s.is_none_or(|l| secs <= l);
    let pass = o.pass && in_time;
    let budget = limit_s.map_or(String::new(), |l| format!(" / {l:.0} s"));
    println!(
        "{} {id:>2} {name}: {}{} [{secs:.1} s{budget}]",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        if in_time { "" } else { " (over time budget)" }
    );
    pass
}

fn random_params(q: usize, rng: &mut Rng) -> PhaseParams {
    let mut v = |lo: f64, hi: f64| (0..q).map(|_| rng.uniform(lo, hi)).collect::<Vec<_>>();
    PhaseParams { f: v(-3.0, 3.0), a: v(-2.0, 2.0), b: v(-1.0, 1.0), s: v(-4.0, 4.0), normalized: false }
}

fn reparameterization_algebra() -> Outcome {
    let mut rng = Rng::new(1);
    let mut worst: f64 = 0.0;
    let mut bound_ok = true;
    for case in 0..1000 {
        let q = 2 + 2 * (case % 4);
        let n = 2 + rng.below(95);
        let anchor = rng.below(n);
        let p = random_params(q, &mut rng);
        let mix = build_time_window(n, q, WindowMode::Mix, anchor).unwrap();
        let sig = phase_reparameterize(&p, &mix).unwrap();
        for t in 0..n {
            for j in 0..q {
                let v = sig.at(t, j);
                bound_ok &= v >= p.b[j] - p.a[j].abs() - 1e-9 && v <= p.b[j] + p.a[j].abs() + 1e-9;
            }
        }
        let zero = PhaseParams { a: vec![0.0; q], ..p.clone() };
        let z = phase_reparameterize(&zero, &mix).unwrap();
        for t in 0..n {
            for j in 0..q {
                worst = worst.max((z.at(t, j) - p.b[j]).abs());
            }
        }
        let delta = rng.uniform(-5.0, 5.0);
        let shifted = PhaseParams { b: p.b.iter().map(|b| b + delta).collect(), ..p.clone() };
        let s = phase_reparameterize(&shifted, &mix).unwrap();
        for (x, y) in s.data().iter().zip(sig.data()) {
            worst = worst.max((x - y - delta).abs());
        }
        let frame = build_time_window(n, q, WindowMode::Frame, anchor).unwrap();
        let base = phase_reparameterize(&p, &frame).unwrap();
        let mut moved = frame.clone();
        let data: Vec<f64> = frame
            .t
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let f = p.f[i % q];
                if f == 0.0 {
                    *v
                } else {
                    v + 2.0 * PI / f.abs()
                }
            })
            .collect();
        moved.t = Tensor::matrix(n, q, data).unwrap();
        let per = phase_reparameterize(&p, &moved).unwrap();
        for (x, y) in per.data().iter().zip(base.data()) {
            worst = worst.max((x - y).abs());
        }
    }
    outcome(bound_ok && worst <= 1e-9, format!("1000 cases, max deviation {worst:.2e}, bound held: {bound_ok}"))
}

fn small_transformer() -> TransformerConfig {
    TransformerConfig { d_model: 16, heads: 2, d_ff: 32, layers: 1 }
}

fn gradient_correctness() -> Outcome {
    let mut rng = Rng::new(2);
    let pae_cfg = PaeConfig { q: 6, pe_dim: 4, model: small_transformer(), ..PaeConfig::default() };
    let pae = ActPae::new(pae_cfg, 3).unwrap();
    let clips: Vec<(phasecomp::MotionSegment, usize)> = [("walk", 24, 12), ("wave", 30, 9)]
        .iter()
        .enumerate()
        .map(|(i, &(a, n, anchor))| (gen_action(&ActionTemplate::by_name(a, 0.05).unwrap(), n, 24.0, i as u64).unwrap(), anchor))
        .collect();
    let pae_err = {
        let build = |g: &mut Graph, s: &ParamStore| -> phasecomp_nn::Result<phasecomp_nn::Var> {
            let mut m = pae.clone();
            m.store = s.clone();
            let batch: Vec<(&phasecomp::MotionSegment, usize)> = clips.iter().map(|(m, a)| (m, *a)).collect();
            m.loss_on_graph(g, &batch).map_err(|e| NnError::Invalid(e.to_string()))
        };
        finite_diff_check(build, &pae.store, 40, 1e-5, &mut rng).unwrap()
    };
    let q = 4;
    let stats = LatentStats::fit(&(0..8).map(|_| rng.normal_vec(4 * q)).collect::<Vec<_>>()).unwrap();
    let dcfg = DenoiserConfig { q, d_text: 8, n_tok: 8, pe_dim: 4, model: small_transformer(), ..DenoiserConfig::default() };
    let sched = make_schedule(1000, 100).unwrap();
    let mut denoiser_err = |kind: DenoiserKind| {
        let m = Denoiser::new(kind, dcfg.clone(), sched.clone(), stats.clone(), 4).unwrap();
        let lat: Vec<[Vec<f64>; 3]> = (0..3).map(|_| [rng.normal_vec(16), rng.normal_vec(16), rng.normal_vec(16)]).collect();
        let texts = [vec!["walk".to_string()], vec!["wave".to_string(), "spin".to_string()], vec![]];
        let inputs: Vec<DenoiseInput> = lat
            .iter()
            .zip(&texts)
            .enumerate()
            .map(|(i, (l, t))| DenoiseInput {
                k: 40 + 310 * i,
                pk: &l[0],
                cond: if kind == DenoiserKind::Spdm { Condition::Text(t) } else { Condition::Neighbor(&l[1]) },
            })
            .collect();
        let targets: Vec<f64> = lat.iter().flat_map(|l| l[2].clone()).collect();
        let build = |g: &mut Graph, s: &ParamStore| -> phasecomp_nn::Result<phasecomp_nn::Var> {
            let mut mm = m.clone();
            mm.store = s.clone();
            let preds = mm.eps_graph(g, &inputs).map_err(|e| NnError::Invalid(e.to_string()))?;
            let t = g.constant(Tensor::matrix(12, 4, targets.clone())?);
            let d = g.sub(preds, t)?;
            let sq = g.mul(d, d)?;
            Ok(g.mean(sq))
        };
        finite_diff_check(build, &m.store, 40, 1e-5, &mut rng).unwrap()
    };
    let spdm_err = denoiser_err(DenoiserKind::Spdm);
    let tpdm_err = denoiser_err(DenoiserKind::TpdmForward);
    let worst = pae_err.max(spdm_err).max(tpdm_err);
    outcome(
        worst < 1e-4,
        format!("max rel. err: autoencoder {pae_err:.2e}, semantic {spdm_err:.2e}, transitional {tpdm_err:.2e}"),
    )
}

fn ddim_oracle() -> Outcome {
    let s = make_schedule(1000, 100).unwrap();
    let mut rng = Rng::new(5);
    let mut chain_err: f64 = 0.0;
    let mut inverse_err: f64 = 0.0;
    for _ in 0..20 {
        let p0 = rng.normal_vec(128);
        let eps = rng.normal_vec(128);
        let mut p = add_noise(&p0, &eps, Some(s.timesteps[0]), &s).unwrap();
        for (i, &k) in s.timesteps.iter().enumerate() {
            p = ddim_step(&p, &eps, k, s.prev_timestep(i), &s).unwrap().0;
        }
        chain_err = p.iter().zip(&p0).map(|(a, b)| (a - b).abs()).fold(chain_err, f64::max);
        for &k in &s.timesteps {
            let pk = add_noise(&p0, &eps, Some(k), &s).unwrap();
            let x0 = eps_to_x0(&pk, &eps, Some(k), &s).unwrap();
            inverse_err = x0.iter().zip(&p0).map(|(a, b)| (a - b).abs()).fold(inverse_err, f64::max);
        }
    }
    outcome(
        chain_err <= 1e-6 && inverse_err <= 1e-9,
        format!("100-step chain error {chain_err:.2e}, single-step inverse error {inverse_err:.2e}"),
    )
}

fn mixing_equivalence() -> Outcome {
    let s = make_schedule(1000, 100).unwrap();
    let mut rng = Rng::new(6);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let k = s.timesteps[rng.below(100)];
        let r = mixing_weight(rng.below(101), 100, true).unwrap().r;
        let pk = rng.normal_vec(16);
        let (f, b, c) = (rng.normal_vec(16), rng.normal_vec(16), rng.normal_vec(16));
        let (fo, bo) = match case % 3 {
            0 => (Some(f.as_slice()), Some(b.as_slice())),
            1 => (Some(f.as_slice()), None),
            _ => (None, Some(b.as_slice())),
        };
        let eps_space = eps_to_x0(&pk, &phase_mix(fo, bo, Some(&c), r).unwrap(), Some(k), &s).unwrap();
        let x = |e: Option<&[f64]>| e.map(|e| eps_to_x0(&pk, e, Some(k), &s).unwrap());
        let x_space = phase_mix(x(fo).as_deref(), x(bo).as_deref(), x(Some(&c)).as_deref(), r).unwrap();
        for (a, b) in eps_space.iter().zip(&x_space) {
            worst = worst.max((a - b).abs());
        }
    }
    let r0 = mixing_weight(0, 100, true).unwrap().r;
    let rk = mixing_weight(100, 100, true).unwrap().r;
    let monotone = (0..100).all(|i| mixing_weight(i, 100, true).unwrap().r <= mixing_weight(i + 1, 100, true).unwrap().r);
    outcome(
        worst <= 1e-12 && r0 == 0.0 && rk == 1.0 && monotone,
        format!("1000 tuples, max difference {worst:.2e}; r(0) = {r0}, r(K) = {rk}, monotone: {monotone}"),
    )
}

struct Trained {
    cfg: RunConfig,
    corpus: Corpus,
    stack: Stack,
    test: Vec<Pair>,
    test_latents: Vec<LatentPair>,
    pae_updates: usize,
    denoiser_updates: [usize; 3],
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os("PHASECOMP_ACCEPTANCE_CACHE").map(PathBuf::from)
}

fn load_cached(dir: &Path, name: &str) -> Option<Checkpoint> {
    Checkpoint::load(&dir.join(name)).ok()
}

fn train_pae(cfg: &RunConfig, corpus: &Corpus) -> (ActPae, usize) {
    if let Some(ck) = cache_dir().and_then(|d| load_cached(&d, "pae.ck")) {
        return (ActPae::from_checkpoint(&ck).unwrap(), cfg.pae.max_updates);
    }
    let segs = pae_segments(&corpus.pairs(Split::Train).unwrap());
    let (pae, log) = train_actpae(&segs, &cfg.pae_config(), &cfg.pae_train()).unwrap();
    if let Some(d) = cache_dir() {
        std::fs::create_dir_all(&d).unwrap();
        pae.to_checkpoint().save(&d.join("pae.ck")).unwrap();
    }
    (pae, log.updates)
}

fn with_clip(cfg: &RunConfig, mut stack: Stack) -> Stack {
    stack.x0_clip = cfg.x0_clip();
    stack
}

fn train_stack(cfg: &RunConfig, corpus: &Corpus, pae: ActPae) -> (Stack, [usize; 3]) {
    let names = ["spdm.ck", "tpdm_forward.ck", "tpdm_backward.ck"];
    if let Some(d) = cache_dir() {
        if let [Some(s), Some(f), Some(b)] = names.map(|n| load_cached(&d, n)) {
            let [s, f, b] = [s, f, b].map(|ck| Denoiser::from_checkpoint(&ck).unwrap());
            let u = cfg.diffusion.max_updates;
            return (with_clip(cfg, Stack::new(pae, s, f, b).unwrap()), [u; 3]);
        }
    }
    let train = encode_pairs(&pae, &corpus.pairs(Split::Train).unwrap()).unwrap();
    let [s, f, b] =
        train_denoisers(&train, pae.stats().unwrap(), &cfg.denoiser_config(), &cfg.schedule().unwrap(), &cfg.denoiser_train())
            .unwrap();
    let updates = [s.1.updates, f.1.updates, b.1.updates];
    if let Some(d) = cache_dir() {
        for (m, n) in [&s.0, &f.0, &b.0].into_iter().zip(names) {
            m.to_checkpoint().save(&d.join(n)).unwrap();
        }
    }
    (with_clip(cfg, Stack::new(pae, s.0, f.0, b.0).unwrap()), updates)
}

fn autoencoder_reconstruction(cfg: &RunConfig, corpus: &Corpus, test: &[Pair]) -> (Outcome, ActPae, usize) {
    let (pae, updates) = train_pae(cfg, corpus);
    let segs = pae_segments(test);
    let mut se = vec![0.0; cfg.pae_config().layout.width()];
    let mut frames = 0.0;
    for chunk in segs.chunks(64) {
        let batch: Vec<(&phasecomp::MotionSegment, usize)> = chunk.iter().map(|(m, a)| (m, *a)).collect();
        let enc = pae.encode_batch(&batch).unwrap();
        let dec: Vec<(&PhaseParams, usize, usize)> = enc.iter().zip(chunk).map(|(p, (m, a))| (p, m.frames(), *a)).collect();
        for (r, (m, _)) in pae.decode_batch(&dec).unwrap().iter().zip(chunk) {
            for t in 0..m.frames() {
                for (c, e) in se.iter_mut().enumerate() {
                    *e += (r.get(t, c) - m.get(t, c)).powi(2);
                }
            }
            frames += m.frames() as f64;
        }
    }
    let rmse: Vec<f64> = se.iter().map(|e| (e / frames).sqrt()).collect();
    let worst = rmse.iter().copied().fold(0.0, f64::max);
    let mean = rmse.iter().sum::<f64>() / rmse.len() as f64;
    let o = outcome(
        worst <= 0.15 && updates <= 20_000,
        format!("{updates} updates, held-out per-channel RMSE max {worst:.4} (mean {mean:.4}) over {} segments", segs.len()),
    );
    (o, pae, updates)
}

fn denoiser_signal(trained: &Trained) -> Outcome {
    let s = &trained.stack;
    let mut pass = true;
    let mut parts = Vec::new();
    for (m, u) in [&s.spdm, &s.forward, &s.backward].into_iter().zip(trained.denoiser_updates) {
        let (l1, zero) = heldout_l1(m, &trained.test_latents, trained.cfg.seed + 1).unwrap();
        let gain = 1.0 - l1 / zero;
        pass &= gain >= 0.10;
        parts.push(format!("{} {l1:.4} vs zero {zero:.4} ({:.1}% better, {u} updates)", m.kind.as_str(), 100.0 * gain));
    }
    outcome(pass, parts.join("; "))
}

fn batched_sequential(stack: &Stack) -> Outcome {
    let k = stack.spdm.schedule.timesteps.len();
    let names = ["walk", "wave", "squat", "spin", "reach", "idle"];
    let spec = |m: usize| {
        ChainSpec::new((0..m).map(|i| (vec![names[i % names.len()].to_string()], 40 + 4 * (i % 5))).collect(), 11 + m as u64)
    };
    let a = compose_long(stack, &spec(4), ExecMode::Batched).unwrap();
    let b = compose_long(stack, &spec(4), ExecMode::Sequential).unwrap();
    let diff = a
        .latents
        .iter()
        .flatten()
        .zip(b.latents.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let mut sweeps = vec![b.sweeps];
    for m in [2, 16] {
        sweeps.push(compose_long(stack, &spec(m), ExecMode::Sequential).unwrap().sweeps);
    }
    outcome(
        diff <= 1e-12 && sweeps.iter().all(|&s| s == k),
        format!("M=4 max latent difference {diff:.2e}; sequential sweeps for M=4,2,16: {sweeps:?} (K_infer {k})"),
    )
}

fn composition_smoothness(t: &Trained) -> Outcome {
    let s = evaluate::evaluate_compositions(&t.stack, &t.corpus, 50, t.cfg.seed).unwrap();
    let (gap, jerk, truth) = (s.median_gap(), s.mean_transition_jerk(), s.mean_truth_jerk());
    outcome(
        s.gaps.len() == 50 && gap <= 2.0 && jerk <= 2.0 * truth,
        format!(
            "{} compositions, median boundary gap {gap:.3}; transition RMS jerk {jerk:.3} vs ground truth {truth:.3} (ratio {:.2})",
            s.gaps.len(),
            jerk / truth
        ),
    )
}

fn inbetweening(t: &Trained) -> GapSummary {
    let cases = evaluate::gap_cases(&t.corpus, 100, 48, 24).unwrap();
    assert_eq!(cases.len(), 100, "the test split yields fewer than 100 gap cases");
    evaluate::evaluate_gaps(&t.stack, &cases, t.cfg.seed).unwrap()
}

fn conditioned(t: &Trained) -> Outcome {
    let c = &t.cfg.corpus;
    let n = t.cfg.eval.conditioned_frames;
    let clf = FrequencyClassifier::fit(&c.vocab, n, c.fps, c.idle_amp, 20, t.cfg.seed).unwrap();
    let cases = evaluate::gap_cases(&t.corpus, 60, 48, n).unwrap();
    let acc = evaluate::evaluate_conditioned(&t.stack, &cases, &clf, t.cfg.seed).unwrap();
    let chance = 1.0 / c.vocab.len() as f64;
    outcome(
        acc >= 2.0 * chance,
        format!("{} cases of {n} frames, accuracy {acc:.3} (chance {chance:.3})", cases.len()),
    )
}

const TINY: &str = r#"
seed = 9

[corpus]
train_streams = 16
test_streams = 8

[pae]
q = 4
pe_dim = 4
d_model = 16
heads = 2
d_ff = 24
layers = 1
epochs = 1
max_updates = 4
batch = 16

[diffusion]
k_infer = 5
d_text = 8
n_tok = 8
pe_dim = 4
d_model = 16
heads = 2
d_ff = 24
layers = 1
epochs = 1
max_updates = 3
batch = 16

[eval]
gaps = 2
context = 24
compositions = 2
conditioned = 2
conditioned_frames = 24

[inbetween]
text = "squat"

[export]
input = "out/longgen.motion"
"#;

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let commands = ["synth-data", "train-pae", "train-diffusion", "compose", "inbetween", "longgen", "eval", "export"];
    let runs: Vec<Vec<(PathBuf, Vec<u8>)>> = (0..2)
        .map(|_| {
            let d = tempfile::tempdir().unwrap();
            std::fs::write(d.path().join("run.toml"), TINY).unwrap();
            for c in commands {
                let o = Command::new(env!("CARGO_BIN_EXE_phasecomp"))
                    .current_dir(d.path())
                    .args([c, "--config", "run.toml"])
                    .output()
                    .unwrap();
                assert!(o.status.success(), "{c}: {}", String::from_utf8_lossy(&o.stderr));
            }
            snapshot(d.path())
        })
        .collect();
    let differing: Vec<String> = runs[0]
        .iter()
        .zip(&runs[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.display().to_string())
        .collect();
    let same_files = runs[0].len() == runs[1].len();
    outcome(
        same_files && differing.is_empty(),
        format!("{} commands, {} artifacts compared, differing: {differing:?}", commands.len(), runs[0].len()),
    )
}

fn main() {
    let mut results = Vec::new();
    results.push(report(1, "reparameterization algebra", Some(10.0), reparameterization_algebra));
    results.push(report(2, "gradient correctness", Some(120.0), gradient_correctness));
    results.push(report(3, "DDIM oracle", Some(5.0), ddim_oracle));
    results.push(report(4, "mixing equivalence", Some(5.0), mixing_equivalence));

    let t0 = Instant::now();
    let cfg = RunConfig::default();
    let corpus = Corpus::generate(&cfg.corpus_config()).unwrap();
    let test = corpus.pairs(Split::Test).unwrap();
    println!("     corpus: {} train / {} test pairs [{:.1} s]", corpus.count(Split::Train), test.len(), t0.elapsed().as_secs_f64());

    let mut pae = None;
    let mut pae_updates = 0;
    results.push(report(6, "autoencoder reconstruction", Some(900.0), || {
        let (o, p, u) = autoencoder_reconstruction(&cfg, &corpus, &test);
        pae = Some(p);
        pae_updates = u;
        o
    }));
    let pae = pae.unwrap();

    let mut trained = None;
    results.push(report(7, "denoiser learning signal", Some(1800.0), || {
        let test_latents = encode_pairs(&pae, &test).unwrap();
        let (stack, denoiser_updates) = train_stack(&cfg, &corpus, pae.clone());
        let t = Trained { cfg: cfg.clone(), corpus: corpus.clone(), stack, test: test.clone(), test_latents, pae_updates, denoiser_updates };
        let o = denoiser_signal(&t);
        trained = Some(t);
        o
    }));
    let t = trained.unwrap();
    println!(
        "     stack: {} autoencoder updates, {:?} denoiser updates, {} test pairs",
        t.pae_updates,
        t.denoiser_updates,
        t.test.len()
    );

    results.push(report(5, "batched/sequential equivalence", Some(180.0), || batched_sequential(&t.stack)));
    results.push(report(8, "composition smoothness", None, || composition_smoothness(&t)));

    let mut gaps = GapSummary::default();
    results.push(report(9, "inbetweening vs interpolation", None, || {
        gaps = inbetweening(&t);
        let (v, n) = (gaps.win_rate(|s| s.l2_vel), gaps.win_rate(|s| s.npss));
        outcome(v >= 0.6 && n >= 0.6, format!("{} gaps, win rate L2-Vel {v:.2}, NPSS {n:.2}", gaps.ours.len()))
    }));
    results.push(report(10, "conditioned inbetweening", None, || conditioned(&t)));
    results.push(report(11, "frozen-latent contract", None, || {
        outcome(gaps.frozen_ok && gaps.ours.len() == 100, format!("{} inbetweens checked, all intact: {}", gaps.ours.len(), gaps.frozen_ok))
    }));
    results.push(report(12, "determinism", None, determinism));

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
