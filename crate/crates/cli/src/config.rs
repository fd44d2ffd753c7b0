//! Run configuration: a TOML file, overridden by `--set section.key=value`
//! flags and a few dedicated flags. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use phasecomp::diffusion::{make_schedule, DenoiserConfig, DenoiserTrainConfig, DiffusionSchedule};
use phasecomp::phase::{PaeConfig, PaeTrainConfig};
use phasecomp::synth::CorpusConfig;
use phasecomp_nn::{AdamConfig, TransformerConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub corpus: CorpusSection,
    pub pae: PaeSection,
    pub diffusion: DiffusionSection,
    pub compose: ComposeSection,
    pub inbetween: InbetweenSection,
    pub longgen: LonggenSection,
    pub eval: EvalSection,
    pub export: ExportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            corpus: CorpusSection::default(),
            pae: PaeSection::default(),
            diffusion: DiffusionSection::default(),
            compose: ComposeSection::default(),
            inbetween: InbetweenSection::default(),
            longgen: LonggenSection::default(),
            eval: EvalSection::default(),
            export: ExportSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: PathBuf,
    pub checkpoints: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { corpus: "corpus".into(), checkpoints: "checkpoints".into(), output: "out".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub train_streams: usize,
    pub test_streams: usize,
    pub min_actions: usize,
    pub max_actions: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub fps: f64,
    pub window: usize,
    pub idle_amp: f64,
    pub vocab: Vec<String>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let c = CorpusConfig::default();
        Self {
            train_streams: c.train_streams,
            test_streams: c.test_streams,
            min_actions: c.min_actions,
            max_actions: c.max_actions,
            n_min: c.n_min,
            n_max: c.n_max,
            fps: c.fps,
            window: c.window,
            idle_amp: c.idle_amp,
            vocab: c.vocab,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PaeSection {
    pub q: usize,
    pub pe_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub layers: usize,
    pub emphasis: f64,
    pub epochs: usize,
    /// 0 means no cap.
    pub max_updates: usize,
    pub batch: usize,
    pub lr: f64,
    pub clip: f64,
}

impl Default for PaeSection {
    fn default() -> Self {
        let c = PaeConfig::default();
        Self {
            q: c.q,
            pe_dim: c.pe_dim,
            d_model: c.model.d_model,
            heads: c.model.heads,
            d_ff: c.model.d_ff,
            layers: c.model.layers,
            emphasis: c.emphasis,
            epochs: 10,
            max_updates: 1000,
            batch: 32,
            lr: 1e-3,
            clip: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    pub k_train: usize,
    pub k_infer: usize,
    pub d_text: usize,
    pub n_tok: usize,
    pub pe_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub layers: usize,
    pub epochs: usize,
    /// 0 means no cap.
    pub max_updates: usize,
    pub batch: usize,
    pub lr: f64,
    pub clip: f64,
    /// Bound on clean-latent estimates while sampling; 0 disables it.
    pub x0_clip: f64,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        let c = DenoiserConfig::default();
        Self {
            k_train: 1000,
            k_infer: 100,
            d_text: c.d_text,
            n_tok: c.n_tok,
            pe_dim: c.pe_dim,
            d_model: c.model.d_model,
            heads: c.model.heads,
            d_ff: c.model.d_ff,
            layers: c.model.layers,
            epochs: 10,
            max_updates: 600,
            batch: 64,
            lr: 1e-3,
            clip: 1.0,
            x0_clip: phasecomp::composer::DEFAULT_X0_CLIP,
        }
    }
}

/// Prompts are whitespace-separated action tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComposeSection {
    pub prev: String,
    pub next: String,
    pub n_prev: usize,
    pub n_next: usize,
}

impl Default for ComposeSection {
    fn default() -> Self {
        Self { prev: "walk".into(), next: "wave".into(), n_prev: 48, n_next: 48 }
    }
}

/// Inputs come from two motion files, or else from test pair `pair` of the
/// corpus. An empty `text` runs unconditioned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InbetweenSection {
    pub prev: Option<PathBuf>,
    pub next: Option<PathBuf>,
    pub pair: usize,
    pub frames: usize,
    pub text: String,
}

impl Default for InbetweenSection {
    fn default() -> Self {
        Self { prev: None, next: None, pair: 0, frames: 24, text: String::new() }
    }
}

/// A chain file in the `cpd-chain 1` format, or else inline segments written
/// as `"<frames> <token> ..."`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LonggenSection {
    pub chain: Option<PathBuf>,
    pub segments: Vec<String>,
}

impl Default for LonggenSection {
    fn default() -> Self {
        Self {
            chain: None,
            segments: ["48 walk", "48 wave", "48 squat", "48 spin", "48 reach", "48 idle"].map(String::from).to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Held-out inbetweening gaps.
    pub gaps: usize,
    pub gap_frames: usize,
    /// Frames of context kept on each side of a gap.
    pub context: usize,
    /// Two-segment compositions scored for smoothness.
    pub compositions: usize,
    /// Conditioned inbetweening runs scored by the frequency classifier.
    pub conditioned: usize,
    pub conditioned_frames: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { gaps: 100, gap_frames: 24, context: 48, compositions: 50, conditioned: 60, conditioned_frames: 48 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSection {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::Config(format!("bad key `{key}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    /// File contents (if any) with `overrides` applied in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            set_path(&mut table, k, parse_value(v))?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.corpus_config().validate().map_err(|e| CliError::Config(format!("corpus: {e}")))?;
        self.pae_config().validate().map_err(|e| CliError::Config(format!("pae: {e}")))?;
        self.denoiser_config().validate().map_err(|e| CliError::Config(format!("diffusion: {e}")))?;
        self.schedule()?;
        if !(self.diffusion.x0_clip >= 0.0) {
            return Err(CliError::Config("diffusion.x0_clip must be nonnegative".into()));
        }
        if self.pae.batch == 0 || self.diffusion.batch == 0 {
            return Err(CliError::Config("batch sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        let c = &self.corpus;
        CorpusConfig {
            seed: self.seed,
            train_streams: c.train_streams,
            test_streams: c.test_streams,
            min_actions: c.min_actions,
            max_actions: c.max_actions,
            n_min: c.n_min,
            n_max: c.n_max,
            fps: c.fps,
            window: c.window,
            idle_amp: c.idle_amp,
            vocab: c.vocab.clone(),
        }
    }

    pub fn pae_config(&self) -> PaeConfig {
        let p = &self.pae;
        PaeConfig {
            q: p.q,
            pe_dim: p.pe_dim,
            model: TransformerConfig { d_model: p.d_model, heads: p.heads, d_ff: p.d_ff, layers: p.layers },
            n_min: self.corpus.n_min,
            n_max: self.corpus.n_max,
            emphasis: p.emphasis,
            fps: self.corpus.fps,
            ..PaeConfig::default()
        }
    }

    pub fn pae_train(&self) -> PaeTrainConfig {
        let p = &self.pae;
        PaeTrainConfig {
            epochs: p.epochs,
            max_updates: (p.max_updates > 0).then_some(p.max_updates),
            batch: p.batch,
            adam: AdamConfig { lr: p.lr, ..AdamConfig::default() },
            clip: p.clip,
            seed: self.seed,
        }
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        let d = &self.diffusion;
        DenoiserConfig {
            q: self.pae.q,
            d_text: d.d_text,
            n_tok: d.n_tok,
            pe_dim: d.pe_dim,
            model: TransformerConfig { d_model: d.d_model, heads: d.heads, d_ff: d.d_ff, layers: d.layers },
            vocab: self.corpus.vocab.clone(),
        }
    }

    pub fn denoiser_train(&self) -> DenoiserTrainConfig {
        let d = &self.diffusion;
        DenoiserTrainConfig {
            epochs: d.epochs,
            max_updates: (d.max_updates > 0).then_some(d.max_updates),
            batch: d.batch,
            adam: AdamConfig { lr: d.lr, ..AdamConfig::default() },
            clip: d.clip,
            seed: self.seed,
        }
    }

    pub fn x0_clip(&self) -> Option<f64> {
        (self.diffusion.x0_clip > 0.0).then_some(self.diffusion.x0_clip)
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule, CliError> {
        make_schedule(self.diffusion.k_train, self.diffusion.k_infer).map_err(|e| CliError::Config(format!("diffusion: {e}")))
    }
}
