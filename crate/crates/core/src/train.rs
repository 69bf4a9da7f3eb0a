//! Self-supervised training loop, checkpoints and embedding export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{Activation, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::graph::{LabeledGraph, UnreachablePolicy};
use crate::io::{parse_key_values, write_csv_report, Report};
use crate::loss::{
    build_plan, loss_and_grads, sample_seed, HopIndex, LossConfig, LossPlan, LossVariant,
    Temperatures,
};
use crate::tensor::{adam_step, AdamConfig, AdamState, Matrix, Param, WeightDecayMode};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
    /// Seeds weight initialization; sampling uses `loss.seed`.
    pub seed: u64,
    /// Anchors per optimizer step; `None` uses every node each step.
    pub batch_size: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            loss: LossConfig::default(),
            encoder: EncoderConfig::default(),
            seed: 0,
            batch_size: None,
            checkpoint_every: None,
            checkpoint_dir: None,
            log_path: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("cannot parse {key} = {value:?}")))
}

fn optional(value: &str) -> bool {
    !(value.is_empty() || value == "none")
}

impl TrainConfig {
    /// Parses `key = value` text. Unknown keys are errors.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (key, value) in parse_key_values(text)? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_key_values(&text)
    }

    /// Sets one configuration key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "epochs" => self.epochs = parse_value(key, v)?,
            "lr" => self.adam.lr = parse_value(key, v)?,
            "weight_decay" => self.adam.weight_decay = parse_value(key, v)?,
            "beta1" => self.adam.beta1 = parse_value(key, v)?,
            "beta2" => self.adam.beta2 = parse_value(key, v)?,
            "adam_eps" => self.adam.eps = parse_value(key, v)?,
            "decay_mode" => {
                self.adam.decay_mode = match v {
                    "l2" => WeightDecayMode::L2,
                    "decoupled" => WeightDecayMode::Decoupled,
                    _ => return Err(Error::InvalidParameter(format!("unknown decay_mode {v:?}"))),
                }
            }
            "variant" => self.loss.variant = parse_value::<LossVariant>(key, v)?,
            "k" => self.loss.k = parse_value(key, v)?,
            "alpha" => self.loss.alpha = parse_value(key, v)?,
            "beyond_sample" => {
                self.loss.beyond_sample = if optional(v) {
                    Some(parse_value(key, v)?)
                } else {
                    None
                }
            }
            "sample_seed" => self.loss.seed = parse_value(key, v)?,
            "temperature_rule" => self.loss.temperature_rule = v.parse()?,
            "unreachable" => {
                self.loss.unreachable = match v {
                    "include" => UnreachablePolicy::IncludeInBeyond,
                    "exclude" => UnreachablePolicy::Exclude,
                    _ => {
                        return Err(Error::InvalidParameter(format!(
                            "unknown unreachable policy {v:?}"
                        )))
                    }
                }
            }
            "embed_dim" => self.encoder.embed_dim = parse_value(key, v)?,
            "layers" => self.encoder.layers = parse_value(key, v)?,
            "hidden_dim" => {
                self.encoder.hidden_dim = if optional(v) {
                    Some(parse_value(key, v)?)
                } else {
                    None
                }
            }
            "activation" => self.encoder.activation = v.parse::<Activation>()?,
            "tau_base" => self.encoder.tau_base = parse_value(key, v)?,
            "tau_spacing" => self.encoder.tau_spacing = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "batch_size" => {
                self.batch_size = if optional(v) {
                    Some(parse_value(key, v)?)
                } else {
                    None
                }
            }
            "checkpoint_every" => {
                self.checkpoint_every = if optional(v) {
                    Some(parse_value(key, v)?)
                } else {
                    None
                }
            }
            "checkpoint_dir" => self.checkpoint_dir = optional(v).then(|| PathBuf::from(v)),
            "log_path" => self.log_path = optional(v).then(|| PathBuf::from(v)),
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown config key {key:?}"
                )))
            }
        }
        Ok(())
    }

    /// Every key with its current value; `from_key_values` reads this back.
    pub fn to_key_values(&self) -> String {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
        }
        fn opt_path(v: &Option<PathBuf>) -> String {
            v.as_ref()
                .map_or_else(|| "none".to_string(), |p| p.display().to_string())
        }
        let pairs: Vec<(&str, String)> = vec![
            ("epochs", self.epochs.to_string()),
            ("lr", self.adam.lr.to_string()),
            ("weight_decay", self.adam.weight_decay.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("adam_eps", self.adam.eps.to_string()),
            (
                "decay_mode",
                match self.adam.decay_mode {
                    WeightDecayMode::L2 => "l2".into(),
                    WeightDecayMode::Decoupled => "decoupled".into(),
                },
            ),
            ("variant", self.loss.variant.to_string()),
            ("k", self.loss.k.to_string()),
            ("alpha", self.loss.alpha.to_string()),
            ("beyond_sample", opt(&self.loss.beyond_sample)),
            ("sample_seed", self.loss.seed.to_string()),
            ("temperature_rule", self.loss.temperature_rule.to_string()),
            (
                "unreachable",
                match self.loss.unreachable {
                    UnreachablePolicy::IncludeInBeyond => "include".into(),
                    UnreachablePolicy::Exclude => "exclude".into(),
                },
            ),
            ("embed_dim", self.encoder.embed_dim.to_string()),
            ("layers", self.encoder.layers.to_string()),
            ("hidden_dim", opt(&self.encoder.hidden_dim)),
            ("activation", self.encoder.activation.to_string()),
            ("tau_base", self.encoder.tau_base.to_string()),
            ("tau_spacing", self.encoder.tau_spacing.to_string()),
            ("seed", self.seed.to_string()),
            ("batch_size", opt(&self.batch_size)),
            ("checkpoint_every", opt(&self.checkpoint_every)),
            ("checkpoint_dir", opt_path(&self.checkpoint_dir)),
            ("log_path", opt_path(&self.log_path)),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lr must be positive, got {}",
                self.adam.lr
            )));
        }
        if self.adam.weight_decay < 0.0 {
            return Err(Error::InvalidParameter(
                "weight_decay must be non-negative".into(),
            ));
        }
        if self.batch_size == Some(0) || self.checkpoint_every == Some(0) {
            return Err(Error::InvalidParameter(
                "batch_size and checkpoint_every must be at least 1".into(),
            ));
        }
        self.loss.validate()?;
        for (name, v) in [
            ("lr", self.adam.lr),
            ("weight_decay", self.adam.weight_decay),
        ] {
            if v != 0.0 && !(1e-8..=1e-2).contains(&v) {
                log::warn!("{name} = {v} lies outside the usual search range [1e-8, 1e-2]");
            }
        }
        Ok(())
    }
}

/// Metrics of one epoch, measured before that epoch's parameter updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub clamp_fraction: f64,
}

/// Loss history as a CSV report with columns `epoch, loss, clamp_fraction`.
pub fn history_report(history: &[EpochRecord]) -> Report {
    Report::new()
        .with_column("epoch", history.iter().map(|r| r.epoch as f64).collect())
        .with_column("loss", history.iter().map(|r| r.loss).collect())
        .with_column(
            "clamp_fraction",
            history.iter().map(|r| r.clamp_fraction).collect(),
        )
}

/// Training state that can be stepped, checkpointed and resumed.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    encoder: Encoder,
    adam: AdamState,
    epoch: usize,
    history: Vec<EpochRecord>,
    index: HopIndex,
    propagated: Matrix,
    cached_plan: Option<LossPlan>,
}

impl Trainer {
    pub fn new(g: &LabeledGraph, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let encoder = Encoder::new(g, cfg.encoder.clone(), cfg.seed)?;
        let adam = AdamState::new(encoder.params());
        Self::assemble(g, cfg, encoder, adam, 0, Vec::new())
    }

    fn assemble(
        g: &LabeledGraph,
        cfg: TrainConfig,
        encoder: Encoder,
        adam: AdamState,
        epoch: usize,
        history: Vec<EpochRecord>,
    ) -> Result<Self> {
        let index = HopIndex::build(g, cfg.loss.k, cfg.loss.unreachable)?;
        let propagated = encoder.propagate_features(g.features().ok_or(Error::MissingFeatures)?)?;
        let mut trainer = Trainer {
            cfg,
            encoder,
            adam,
            epoch,
            history,
            index,
            propagated,
            cached_plan: None,
        };
        if trainer.cfg.batch_size.is_none() && trainer.cfg.loss.beyond_sample.is_none() {
            let anchors: Vec<usize> = (0..g.num_nodes()).collect();
            trainer.cached_plan = Some(trainer.plan(&anchors, 0)?);
        }
        Ok(trainer)
    }

    fn plan(&self, anchors: &[usize], epoch: u64) -> Result<LossPlan> {
        build_plan(
            &self.index,
            anchors,
            &self.cfg.loss,
            Temperatures::of(&self.encoder),
            epoch,
        )
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn into_encoder(self) -> Encoder {
        self.encoder
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    fn param_norms(&self) -> String {
        self.encoder
            .params()
            .iter()
            .map(|p| format!("{}={}", p.name, p.value.frobenius_norm()))
            .collect::<Vec<_>>()
            .join(",")
    }

    fn update(&mut self, plan: &LossPlan, epoch: usize) -> Result<(f64, f64, usize)> {
        let (report, grads) = loss_and_grads(&self.encoder, &self.propagated, plan)?;
        if !report.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                norms: self.param_norms(),
            });
        }
        adam_step(
            self.encoder.params_mut(),
            &grads,
            &mut self.adam,
            &self.cfg.adam,
        )?;
        let clamped = (report.clamp_fraction * report.terms as f64).round();
        Ok((report.loss, clamped, report.terms))
    }

    /// Runs one epoch and returns its record.
    pub fn step(&mut self) -> Result<EpochRecord> {
        let epoch = self.epoch + 1;
        let (loss, clamped, terms) = if let Some(plan) = self.cached_plan.take() {
            let result = self.update(&plan, epoch);
            self.cached_plan = Some(plan);
            result?
        } else {
            let n = self.index.num_nodes();
            let mut anchors: Vec<usize> = (0..n).collect();
            let batch = self.cfg.batch_size.unwrap_or(n).max(1);
            if batch < n {
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(
                    self.cfg.loss.seed,
                    epoch as u64,
                    usize::MAX,
                ));
                anchors.shuffle(&mut rng);
            }
            let (mut loss, mut clamped, mut terms) = (0.0, 0.0, 0);
            for chunk in anchors.chunks(batch) {
                let mut chunk = chunk.to_vec();
                chunk.sort_unstable();
                let plan = self.plan(&chunk, epoch as u64)?;
                let (l, c, t) = self.update(&plan, epoch)?;
                loss += l;
                clamped += c;
                terms += t;
            }
            (loss, clamped, terms)
        };
        let record = EpochRecord {
            epoch,
            loss,
            clamp_fraction: if terms > 0 {
                clamped / terms as f64
            } else {
                0.0
            },
        };
        log::debug!("epoch {epoch}: loss {loss}");
        self.epoch = epoch;
        self.history.push(record);
        Ok(record)
    }

    /// Steps until `cfg.epochs` epochs are complete, writing periodic
    /// checkpoints and the loss log when configured.
    pub fn run(&mut self) -> Result<()> {
        while self.epoch < self.cfg.epochs {
            self.step()?;
            if let (Some(every), Some(dir)) = (self.cfg.checkpoint_every, &self.cfg.checkpoint_dir)
            {
                if self.epoch % every == 0 {
                    let path = dir.join(format!("checkpoint-{:06}.txt", self.epoch));
                    self.checkpoint().save(&path)?;
                }
            }
        }
        if let Some(path) = &self.cfg.log_path {
            write_csv_report(&history_report(&self.history), path)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            graph_fingerprint: self.encoder.graph_fingerprint(),
            epoch: self.epoch,
            params: self.encoder.params().to_vec(),
            adam: self.adam.clone(),
            history: self.history.clone(),
        }
    }

    /// Restores a trainer on `g`; stepping it continues exactly where the
    /// checkpointed run left off.
    pub fn resume(g: &LabeledGraph, ckpt: Checkpoint) -> Result<Self> {
        if g.fingerprint() != ckpt.graph_fingerprint {
            return Err(Error::GraphMismatch);
        }
        ckpt.config.validate()?;
        let mut encoder = Encoder::new(g, ckpt.config.encoder.clone(), ckpt.config.seed)?;
        if encoder.params().len() != ckpt.params.len() {
            return Err(Error::InvalidParameter(format!(
                "checkpoint has {} parameters, encoder expects {}",
                ckpt.params.len(),
                encoder.params().len()
            )));
        }
        for p in ckpt.params {
            encoder.set_param(&p.name, p.value)?;
        }
        Self::assemble(g, ckpt.config, encoder, ckpt.adam, ckpt.epoch, ckpt.history)
    }
}

/// Trains a fresh encoder for `cfg.epochs` epochs.
pub fn train(g: &LabeledGraph, cfg: TrainConfig) -> Result<(Encoder, Vec<EpochRecord>)> {
    let mut trainer = Trainer::new(g, cfg)?;
    trainer.run()?;
    let history = trainer.history.clone();
    Ok((trainer.into_encoder(), history))
}

/// Pre-projection node embeddings `H` of `g`.
pub fn embed(encoder: &Encoder, g: &LabeledGraph) -> Result<Matrix> {
    encoder.check_graph(g)?;
    encoder.forward(g.features().ok_or(Error::MissingFeatures)?)
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub graph_fingerprint: u64,
    pub epoch: usize,
    pub params: Vec<Param>,
    pub adam: AdamState,
    pub history: Vec<EpochRecord>,
}

const CHECKPOINT_MAGIC: &str = "relgraph-checkpoint 1";

fn write_values(out: &mut String, values: &[f64]) {
    let line: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    out.push_str(&line.join(" "));
    out.push('\n');
}

struct Lines<'a> {
    path: &'a Path,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        let (i, text) = self.iter.next().ok_or_else(|| Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line + 1,
            message: "unexpected end of checkpoint".into(),
        })?;
        self.line = i + 1;
        Ok(text)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: message.into(),
        }
    }

    fn fields<T: std::str::FromStr>(&mut self, expected: usize) -> Result<Vec<T>> {
        let text = self.next()?;
        let values: Vec<T> = text
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| self.err(format!("cannot parse {t:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != expected {
            return Err(self.err(format!(
                "expected {expected} values, found {}",
                values.len()
            )));
        }
        Ok(values)
    }

    fn tagged(&mut self, tag: &str) -> Result<Vec<&'a str>> {
        let text = self.next()?;
        let mut parts = text.split_whitespace();
        if parts.next() != Some(tag) {
            return Err(self.err(format!("expected {tag:?} line")));
        }
        Ok(parts.collect())
    }

    fn tagged_number<T: std::str::FromStr>(&mut self, tag: &str) -> Result<T> {
        let parts = self.tagged(tag)?;
        self.number(parts.first())
    }

    fn number<T: std::str::FromStr>(&self, token: Option<&&str>) -> Result<T> {
        token
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| self.err("missing or malformed number"))
    }
}

impl Checkpoint {
    /// Text form with shortest round-trip float formatting, so values survive
    /// a save/load cycle exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let config = self.config.to_key_values();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(out, "fingerprint {}", self.graph_fingerprint);
        let _ = writeln!(out, "epoch {}", self.epoch);
        let _ = writeln!(out, "adam_step {}", self.adam.step);
        let _ = writeln!(out, "config {}", config.lines().count());
        out.push_str(&config);
        let _ = writeln!(out, "params {}", self.params.len());
        for (i, p) in self.params.iter().enumerate() {
            let (r, c) = p.value.shape();
            let _ = writeln!(out, "param {} {r} {c}", p.name);
            write_values(&mut out, p.value.data());
            write_values(&mut out, self.adam.m[i].data());
            write_values(&mut out, self.adam.v[i].data());
        }
        let _ = writeln!(out, "history {}", self.history.len());
        for h in &self.history {
            let _ = writeln!(out, "{} {:?} {:?}", h.epoch, h.loss, h.clamp_fraction);
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = Lines {
            path,
            iter: text.lines().enumerate(),
            line: 0,
        };
        if lines.next()? != CHECKPOINT_MAGIC {
            return Err(lines.err("not a checkpoint file"));
        }
        let graph_fingerprint = lines.tagged_number("fingerprint")?;
        let epoch = lines.tagged_number("epoch")?;
        let step = lines.tagged_number("adam_step")?;
        let n_config: usize = lines.tagged_number("config")?;
        let mut config_text = String::new();
        for _ in 0..n_config {
            config_text.push_str(lines.next()?);
            config_text.push('\n');
        }
        let mut config = TrainConfig::default();
        let pairs: BTreeMap<String, String> = parse_key_values(&config_text)?;
        for (k, v) in pairs {
            config.set(&k, &v)?;
        }
        let n_params: usize = lines.tagged_number("params")?;
        let mut params = Vec::with_capacity(n_params);
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for _ in 0..n_params {
            let header = lines.tagged("param")?;
            let name = header
                .first()
                .ok_or_else(|| lines.err("missing parameter name"))?
                .to_string();
            let rows: usize = lines.number(header.get(1))?;
            let cols: usize = lines.number(header.get(2))?;
            let read = |lines: &mut Lines| -> Result<Matrix> {
                Matrix::from_vec(rows, cols, lines.fields(rows * cols)?)
            };
            params.push(Param::new(name, read(&mut lines)?));
            m.push(read(&mut lines)?);
            v.push(read(&mut lines)?);
        }
        let n_history: usize = lines.tagged_number("history")?;
        let mut history = Vec::with_capacity(n_history);
        for _ in 0..n_history {
            let text = lines.next()?;
            let parts: Vec<&str> = text.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(lines.err("history rows need epoch, loss and clamp fraction"));
            }
            history.push(EpochRecord {
                epoch: lines.number(parts.first())?,
                loss: lines.number(parts.get(1))?,
                clamp_fraction: lines.number(parts.get(2))?,
            });
        }
        Ok(Checkpoint {
            config,
            graph_fingerprint,
            epoch,
            params,
            adam: AdamState { step, m, v },
            history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.set("alpha", "0.3").unwrap();
        cfg.set("variant", "list").unwrap();
        cfg.set("beyond_sample", "5").unwrap();
        cfg.set("activation", "prelu").unwrap();
        cfg.set("lr", "0.00123456789").unwrap();
        let back = TrainConfig::from_key_values(&cfg.to_key_values()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_rejections() {
        assert!(TrainConfig::from_key_values("epochs = 0").is_err());
        assert!(TrainConfig::from_key_values("lr = 0").is_err());
        assert!(TrainConfig::from_key_values("colour = red").is_err());
        assert!(TrainConfig::from_key_values("alpha = 1.5").is_err());
        let ok = TrainConfig::from_key_values("# comment\nepochs = 3\nk = 3\n").unwrap();
        assert_eq!((ok.epochs, ok.loss.k), (3, 3));
    }
}
