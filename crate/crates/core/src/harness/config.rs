//! Experiment configuration.
//!
//! Configs are TOML files written with dotted keys, e.g.
//!
//! ```toml
//! preset = "mlr"
//! trials = 100
//! failure.fraction = 0.5
//! checkpoint.ratio = 0.25
//! ```
//!
//! A `preset` names a built-in config whose keys are applied first; keys in
//! the file override them one by one.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{CheckpointPolicy, RecoveryMode, Selection};
use crate::datagen::{self, Dataset};
use crate::error::{Result, ScarError};
use crate::solvers::{CriterionMetric, ModelKind, SolverConfig};

const PRESETS: &[(&str, &str)] = &[
    ("qp", include_str!("presets/qp.toml")),
    ("mlr", include_str!("presets/mlr.toml")),
    ("mf", include_str!("presets/mf.toml")),
    ("lda", include_str!("presets/lda.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Qp {
        dim: usize,
        condition: f64,
        seed: u64,
    },
    Classification {
        samples: usize,
        dim: usize,
        classes: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        seed: u64,
    },
    Ratings {
        rows: usize,
        cols: usize,
        rank: usize,
        density: f64,
        noise: f64,
        seed: u64,
    },
    Corpus {
        docs: usize,
        vocab: usize,
        topics: usize,
        doc_len: usize,
        seed: u64,
    },
    SparseFile {
        path: PathBuf,
        dim: usize,
        classes: usize,
    },
    RatingsFile {
        path: PathBuf,
        rows: usize,
        cols: usize,
    },
    CorpusFile {
        path: PathBuf,
        vocab: usize,
    },
}

fn default_separation() -> f64 {
    2.0
}

impl DatasetSpec {
    /// Generates or loads the dataset. Relative paths resolve against
    /// `base_dir`.
    pub fn materialize(&self, base_dir: &Path) -> Result<Dataset> {
        match self {
            DatasetSpec::Qp { dim, condition, seed } => datagen::gen_qp(*dim, *condition, *seed),
            DatasetSpec::Classification {
                samples,
                dim,
                classes,
                separation,
                seed,
            } => datagen::gen_classification_with(*samples, *dim, *classes, *separation, *seed),
            DatasetSpec::Ratings {
                rows,
                cols,
                rank,
                density,
                noise,
                seed,
            } => datagen::gen_ratings(*rows, *cols, *rank, *density, *noise, *seed),
            DatasetSpec::Corpus {
                docs,
                vocab,
                topics,
                doc_len,
                seed,
            } => datagen::gen_corpus(*docs, *vocab, *topics, *doc_len, *seed),
            DatasetSpec::SparseFile { path, dim, classes } => {
                datagen::load_sparse(&base_dir.join(path), *dim, *classes).map(Dataset::LabeledSparse)
            }
            DatasetSpec::RatingsFile { path, rows, cols } => {
                datagen::load_ratings(&base_dir.join(path), *rows, *cols).map(Dataset::Ratings)
            }
            DatasetSpec::CorpusFile { path, vocab } => {
                datagen::load_corpus(&base_dir.join(path), *vocab).map(Dataset::Corpus)
            }
        }
    }

    fn model(&self) -> ModelKind {
        match self {
            DatasetSpec::Qp { .. } => ModelKind::Qp,
            DatasetSpec::Classification { .. } | DatasetSpec::SparseFile { .. } => ModelKind::Mlr,
            DatasetSpec::Ratings { .. } | DatasetSpec::RatingsFile { .. } => ModelKind::Mf,
            DatasetSpec::Corpus { .. } | DatasetSpec::CorpusFile { .. } => ModelKind::Lda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormChoice {
    /// Scaled total variation for LDA, Euclidean otherwise.
    Auto,
    Euclidean,
    ScaledTv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionSpec {
    pub metric: CriterionMetric,
    /// Absolute threshold.
    pub threshold: Option<f64>,
    /// Threshold taken from a reference run (solver seed = `base_seed`) at
    /// this iteration.
    pub calibrate_iters: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointSpec {
    /// Iterations between full checkpoints (`C`). A ratio `r` checkpoint
    /// saves every `r * C` iterations.
    pub interval: u64,
    pub ratio: f64,
    pub selection: Selection,
    /// Ratio sweep for `ckpt-sweep`.
    pub ratios: Vec<f64>,
    /// Strategy sweep for `ckpt-sweep`.
    pub strategies: Vec<Selection>,
}

impl Default for CheckpointSpec {
    fn default() -> Self {
        Self {
            interval: 16,
            ratio: 1.0,
            selection: Selection::Full,
            ratios: vec![1.0, 0.5, 0.25, 0.125],
            strategies: vec![Selection::Priority, Selection::Round, Selection::Random],
        }
    }
}

impl CheckpointSpec {
    /// The policy saving `ratio` of the units every `ratio * interval`
    /// iterations.
    pub fn policy(&self, ratio: f64, selection: Selection) -> Result<CheckpointPolicy> {
        let period = ratio * self.interval as f64;
        if period < 1.0 || period.fract() != 0.0 {
            return Err(ScarError::Config(format!(
                "ratio {ratio} does not divide checkpoint.interval {}",
                self.interval
            )));
        }
        let selection = if ratio == 1.0 { Selection::Full } else { selection };
        CheckpointPolicy::new(period as u64, ratio, selection)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossModel {
    /// A uniform unit subset of the requested fraction.
    Units,
    /// Whole shards of the random partition.
    Shards,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FailureSpec {
    /// Per-iteration failure probability; `3 / max_iters` when absent.
    pub geom_p: Option<f64>,
    pub fraction: f64,
    /// Fraction sweep for `sweep`.
    pub fractions: Vec<f64>,
    pub loss_model: LossModel,
    pub shards: usize,
    /// Shards killed per failure under the shard loss model.
    pub kill_shards: usize,
}

impl Default for FailureSpec {
    fn default() -> Self {
        Self {
            geom_p: None,
            fraction: 0.5,
            fractions: vec![0.25, 0.5, 0.75, 1.0],
            loss_model: LossModel::Units,
            shards: 8,
            kill_shards: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    /// One Gaussian perturbation at `perturbation.iteration`.
    Gaussian,
    /// One displacement away from the optimum at `perturbation.iteration`.
    Adversarial,
    /// A reset of `perturbation.fraction` of the units to `x(0)`.
    Reset,
    /// A Gaussian perturbation at every iteration with probability
    /// `perturbation.bernoulli_p`.
    Bernoulli,
}

impl PerturbationMode {
    pub fn name(self) -> &'static str {
        match self {
            PerturbationMode::Gaussian => "gaussian",
            PerturbationMode::Adversarial => "adversarial",
            PerturbationMode::Reset => "reset",
            PerturbationMode::Bernoulli => "bernoulli",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationSpec {
    pub modes: Vec<PerturbationMode>,
    /// Iteration of the single perturbation; half the calibration point
    /// when absent.
    pub iteration: Option<u64>,
    /// Perturbation size relative to `||x(t) - x*||`, drawn log-uniformly
    /// from `[scale_min, scale_max]`.
    pub scale_min: f64,
    pub scale_max: f64,
    pub fraction: f64,
    pub bernoulli_p: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            modes: vec![PerturbationMode::Gaussian, PerturbationMode::Adversarial],
            iteration: None,
            scale_min: 0.1,
            scale_max: 10.0,
            fraction: 1.0,
            bernoulli_p: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default = "default_name")]
    pub name: String,
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub solver: SolverConfig,
    pub dataset: DatasetSpec,
    #[serde(default = "default_norm")]
    pub norm: NormChoice,
    pub criterion: CriterionSpec,
    #[serde(default)]
    pub checkpoint: CheckpointSpec,
    #[serde(default = "default_recovery")]
    pub recovery: RecoveryMode,
    #[serde(default)]
    pub failure: FailureSpec,
    #[serde(default = "default_true")]
    pub bounds: bool,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    /// Directory that relative dataset paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_norm() -> NormChoice {
    NormChoice::Auto
}

fn default_recovery() -> RecoveryMode {
    RecoveryMode::Partial
}

fn default_true() -> bool {
    true
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| ScarError::Config(format!("{origin}: {e}")))
}

impl ExperimentConfig {
    /// The named built-in config.
    pub fn preset(name: &str) -> Result<Self> {
        Self::from_toml_str(&format!("preset = \"{name}\""))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user = parse_table(text, "config")?;
        let mut table = match user.get("preset") {
            Some(toml::Value::String(name)) => {
                let (_, body) = PRESETS
                    .iter()
                    .find(|(n, _)| n == name)
                    .ok_or_else(|| ScarError::Config(format!("unknown preset {name:?}")))?;
                parse_table(body, name)?
            }
            Some(_) => return Err(ScarError::Config("preset must be a string".into())),
            None => toml::Table::new(),
        };
        // A dataset of another kind shares no keys with the preset's.
        let kind = |t: &toml::Table| t.get("dataset").and_then(|d| d.get("kind")).cloned();
        if kind(&user).is_some() && kind(&user) != kind(&table) {
            table.remove("dataset");
        }
        merge(&mut table, user);
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ScarError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ScarError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Geometric failure parameter in effect.
    pub fn geom_p(&self) -> f64 {
        self.failure.geom_p.unwrap_or(3.0 / self.solver.max_iters as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ScarError::Config(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        self.solver.validate().map_err(|e| ScarError::Config(e.to_string()))?;
        if self.dataset.model() != self.solver.model {
            return bad(format!("dataset does not fit model {}", self.solver.model.name()));
        }
        if self.norm == NormChoice::ScaledTv && self.solver.model != ModelKind::Lda {
            return bad("scaled_tv norm needs per-document weights (LDA only)".into());
        }
        match (self.criterion.threshold, self.criterion.calibrate_iters) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return bad("set exactly one of criterion.threshold and criterion.calibrate_iters".into()),
        }
        if let Some(n) = self.criterion.calibrate_iters {
            if n == 0 || n >= self.solver.max_iters {
                return bad("criterion.calibrate_iters must lie in 1..max_iters".into());
            }
        }
        if self.criterion.metric == CriterionMetric::DistanceToOptimum && self.solver.model != ModelKind::Qp {
            return bad("distance_to_optimum needs an analytic optimum (QP only)".into());
        }
        let p = self.geom_p();
        if !(p > 0.0 && p < 1.0) {
            return bad(format!("failure.geom_p {p} must lie in (0, 1)"));
        }
        let fraction_ok = |f: f64| f > 0.0 && f <= 1.0;
        if !fraction_ok(self.failure.fraction) {
            return bad("failure.fraction must lie in (0, 1]".into());
        }
        if self.failure.fractions.is_empty() || !self.failure.fractions.iter().all(|f| fraction_ok(*f)) {
            return bad("failure.fractions must be a nonempty list of values in (0, 1]".into());
        }
        if self.failure.shards == 0 {
            return bad("failure.shards must be at least 1".into());
        }
        if self.failure.loss_model == LossModel::Shards
            && !(1..=self.failure.shards).contains(&self.failure.kill_shards)
        {
            return bad("failure.kill_shards must lie in 1..=failure.shards".into());
        }
        if self.checkpoint.ratios.is_empty() || self.checkpoint.strategies.is_empty() {
            return bad("checkpoint.ratios and checkpoint.strategies must be nonempty".into());
        }
        self.checkpoint
            .policy(self.checkpoint.ratio, self.checkpoint.selection)
            .map_err(|e| ScarError::Config(e.to_string()))?;
        for r in &self.checkpoint.ratios {
            self.checkpoint
                .policy(*r, Selection::Priority)
                .map_err(|e| ScarError::Config(e.to_string()))?;
        }
        let ps = &self.perturbation;
        if !(ps.scale_min > 0.0 && ps.scale_min <= ps.scale_max) {
            return bad("perturbation scales need 0 < scale_min <= scale_max".into());
        }
        if !fraction_ok(ps.fraction) || !(ps.bernoulli_p > 0.0 && ps.bernoulli_p <= 1.0) {
            return bad("perturbation.fraction and perturbation.bernoulli_p must lie in (0, 1]".into());
        }
        if ps.modes.is_empty() {
            return bad("perturbation.modes must be nonempty".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_validates() {
        for name in preset_names() {
            let cfg = ExperimentConfig::preset(name).unwrap();
            assert_eq!(cfg.preset.as_deref(), Some(name));
            cfg.dataset.materialize(Path::new(".")).unwrap();
        }
    }

    #[test]
    fn dotted_keys_override_preset() {
        let cfg = ExperimentConfig::from_toml_str(
            "preset = \"mlr\"\ntrials = 7\nfailure.fraction = 0.25\ncheckpoint.ratio = 0.5\ncheckpoint.selection = \"round\"\n",
        )
        .unwrap();
        assert_eq!(cfg.trials, 7);
        assert_eq!(cfg.failure.fraction, 0.25);
        assert_eq!(cfg.checkpoint.selection, Selection::Round);
        let base = ExperimentConfig::preset("mlr").unwrap();
        assert_eq!(cfg.solver, base.solver);
    }

    #[test]
    fn a_dataset_of_another_kind_replaces_the_preset_dataset() {
        let cfg = ExperimentConfig::from_toml_str(
            "preset = \"mlr\"\ndataset.kind = \"sparse_file\"\ndataset.path = \"d.txt\"\ndataset.dim = 3\ndataset.classes = 2\n",
        )
        .unwrap();
        assert!(matches!(cfg.dataset, DatasetSpec::SparseFile { dim: 3, .. }));
        let same =
            ExperimentConfig::from_toml_str("preset = \"mlr\"\ndataset.kind = \"classification\"\ndataset.dim = 9")
                .unwrap();
        assert!(matches!(
            same.dataset,
            DatasetSpec::Classification {
                dim: 9,
                samples: 2000,
                ..
            }
        ));
    }

    #[test]
    fn config_errors() {
        for text in [
            "preset = \"nope\"",
            "preset = \"mlr\"\ntrials = 0",
            "preset = \"mlr\"\nunknown_key = 1",
            "preset = \"mlr\"\nsolver.model = \"mf\"",
            "preset = \"mlr\"\nfailure.fractions = []",
            "preset = \"mlr\"\ncheckpoint.ratios = [0.3]",
            "preset = \"mlr\"\ncriterion.threshold = 5.0",
            "preset = \"mlr\"\nnorm = \"scaled_tv\"",
            "trials = 3",
            "preset = [1]",
            "this is not toml",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml_str(text), Err(ScarError::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn policies_scale_interval_with_ratio() {
        let spec = CheckpointSpec {
            interval: 16,
            ..CheckpointSpec::default()
        };
        let p = spec.policy(0.125, Selection::Priority).unwrap();
        assert_eq!(p.interval_iters(), 2);
        assert_eq!(
            spec.policy(1.0, Selection::Priority).unwrap().selection(),
            Selection::Full
        );
        assert!(spec.policy(1.0 / 32.0, Selection::Priority).is_err());
    }
}
