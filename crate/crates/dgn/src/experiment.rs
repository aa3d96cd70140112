//! One experiment: a dataset, a model and a training setup, trained over
//! several seeds and summarized in a [`ResultRecord`].

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dgn_core::graph::{generate_split, mask_features};
use dgn_core::metrics::{group_distances, FeatureKernel, MetricsReport, DEFAULT_PAIR_CAP, DEFAULT_SIGMA2};
use dgn_core::train::{
    evaluate_rows, train_with_input, ModelConfig, ModelInput, ModelKind, NormKind, TrainConfig, DEFAULT_GROUPS,
    DEFAULT_HIDDEN, DEFAULT_LAMBDA,
};
use dgn_core::{Graph, Real};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export;
use crate::io::{self, DatasetFormat};

pub const RESULTS_JSONL: &str = "results.jsonl";
pub const RESULTS_CSV: &str = "results.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub format: DatasetFormat,
    /// Used to pick per-dataset defaults; the last path component when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

/// Model section of the config file; unset fields take dataset defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub depth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub norm: NormKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub dropout: Option<f64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    /// Seed of the first repeat; repeat `r` uses `seed + r`.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub per_class: usize,
    pub n_val: usize,
    pub n_test: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricOptions {
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    #[serde(default = "default_pair_cap")]
    pub pair_cap: usize,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions { sigma2: DEFAULT_SIGMA2, pair_cap: DEFAULT_PAIR_CAP }
    }
}

fn default_sigma2() -> f64 {
    DEFAULT_SIGMA2
}

fn default_pair_cap() -> usize {
    DEFAULT_PAIR_CAP
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    Attributed,
    /// Validation and test feature rows are zeroed before training.
    MissingFeatures,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    /// Generated split; required for formats that carry none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitConfig>,
    #[serde(default)]
    pub metrics: MetricOptions,
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub precision: Precision,
    /// Write embeddings (and DGN group data) of the first successful repeat.
    #[serde(default)]
    pub export: bool,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_repeats() -> usize {
    5
}

/// Hyperparameters and split sizes of the known citation and co-author
/// graphs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetDefaults {
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub groups: usize,
    pub split: SplitConfig,
}

pub fn dataset_defaults(name: &str) -> DatasetDefaults {
    let planetoid = SplitConfig { per_class: 20, n_val: 500, n_test: 1000, seed: 0 };
    match name.to_ascii_lowercase().as_str() {
        "pubmed" => DatasetDefaults { lr: 1e-2, weight_decay: 1e-3, dropout: 0.6, groups: 5, split: planetoid },
        "coauthorcs" | "coauthor_cs" | "coauthor-cs" => DatasetDefaults {
            lr: 5e-3,
            weight_decay: 5e-4,
            dropout: 0.6,
            groups: DEFAULT_GROUPS,
            split: SplitConfig { per_class: 40, n_val: 2250, n_test: 15483, seed: 0 },
        },
        _ => DatasetDefaults { lr: 5e-3, weight_decay: 5e-4, dropout: 0.6, groups: DEFAULT_GROUPS, split: planetoid },
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn dataset_name(&self) -> String {
        self.dataset.name.clone().unwrap_or_else(|| {
            self.dataset
                .path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }

    pub fn defaults(&self) -> DatasetDefaults {
        dataset_defaults(&self.dataset_name())
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            kind: m.kind,
            depth: m.depth,
            hidden: m.hidden.unwrap_or(DEFAULT_HIDDEN),
            norm: m.norm,
            groups: m.groups.unwrap_or(self.defaults().groups),
            lambda: m.lambda.unwrap_or(DEFAULT_LAMBDA),
        }
    }

    /// Training setup of the first repeat.
    pub fn train_config(&self) -> TrainConfig {
        let d = self.defaults();
        let t = &self.train;
        let base = TrainConfig::default();
        TrainConfig {
            lr: t.lr.unwrap_or(d.lr),
            weight_decay: t.weight_decay.unwrap_or(d.weight_decay),
            dropout: t.dropout.unwrap_or(d.dropout),
            max_epochs: t.max_epochs.unwrap_or(base.max_epochs),
            patience: t.patience.unwrap_or(base.patience),
            seed: t.seed.unwrap_or(base.seed),
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        let base = self.train_config().seed;
        (0..self.repeats as u64).map(|r| base.wrapping_add(r)).collect()
    }

    /// Split to generate: the configured one, or the dataset default for
    /// formats without a stored split.
    pub fn split_config(&self) -> Option<SplitConfig> {
        match (self.split, self.dataset.format) {
            (Some(s), _) => Some(s),
            (None, DatasetFormat::ContentCites) => Some(self.defaults().split),
            (None, DatasetFormat::Generic) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if !(self.metrics.sigma2 > 0.0 && self.metrics.sigma2.is_finite()) {
            return Err(Error::Config(format!("sigma2 must be positive, got {}", self.metrics.sigma2)));
        }
        if self.metrics.pair_cap == 0 {
            return Err(Error::Config("pair_cap must be positive".into()));
        }
        self.model_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Loads the dataset, applies the split and the scenario.
pub fn prepare_graph(cfg: &ExperimentConfig) -> Result<Graph> {
    let mut g = io::load(&cfg.dataset.path, cfg.dataset.format)?;
    if let Some(s) = cfg.split_config() {
        let masks = generate_split(&g, s.per_class, s.n_val, s.n_test, s.seed)
            .map_err(|e| Error::Config(format!("split: {e}")))?;
        g = g.with_masks(masks)?;
    }
    if cfg.scenario == Scenario::MissingFeatures {
        g = mask_features(&g);
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub test_accuracy: f64,
    pub val_accuracy: f64,
    /// Zero-based epoch of the restored parameters.
    pub best_epoch: Option<usize>,
    pub epochs: usize,
    pub r_group: f64,
    pub r_group_logits: f64,
    pub intra_group: f64,
    pub g_ins: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub dataset: String,
    pub format: DatasetFormat,
    pub scenario: Scenario,
    pub precision: Precision,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: Option<SplitConfig>,
    pub sigma2: f64,
    pub pair_cap: usize,
    pub seeds: Vec<u64>,
    pub repeats: usize,
    pub failures: Vec<Failure>,
    pub runs: Vec<SeedResult>,
    pub acc_mean: f64,
    /// Population standard deviation over successful repeats.
    pub acc_std: f64,
    pub val_mean: f64,
    /// Means over successful repeats; R_Group and intra distance on the
    /// last hidden layer, G_Ins on the logits.
    pub metrics: MetricsReport,
    /// R_Group measured on the logits instead of the hidden layer.
    pub r_group_logits: f64,
    pub seconds: f64,
}

/// Loads the data, trains every repeat and appends the record to the
/// result files in `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultRecord> {
    cfg.validate()?;
    let g = prepare_graph(cfg)?;
    let record = run_on_graph(cfg, &g, cfg.export.then_some(cfg.output_dir.as_path()))?;
    append_results(&cfg.output_dir, std::slice::from_ref(&record))?;
    Ok(record)
}

/// Trains every repeat of `cfg` on an already prepared graph. Embeddings of
/// the first successful repeat go to `export_dir` when given.
pub fn run_on_graph(cfg: &ExperimentConfig, g: &Graph, export_dir: Option<&Path>) -> Result<ResultRecord> {
    match cfg.precision {
        Precision::F32 => run_typed::<f32>(cfg, g, export_dir),
        Precision::F64 => run_typed::<f64>(cfg, g, export_dir),
    }
}

fn run_typed<T: Real>(cfg: &ExperimentConfig, g: &Graph, export_dir: Option<&Path>) -> Result<ResultRecord> {
    let start = Instant::now();
    let model_cfg = cfg.model_config();
    let base_train = cfg.train_config();
    let input = ModelInput::<T>::new(g);
    let kernel = FeatureKernel::new(g.features(), cfg.metrics.sigma2)?;
    let test_rows = g.masks().test_indices();
    if test_rows.is_empty() {
        return Err(Error::Config("test mask selects no nodes".into()));
    }

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut pair_sample_size = 0;
    for seed in cfg.seeds() {
        let train_cfg = TrainConfig { seed, ..base_train.clone() };
        let outcome = match train_with_input(&model_cfg, &train_cfg, g, &input) {
            Ok(o) => o,
            Err(e @ (dgn_core::Error::Diverged { .. } | dgn_core::Error::NonFinite { .. })) => {
                log::warn!("seed {seed}: {e}");
                failures.push(Failure { seed, error: e.to_string() });
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let eval = evaluate_rows(&outcome.model, &input, g.labels(), &test_rows)?;
        let hidden = group_distances(&eval.hidden, g.labels(), Some(cfg.metrics.pair_cap), seed)?;
        let on_logits = group_distances(&eval.logits, g.labels(), Some(cfg.metrics.pair_cap), seed)?;
        pair_sample_size = hidden.pairs;
        runs.push(SeedResult {
            seed,
            test_accuracy: eval.accuracy,
            val_accuracy: outcome.best_val_accuracy,
            best_epoch: outcome.best_epoch,
            epochs: outcome.history.train_loss.len(),
            r_group: hidden.ratio(),
            r_group_logits: on_logits.ratio(),
            intra_group: hidden.intra,
            g_ins: kernel.info_gain(&eval.logits)?,
        });
        if let (Some(dir), true) = (export_dir, runs.len() == 1) {
            export::export_embeddings(&outcome.model, &input, g, dir)?;
        }
        log::info!(
            "{} {} K={} norm={} seed {seed}: test accuracy {:.4}",
            cfg.dataset_name(),
            model_cfg.kind.name(),
            model_cfg.depth,
            model_cfg.norm.name(),
            eval.accuracy
        );
    }
    if runs.is_empty() {
        return Err(Error::AllRepeatsFailed {
            repeats: cfg.repeats,
            first: failures.first().map(|f| f.error.clone()).unwrap_or_default(),
        });
    }

    let mean = |f: fn(&SeedResult) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let acc_mean = mean(|r| r.test_accuracy);
    let acc_std = (runs.iter().map(|r| (r.test_accuracy - acc_mean).powi(2)).sum::<f64>() / runs.len() as f64).sqrt();
    let metrics = MetricsReport {
        depth: model_cfg.depth,
        test_accuracy: acc_mean,
        r_group: mean(|r| r.r_group),
        g_ins: mean(|r| r.g_ins),
        intra_group: mean(|r| r.intra_group),
        pair_sample_size,
    };
    Ok(ResultRecord {
        dataset: cfg.dataset_name(),
        format: cfg.dataset.format,
        scenario: cfg.scenario,
        precision: cfg.precision,
        model: model_cfg,
        train: base_train,
        split: cfg.split_config(),
        sigma2: cfg.metrics.sigma2,
        pair_cap: cfg.metrics.pair_cap,
        seeds: cfg.seeds(),
        repeats: cfg.repeats,
        failures,
        acc_mean,
        acc_std,
        val_mean: mean(|r| r.val_accuracy),
        r_group_logits: mean(|r| r.r_group_logits),
        metrics,
        runs,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Column order of `results.csv`.
pub const RESULT_COLUMNS: [&str; 24] = [
    "dataset",
    "format",
    "scenario",
    "precision",
    "model",
    "depth",
    "hidden",
    "norm",
    "groups",
    "lambda",
    "lr",
    "weight_decay",
    "dropout",
    "max_epochs",
    "patience",
    "seeds",
    "failed",
    "acc_mean",
    "acc_std",
    "val_mean",
    "g_ins",
    "r_group",
    "intra_group",
    "seconds",
];

impl ResultRecord {
    pub fn csv_row(&self) -> Vec<String> {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        vec![
            self.dataset.clone(),
            enum_name(&self.format),
            enum_name(&self.scenario),
            enum_name(&self.precision),
            self.model.kind.name().into(),
            self.model.depth.to_string(),
            self.model.hidden.to_string(),
            self.model.norm.name().into(),
            self.model.groups.to_string(),
            self.model.lambda.to_string(),
            self.train.lr.to_string(),
            self.train.weight_decay.to_string(),
            self.train.dropout.to_string(),
            self.train.max_epochs.to_string(),
            self.train.patience.to_string(),
            seeds.join(";"),
            self.failures.len().to_string(),
            self.acc_mean.to_string(),
            self.acc_std.to_string(),
            self.val_mean.to_string(),
            self.metrics.g_ins.to_string(),
            self.metrics.r_group.to_string(),
            self.metrics.intra_group.to_string(),
            self.seconds.to_string(),
        ]
    }
}

/// Serde name of a unit variant.
fn enum_name<E: Serialize>(e: &E) -> String {
    match serde_json::to_value(e) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

/// Appends one JSON line and one CSV row per record, writing the CSV
/// header when the file is new.
pub fn append_results(dir: &Path, records: &[ResultRecord]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let jsonl = dir.join(RESULTS_JSONL);
    let mut f = OpenOptions::new().create(true).append(true).open(&jsonl).map_err(|e| Error::io(&jsonl, e))?;
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(f, "{line}").map_err(|e| Error::io(&jsonl, e))?;
    }

    let csv_path = dir.join(RESULTS_CSV);
    let fresh = !csv_path.exists();
    let file = OpenOptions::new().create(true).append(true).open(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::Config(format!("{}: {e}", csv_path.display()));
    if fresh {
        w.write_record(RESULT_COLUMNS).map_err(csv_err)?;
    }
    for r in records {
        w.write_record(r.csv_row()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"dataset": {"path": "data/cora", "format": "content_cites"},
            "model": {"kind": "sgc", "depth": 5, "norm": "dgn"}}"#
    }

    #[test]
    fn defaults_follow_dataset_name() {
        let cfg = ExperimentConfig::from_json(minimal()).unwrap();
        assert_eq!(cfg.dataset_name(), "cora");
        assert_eq!(cfg.repeats, 5);
        let m = cfg.model_config();
        assert_eq!((m.groups, m.hidden, m.lambda), (10, 16, DEFAULT_LAMBDA));
        let t = cfg.train_config();
        assert_eq!((t.lr, t.weight_decay, t.dropout), (5e-3, 5e-4, 0.6));
        assert_eq!(cfg.split_config().unwrap().n_test, 1000);
        assert_eq!(cfg.seeds(), [0, 1, 2, 3, 4]);

        let pubmed = ExperimentConfig::from_json(&minimal().replace("data/cora", "x/Pubmed")).unwrap();
        assert_eq!(pubmed.model_config().groups, 5);
        assert_eq!(pubmed.train_config().lr, 1e-2);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        let extra = minimal().replace("\"depth\": 5", "\"depth\": 5, \"width\": 3");
        assert!(matches!(ExperimentConfig::from_json(&extra), Err(Error::Config(_))));
        let top = minimal().replacen('{', "{\"repeat\": 2, ", 1);
        assert!(ExperimentConfig::from_json(&top).is_err());
        let zero = minimal().replacen('{', "{\"repeats\": 0, ", 1);
        assert!(ExperimentConfig::from_json(&zero).is_err());
        let patience = minimal().replacen('{', "{\"train\": {\"max_epochs\": 5}, ", 1);
        assert!(ExperimentConfig::from_json(&patience).is_err());
    }

    #[test]
    fn config_round_trips() {
        let cfg = ExperimentConfig::from_json(minimal()).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }
}
