//! Run configuration: one TOML file per run, a typed tree with defaults for
//! every key, plus dotted-path `--set` overrides. The resolved config is
//! re-serialized in canonical field order; its SHA-256 is the run's identity
//! in every manifest and report.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use selfcf_core::selfcf::{
    DropoutGranularity, LossKind, ModelSpec, Objective, Perturbation, PredictorMode, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Mf,
    Lightgcn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Framework {
    SelfcfHe,
    SelfcfEd,
    SelfcfEp,
    SupervisedBpr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Element,
    Row,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Raw interaction log consumed by `prepare`.
    pub raw: String,
    /// Column layout of the raw file, e.g. "user,item,rating,time".
    pub fields: String,
    /// Directory holding the prepared split; written by `prepare`, read by
    /// everything else.
    pub prepared: String,
    /// Iterative k-core filtering before the split; 0 skips it.
    pub kcore: usize,
    pub split: [f64; 3],
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            raw: String::new(),
            fields: "user,item,time".into(),
            prepared: "prepared".into(),
            kcore: 0,
            split: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub backbone: Backbone,
    pub framework: Framework,
    /// Propagation depth for lightgcn; ignored by mf (a pure lookup).
    pub layers: usize,
    pub embedding_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            backbone: Backbone::Lightgcn,
            framework: Framework::SelfcfEd,
            layers: 2,
            embedding_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSection {
    /// History mixing weight for selfcf_he.
    pub tau: f64,
    /// Store the raw output instead of the mixed value after each step.
    pub store_raw: bool,
    /// Drop probability for selfcf_ed.
    pub dropout: f64,
    pub dropout_granularity: Granularity,
    /// Edge drop probability for selfcf_ep.
    pub prune: f64,
}

impl Default for PerturbationSection {
    fn default() -> Self {
        PerturbationSection {
            tau: 0.5,
            store_raw: false,
            dropout: 0.1,
            dropout_granularity: Granularity::Element,
            prune: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 2048,
            learning_rate: 1e-3,
            l2: 1e-4,
            max_epochs: 1000,
            patience: 50,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub k: Vec<usize>,
    pub validation_k: usize,
    pub bucket_edges: Vec<usize>,
    /// Explicit checkpoint path for `evaluate`; empty means
    /// `<output.dir>/checkpoint.bin`.
    pub checkpoint: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            k: vec![20, 50],
            validation_k: 20,
            bucket_edges: vec![5, 10, 20, 50],
            checkpoint: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub no_predictor: bool,
    pub no_stop_gradient: bool,
    pub cross_entropy_loss: bool,
    pub two_layer_predictor: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Field to vary: tau, dropout, prune, layers, embedding_dim,
    /// learning_rate, l2, batch_size, max_epochs (or the dotted path).
    pub axis: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "runs".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub perturbation: PerturbationSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub ablation: AblationSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

impl RunConfig {
    /// Reads the file, applies `--set key=value` overrides against the fully
    /// defaulted tree, then the `--seed`/`--out` shorthands.
    pub fn load(
        path: &Path,
        sets: &[String],
        seed: Option<u64>,
        out: Option<&Path>,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let typed: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;

        // overrides navigate the complete tree so every valid key is
        // settable even when the file omits its section
        let mut tree = toml::Value::try_from(&typed).expect("config serializes");
        for s in sets {
            apply_set(&mut tree, s)?;
        }
        let mut config: RunConfig = tree.try_into().context("applying --set overrides")?;

        if let Some(seed) = seed {
            config.train.seed = seed;
        }
        if let Some(out) = out {
            config.output.dir = out.to_string_lossy().into_owned();
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.backbone == Backbone::Lightgcn && self.model.layers == 0 {
            bail!("lightgcn needs layers >= 1 (use backbone = \"mf\" for a pure lookup)");
        }
        if self.model.framework == Framework::SelfcfEp && self.model.backbone == Backbone::Mf {
            bail!("selfcf_ep perturbs the propagation graph; it requires backbone = \"lightgcn\"");
        }
        if self.ablation.no_predictor && self.ablation.two_layer_predictor {
            bail!("no_predictor and two_layer_predictor are mutually exclusive");
        }
        if self.model.embedding_dim == 0 {
            bail!("embedding_dim must be >= 1");
        }
        if self.eval.k.is_empty() || self.eval.k.contains(&0) {
            bail!("eval.k must be a non-empty list of K >= 1");
        }
        if self.eval.validation_k == 0 {
            bail!("eval.validation_k must be >= 1");
        }
        Ok(())
    }

    /// Canonical serialized form of the resolved config.
    pub fn canonical_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Identity hash of the run. The output directory is excluded: where the
    /// artifacts land does not change what gets computed, and the same
    /// experiment rerun into a different directory must hash the same.
    pub fn sha256(&self) -> String {
        let mut hashed = self.clone();
        hashed.output = OutputSection { dir: String::new() };
        let mut h = Sha256::new();
        h.update(hashed.canonical_toml().as_bytes());
        let digest = h.finalize();
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            embedding_dim: self.model.embedding_dim,
            layers: match self.model.backbone {
                Backbone::Mf => 0,
                Backbone::Lightgcn => self.model.layers,
            },
        }
    }

    fn granularity(&self) -> DropoutGranularity {
        match self.perturbation.dropout_granularity {
            Granularity::Element => DropoutGranularity::Element,
            Granularity::Row => DropoutGranularity::Row,
        }
    }

    pub fn perturbation(&self) -> Result<Perturbation> {
        Ok(match self.model.framework {
            Framework::SelfcfHe => Perturbation::Historical {
                tau: self.perturbation.tau,
                store_raw: self.perturbation.store_raw,
            },
            Framework::SelfcfEd => Perturbation::Dropout {
                p: self.perturbation.dropout,
                granularity: self.granularity(),
            },
            Framework::SelfcfEp => Perturbation::EdgePrune {
                rho: self.perturbation.prune,
            },
            Framework::SupervisedBpr => {
                bail!("supervised_bpr has no perturbation")
            }
        })
    }

    /// The training objective the config describes, ablation flags applied.
    pub fn objective(&self) -> Result<Objective> {
        if self.model.framework == Framework::SupervisedBpr {
            return Ok(Objective::SupervisedBpr);
        }
        let predictor = if self.ablation.two_layer_predictor {
            PredictorMode::TwoLayer
        } else if self.ablation.no_predictor {
            PredictorMode::Identity
        } else {
            PredictorMode::Linear
        };
        let loss = if self.ablation.cross_entropy_loss {
            LossKind::CrossEntropy
        } else {
            LossKind::Cosine
        };
        Ok(Objective::SelfSupervised {
            perturbation: self.perturbation()?,
            predictor,
            loss,
            stop_gradient: !self.ablation.no_stop_gradient,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            l2: self.train.l2,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            validation_k: self.eval.validation_k,
            seed: self.train.seed,
        }
    }
}

/// Applies one `key=value` override to the TOML tree. The dotted path must
/// name an existing leaf; the value is parsed to the leaf's type.
fn apply_set(tree: &mut toml::Value, set: &str) -> Result<()> {
    let (key, raw_value) = set
        .split_once('=')
        .ok_or_else(|| anyhow!("--set needs key=value, got {set:?}"))?;
    let key = key.trim();
    let raw_value = raw_value.trim();

    let mut node = &mut *tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| anyhow!("config key {key:?}: {:?} is not a table", parts[..depth].join(".")))?;
        node = table
            .get_mut(*part)
            .ok_or_else(|| anyhow!("unknown config key {key:?}"))?;
    }

    *node = match node {
        toml::Value::Integer(_) => toml::Value::Integer(
            raw_value
                .parse()
                .map_err(|_| anyhow!("{key} expects an integer, got {raw_value:?}"))?,
        ),
        toml::Value::Float(_) => toml::Value::Float(
            raw_value
                .parse()
                .map_err(|_| anyhow!("{key} expects a number, got {raw_value:?}"))?,
        ),
        toml::Value::Boolean(_) => toml::Value::Boolean(
            raw_value
                .parse()
                .map_err(|_| anyhow!("{key} expects true/false, got {raw_value:?}"))?,
        ),
        toml::Value::String(_) => toml::Value::String(raw_value.trim_matches('"').to_string()),
        toml::Value::Array(_) => {
            let wrapped: toml::Value = toml::from_str(&format!("x = {raw_value}"))
                .map_err(|_| anyhow!("{key} expects an array like [1, 2], got {raw_value:?}"))?;
            wrapped
                .get("x")
                .cloned()
                .ok_or_else(|| anyhow!("{key}: could not parse {raw_value:?}"))?
        }
        _ => bail!("{key} is not a settable value"),
    };
    Ok(())
}

/// Points the named sweep axis at its config field.
pub fn apply_axis(config: &mut RunConfig, axis: &str, value: f64) -> Result<()> {
    let as_count = |what: &str| -> Result<usize> {
        if value >= 0.0 && value.fract() == 0.0 {
            Ok(value as usize)
        } else {
            bail!("axis {what} needs a nonnegative integer, got {value}")
        }
    };
    match axis {
        "tau" | "perturbation.tau" => config.perturbation.tau = value,
        "dropout" | "p" | "perturbation.dropout" => config.perturbation.dropout = value,
        "prune" | "rho" | "perturbation.prune" => config.perturbation.prune = value,
        "layers" | "model.layers" => config.model.layers = as_count("layers")?,
        "embedding_dim" | "d" | "model.embedding_dim" => {
            config.model.embedding_dim = as_count("embedding_dim")?
        }
        "learning_rate" | "lr" | "train.learning_rate" => config.train.learning_rate = value,
        "l2" | "train.l2" => config.train.l2 = value,
        "batch_size" | "train.batch_size" => config.train.batch_size = as_count("batch_size")?,
        "max_epochs" | "train.max_epochs" => config.train.max_epochs = as_count("max_epochs")?,
        other => bail!("unknown sweep axis {other:?}"),
    }
    config.validate()?;
    Ok(())
}
