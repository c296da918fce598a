//! Experiment configuration: the command-line surface and its resolved,
//! serializable form.

use std::path::PathBuf;

use clap::Args;
use dmlbench_train::{
    gen_synthetic, load_feature_csv, split_disjoint_classes, Dataset, EncoderKind, EncoderSpec, LossConfig, LossKind,
    OptimizerConfig, SamplerConfig, SamplerKind, Schedule, SplitSpec, SyntheticSpec, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Csv { path: PathBuf },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        Ok(match self {
            DatasetSource::Synthetic(spec) => gen_synthetic(spec)?,
            DatasetSource::Csv { path } => load_feature_csv(path)?,
        })
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub split: SplitSpec,
    pub train: TrainConfig,
}

/// A resolved experiment with its data split.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub train: Dataset,
    pub test: Dataset,
}

impl Experiment {
    /// Loads and splits the data named by `config` and validates the rest.
    pub fn from_config(config: ExperimentConfig) -> Result<Self> {
        let (train, test) = load_split(&config.dataset, &config.split)?;
        Self::with_data(config, train, test)
    }

    fn with_data(config: ExperimentConfig, train: Dataset, test: Dataset) -> Result<Self> {
        config.train.validate().map_err(|e| CliError::config(e.to_string()))?;
        if config.train.encoder.input_dim != train.dim() {
            return Err(CliError::config(format!(
                "encoder.input_dim: {} does not match the dataset dimension {}",
                config.train.encoder.input_dim,
                train.dim()
            )));
        }
        Ok(Self { config, train, test })
    }
}

fn load_split(source: &DatasetSource, split: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let ds = source.load()?;
    Ok(split_disjoint_classes(&ds, split)?)
}

/// Flags shared by `run` and `sweep`.
#[derive(Args, Debug, Clone)]
pub struct ExperimentArgs {
    /// Loss name: triplet-semihard, lifted, npairs, angular, margin, rll,
    /// struct-clust, proto, proxy-nca, proxy-triplet, proxy-softmax, dreml.
    #[arg(long, default_value = "triplet-semihard")]
    pub loss: String,
    /// balanced, npairs or episodic; defaults to the loss's natural sampler.
    #[arg(long)]
    pub sampler: Option<String>,
    /// Feature CSV (`label,f0,...`), optionally gzip-compressed.
    #[arg(long, conflicts_with = "synthetic")]
    pub dataset: Option<PathBuf>,
    /// Synthetic data overrides as key=value (n_classes, samples_per_class,
    /// input_dim, center_spread, noise_sigma, seed).
    #[arg(long, value_delimiter = ',')]
    pub synthetic: Vec<String>,
    /// first-half, fraction=F or train=0:1:2/test=3:4.
    #[arg(long, default_value = "first-half")]
    pub split: String,
    /// Final embedding size (split evenly across dreml members). Defaults to
    /// 64, or 2048 for proxy-softmax.
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long, default_value_t = 120)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 500)]
    pub steps: u64,
    #[arg(long, default_value_t = 100)]
    pub eval_every: u64,
    /// Sub-batches whose gradients are averaged per update.
    #[arg(long, default_value_t = 1)]
    pub accumulate: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the loss's embedding normalization (true/false).
    #[arg(long)]
    pub normalize: Option<bool>,
    /// Proxy scale (inverse temperature for proxy-softmax).
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// adam or rmsprop; defaults to rmsprop for struct-clust, adam otherwise.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// identity, linear or mlp.
    #[arg(long, default_value = "linear")]
    pub encoder: String,
    /// Hidden layer widths for the mlp encoder.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Vec<usize>,
    /// dreml ensemble size.
    #[arg(long, default_value_t = 4)]
    pub members: usize,
    /// dreml meta-classes per member (default: min(member embedding dim, training classes)).
    #[arg(long)]
    pub meta_classes: Option<usize>,
    /// dreml base loss.
    #[arg(long, default_value = "proxy-nca")]
    pub base_loss: String,
    /// Also report Hamming retrieval over sign-binarized embeddings.
    #[arg(long)]
    pub binary: bool,
}

impl Default for ExperimentArgs {
    fn default() -> Self {
        Self {
            loss: "triplet-semihard".into(),
            sampler: None,
            dataset: None,
            synthetic: Vec::new(),
            split: "first-half".into(),
            embedding_dim: None,
            batch_size: 120,
            steps: 500,
            eval_every: 100,
            accumulate: 1,
            seed: 0,
            normalize: None,
            scale: None,
            lr: None,
            optimizer: None,
            encoder: "linear".into(),
            hidden: Vec::new(),
            members: 4,
            meta_classes: None,
            base_loss: "proxy-nca".into(),
            binary: false,
        }
    }
}

pub fn parse_synthetic(pairs: &[String]) -> Result<SyntheticSpec> {
    let mut spec = SyntheticSpec::default();
    for pair in pairs {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("--synthetic: expected key=value, got `{pair}`")))?;
        let bad = || CliError::config(format!("--synthetic {key}: cannot parse `{value}`"));
        let int = || value.trim().parse::<usize>().map_err(|_| bad());
        let real = || value.trim().parse::<f64>().map_err(|_| bad());
        match key.trim() {
            "n_classes" | "classes" => spec.n_classes = int()?,
            "samples_per_class" | "per_class" => spec.samples_per_class = int()?,
            "input_dim" | "dim" => spec.input_dim = int()?,
            "center_spread" | "spread" => spec.center_spread = real()?,
            "noise_sigma" | "sigma" => spec.noise_sigma = real()?,
            "seed" => spec.seed = value.trim().parse().map_err(|_| bad())?,
            other => return Err(CliError::config(format!("--synthetic: unknown key `{other}`"))),
        }
    }
    spec.validate().map_err(|e| CliError::config(format!("--synthetic: {e}")))?;
    Ok(spec)
}

pub fn parse_split(text: &str) -> Result<SplitSpec> {
    let bad = || CliError::config(format!("--split: cannot parse `{text}`"));
    if text == "first-half" {
        return Ok(SplitSpec::FirstHalfClasses);
    }
    if let Some(f) = text.strip_prefix("fraction=") {
        return Ok(SplitSpec::Fraction { train_fraction: f.parse().map_err(|_| bad())? });
    }
    let (train, test) = text.split_once('/').ok_or_else(bad)?;
    let list = |s: &str, key: &str| -> Result<Vec<usize>> {
        s.strip_prefix(key).ok_or_else(bad)?.split(':').map(|v| v.parse().map_err(|_| bad())).collect()
    };
    Ok(SplitSpec::ExplicitClassLists { train: list(train, "train=")?, test: list(test, "test=")? })
}

fn parse_loss(name: &str, flag: &str) -> Result<LossKind> {
    name.parse().map_err(|e: dmlbench_train::TrainError| CliError::config(format!("{flag}: {e}")))
}

impl ExperimentArgs {
    fn dataset_source(&self) -> Result<DatasetSource> {
        match &self.dataset {
            Some(path) => Ok(DatasetSource::Csv { path: path.clone() }),
            None => Ok(DatasetSource::Synthetic(parse_synthetic(&self.synthetic)?)),
        }
    }

    /// Resolves the flags into a validated experiment.
    pub fn build(&self) -> Result<Experiment> {
        let dataset = self.dataset_source()?;
        let split = parse_split(&self.split)?;
        let (train, test) = load_split(&dataset, &split)?;
        let config = ExperimentConfig { dataset, split, train: self.train_config(&train)? };
        Experiment::with_data(config, train, test)
    }

    fn train_config(&self, train: &Dataset) -> Result<TrainConfig> {
        let kind = parse_loss(&self.loss, "--loss")?;
        let mut loss = LossConfig::default_for(kind);
        let mut members = 1;
        if let LossConfig::Dreml { members: m, meta_classes, base } = &mut loss {
            let base_kind = parse_loss(&self.base_loss, "--base-loss")?;
            if base_kind == LossKind::Dreml {
                return Err(CliError::config("--base-loss: dreml cannot be nested"));
            }
            if self.members == 0 {
                return Err(CliError::config("--members: must be at least 1"));
            }
            *m = self.members;
            *meta_classes = self.meta_classes;
            **base = LossConfig::default_for(base_kind);
            members = self.members;
        }
        let field = |flag: &'static str| move |e: dmlbench_train::TrainError| CliError::config(format!("{flag}: {e}"));
        if let Some(n) = self.normalize {
            loss.set_normalize(n).map_err(field("--normalize"))?;
        }
        if let Some(s) = self.scale {
            loss.set_scale(s).map_err(field("--scale"))?;
        }

        let natural = match &loss {
            LossConfig::Dreml { base, .. } => base.kind(),
            _ => kind,
        };
        let dim = self.embedding_dim.unwrap_or(if natural == LossKind::ProxySoftmax { 2048 } else { 64 });
        if dim == 0 || !dim.is_multiple_of(members) {
            return Err(CliError::config(format!(
                "--embedding-dim: {dim} must be a positive multiple of the {members} dreml members"
            )));
        }
        let mut encoder = EncoderSpec::linear(train.dim(), dim / members, self.seed);
        encoder.kind = match self.encoder.as_str() {
            "identity" => EncoderKind::Identity,
            "linear" => EncoderKind::Linear,
            "mlp" => EncoderKind::Mlp,
            other => return Err(CliError::config(format!("--encoder: unknown kind `{other}`"))),
        };
        encoder.hidden_dims = self.hidden.clone();
        encoder.validate().map_err(field("--encoder"))?;

        let sampler_kind = match &self.sampler {
            Some(s) => s.parse::<SamplerKind>().map_err(field("--sampler"))?,
            None => loss.kind().samplers()[0],
        };
        if !loss.kind().samplers().contains(&sampler_kind) {
            let ok: Vec<&str> = loss.kind().samplers().iter().map(|s| s.name()).collect();
            return Err(CliError::config(format!(
                "--sampler: loss {} cannot use the {sampler_kind} sampler (use {})",
                loss.kind(),
                ok.join(" or ")
            )));
        }
        let sampler_classes = loss.meta_classes(encoder.output_dim, train.n_classes());
        let sampler = SamplerConfig::for_batch_size(sampler_kind, self.batch_size, sampler_classes)
            .map_err(field("--batch-size"))?;
        if sampler.batch_size() != self.batch_size {
            log::warn!(
                "batch size {} adjusted to {} to fit {} classes with the {} sampler",
                self.batch_size,
                sampler.batch_size(),
                sampler_classes,
                sampler_kind
            );
        }

        let mut cfg = TrainConfig::new(loss, encoder, sampler, self.seed);
        if let Some(opt) = &self.optimizer {
            let lr = cfg.optimizer.learning_rate;
            cfg.optimizer = match opt.as_str() {
                "adam" => OptimizerConfig::adam(lr),
                "rmsprop" => OptimizerConfig::rmsprop(lr),
                other => return Err(CliError::config(format!("--optimizer: unknown optimizer `{other}`"))),
            };
        }
        if let Some(lr) = self.lr {
            cfg.optimizer.learning_rate = lr;
        }
        cfg.schedule = Schedule { steps: self.steps, eval_every: self.eval_every, accumulate: self.accumulate };
        cfg.binary_eval = self.binary;
        cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_pairs() {
        let s = parse_synthetic(&["classes=6".into(), "spread=2.5".into(), "seed=9".into()]).unwrap();
        assert_eq!((s.n_classes, s.center_spread, s.seed), (6, 2.5, 9));
        assert!(parse_synthetic(&["colour=red".into()]).is_err());
        assert!(parse_synthetic(&["spread".into()]).is_err());
    }

    #[test]
    fn split_forms() {
        assert_eq!(parse_split("first-half").unwrap(), SplitSpec::FirstHalfClasses);
        assert_eq!(parse_split("fraction=0.25").unwrap(), SplitSpec::Fraction { train_fraction: 0.25 });
        assert_eq!(
            parse_split("train=0:2/test=1").unwrap(),
            SplitSpec::ExplicitClassLists { train: vec![0, 2], test: vec![1] }
        );
        assert!(parse_split("half").is_err());
    }

    #[test]
    fn dreml_embedding_is_split_across_members() {
        let args = ExperimentArgs { loss: "dreml".into(), embedding_dim: Some(16), ..Default::default() };
        let exp = args.build().unwrap();
        assert_eq!(exp.config.train.encoder.output_dim, 4);
        assert_eq!(exp.config.train.embedding_dim(), 16);
    }

    #[test]
    fn proxy_softmax_defaults_to_wide_embeddings() {
        let args = ExperimentArgs { loss: "proxy-softmax".into(), ..Default::default() };
        assert_eq!(args.build().unwrap().config.train.embedding_dim(), 2048);
    }
}
