//! Loss selection: hyperparameters, sampler compatibility, in-batch mining
//! and dispatch to the core loss functions.

use std::fmt;
use std::str::FromStr;

use dmlbench_core::batch::l2_normalize;
use dmlbench_core::eval::InferenceMode;
use dmlbench_core::losses::*;
use dmlbench_core::sampling::{distance_weighted_pairs, semi_hard_mine, DwClip, EpisodeSpec};
use dmlbench_core::{pairwise_distances, Batch, BatchPlan, LossResult, Metric, PairIndexSet, Params, SamplerRng};
use ndarray::{Array1, Array2, Ix1, Ix2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

/// The twelve methods exposed by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    TripletSemihard,
    #[serde(rename = "lifted", alias = "lifted-struct")]
    LiftedStruct,
    Npairs,
    Angular,
    Margin,
    #[serde(rename = "rll", alias = "ranked-list")]
    RankedList,
    StructClust,
    #[serde(rename = "proto", alias = "prototypical")]
    Prototypical,
    ProxyNca,
    ProxyTriplet,
    ProxySoftmax,
    Dreml,
}

impl LossKind {
    pub const ALL: [LossKind; 12] = [
        LossKind::TripletSemihard,
        LossKind::LiftedStruct,
        LossKind::Npairs,
        LossKind::Angular,
        LossKind::Margin,
        LossKind::RankedList,
        LossKind::StructClust,
        LossKind::Prototypical,
        LossKind::ProxyNca,
        LossKind::ProxyTriplet,
        LossKind::ProxySoftmax,
        LossKind::Dreml,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::TripletSemihard => "triplet-semihard",
            LossKind::LiftedStruct => "lifted",
            LossKind::Npairs => "npairs",
            LossKind::Angular => "angular",
            LossKind::Margin => "margin",
            LossKind::RankedList => "rll",
            LossKind::StructClust => "struct-clust",
            LossKind::Prototypical => "proto",
            LossKind::ProxyNca => "proxy-nca",
            LossKind::ProxyTriplet => "proxy-triplet",
            LossKind::ProxySoftmax => "proxy-softmax",
            LossKind::Dreml => "dreml",
        }
    }

    /// Samplers whose batches this loss can consume.
    pub fn samplers(self) -> &'static [SamplerKind] {
        use SamplerKind::*;
        match self {
            LossKind::Npairs | LossKind::Angular => &[Npairs],
            LossKind::Prototypical => &[Episodic],
            LossKind::ProxyNca | LossKind::ProxyTriplet | LossKind::ProxySoftmax | LossKind::Dreml => {
                &[Balanced, Npairs]
            }
            _ => &[Balanced],
        }
    }

    /// Whether batches must hold at least two rows of each sampled class.
    pub fn needs_positives(self) -> bool {
        !matches!(self, LossKind::ProxyNca | LossKind::ProxyTriplet | LossKind::ProxySoftmax | LossKind::Dreml)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        let s = match s {
            "lifted-struct" => "lifted",
            "ranked-list" => "rll",
            "prototypical" => "proto",
            other => other,
        };
        LossKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = LossKind::ALL.iter().map(|k| k.name()).collect();
            TrainError::config(format!("unknown loss `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Balanced,
    Npairs,
    Episodic,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Balanced => "balanced",
            SamplerKind::Npairs => "npairs",
            SamplerKind::Episodic => "episodic",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        [SamplerKind::Balanced, SamplerKind::Npairs, SamplerKind::Episodic]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TrainError::config(format!("unknown sampler `{s}` (expected balanced, npairs or episodic)")))
    }
}

/// How training batches are drawn from the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SamplerConfig {
    Balanced { classes_per_batch: usize, per_class: usize },
    Npairs { classes_per_batch: usize },
    Episodic { episode: EpisodeSpec, episodes_per_batch: usize },
}

impl SamplerConfig {
    pub fn kind(&self) -> SamplerKind {
        match self {
            SamplerConfig::Balanced { .. } => SamplerKind::Balanced,
            SamplerConfig::Npairs { .. } => SamplerKind::Npairs,
            SamplerConfig::Episodic { .. } => SamplerKind::Episodic,
        }
    }

    pub fn batch_size(&self) -> usize {
        match *self {
            SamplerConfig::Balanced { classes_per_batch, per_class } => classes_per_batch * per_class,
            SamplerConfig::Npairs { classes_per_batch } => 2 * classes_per_batch,
            SamplerConfig::Episodic { episode, episodes_per_batch } => episode.batch_size() * episodes_per_batch,
        }
    }

    /// Layout of a `kind` batch with (at most) `batch_size` rows drawn from
    /// `n_classes` training classes.
    pub fn for_batch_size(kind: SamplerKind, batch_size: usize, n_classes: usize) -> Result<Self> {
        if batch_size < 2 {
            return Err(TrainError::config("batch size must be at least 2"));
        }
        let per_class = match batch_size {
            b if b >= 16 => 4,
            b if b >= 4 => 2,
            _ => 1,
        };
        let classes = (batch_size / per_class).min(n_classes).max(1);
        let per_class = batch_size / classes;
        Ok(match kind {
            SamplerKind::Balanced => SamplerConfig::Balanced { classes_per_batch: classes, per_class },
            SamplerKind::Npairs => SamplerConfig::Npairs { classes_per_batch: (batch_size / 2).min(n_classes) },
            SamplerKind::Episodic => {
                let per_class = per_class.max(2);
                let classes = (batch_size / per_class).min(n_classes);
                let support = per_class / 2;
                SamplerConfig::Episodic {
                    episode: EpisodeSpec {
                        classes_per_episode: classes,
                        support_per_class: support,
                        query_per_class: per_class - support,
                    },
                    episodes_per_batch: 1,
                }
            }
        })
    }
}

/// A loss together with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum LossConfig {
    TripletSemihard {
        margin: f64,
        metric: Metric,
        normalize: bool,
    },
    #[serde(rename = "lifted", alias = "lifted-struct")]
    LiftedStruct {
        margin: f64,
        metric: Metric,
        normalize: bool,
    },
    Npairs {
        l2_reg: f64,
        normalize: bool,
    },
    Angular {
        alpha_degrees: f64,
        npairs_weight: Option<f64>,
    },
    Margin {
        alpha: f64,
        beta_init: f64,
        trainable_beta: bool,
        normalize: bool,
        clip_max: f64,
    },
    #[serde(rename = "rll", alias = "ranked-list")]
    RankedList {
        alpha: f64,
        m: f64,
        lambda: f64,
        temperature: f64,
        normalize: bool,
    },
    StructClust {
        gamma: f64,
        inference: InferenceMode,
        normalize: bool,
    },
    #[serde(rename = "proto", alias = "prototypical")]
    Prototypical {
        normalize: bool,
    },
    ProxyNca {
        scale: f64,
        normalize: bool,
        include_positive: bool,
    },
    ProxyTriplet {
        scale: f64,
        margin: f64,
        normalize: bool,
    },
    ProxySoftmax {
        temperature: f64,
    },
    /// Ensemble of `members` encoders, each trained with `base` on a random
    /// grouping of the classes into `meta_classes` meta-classes.
    Dreml {
        members: usize,
        meta_classes: Option<usize>,
        base: Box<LossConfig>,
    },
}

impl LossConfig {
    pub fn default_for(kind: LossKind) -> Self {
        match kind {
            LossKind::TripletSemihard => {
                let c = TripletConfig::<f64>::default();
                LossConfig::TripletSemihard { margin: c.margin, metric: c.metric, normalize: c.normalize }
            }
            LossKind::LiftedStruct => {
                let c = LiftedConfig::<f64>::default();
                LossConfig::LiftedStruct { margin: c.margin, metric: c.metric, normalize: c.normalize }
            }
            LossKind::Npairs => {
                let c = NpairsConfig::<f64>::default();
                LossConfig::Npairs { l2_reg: c.l2_reg, normalize: c.normalize }
            }
            LossKind::Angular => LossConfig::Angular { alpha_degrees: 45.0, npairs_weight: Some(2.0) },
            LossKind::Margin => {
                LossConfig::Margin { alpha: 0.2, beta_init: 1.2, trainable_beta: true, normalize: true, clip_max: 1e4 }
            }
            LossKind::RankedList => {
                let c = RankedListParams::<f64>::default();
                LossConfig::RankedList {
                    alpha: c.alpha,
                    m: c.m,
                    lambda: c.lambda,
                    temperature: c.temperature,
                    normalize: c.normalize,
                }
            }
            LossKind::StructClust => {
                let c = StructClustParams::<f64>::default();
                LossConfig::StructClust { gamma: c.gamma, inference: c.inference, normalize: c.normalize }
            }
            LossKind::Prototypical => LossConfig::Prototypical { normalize: false },
            LossKind::ProxyNca => LossConfig::ProxyNca { scale: 3.0, normalize: true, include_positive: false },
            LossKind::ProxyTriplet => LossConfig::ProxyTriplet { scale: 1.0, margin: 0.5, normalize: true },
            LossKind::ProxySoftmax => LossConfig::ProxySoftmax { temperature: 0.05 },
            LossKind::Dreml => LossConfig::Dreml {
                members: 4,
                meta_classes: None,
                base: Box::new(LossConfig::default_for(LossKind::ProxyNca)),
            },
        }
    }

    pub fn kind(&self) -> LossKind {
        match self {
            LossConfig::TripletSemihard { .. } => LossKind::TripletSemihard,
            LossConfig::LiftedStruct { .. } => LossKind::LiftedStruct,
            LossConfig::Npairs { .. } => LossKind::Npairs,
            LossConfig::Angular { .. } => LossKind::Angular,
            LossConfig::Margin { .. } => LossKind::Margin,
            LossConfig::RankedList { .. } => LossKind::RankedList,
            LossConfig::StructClust { .. } => LossKind::StructClust,
            LossConfig::Prototypical { .. } => LossKind::Prototypical,
            LossConfig::ProxyNca { .. } => LossKind::ProxyNca,
            LossConfig::ProxyTriplet { .. } => LossKind::ProxyTriplet,
            LossConfig::ProxySoftmax { .. } => LossKind::ProxySoftmax,
            LossConfig::Dreml { .. } => LossKind::Dreml,
        }
    }

    /// Whether the loss works on unit vectors; retrieval then uses them too.
    /// Labels each model trains on: `n_classes` for a single model, otherwise
    /// the configured meta-class count, defaulting to one meta-class per
    /// member embedding dimension (at least 2, at most `n_classes`).
    pub fn meta_classes(&self, member_dim: usize, n_classes: usize) -> usize {
        match self {
            LossConfig::Dreml { members, meta_classes, .. } if *members > 1 => {
                meta_classes.unwrap_or(member_dim.clamp(2, n_classes.max(2)))
            }
            _ => n_classes,
        }
    }

    pub fn normalizes(&self) -> bool {
        match self {
            LossConfig::TripletSemihard { normalize, .. }
            | LossConfig::LiftedStruct { normalize, .. }
            | LossConfig::Npairs { normalize, .. }
            | LossConfig::Margin { normalize, .. }
            | LossConfig::RankedList { normalize, .. }
            | LossConfig::StructClust { normalize, .. }
            | LossConfig::Prototypical { normalize }
            | LossConfig::ProxyNca { normalize, .. }
            | LossConfig::ProxyTriplet { normalize, .. } => *normalize,
            LossConfig::Angular { .. } | LossConfig::ProxySoftmax { .. } => true,
            LossConfig::Dreml { base, .. } => base.normalizes(),
        }
    }

    /// Overrides the last-layer normalization flag where it is optional.
    pub fn set_normalize(&mut self, value: bool) -> Result<()> {
        match self {
            LossConfig::TripletSemihard { normalize, .. }
            | LossConfig::LiftedStruct { normalize, .. }
            | LossConfig::Npairs { normalize, .. }
            | LossConfig::Margin { normalize, .. }
            | LossConfig::RankedList { normalize, .. }
            | LossConfig::StructClust { normalize, .. }
            | LossConfig::Prototypical { normalize }
            | LossConfig::ProxyNca { normalize, .. }
            | LossConfig::ProxyTriplet { normalize, .. } => *normalize = value,
            LossConfig::Angular { .. } | LossConfig::ProxySoftmax { .. } => {
                if !value {
                    return Err(TrainError::config(format!("{} always normalizes", self.kind())));
                }
            }
            LossConfig::Dreml { base, .. } => base.set_normalize(value)?,
        }
        Ok(())
    }

    /// Overrides the proxy scale (proxy-nca, proxy-triplet) or the softmax
    /// temperature as `1 / scale` (proxy-softmax).
    pub fn set_scale(&mut self, value: f64) -> Result<()> {
        if !(value > 0.0) {
            return Err(TrainError::config("scale must be positive"));
        }
        match self {
            LossConfig::ProxyNca { scale, .. } | LossConfig::ProxyTriplet { scale, .. } => *scale = value,
            LossConfig::ProxySoftmax { temperature } => *temperature = 1.0 / value,
            LossConfig::Dreml { base, .. } => base.set_scale(value)?,
            other => return Err(TrainError::config(format!("{} has no scale parameter", other.kind()))),
        }
        Ok(())
    }

    pub fn validate(&self, sampler: &SamplerConfig) -> Result<()> {
        let kind = self.kind();
        let sk = sampler.kind();
        if !kind.samplers().contains(&sk) {
            let ok: Vec<&str> = kind.samplers().iter().map(|s| s.name()).collect();
            return Err(TrainError::config(format!("loss {kind} cannot use sampler {sk} (use {})", ok.join(" or "))));
        }
        if kind.needs_positives() {
            if let SamplerConfig::Balanced { per_class, .. } = sampler {
                if *per_class < 2 {
                    return Err(TrainError::config(format!("loss {kind} needs per_class >= 2 (no positives)")));
                }
            }
        }
        match sampler {
            SamplerConfig::Balanced { classes_per_batch, per_class } if *classes_per_batch < 2 || *per_class == 0 => {
                return Err(TrainError::config("balanced batches need at least 2 classes"))
            }
            SamplerConfig::Npairs { classes_per_batch } if *classes_per_batch < 2 => {
                return Err(TrainError::config("npairs batches need at least 2 classes"))
            }
            SamplerConfig::Episodic { episode, episodes_per_batch } => {
                episode.validate()?;
                if *episodes_per_batch == 0 {
                    return Err(TrainError::config("episodes_per_batch must be positive"));
                }
            }
            _ => {}
        }
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(TrainError::config(format!("{kind}: {what} must be positive")))
            }
        };
        match self {
            LossConfig::TripletSemihard { margin, .. } | LossConfig::LiftedStruct { margin, .. } => {
                positive(*margin, "margin")
            }
            LossConfig::Npairs { l2_reg, .. } if *l2_reg < 0.0 => Err(TrainError::config("l2_reg must be >= 0")),
            LossConfig::Angular { alpha_degrees, .. } if !(*alpha_degrees > 0.0 && *alpha_degrees < 90.0) => {
                Err(TrainError::config("angular alpha must lie in (0, 90) degrees"))
            }
            LossConfig::Margin { alpha, beta_init, clip_max, .. } => {
                positive(*alpha, "alpha")?;
                positive(*beta_init, "beta_init")?;
                positive(*clip_max, "clip_max")
            }
            LossConfig::RankedList { alpha, m, lambda, temperature, .. } => {
                if !(*m > 0.0 && m < alpha) || *lambda < 0.0 {
                    return Err(TrainError::config("rll needs 0 < m < alpha and lambda >= 0"));
                }
                positive(*temperature, "temperature")
            }
            LossConfig::StructClust { gamma, inference, .. } => {
                if *inference == InferenceMode::Exhaustive && sampler.batch_size() > 12 {
                    return Err(TrainError::config("exhaustive inference allows batches of at most 12"));
                }
                positive(*gamma, "gamma")
            }
            LossConfig::ProxyNca { scale, .. } => positive(*scale, "scale"),
            LossConfig::ProxyTriplet { scale, margin, .. } => {
                positive(*scale, "scale")?;
                positive(*margin, "margin")
            }
            LossConfig::ProxySoftmax { temperature } => positive(*temperature, "temperature"),
            LossConfig::Dreml { members, meta_classes, base } => {
                if *members == 0 {
                    return Err(TrainError::config("dreml needs at least one member"));
                }
                if meta_classes.is_some_and(|m| m < 2) {
                    return Err(TrainError::config("dreml needs at least 2 meta-classes"));
                }
                if base.kind() == LossKind::Dreml {
                    return Err(TrainError::config("dreml members cannot be ensembles"));
                }
                base.validate(sampler)
            }
            _ => Ok(()),
        }
    }

    /// Trainable loss parameters for a dataset with `n_classes` classes.
    pub fn init_params(&self, n_classes: usize, dim: usize, rng: &mut SamplerRng) -> Params<f64> {
        let mut p = Params::new();
        match self {
            LossConfig::Margin { beta_init, trainable_beta: true, .. } => {
                p.insert("beta".into(), Array1::from_elem(n_classes, *beta_init).into_dyn());
            }
            LossConfig::ProxyNca { .. } | LossConfig::ProxyTriplet { .. } | LossConfig::ProxySoftmax { .. } => {
                p.insert("proxies".into(), ProxyBank::<f64>::random(n_classes, dim, rng).proxies.into_dyn());
            }
            _ => {}
        }
        p
    }

    /// Projects constrained parameters back onto their domain after an update.
    pub fn project(&self, params: &mut Params<f64>) {
        if let Some(p) = params.get_mut("proxies") {
            let proxy_normalized = match self {
                LossConfig::ProxyNca { normalize, .. } | LossConfig::ProxyTriplet { normalize, .. } => *normalize,
                LossConfig::ProxySoftmax { .. } => true,
                _ => false,
            };
            if proxy_normalized {
                let mut bank = ProxyBank::from_proxies(p.clone().into_dimensionality::<Ix2>().expect("2-d proxies"));
                bank.reproject();
                *p = bank.proxies.into_dyn();
            }
        }
    }

    /// Completes the sampler's plan with in-batch mining where the loss needs it.
    pub fn plan(&self, batch: &Batch, composed: Option<BatchPlan>, rng: &mut SamplerRng) -> Result<Option<BatchPlan>> {
        Ok(match self {
            LossConfig::TripletSemihard { normalize, .. } => {
                let view = if *normalize { l2_normalize(batch)? } else { batch.clone() };
                Some(semi_hard_mine(&view, &pairwise_distances(&view, Metric::Euclidean)?)?)
            }
            LossConfig::LiftedStruct { .. } => Some(BatchPlan::Pairs(PairIndexSet::all_pairs(batch.labels()))),
            LossConfig::Margin { normalize, clip_max, .. } => {
                let view = if *normalize { l2_normalize(batch)? } else { batch.clone() };
                let d = pairwise_distances(&view, Metric::Euclidean)?;
                Some(distance_weighted_pairs(&view, &d, rng, DwClip { min: 0.0, max: *clip_max })?)
            }
            LossConfig::Npairs { .. } | LossConfig::Angular { .. } | LossConfig::Prototypical { .. } => {
                let plan =
                    composed.ok_or_else(|| TrainError::config(format!("{} needs a composed plan", self.kind())))?;
                Some(plan)
            }
            _ => None,
        })
    }

    /// Loss value and gradients for one batch. `params` must contain the
    /// loss's trainable tensors (see [`LossConfig::init_params`]).
    pub fn evaluate(&self, batch: &Batch, plan: Option<&BatchPlan>, params: &Params<f64>) -> Result<LossResult> {
        let need_plan = || plan.ok_or_else(|| TrainError::config(format!("{} needs a batch plan", self.kind())));
        let proxies = || -> Result<Array2<f64>> {
            params
                .get("proxies")
                .ok_or_else(|| TrainError::config("missing proxies"))?
                .clone()
                .into_dimensionality::<Ix2>()
                .map_err(|e| TrainError::config(e.to_string()))
        };
        let r = match self {
            LossConfig::TripletSemihard { margin, metric, normalize } => {
                let cfg = TripletConfig { margin: *margin, metric: *metric, normalize: *normalize };
                triplet_loss(batch, need_plan()?.as_triplets()?, &cfg)?
            }
            LossConfig::LiftedStruct { margin, metric, normalize } => {
                let cfg = LiftedConfig { margin: *margin, metric: *metric, normalize: *normalize };
                lifted_struct_loss(batch, need_plan()?.as_pairs()?, &cfg)?
            }
            LossConfig::Npairs { l2_reg, normalize } => {
                let cfg = NpairsConfig { l2_reg: *l2_reg, normalize: *normalize, reversed: false };
                npairs_loss(batch, need_plan()?.as_npairs()?, &cfg)?
            }
            LossConfig::Angular { alpha_degrees, npairs_weight } => {
                let p = AngularParams { alpha_degrees: *alpha_degrees, combine_with_npairs: *npairs_weight };
                angular_loss(batch, need_plan()?.as_npairs()?, &p)?
            }
            LossConfig::Margin { alpha, beta_init, trainable_beta, normalize, .. } => {
                let n_classes = batch.labels().iter().max().map_or(0, |&m| m + 1);
                let beta = match (trainable_beta, params.get("beta")) {
                    (true, Some(b)) => {
                        b.clone().into_dimensionality::<Ix1>().map_err(|e| TrainError::config(e.to_string()))?
                    }
                    (true, None) => return Err(TrainError::config("missing beta")),
                    (false, _) => Array1::from_elem(n_classes, *beta_init),
                };
                let p =
                    MarginLossParams { beta, alpha: *alpha, trainable_beta: *trainable_beta, normalize: *normalize };
                margin_loss(batch, need_plan()?.as_pairs()?, &p)?
            }
            LossConfig::RankedList { alpha, m, lambda, temperature, normalize } => {
                let p = RankedListParams {
                    alpha: *alpha,
                    m: *m,
                    lambda: *lambda,
                    temperature: *temperature,
                    normalize: *normalize,
                };
                ranked_list_loss(batch, &p)?
            }
            LossConfig::StructClust { gamma, inference, normalize } => {
                let p = StructClustParams { gamma: *gamma, inference: *inference, normalize: *normalize };
                struct_clust_loss(batch, &p)?
            }
            LossConfig::Prototypical { normalize } => {
                let episodes = need_plan()?.as_episodes()?;
                if *normalize {
                    let prep = l2_normalize(batch)?;
                    let mut r = prototypical_loss(&prep, episodes)?;
                    let (y, norms) = dmlbench_core::normalize_rows(batch.view())?;
                    r.grad_embeddings =
                        dmlbench_core::batch::normalize_rows_backward(y.view(), &norms, r.grad_embeddings.view());
                    r
                } else {
                    prototypical_loss(batch, episodes)?
                }
            }
            LossConfig::ProxyNca { scale, normalize, include_positive } => {
                let bank = ProxyBank { scale: *scale, normalize: *normalize, ..ProxyBank::from_proxies(proxies()?) };
                proxy_nca_loss(batch, &bank, *include_positive)?
            }
            LossConfig::ProxyTriplet { scale, margin, normalize } => {
                let bank = ProxyBank { scale: *scale, normalize: *normalize, ..ProxyBank::from_proxies(proxies()?) };
                proxy_triplet_loss(batch, &bank, *margin)?
            }
            LossConfig::ProxySoftmax { temperature } => {
                proxy_softmax_loss(batch, &ProxyBank::from_proxies(proxies()?), *temperature)?
            }
            LossConfig::Dreml { .. } => {
                return Err(TrainError::config("dreml is an ensemble; evaluate its base loss per member"))
            }
        };
        Ok(r)
    }
}
