//! Training loop, evaluation cadence, checkpoints and the DREML ensemble.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use dmlbench_core::eval::{evaluate, evaluate_binary, EvalReport};
use dmlbench_core::sampling::{
    class_balanced_compose, class_index, episodic_compose, npairs_compose, ClassIndex, RngState,
};
use dmlbench_core::{Batch, BatchPlan, Params, SamplerRng};
use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoder::{self, EncoderSpec};
use crate::error::{Result, TrainError};
use crate::loss::{LossConfig, LossKind, SamplerConfig};
use crate::optim::{OptimizerConfig, OptimizerKind, OptimizerState};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub steps: u64,
    pub eval_every: u64,
    /// Sub-batches whose gradients are averaged into one update.
    pub accumulate: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { steps: 500, eval_every: 100, accumulate: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub encoder: EncoderSpec,
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
    pub seed: u64,
    /// Also evaluate sign-binarized embeddings under Hamming distance.
    #[serde(default)]
    pub binary_eval: bool,
}

impl TrainConfig {
    /// Defaults for `loss`: Adam (RMSProp for struct-clust), lr 1e-4.
    pub fn new(loss: LossConfig, encoder: EncoderSpec, sampler: SamplerConfig, seed: u64) -> Self {
        let optimizer = if loss.kind() == LossKind::StructClust {
            OptimizerConfig::rmsprop(1e-4)
        } else {
            OptimizerConfig::adam(1e-4)
        };
        Self { encoder, loss, sampler, optimizer, schedule: Schedule::default(), seed, binary_eval: false }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.loss.validate(&self.sampler)?;
        self.optimizer.validate()?;
        if self.schedule.eval_every == 0 || self.schedule.accumulate == 0 {
            return Err(TrainError::config("eval_every and accumulate must be positive"));
        }
        Ok(())
    }

    /// The loss each member optimizes.
    pub fn member_loss(&self) -> &LossConfig {
        match &self.loss {
            LossConfig::Dreml { base, .. } => base,
            other => other,
        }
    }

    pub fn n_members(&self) -> usize {
        match &self.loss {
            LossConfig::Dreml { members, .. } => *members,
            _ => 1,
        }
    }

    /// Dimension of the evaluated embedding (members x output_dim).
    /// Labels each member trains on.
    pub fn meta_classes(&self, n_classes: usize) -> usize {
        self.loss.meta_classes(self.encoder.output_dim, n_classes)
    }

    pub fn embedding_dim(&self) -> usize {
        self.n_members() * self.encoder.output_dim
    }
}

/// Everything one member needs to continue training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    /// Encoder weights plus trainable loss tensors.
    pub params: Params<f64>,
    pub optimizer: OptimizerState,
    pub rng: RngState,
    /// Training label of every dataset class (meta-class for ensemble members).
    pub class_map: Vec<usize>,
}

impl TrainState {
    pub fn n_labels(&self) -> usize {
        self.class_map.iter().max().map_or(0, |&m| m + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: u64,
    pub recall_at: BTreeMap<usize, f64>,
    pub nmi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary: Option<EvalReport>,
}

/// A (possibly single-member) training run with its evaluation history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub step: u64,
    pub members: Vec<TrainState>,
    pub history: Vec<HistoryEntry>,
}

const PARTITION_STREAM: u64 = 1 << 32;
const PARAM_STREAM: u64 = 2 << 32;

/// Random grouping of `n_classes` classes into `meta` meta-classes.
fn partition(n_classes: usize, meta: usize, seed: u64, member: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.shuffle(&mut SamplerRng::with_stream(seed, PARTITION_STREAM + member));
    let mut map = vec![0; n_classes];
    for (pos, &c) in order.iter().enumerate() {
        map[c] = pos % meta;
    }
    map
}

/// Fresh state for one member. `class_map` relabels dataset classes.
pub fn init_state(cfg: &TrainConfig, member: u64, class_map: Vec<usize>) -> Result<TrainState> {
    let mut spec = cfg.encoder.clone();
    spec.seed = spec.seed.wrapping_add(member);
    let mut params = spec.init_params()?;
    let n_labels = class_map.iter().max().map_or(0, |&m| m + 1);
    let mut param_rng = SamplerRng::with_stream(cfg.seed, PARAM_STREAM + member);
    params.extend(cfg.member_loss().init_params(n_labels, spec.output_dim, &mut param_rng));
    Ok(TrainState {
        step: 0,
        params,
        optimizer: OptimizerState::default(),
        rng: SamplerRng::with_stream(cfg.seed, member).state(),
        class_map,
    })
}

/// Initial run state: one member per ensemble slot, meta-class partitions
/// for ensembles of two or more.
pub fn init_run(cfg: &TrainConfig, train: &Dataset) -> Result<RunState> {
    cfg.validate()?;
    if cfg.encoder.input_dim != train.dim() {
        return Err(TrainError::config(format!(
            "encoder input_dim {} does not match the dataset's {} features",
            cfg.encoder.input_dim,
            train.dim()
        )));
    }
    let c = train.n_classes();
    let members = cfg.n_members();
    let meta = cfg.meta_classes(c);
    if meta < 2 || meta > c {
        return Err(TrainError::config(format!("cannot group {c} classes into {meta} meta-classes")));
    }
    let needed = match cfg.sampler {
        SamplerConfig::Balanced { classes_per_batch, .. } | SamplerConfig::Npairs { classes_per_batch } => {
            classes_per_batch
        }
        SamplerConfig::Episodic { episode, .. } => episode.classes_per_episode,
    };
    if needed > meta {
        return Err(TrainError::config(format!(
            "sampler draws {needed} classes per batch but members see only {meta} (meta-)classes"
        )));
    }
    let states = (0..members as u64)
        .map(|m| {
            let map = if members > 1 { partition(c, meta, cfg.seed, m) } else { (0..c).collect() };
            init_state(cfg, m, map)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunState {
        schema_version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        step: 0,
        members: states,
        history: Vec::new(),
    })
}

/// Draws one batch of dataset rows and the sampler's plan (row indices are
/// batch positions).
pub fn draw_batch(
    sampler: &SamplerConfig,
    index: &ClassIndex,
    rng: &mut SamplerRng,
) -> Result<(Vec<usize>, Option<BatchPlan>)> {
    Ok(match *sampler {
        SamplerConfig::Balanced { classes_per_batch, per_class } => {
            (class_balanced_compose(index, classes_per_batch, per_class, rng)?, None)
        }
        SamplerConfig::Npairs { classes_per_batch } => {
            let (ids, plan) = npairs_compose(index, classes_per_batch, rng)?;
            (ids, Some(plan))
        }
        SamplerConfig::Episodic { episode, episodes_per_batch } => {
            let (ids, plan) = episodic_compose(index, episode, episodes_per_batch, rng)?;
            (ids, Some(plan))
        }
    })
}

/// Result of a forward/backward pass on one batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub grads: Params<f64>,
    /// The plan actually used, after in-batch mining.
    pub plan: Option<BatchPlan>,
}

/// Loss and gradients of every parameter on one batch, without updating.
/// Mining losses complete `composed` on the current embeddings.
pub fn compute_gradients(
    cfg: &TrainConfig,
    state: &TrainState,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    composed: Option<BatchPlan>,
    rng: &mut SamplerRng,
) -> Result<BatchGradients> {
    let (batch, cache) = forward_batch(cfg, state, x, labels)?;
    let plan = cfg.member_loss().plan(&batch, composed, rng)?;
    backward_batch(cfg, state, &batch, &cache, plan)
}

/// As [`compute_gradients`] with a fixed, fully specified plan (no mining).
pub fn gradients_for_plan(
    cfg: &TrainConfig,
    state: &TrainState,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    plan: Option<BatchPlan>,
) -> Result<BatchGradients> {
    let (batch, cache) = forward_batch(cfg, state, x, labels)?;
    backward_batch(cfg, state, &batch, &cache, plan)
}

fn non_finite(cfg: &TrainConfig, state: &TrainState, value: f64) -> TrainError {
    TrainError::NonFinite { step: state.step, loss: cfg.member_loss().kind().to_string(), value }
}

fn forward_batch(
    cfg: &TrainConfig,
    state: &TrainState,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<(Batch, encoder::ForwardCache)> {
    let (emb, cache) = encoder::forward(&member_spec(cfg, state), &state.params, x)?;
    if let Some(&bad) = emb.iter().find(|v| !v.is_finite()) {
        return Err(non_finite(cfg, state, bad));
    }
    Ok((Batch::new(emb, labels.to_vec())?, cache))
}

fn backward_batch(
    cfg: &TrainConfig,
    state: &TrainState,
    batch: &Batch,
    cache: &encoder::ForwardCache,
    plan: Option<BatchPlan>,
) -> Result<BatchGradients> {
    let r = cfg.member_loss().evaluate(batch, plan.as_ref(), &state.params)?;
    if !r.value.is_finite() {
        return Err(non_finite(cfg, state, r.value));
    }
    let mut grads = encoder::backward(&member_spec(cfg, state), &state.params, cache, r.grad_embeddings)?;
    grads.extend(r.grad_params);
    Ok(BatchGradients { loss: r.value, grads, plan })
}

fn member_spec(cfg: &TrainConfig, state: &TrainState) -> EncoderSpec {
    let mut spec = cfg.encoder.clone();
    let member = state.rng.stream;
    spec.seed = spec.seed.wrapping_add(member);
    spec
}

/// Applies averaged gradients and re-projects constrained parameters.
pub fn apply_gradients(cfg: &TrainConfig, state: &mut TrainState, grads: &Params<f64>) -> Result<()> {
    state.optimizer.step(&cfg.optimizer, &mut state.params, grads)?;
    cfg.member_loss().project(&mut state.params);
    state.step += 1;
    Ok(())
}

/// One update on an explicit batch; returns the loss before the update.
pub fn train_step(
    cfg: &TrainConfig,
    state: &mut TrainState,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    composed: Option<BatchPlan>,
) -> Result<f64> {
    let mut rng = SamplerRng::from_state(state.rng);
    let out = compute_gradients(cfg, state, x, labels, composed, &mut rng)?;
    state.rng = rng.state();
    apply_gradients(cfg, state, &out.grads)?;
    Ok(out.loss)
}

/// Member's view of the training set: its labels and class index.
struct MemberData {
    labels: Vec<usize>,
    index: ClassIndex,
}

impl MemberData {
    fn new(train: &Dataset, state: &TrainState) -> Self {
        let labels: Vec<usize> = train.labels().iter().map(|&c| state.class_map[c]).collect();
        let index = class_index(&labels);
        Self { labels, index }
    }
}

/// Draws `accumulate` sub-batches, averages their gradients and updates.
fn member_step(cfg: &TrainConfig, state: &mut TrainState, train: &Dataset, data: &MemberData) -> Result<f64> {
    let mut rng = SamplerRng::from_state(state.rng);
    let k = cfg.schedule.accumulate;
    let mut total = 0.0;
    let mut sum: Option<Params<f64>> = None;
    for _ in 0..k {
        let (ids, plan) = draw_batch(&cfg.sampler, &data.index, &mut rng)?;
        let x = train.features().select(Axis(0), &ids);
        let labels: Vec<usize> = ids.iter().map(|&i| data.labels[i]).collect();
        let BatchGradients { loss: value, grads, .. } =
            compute_gradients(cfg, state, x.view(), &labels, plan, &mut rng)?;
        total += value;
        match &mut sum {
            None => sum = Some(grads),
            Some(acc) => {
                for (name, g) in grads {
                    *acc.entry(name.clone()).or_insert_with(|| g.clone() * 0.0) += &g;
                }
            }
        }
    }
    let mut grads = sum.expect("accumulate >= 1");
    if k > 1 {
        grads.values_mut().for_each(|g| *g /= k as f64);
    }
    state.rng = rng.state();
    apply_gradients(cfg, state, &grads)?;
    Ok(total / k as f64)
}

/// Embeds `x` with every member and concatenates; each member's output is
/// normalized when its loss works on unit vectors.
pub fn embed(cfg: &TrainConfig, members: &[TrainState], x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let parts = members
        .iter()
        .map(|m| {
            let (e, _) = encoder::forward(&member_spec(cfg, m), &m.params, x)?;
            if cfg.member_loss().normalizes() {
                Ok(dmlbench_core::normalize_rows(e.view())?.0)
            } else {
                Ok(e)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(concatenate(Axis(1), &views).expect("members share row count"))
}

/// Retrieval and clustering metrics on held-out classes.
pub fn evaluate_members(cfg: &TrainConfig, members: &[TrainState], test: &Dataset, step: u64) -> Result<HistoryEntry> {
    let emb = embed(cfg, members, test.features().view())?;
    let set = Batch::new(emb, test.labels().to_vec())?;
    let report = evaluate(&set, cfg.seed)?;
    let binary = if cfg.binary_eval { Some(evaluate_binary(&set, cfg.seed)?) } else { None };
    Ok(HistoryEntry { step, recall_at: report.recall_at, nmi: report.nmi, binary })
}

/// Trains until `config.schedule.steps`, evaluating at step 0, every
/// `eval_every` steps and at the end. Resumes from `run.step`. On error the
/// history gathered so far stays in `run`.
pub fn train_run(run: &mut RunState, train: &Dataset, test: &Dataset) -> Result<()> {
    let steps = run.config.schedule.steps;
    train_until(run, train, test, steps)
}

/// As [`train_run`] but stops once `run.step` reaches `stop` (clamped to the
/// schedule), leaving the evaluation cadence of the full schedule intact.
pub fn train_until(run: &mut RunState, train: &Dataset, test: &Dataset, stop: u64) -> Result<()> {
    let cfg = run.config.clone();
    let stop = stop.min(cfg.schedule.steps);
    if test.n_classes() < 2 {
        return Err(TrainError::config("test split needs at least two classes"));
    }
    let data: Vec<MemberData> = run.members.iter().map(|m| MemberData::new(train, m)).collect();
    if run.history.is_empty() {
        let entry = evaluate_members(&cfg, &run.members, test, run.step)?;
        run.history.push(entry);
    }
    while run.step < stop {
        run.members
            .par_iter_mut()
            .zip(&data)
            .map(|(m, d)| member_step(&cfg, m, train, d).map(|_| ()))
            .collect::<Result<Vec<()>>>()?;
        run.step += 1;
        if run.step.is_multiple_of(cfg.schedule.eval_every) || run.step == cfg.schedule.steps {
            let entry = evaluate_members(&cfg, &run.members, test, run.step)?;
            log::info!(
                "step {} recall@1 {:.4} nmi {:.4}",
                run.step,
                entry.recall_at.get(&1).unwrap_or(&f64::NAN),
                entry.nmi
            );
            run.history.push(entry);
        }
    }
    Ok(())
}

/// Trains an ensemble of `members` encoders on random meta-class groupings
/// with the base loss; the evaluated embedding is their concatenation.
pub fn dreml_train(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<RunState> {
    if cfg.loss.kind() != LossKind::Dreml {
        return Err(TrainError::config("dreml_train needs a dreml loss configuration"));
    }
    let mut run = init_run(cfg, train)?;
    train_run(&mut run, train, test)?;
    Ok(run)
}

impl RunState {
    /// Writes the state as JSON through a temporary file and a rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec(self).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        write_atomic(path, &json)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })?;
        let run: RunState = serde_json::from_slice(&bytes).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        if run.schema_version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                run.schema_version
            )));
        }
        Ok(run)
    }
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| TrainError::Io { path: path.to_path_buf(), source };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io)?;
    let tmp = dir.join(format!(".{}.tmp", path.file_name().map_or("out".into(), |n| n.to_string_lossy())));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Rmsprop => "rmsprop",
        }
    }
}
