//! The self-check suite behind `dmlbench verify`: gradient checks for every
//! loss, brute-force oracles for mining, retrieval, NMI and facility
//! location, and a goodness-of-fit test for distance-weighted sampling.

use std::collections::BTreeMap;
use std::time::Instant;

use clap::ValueEnum;
use dmlbench_core::diff::{grad_check, GradCheckReport};
use dmlbench_core::eval::{
    assign_to_facilities, binarize, loss_augmented_inference, nmi, recall_at_k_hamming, recall_at_k_self,
    InferenceMode, DEFAULT_KS,
};
use dmlbench_core::losses::*;
use dmlbench_core::sampling::{distance_weighted_sample, inverse_density_probabilities, semi_hard_mine, DwClip};
use dmlbench_core::{
    pairwise_distances, Batch, Episode, EpisodeClass, LossResult, Metric, PairIndexSet, Params, SamplerRng, Triplet,
    TripletIndexSet,
};
use itertools::Itertools;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Check groups selectable with `--only`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Group {
    GradCheck,
    Mining,
    Recall,
    Nmi,
    Facility,
    Sampler,
}

impl Group {
    pub const ALL: [Group; 6] =
        [Group::GradCheck, Group::Mining, Group::Recall, Group::Nmi, Group::Facility, Group::Sampler];

    pub fn name(self) -> &'static str {
        match self {
            Group::GradCheck => "grad-check",
            Group::Mining => "mining",
            Group::Recall => "recall",
            Group::Nmi => "nmi",
            Group::Facility => "facility",
            Group::Sampler => "sampler",
        }
    }
}

/// Deliberate faults for checking that the suite notices them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mutation {
    /// Negate every analytic gradient before the gradient check compares it.
    SignFlip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub group: Group,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        format!("{status} {}/{} ({:.2}s): {}", self.group.name(), self.name, self.seconds, self.detail)
    }
}

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
pub const KINK: f64 = 1e-3;
pub const GRAD_SEEDS: usize = 20;

/// Runs the selected groups (all when `only` is empty).
pub fn run_checks(only: &[Group], mutation: Option<Mutation>) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for g in Group::ALL {
        if !only.is_empty() && !only.contains(&g) {
            continue;
        }
        match g {
            Group::GradCheck => out.extend(gradient_checks(mutation)),
            Group::Mining => out.push(timed(g, "semi-hard-vs-brute-force", || semi_hard_oracle(1000))),
            Group::Recall => out.push(timed(g, "recall-vs-naive", recall_oracle)),
            Group::Nmi => out.push(timed(g, "nmi-vs-entropy", || nmi_oracle(200))),
            Group::Facility => {
                out.push(timed(g, "exhaustive-vs-brute-force", || exhaustive_oracle(40)));
                out.push(timed(g, "greedy-on-separated-data", || greedy_separated(50)));
            }
            Group::Sampler => out.push(timed(g, "distance-weighted-chi-square", || dw_chi_square(20, 100_000))),
        }
    }
    out
}

fn timed(group: Group, name: &str, f: impl FnOnce() -> Result<String, String>) -> CheckResult {
    let t = Instant::now();
    let r = f();
    let seconds = t.elapsed().as_secs_f64();
    let (passed, detail) = match r {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CheckResult { group, name: name.to_string(), passed, detail, seconds }
}

fn gaussian(rng: &mut SamplerRng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal))
}

fn grouped_labels(classes: usize, per_class: usize) -> Vec<usize> {
    (0..classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect()
}

fn random_batch(rng: &mut SamplerRng, classes: usize, per_class: usize, d: usize) -> Batch {
    let labels = grouped_labels(classes, per_class);
    Batch::new(gaussian(rng, labels.len(), d), labels).expect("valid batch")
}

fn clustered(rng: &mut SamplerRng, classes: usize, per_class: usize, d: usize, spread: f64, sigma: f64) -> Batch {
    let centres = gaussian(rng, classes, d) * spread;
    let labels = grouped_labels(classes, per_class);
    let noise = gaussian(rng, labels.len(), d) * sigma;
    let x = Array2::from_shape_fn((labels.len(), d), |(i, j)| centres[[labels[i], j]] + noise[[i, j]]);
    Batch::new(x, labels).expect("valid batch")
}

fn random_labels(rng: &mut SamplerRng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// Integer grid coordinates, so exact distance ties occur.
fn tie_heavy(rng: &mut SamplerRng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || rng.random_range(-2..=2) as f64)
}

fn euclid(x: &Array2<f64>, i: usize, j: usize) -> f64 {
    x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------- gradients

type LossFn<'a> = Box<dyn Fn(&Batch, &Params<f64>) -> dmlbench_core::Result<LossResult> + 'a>;

/// A gradient-check case: the batch, the parameters and the loss closure.
type Case<'a> = (Batch, Params<f64>, LossFn<'a>);

fn npairs_layout(classes: usize) -> Vec<(usize, usize)> {
    (0..classes).map(|c| (2 * c, 2 * c + 1)).collect()
}

fn random_triplets(rng: &mut SamplerRng, b: &Batch, count: usize) -> TripletIndexSet {
    let l = b.labels();
    let mut out = Vec::new();
    while out.len() < count {
        let (a, p, n) = (rng.random_range(0..l.len()), rng.random_range(0..l.len()), rng.random_range(0..l.len()));
        if a != p && l[a] == l[p] && l[a] != l[n] {
            out.push(Triplet { anchor: a, positive: p, negative: n });
        }
    }
    TripletIndexSet::new(out)
}

fn proxy_case(seed: u64) -> (Batch, Params<f64>) {
    let mut rng = SamplerRng::new(seed);
    let b = random_batch(&mut rng, 4, 3, 6);
    let mut params = Params::new();
    params.insert("proxies".into(), gaussian(&mut rng, 5, 6).into_dyn());
    (b, params)
}

fn bank(p: &Params<f64>, scale: f64, normalize: bool) -> dmlbench_core::Result<ProxyBank<f64>> {
    let proxies: Array2<f64> = p["proxies"]
        .clone()
        .into_dimensionality()
        .map_err(|e| dmlbench_core::DmlError::shape(format!("proxies: {e}")))?;
    Ok(ProxyBank { scale, normalize, ..ProxyBank::from_proxies(proxies) })
}

/// Builds the case for `loss` at `seed`. Names follow the CLI.
fn gradient_case(loss: &str, seed: u64) -> Case<'static> {
    let mut rng = SamplerRng::new(seed);
    let none = Params::new();
    match loss {
        "triplet-semihard" => {
            let b = random_batch(&mut rng, 3, 4, 6);
            let t = random_triplets(&mut rng, &b, 10);
            let cfg = TripletConfig { margin: 1.0, ..Default::default() };
            (b, none, Box::new(move |b, _| triplet_loss(b, &t, &cfg)))
        }
        "lifted" => {
            let b = random_batch(&mut rng, 3, 3, 5);
            let pairs = PairIndexSet::all_pairs(b.labels());
            (b, none, Box::new(move |b, _| lifted_struct_loss(b, &pairs, &LiftedConfig::default())))
        }
        "npairs" => {
            let b = random_batch(&mut rng, 5, 2, 6);
            let layout = npairs_layout(5);
            (b, none, Box::new(move |b, _| npairs_loss(b, &layout, &NpairsConfig::default())))
        }
        "angular" => {
            let b = random_batch(&mut rng, 4, 2, 5);
            let layout = npairs_layout(4);
            let p = AngularParams { combine_with_npairs: Some(2.0), ..Default::default() };
            (b, none, Box::new(move |b, _| angular_loss(b, &layout, &p)))
        }
        "margin" => {
            let b = random_batch(&mut rng, 3, 4, 6);
            let pairs = PairIndexSet::all_pairs(b.labels());
            let beta: Array1<f64> = Array1::from_shape_fn(3, |_| rng.random_range(0.6..1.6));
            let mut params = Params::new();
            params.insert("beta".into(), beta.into_dyn());
            let eval = move |b: &Batch, p: &Params<f64>| {
                let mut mp = MarginLossParams::new(3);
                mp.beta = p["beta"].clone().into_dimensionality().expect("beta is a vector");
                margin_loss(b, &pairs, &mp)
            };
            (b, params, Box::new(eval))
        }
        "rll" => {
            let b = random_batch(&mut rng, 3, 4, 4);
            (b, none, Box::new(|b, _| ranked_list_loss(b, &RankedListParams::default())))
        }
        "struct-clust" => {
            let b = random_batch(&mut rng, 3, 4, 4);
            (b, none, Box::new(|b, _| struct_clust_loss(b, &StructClustParams::default())))
        }
        "proto" => {
            let b = random_batch(&mut rng, 3, 4, 5);
            let episodes = vec![
                Episode {
                    classes: (0..3)
                        .map(|c| EpisodeClass {
                            label: c,
                            support: vec![4 * c, 4 * c + 1],
                            query: vec![4 * c + 2, 4 * c + 3],
                        })
                        .collect(),
                },
                Episode {
                    classes: (0..2)
                        .map(|c| EpisodeClass { label: c, support: vec![4 * c + 3], query: vec![4 * c] })
                        .collect(),
                },
            ];
            (b, none, Box::new(move |b, _| prototypical_loss(b, &episodes)))
        }
        "proxy-nca" => {
            let (b, p) = proxy_case(seed);
            (b, p, Box::new(|b, p| proxy_nca_loss(b, &bank(p, 3.0, true)?, false)))
        }
        "proxy-triplet" => {
            let (b, p) = proxy_case(seed);
            (b, p, Box::new(|b, p| proxy_triplet_loss(b, &bank(p, 1.0, true)?, 0.5)))
        }
        "proxy-softmax" => {
            let (b, p) = proxy_case(seed);
            (b, p, Box::new(|b, p| proxy_softmax_loss(b, &bank(p, 1.0, true)?, 0.05)))
        }
        other => panic!("no gradient case for {other}"),
    }
}

/// The eleven single-model losses.
pub const GRADIENT_LOSSES: [&str; 11] = [
    "triplet-semihard",
    "lifted",
    "npairs",
    "angular",
    "margin",
    "rll",
    "struct-clust",
    "proto",
    "proxy-nca",
    "proxy-triplet",
    "proxy-softmax",
];

/// Gradient check of `loss` at one seed.
pub fn check_gradient(loss: &str, seed: u64, mutation: Option<Mutation>) -> Result<GradCheckReport, String> {
    let (b, params, f) = gradient_case(loss, seed);
    let eval = |b: &Batch, p: &Params<f64>| {
        let mut r = f(b, p)?;
        if mutation == Some(Mutation::SignFlip) {
            r.grad_embeddings.mapv_inplace(|v| -v);
            for g in r.grad_params.values_mut() {
                g.mapv_inplace(|v| -v);
            }
        }
        Ok(r)
    };
    grad_check(eval, &b, &params, GRAD_STEP, GRAD_TOL).map_err(|e| e.to_string())
}

/// Checks `GRAD_SEEDS` accepted batches, resampling those within `KINK` of a
/// non-differentiable point.
pub fn gradient_suite(loss: &str, mutation: Option<Mutation>) -> Result<String, String> {
    let (mut accepted, mut skipped, mut worst) = (0, 0, 0.0f64);
    let mut seed = 0u64;
    while accepted < GRAD_SEEDS {
        if seed >= 50 * GRAD_SEEDS as u64 {
            return Err(format!("only {accepted} batches away from kinks"));
        }
        let r = check_gradient(loss, seed, mutation)?;
        seed += 1;
        if r.kink_margin < KINK {
            skipped += 1;
            continue;
        }
        if !r.passed {
            return Err(format!("seed {}: relative error {:.3e} at {:?}", seed - 1, r.max_rel_error, r.worst));
        }
        worst = worst.max(r.max_rel_error);
        accepted += 1;
    }
    Ok(format!("{accepted} batches, max relative error {worst:.2e}, {skipped} near kinks resampled"))
}

fn gradient_checks(mutation: Option<Mutation>) -> Vec<CheckResult> {
    GRADIENT_LOSSES.iter().map(|&l| timed(Group::GradCheck, l, || gradient_suite(l, mutation))).collect()
}

// ------------------------------------------------------------------ mining

fn brute_semi_hard(x: &Array2<f64>, labels: &[usize]) -> Vec<Triplet> {
    let n = labels.len();
    let mut out = Vec::new();
    for a in 0..n {
        let negs: Vec<usize> = (0..n).filter(|&k| labels[k] != labels[a]).collect();
        if negs.is_empty() {
            continue;
        }
        for p in (0..n).filter(|&p| p != a && labels[p] == labels[a]) {
            let dp = euclid(x, a, p);
            let by_dist = |u: &(f64, usize), v: &(f64, usize)| u.partial_cmp(v).expect("finite");
            let mut semi: Vec<(f64, usize)> =
                negs.iter().map(|&k| (euclid(x, a, k), k)).filter(|&(dk, _)| dk > dp).collect();
            semi.sort_by(by_dist);
            let neg = match semi.first() {
                Some(&(_, k)) => k,
                None => {
                    let mut all: Vec<(f64, usize)> = negs.iter().map(|&k| (-euclid(x, a, k), k)).collect();
                    all.sort_by(by_dist);
                    all[0].1
                }
            };
            out.push(Triplet { anchor: a, positive: p, negative: neg });
        }
    }
    out
}

/// Semi-hard mining against exhaustive search, half the trials on
/// tie-heavy integer grids.
pub fn semi_hard_oracle(trials: usize) -> Result<String, String> {
    let mut rng = SamplerRng::new(2024);
    let mut triplets = 0;
    for trial in 0..trials {
        let n = rng.random_range(4..=64);
        let d = rng.random_range(1..=8);
        let x = if trial % 2 == 0 { gaussian(&mut rng, n, d) } else { tie_heavy(&mut rng, n, d) };
        let classes = rng.random_range(2..=(n / 2).clamp(2, 8));
        let labels = random_labels(&mut rng, n, classes);
        let expect = brute_semi_hard(&x, &labels);
        let b = Batch::new(x, labels).map_err(|e| e.to_string())?;
        let dist = pairwise_distances(&b, Metric::Euclidean).map_err(|e| e.to_string())?;
        let got = match semi_hard_mine(&b, &dist) {
            Ok(plan) => plan.as_triplets().map(|t| t.triplets.clone()).unwrap_or_default(),
            Err(_) => Vec::new(),
        };
        if got != expect {
            return Err(format!("trial {trial}: {} triplets differ from brute force", expect.len()));
        }
        triplets += expect.len();
    }
    Ok(format!("{trials} batches, {triplets} triplets identical"))
}

// ------------------------------------------------------------------ recall

fn naive_recall(dist: impl Fn(usize, usize) -> f64, labels: &[usize], k: usize) -> f64 {
    let n = labels.len();
    let mut hits = 0;
    for q in 0..n {
        let mut order: Vec<(f64, usize)> = (0..n).filter(|&i| i != q).map(|i| (dist(q, i), i)).collect();
        order.sort_by(|u, v| u.partial_cmp(v).expect("finite"));
        if order[..k].iter().any(|&(_, i)| labels[i] == labels[q]) {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

/// Recall@K against sorting every neighbour list, euclidean and Hamming.
pub fn recall_oracle() -> Result<String, String> {
    let mut rng = SamplerRng::new(77);
    for trial in 0..12 {
        let n = [20, 60, 150, 500][trial % 4];
        let d = rng.random_range(2..=12);
        let x = if trial % 3 == 0 { tie_heavy(&mut rng, n, d) } else { gaussian(&mut rng, n, d) };
        let labels = {
            let c = rng.random_range(2..=10);
            random_labels(&mut rng, n, c)
        };
        let sq = |q: usize, i: usize| euclid(&x, q, i).powi(2);
        let bits: Vec<Vec<bool>> = x.rows().into_iter().map(|r| r.iter().map(|&v| v > 0.0).collect()).collect();
        let ham = |q: usize, i: usize| bits[q].iter().zip(&bits[i]).filter(|(a, b)| a != b).count() as f64;
        let b = Batch::new(x.clone(), labels.clone()).map_err(|e| e.to_string())?;
        let eu = recall_at_k_self(&b, &DEFAULT_KS).map_err(|e| e.to_string())?;
        let codes = binarize(&b);
        let hm = recall_at_k_hamming(&codes, &codes, &DEFAULT_KS, true).map_err(|e| e.to_string())?;
        for k in DEFAULT_KS {
            let (e, h) = (naive_recall(sq, &labels, k), naive_recall(ham, &labels, k));
            if eu.recall_at[&k] != e || hm.recall_at[&k] != h {
                return Err(format!(
                    "trial {trial} (N={n}) K={k}: euclidean {} vs {e}, hamming {} vs {h}",
                    eu.recall_at[&k], hm.recall_at[&k]
                ));
            }
        }
    }
    Ok("12 sets up to N=500, K in {1,2,4,8,16}, euclidean and hamming exact".into())
}

// --------------------------------------------------------------------- nmi

/// NMI straight from the entropy definitions.
pub fn entropy_nmi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut pa: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0 / n;
        *pa.entry(x).or_default() += 1.0 / n;
        *pb.entry(y).or_default() += 1.0 / n;
    }
    let h = |m: &BTreeMap<usize, f64>| -m.values().map(|p| p * p.ln()).sum::<f64>();
    let (ha, hb) = (h(&pa), h(&pb));
    let mi: f64 = joint.iter().map(|(&(x, y), &p)| p * (p / (pa[&x] * pb[&y])).ln()).sum();
    if ha + hb == 0.0 {
        1.0
    } else {
        (2.0 * mi / (ha + hb)).clamp(0.0, 1.0)
    }
}

pub fn nmi_oracle(pairs: usize) -> Result<String, String> {
    let same = nmi(&[0, 0, 1, 1], &[5, 5, 2, 2]).map_err(|e| e.to_string())?;
    let checker = nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).map_err(|e| e.to_string())?;
    if same != 1.0 || checker != 0.0 {
        return Err(format!("identical partitions {same}, checkerboard {checker}"));
    }
    let mut rng = SamplerRng::new(5);
    let mut worst = 0.0f64;
    for i in 0..pairs {
        let n = rng.random_range(1..=80);
        let (ca, cb) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let a = random_labels(&mut rng, n, ca);
        let b = random_labels(&mut rng, n, cb);
        let got = nmi(&a, &b).map_err(|e| e.to_string())?;
        let err = (got - entropy_nmi(&a, &b)).abs();
        if err >= 1e-10 {
            return Err(format!("pair {i}: |nmi - oracle| = {err:.3e}"));
        }
        worst = worst.max(err);
    }
    Ok(format!("identity 1, checkerboard 0, {pairs} random pairs within {worst:.1e}"))
}

// ---------------------------------------------------------------- facility

fn brute_augmented_max(x: &Array2<f64>, labels: &[usize], gamma: f64, k: usize) -> f64 {
    let n = labels.len();
    (0..n)
        .combinations(k)
        .map(|s| {
            let mut f = 0.0;
            let mut assign = Vec::with_capacity(n);
            for i in 0..n {
                let (j, dj) = s.iter().map(|&j| (j, euclid(x, i, j))).fold((usize::MAX, f64::INFINITY), |acc, c| {
                    if c.1 < acc.1 {
                        c
                    } else {
                        acc
                    }
                });
                f -= dj;
                assign.push(j);
            }
            f + gamma * (1.0 - entropy_nmi(&assign, labels))
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Exhaustive loss-augmented inference against enumerating all C(N, k) sets.
pub fn exhaustive_oracle(instances: usize) -> Result<String, String> {
    let mut rng = SamplerRng::new(9);
    for i in 0..instances {
        let n = rng.random_range(3..=10);
        let k = rng.random_range(1..=3.min(n));
        let x = gaussian(&mut rng, n, 3);
        let labels = random_labels(&mut rng, n, k.max(2));
        let gamma = rng.random_range(0.0..2.0);
        let b = Batch::new(x.clone(), labels.clone()).map_err(|e| e.to_string())?;
        let got = loss_augmented_inference(&b, gamma, k, InferenceMode::Exhaustive).map_err(|e| e.to_string())?;
        let want = brute_augmented_max(&x, &labels, gamma, k);
        if (got.objective - want).abs() >= 1e-9 {
            return Err(format!("instance {i}: objective {} vs brute force {want}", got.objective));
        }
    }
    Ok(format!("{instances} instances with N <= 10 match"))
}

/// On well separated clusters (spread/sigma = 20) greedy finds the exhaustive
/// clustering, greedy with swaps the exact medoid set, and the structured
/// clustering loss vanishes.
pub fn greedy_separated(instances: usize) -> Result<String, String> {
    let mut rng = SamplerRng::new(31);
    for i in 0..instances {
        let classes = rng.random_range(2..=3);
        let b = clustered(&mut rng, classes, 10 / classes, 4, 20.0, 1.0);
        for gamma in [0.5, 1.0] {
            let run = |mode| loss_augmented_inference(&b, gamma, classes, mode).map_err(|e| e.to_string());
            let (g, e, gs) =
                (run(InferenceMode::Greedy)?, run(InferenceMode::Exhaustive)?, run(InferenceMode::GreedyWithSwaps)?);
            let part = |s| assign_to_facilities(&b, s).map(|p| p.canonicalize()).map_err(|e| e.to_string());
            if part(&g.set)? != part(&e.set)? {
                return Err(format!("instance {i} gamma {gamma}: greedy clustering differs from exhaustive"));
            }
            if gs.set != e.set {
                return Err(format!("instance {i} gamma {gamma}: greedy with swaps misses the exhaustive set"));
            }
            let params = StructClustParams { gamma, normalize: false, ..Default::default() };
            let loss = struct_clust_loss(&b, &params).map_err(|e| e.to_string())?.value;
            if loss != 0.0 {
                return Err(format!("instance {i} gamma {gamma}: structured clustering loss {loss}"));
            }
        }
    }
    Ok(format!("{instances} instances, gamma in {{0.5, 1}}"))
}

// ----------------------------------------------------------------- sampler

/// Distance-weighted sampling against clipped inverse-density weights
/// computed directly from the density formula, Pearson chi-square.
pub fn dw_chi_square(configs: usize, draws: usize) -> Result<String, String> {
    let mut rng = SamplerRng::new(404);
    let mut min_p = 1.0f64;
    for config in 0..configs {
        let dim = rng.random_range(3..=16);
        let n = rng.random_range(4..=10);
        let raw = gaussian(&mut rng, n, dim);
        let norms: Vec<f64> = raw.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let x = Array2::from_shape_fn((n, dim), |(i, j)| raw[[i, j]] / norms[i]);
        let mut labels = vec![1; n];
        labels[0] = 0;
        labels[1] = 0;
        let b = Batch::new(x.clone(), labels).map_err(|e| e.to_string())?;
        let dist = pairwise_distances(&b, Metric::Euclidean).map_err(|e| e.to_string())?;
        let clip = DwClip { min: 0.0, max: 50.0 };
        let negs: Vec<usize> = (2..n).collect();
        let q_inv: Vec<f64> = negs
            .iter()
            .map(|&j| {
                let d = euclid(&x, 0, j);
                1.0 / (d.powi(dim as i32 - 2) * (1.0 - d * d / 4.0).powf((dim as f64 - 3.0) / 2.0))
            })
            .collect();
        let floor = q_inv.iter().copied().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = q_inv.iter().map(|v| (v / floor).clamp(clip.min, clip.max)).collect();
        let total: f64 = w.iter().sum();
        let probs: Vec<f64> = w.iter().map(|v| v / total).collect();
        let lib_d: Vec<f64> = negs.iter().map(|&j| dist.get(0, j)).collect();
        let lib = inverse_density_probabilities(&lib_d, dim, clip)
            .ok_or_else(|| format!("config {config}: no probabilities for dim {dim}"))?;
        if probs.iter().zip(&lib).any(|(a, b)| (a - b).abs() >= 1e-9) {
            return Err(format!("config {config}: probabilities differ from the density formula"));
        }
        let mut counts = vec![0usize; negs.len()];
        for _ in 0..draws {
            let k = distance_weighted_sample(&b, &dist, 0, &mut rng, clip).map_err(|e| e.to_string())?.index;
            counts[k - 2] += 1;
        }
        let expected = |p: f64| draws as f64 * p;
        let stat: f64 = counts.iter().zip(&probs).map(|(&o, &p)| (o as f64 - expected(p)).powi(2) / expected(p)).sum();
        let chi = ChiSquared::new((negs.len() - 1) as f64).map_err(|e| e.to_string())?;
        let p = 1.0 - chi.cdf(stat);
        if p <= 0.01 {
            return Err(format!("config {config}: chi-square {stat:.2}, p = {p:.4}"));
        }
        min_p = min_p.min(p);
    }
    Ok(format!("{configs} configurations x {draws} draws, min p = {min_p:.3}"))
}
