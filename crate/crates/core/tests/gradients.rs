mod common;

use common::{gaussian, random_batch};
use dmlbench_core::diff::{grad_check, GradCheckReport};
use dmlbench_core::losses::*;
use dmlbench_core::{Batch, Episode, EpisodeClass, PairIndexSet, Params, SamplerRng, Triplet, TripletIndexSet};
use ndarray::{Array1, Array2};
use rand::Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const KINK: f64 = 1e-3;
const SEEDS: usize = 20;

/// Runs `check` on `SEEDS` accepted seeds, skipping draws whose base point
/// sits within `KINK` of a non-smooth point.
fn suite(name: &str, check: impl Fn(u64) -> GradCheckReport) {
    let mut accepted = 0;
    let mut seed = 0u64;
    while accepted < SEEDS {
        assert!(seed < 50 * SEEDS as u64, "{name}: too many seeds near a kink");
        let r = check(seed);
        seed += 1;
        if r.kink_margin < KINK {
            continue;
        }
        assert!(r.passed, "{name} seed {}: rel error {} at {:?}", seed - 1, r.max_rel_error, r.worst);
        accepted += 1;
    }
}

fn no_params() -> Params<f64> {
    Params::new()
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

fn npairs_layout(classes: usize) -> Vec<(usize, usize)> {
    (0..classes).map(|c| (2 * c, 2 * c + 1)).collect()
}

#[test]
fn triplet() {
    suite("triplet", |seed| {
        let mut rng = SamplerRng::new(seed);
        let b = random_batch(&mut rng, 3, 4, 6);
        let t = random_triplets(&mut rng, &b, 10);
        let cfg = TripletConfig { margin: 1.0, ..Default::default() };
        grad_check(|b, _| triplet_loss(b, &t, &cfg), &b, &no_params(), STEP, TOL).unwrap()
    });
}

#[test]
fn lifted() {
    suite("lifted", |seed| {
        let b = random_batch(&mut SamplerRng::new(seed), 3, 3, 5);
        let pairs = PairIndexSet::all_pairs(b.labels());
        let cfg = LiftedConfig::default();
        grad_check(|b, _| lifted_struct_loss(b, &pairs, &cfg), &b, &no_params(), STEP, TOL).unwrap()
    });
}

#[test]
fn npairs() {
    suite("npairs", |seed| {
        let b = random_batch(&mut SamplerRng::new(seed), 5, 2, 6);
        let layout = npairs_layout(5);
        grad_check(|b, _| npairs_loss(b, &layout, &NpairsConfig::default()), &b, &no_params(), STEP, TOL).unwrap()
    });
}

#[test]
fn angular() {
    suite("angular", |seed| {
        let b = random_batch(&mut SamplerRng::new(seed), 4, 2, 5);
        let layout = npairs_layout(4);
        let p = AngularParams { combine_with_npairs: Some(2.0), ..Default::default() };
        grad_check(|b, _| angular_loss(b, &layout, &p), &b, &no_params(), STEP, TOL).unwrap()
    });
}

#[test]
fn margin() {
    suite("margin", |seed| {
        let mut rng = SamplerRng::new(seed);
        let b = random_batch(&mut rng, 3, 4, 6);
        let pairs = PairIndexSet::all_pairs(b.labels());
        let beta: Array1<f64> = Array1::from_shape_fn(3, |_| rng.random_range(0.6..1.6));
        let mut params = Params::new();
        params.insert("beta".into(), beta.into_dyn());
        let eval = |b: &Batch, p: &Params<f64>| {
            let mut mp = MarginLossParams::new(3);
            mp.beta = p["beta"].clone().into_dimensionality().unwrap();
            margin_loss(b, &pairs, &mp)
        };
        grad_check(eval, &b, &params, STEP, TOL).unwrap()
    });
}

#[test]
fn ranked_list() {
    suite("ranked-list", |seed| {
        let b = random_batch(&mut SamplerRng::new(seed), 3, 4, 4);
        grad_check(|b, _| ranked_list_loss(b, &RankedListParams::default()), &b, &no_params(), STEP, TOL).unwrap()
    });
}

#[test]
fn struct_clust() {
    suite("struct-clust", |seed| {
        let b = random_batch(&mut SamplerRng::new(seed), 3, 4, 4);
        grad_check(|b, _| struct_clust_loss(b, &StructClustParams::default()), &b, &no_params(), STEP, TOL).unwrap()
    });
}

#[test]
fn prototypical() {
    suite("prototypical", |seed| {
        let b = random_batch(&mut SamplerRng::new(seed), 3, 4, 5);
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
        grad_check(|b, _| prototypical_loss(b, &episodes), &b, &no_params(), STEP, TOL).unwrap()
    });
}

fn proxy_case(seed: u64) -> (Batch, Params<f64>) {
    let mut rng = SamplerRng::new(seed);
    let b = random_batch(&mut rng, 4, 3, 6);
    let mut params = Params::new();
    params.insert("proxies".into(), gaussian(&mut rng, 5, 6).into_dyn());
    (b, params)
}

fn bank(p: &Params<f64>, scale: f64, normalize: bool) -> ProxyBank<f64> {
    let proxies: Array2<f64> = p["proxies"].clone().into_dimensionality().unwrap();
    ProxyBank { scale, normalize, ..ProxyBank::from_proxies(proxies) }
}

#[test]
fn proxy_nca() {
    for normalize in [true, false] {
        suite("proxy-nca", |seed| {
            let (b, params) = proxy_case(seed);
            let scale = if normalize { 3.0 } else { 1.0 };
            grad_check(|b, p| proxy_nca_loss(b, &bank(p, scale, normalize), false), &b, &params, STEP, TOL).unwrap()
        });
    }
}

#[test]
fn proxy_triplet() {
    suite("proxy-triplet", |seed| {
        let (b, params) = proxy_case(seed);
        grad_check(|b, p| proxy_triplet_loss(b, &bank(p, 1.0, true), 0.5), &b, &params, STEP, TOL).unwrap()
    });
}

#[test]
fn proxy_softmax() {
    suite("proxy-softmax", |seed| {
        let (b, params) = proxy_case(seed);
        grad_check(|b, p| proxy_softmax_loss(b, &bank(p, 1.0, true), 0.05), &b, &params, STEP, TOL).unwrap()
    });
}

#[test]
fn sign_error_is_detected() {
    let b = random_batch(&mut SamplerRng::new(1), 4, 2, 5);
    let layout = npairs_layout(4);
    let flipped = |b: &Batch, _: &Params<f64>| {
        let mut r = npairs_loss(b, &layout, &NpairsConfig::default())?;
        r.grad_embeddings[[0, 0]] = -r.grad_embeddings[[0, 0]];
        Ok(r)
    };
    assert!(!grad_check(flipped, &b, &no_params(), STEP, TOL).unwrap().passed);
}
