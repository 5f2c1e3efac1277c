#![allow(dead_code)]

pub mod reference;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use reldisc::datamodel::Sentence;
use reldisc::dvae::{objective, Batch, BatchConstraint, Distance, HyperParams, ModelParams, RegTarget, SideNegatives};

/// A small self-contained objective instance with owned data.
pub struct Instance {
    pub params: ModelParams,
    pub sentences: Vec<Sentence>,
    pub dense: Option<Vec<Vec<f64>>>,
    pub negatives: Vec<SideNegatives>,
    pub constraints: Vec<BatchConstraint>,
    pub hyper: HyperParams,
    pub alpha: f64,
}

impl Instance {
    pub fn batch(&self) -> Batch<'_> {
        Batch {
            sentences: self.sentences.iter().collect(),
            dense: self.dense.as_ref().map(|d| d.iter().map(Vec::as_slice).collect()),
            negatives: self.negatives.clone(),
            constraints: self.constraints.clone(),
        }
    }
}

pub struct InstanceSpec {
    pub n_clusters: usize,
    pub dim: usize,
    pub n_sentences: usize,
    pub n_negatives: usize,
    pub n_entities: usize,
    pub n_features: usize,
    pub dense_dim: usize,
    pub beta: f64,
    pub lambda: f64,
    pub distance: Distance,
    pub reg_target: RegTarget,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        InstanceSpec {
            n_clusters: 3,
            dim: 4,
            n_sentences: 3,
            n_negatives: 5,
            n_entities: 7,
            n_features: 8,
            dense_dim: 0,
            beta: 0.6,
            lambda: 1e-3,
            distance: Distance::Euclidean,
            reg_target: RegTarget::Encoder,
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random instance with distinct feature sets and distinct entity pairs so
/// that no two posteriors coincide (the Euclidean distance has a kink there).
pub fn random_instance(spec: &InstanceSpec, seed: u64) -> Instance {
    let mut rng = rng(seed);
    let mut params = ModelParams::init(
        spec.n_clusters,
        spec.n_features,
        spec.dense_dim,
        spec.n_entities,
        spec.dim,
        &mut rng,
    );
    for v in params.encoder.weights.iter_mut().chain(params.encoder.dense_weights.iter_mut()) {
        *v = rng.gen_range(-1.0..1.0);
    }
    for v in params
        .decoder
        .bilinear
        .iter_mut()
        .chain(params.decoder.relation_vecs.iter_mut())
        .chain(params.decoder.entities.iter_mut())
    {
        *v = rng.gen_range(-0.6..0.6);
    }

    let mut pairs: Vec<(usize, usize)> = (0..spec.n_entities)
        .flat_map(|h| (0..spec.n_entities).filter(move |&t| t != h).map(move |t| (h, t)))
        .collect();
    pairs.shuffle(&mut rng);
    let mut seen_features = std::collections::HashSet::new();
    let mut sentences = Vec::new();
    for (i, &(head, tail)) in pairs.iter().take(spec.n_sentences).enumerate() {
        let features = loop {
            let mut f: Vec<usize> = (0..spec.n_features).filter(|_| rng.gen_bool(0.4)).collect();
            f.dedup();
            if !f.is_empty() && seen_features.insert(f.clone()) {
                break f;
            }
        };
        sentences.push(Sentence {
            id: i as u64,
            head,
            tail,
            features,
            gold_relation: None,
        });
    }
    let dense = (spec.dense_dim > 0).then(|| {
        (0..spec.n_sentences)
            .map(|_| (0..spec.dense_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    });
    let negatives = sentences
        .iter()
        .map(|s| {
            let draw = |gold: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
                (0..spec.n_negatives)
                    .map(|_| loop {
                        let e = rng.gen_range(0..spec.n_entities);
                        if e != gold {
                            break e;
                        }
                    })
                    .collect()
            };
            let head = draw(s.head, &mut rng);
            let tail = draw(s.tail, &mut rng);
            SideNegatives { head, tail }
        })
        .collect();
    let mut constraints = Vec::new();
    if spec.beta > 0.0 {
        for a in 0..spec.n_sentences {
            for b in a + 1..spec.n_sentences {
                let mag = rng.gen_range(0.2..1.0);
                let score = if rng.gen_bool(0.5) { mag } else { -mag };
                constraints.push(BatchConstraint { a, b, score });
            }
        }
    }
    let hyper = HyperParams {
        n_clusters: spec.n_clusters,
        alpha0: 4.0,
        alpha_final: 1e-5,
        beta: spec.beta,
        gamma: 0.9,
        lambda: spec.lambda,
        distance: spec.distance,
        reg_target: spec.reg_target,
        n_negatives: spec.n_negatives,
        dim: spec.dim,
    };
    let alpha = rng.gen_range(0.01..2.0);
    Instance {
        params,
        sentences,
        dense,
        negatives,
        constraints,
        hyper,
        alpha,
    }
}

/// Central finite-difference gradient of the total objective, block by block.
pub fn numeric_gradient(inst: &Instance, h: f64) -> ModelParams {
    let batch = inst.batch();
    let mut grads = inst.params.zeros_like();
    let mut params = inst.params.clone();
    for b in 0..5 {
        for i in 0..params.blocks()[b].len() {
            let orig = params.blocks()[b][i];
            params.blocks_mut()[b][i] = orig + h;
            let plus = objective(&params, &batch, &inst.hyper, inst.alpha).unwrap().total;
            params.blocks_mut()[b][i] = orig - h;
            let minus = objective(&params, &batch, &inst.hyper, inst.alpha).unwrap().total;
            params.blocks_mut()[b][i] = orig;
            grads.blocks_mut()[b][i] = (plus - minus) / (2.0 * h);
        }
    }
    grads
}

/// Relative error with a floor on the denominator so that near-zero
/// components are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-2;

pub fn max_relative_error(a: &ModelParams, b: &ModelParams) -> f64 {
    a.blocks()
        .iter()
        .zip(b.blocks())
        .flat_map(|(x, y)| x.iter().zip(y.iter()))
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
