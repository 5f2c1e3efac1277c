//! End-to-end optimization: seeded epoch permutations, minibatches with
//! negative sampling and in-batch KB constraints, AdaGrad ascent, and
//! exponential annealing of the entropy weight.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{gather_batch_constraints, ConstraintConfig, ConstraintPair};
use crate::datamodel::{Corpus, EntityLink};
use crate::dvae::{
    objective, objective_and_gradients, Batch, BatchConstraint, HyperParams, ModelParams, ObjectiveParts,
    RegTarget, SideNegatives,
};
use crate::error::{Error, Result};
use crate::kbembed::KBEmbedding;
use crate::rng::{epoch_stream, stream_rng, INIT_STREAM};

pub const ADAGRAD_EPS: f64 = 1e-8;

/// `α_t = α₀ · exp(−η t)` with `η = ln(α₀ / α_T) / T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub alpha0: f64,
    pub alpha_final: f64,
    pub total_steps: u64,
}

impl AnnealSchedule {
    pub fn new(alpha0: f64, alpha_final: f64, total_steps: u64) -> Result<Self> {
        if !(alpha_final > 0.0 && alpha0 >= alpha_final) {
            return Err(Error::InvalidConfig(format!(
                "need alpha0 >= alpha_final > 0, got {alpha0} and {alpha_final}"
            )));
        }
        Ok(AnnealSchedule {
            alpha0,
            alpha_final,
            total_steps,
        })
    }

    pub fn rate(&self) -> f64 {
        if self.total_steps == 0 {
            0.0
        } else {
            (self.alpha0 / self.alpha_final).ln() / self.total_steps as f64
        }
    }

    pub fn alpha_at(&self, t: u64) -> Result<f64> {
        if t > self.total_steps {
            return Err(Error::StepOutOfRange {
                t,
                total: self.total_steps,
            });
        }
        if t == self.total_steps && t > 0 {
            return Ok(self.alpha_final);
        }
        Ok(self.alpha0 * (-self.rate() * t as f64).exp())
    }
}

/// Per-coordinate AdaGrad for gradient ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGrad {
    pub lr0: f64,
    pub accumulators: ModelParams,
}

impl AdaGrad {
    pub fn new(params: &ModelParams, lr0: f64) -> Self {
        AdaGrad {
            lr0,
            accumulators: params.zeros_like(),
        }
    }

    /// `acc += g²; θ += lr0 · g / (√acc + ε)` on every trainable block.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        let trainable = params.trainable();
        let lr0 = self.lr0;
        for (block, ((p, g), acc)) in params
            .blocks_mut()
            .into_iter()
            .zip(grads.blocks())
            .zip(self.accumulators.blocks_mut())
            .enumerate()
        {
            if !trainable[block] {
                continue;
            }
            for ((pv, &gv), av) in p.iter_mut().zip(g).zip(acc.iter_mut()) {
                if gv == 0.0 {
                    continue;
                }
                *av += gv * gv;
                let update = lr0 * gv / (av.sqrt() + ADAGRAD_EPS);
                if !update.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "AdaGrad update in block {} (grad {gv})",
                        crate::dvae::PARAM_BLOCKS[block]
                    )));
                }
                *pv += update;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Variant {
    /// Plain DVAE, no KB.
    Dvae,
    /// DVAE with KB entity vectors appended to the encoder input.
    DvaeE,
    /// DVAE with decoder entities initialized from the KB, trainable.
    DvaeD,
    /// DVAE with KB constraints, random trainable decoder entities.
    Regdvae,
    /// KB constraints plus frozen KB entity vectors in the decoder.
    RegdvaeD,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Dvae,
        Variant::DvaeE,
        Variant::DvaeD,
        Variant::Regdvae,
        Variant::RegdvaeD,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Dvae => "dvae",
            Variant::DvaeE => "dvae_e",
            Variant::DvaeD => "dvae_d",
            Variant::Regdvae => "regdvae",
            Variant::RegdvaeD => "regdvae_d",
        }
    }

    pub fn needs_kb(&self) -> bool {
        !matches!(self, Variant::Dvae)
    }

    pub fn uses_constraints(&self) -> bool {
        matches!(self, Variant::Regdvae | Variant::RegdvaeD)
    }

    pub fn kb_decoder_entities(&self) -> bool {
        matches!(self, Variant::DvaeD | Variant::RegdvaeD)
    }

    pub fn dense_encoder(&self) -> bool {
        matches!(self, Variant::DvaeE)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub seed: u64,
    pub variant: Variant,
    pub hyper: HyperParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 80,
            batch_size: 100,
            lr0: 0.5,
            seed: 0,
            variant: Variant::Regdvae,
            hyper: HyperParams::default(),
        }
    }
}

impl TrainConfig {
    /// β actually applied: non-constraint variants train with β = 0.
    pub fn effective_beta(&self) -> f64 {
        if self.variant.uses_constraints() {
            self.hyper.beta
        } else {
            0.0
        }
    }

    pub fn constraint_config(&self) -> ConstraintConfig {
        ConstraintConfig::symmetric(self.hyper.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.effective_beta() > 0.0 && self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be >= 2 when beta > 0".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr0 = {} must be > 0", self.lr0)));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_sentences: usize) -> u64 {
        n_sentences.div_ceil(self.batch_size) as u64
    }

    pub fn total_steps(&self, n_sentences: usize) -> u64 {
        self.epochs as u64 * self.steps_per_epoch(n_sentences)
    }
}

/// Trained KB embedding plus the corpus-entity links into it.
#[derive(Debug, Clone)]
pub struct KbContext<'a> {
    pub embedding: &'a KBEmbedding,
    pub link: EntityLink,
}

impl<'a> KbContext<'a> {
    /// Links every corpus entity by exact normalized name; errors on the
    /// first entity without a KB counterpart.
    pub fn new(
        corpus: &Corpus,
        embedding: &'a KBEmbedding,
        overrides: &HashMap<String, String>,
    ) -> Result<Self> {
        let link = EntityLink::resolve(&corpus.entity_vocab, &embedding.entity_vocab, overrides);
        link.require_total(&corpus.entity_vocab)?;
        Ok(KbContext { embedding, link })
    }

    fn kb_vector(&self, text_entity: usize) -> Result<&[f64]> {
        let id = self
            .link
            .get(text_entity)
            .ok_or(Error::UnknownId { kind: "linked entity", id: text_entity })?;
        self.embedding.entity(id)
    }
}

/// Dense encoder input `[e_head, e_tail]` from KB vectors, one row per
/// sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFeatures {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl DenseFeatures {
    pub fn from_kb(corpus: &Corpus, kb: &KbContext<'_>) -> Result<Self> {
        let dim = 2 * kb.embedding.dim;
        let mut values = Vec::with_capacity(corpus.len() * dim);
        for s in &corpus.sentences {
            values.extend_from_slice(kb.kb_vector(s.head)?);
            values.extend_from_slice(kb.kb_vector(s.tail)?);
        }
        Ok(DenseFeatures { dim, values })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Optimizer state at an epoch boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub optimizer: AdaGrad,
    /// Number of completed epochs.
    pub epoch: usize,
    /// Number of completed steps.
    pub step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub objective: f64,
    pub recon: f64,
    pub entropy_term: f64,
    pub constraint_term: f64,
    pub l2_term: f64,
    pub alpha: f64,
    pub n_constraints: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub state: TrainState,
    pub log: Vec<EpochLog>,
    pub total_steps: u64,
    /// Number of `alpha_at` evaluations performed by this call.
    pub alpha_evaluations: u64,
}

/// Callbacks fired during training; all default to no-ops.
pub trait TrainHooks {
    fn on_epoch_end(&mut self, _state: &TrainState, _log: &EpochLog) -> Result<()> {
        Ok(())
    }

    fn on_batch_constraints(&mut self, _epoch: usize, _batch: usize, _pairs: &[ConstraintPair]) -> Result<()> {
        Ok(())
    }
}

pub struct NoHooks;

impl TrainHooks for NoHooks {}

/// Initial parameters for a variant: zero encoder, random decoder, KB
/// entity vectors where the variant asks for them.
pub fn init_params(corpus: &Corpus, kb: Option<&KbContext<'_>>, cfg: &TrainConfig) -> Result<ModelParams> {
    let variant = cfg.variant;
    let kb = match (variant.needs_kb(), kb) {
        (true, None) => {
            return Err(Error::InvalidConfig(format!("variant {variant} requires a KB embedding")))
        }
        (true, Some(kb)) => Some(kb),
        (false, _) => None,
    };
    let mut dim = cfg.hyper.dim;
    if variant.kb_decoder_entities() {
        dim = kb.expect("checked").embedding.dim;
    }
    let dense_dim = if variant.dense_encoder() { 2 * kb.expect("checked").embedding.dim } else { 0 };
    let mut rng = stream_rng(cfg.seed, INIT_STREAM);
    let mut params = ModelParams::init(
        cfg.hyper.n_clusters,
        corpus.feature_vocab.len(),
        dense_dim,
        corpus.entity_vocab.len(),
        dim,
        &mut rng,
    );
    if variant.kb_decoder_entities() {
        let kb = kb.expect("checked");
        params.decoder.set_entities_from(|e| kb.kb_vector(e).map(<[f64]>::to_vec))?;
        params.decoder.frozen_entities = variant == Variant::RegdvaeD;
    }
    Ok(params)
}

pub fn train(corpus: &Corpus, kb: Option<&KbContext<'_>>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(corpus, kb, cfg, None, None, &mut NoHooks)
}

/// Full training entry point. `resume` continues from a saved state;
/// `stop_after` ends after that many completed epochs.
pub fn train_with(
    corpus: &Corpus,
    kb: Option<&KbContext<'_>>,
    cfg: &TrainConfig,
    resume: Option<TrainState>,
    stop_after: Option<usize>,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n_entities = corpus.entity_vocab.len();
    if n_entities < 2 {
        return Err(Error::InvalidConfig("negative sampling needs at least two entities".into()));
    }
    let variant = cfg.variant;
    if variant.needs_kb() && kb.is_none() {
        return Err(Error::InvalidConfig(format!("variant {variant} requires a KB embedding")));
    }
    let beta = cfg.effective_beta();
    let mut hyper = cfg.hyper.clone();
    hyper.beta = beta;
    let constraint_cfg = cfg.constraint_config();
    constraint_cfg.validate()?;

    let dense = if variant.dense_encoder() {
        Some(DenseFeatures::from_kb(corpus, kb.expect("checked"))?)
    } else {
        None
    };

    let mut state = match resume {
        Some(state) => state,
        None => {
            let params = init_params(corpus, kb, cfg)?;
            let optimizer = AdaGrad::new(&params, cfg.lr0);
            TrainState {
                params,
                optimizer,
                epoch: 0,
                step: 0,
            }
        }
    };

    let n = corpus.len();
    let total_steps = cfg.total_steps(n);
    let schedule = AnnealSchedule::new(hyper.alpha0, hyper.alpha_final, total_steps)?;
    let last_epoch = stop_after.unwrap_or(cfg.epochs).min(cfg.epochs);
    let mut log = Vec::new();
    let mut alpha_evaluations = 0u64;
    let mut order: Vec<usize> = (0..n).collect();

    while state.epoch < last_epoch {
        let epoch = state.epoch;
        let started = Instant::now();
        let mut rng = stream_rng(cfg.seed, epoch_stream(epoch));
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut sums = ObjectiveParts::default();
        let mut n_constraints = 0usize;
        let mut alpha = schedule.alpha0;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            alpha = schedule.alpha_at(state.step)?;
            alpha_evaluations += 1;

            let negatives: Vec<SideNegatives> = chunk
                .iter()
                .map(|&i| {
                    let s = &corpus.sentences[i];
                    SideNegatives {
                        head: sample_negatives(&mut rng, n_entities, s.head, hyper.n_negatives),
                        tail: sample_negatives(&mut rng, n_entities, s.tail, hyper.n_negatives),
                    }
                })
                .collect();

            let mut constraints = Vec::new();
            if beta > 0.0 && chunk.len() >= 2 {
                let kb = kb.expect("checked");
                let members = constraint_members(corpus, chunk, hyper.reg_target);
                let gathered =
                    gather_batch_constraints(&members, &corpus.sentences, kb.embedding, &kb.link, &constraint_cfg)?;
                hooks.on_batch_constraints(epoch, batch_no, &gathered.pairs)?;
                let position: HashMap<usize, usize> = chunk.iter().enumerate().map(|(p, &i)| (i, p)).collect();
                constraints = gathered
                    .pairs
                    .iter()
                    .map(|c| {
                        let (a, b) = (position[&c.i], position[&c.j]);
                        BatchConstraint {
                            a: a.min(b),
                            b: a.max(b),
                            score: c.score,
                        }
                    })
                    .collect();
                n_constraints += constraints.len();
            }

            let batch = Batch {
                sentences: chunk.iter().map(|&i| &corpus.sentences[i]).collect(),
                dense: dense.as_ref().map(|d| chunk.iter().map(|&i| d.row(i)).collect()),
                negatives,
                constraints,
            };
            let (parts, grads) = objective_and_gradients(&state.params, &batch, &hyper, alpha).map_err(|e| {
                Error::NonFinite(format!(
                    "{e} at epoch {epoch}, step {}; last completed epoch {}",
                    state.step, state.epoch
                ))
            })?;
            state.optimizer.step(&mut state.params, &grads)?;
            state.step += 1;
            sums.accumulate(&parts);
        }
        state.epoch += 1;

        let entry = EpochLog {
            epoch: state.epoch,
            objective: sums.total,
            recon: sums.recon,
            entropy_term: sums.entropy_term,
            constraint_term: sums.constraint_term,
            l2_term: sums.l2_term,
            alpha,
            n_constraints,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        log::debug!(
            "epoch {} objective {:.4} recon {:.4} constraints {} ({:.4})",
            entry.epoch,
            entry.objective,
            entry.recon,
            entry.n_constraints,
            entry.constraint_term
        );
        hooks.on_epoch_end(&state, &entry)?;
        log.push(entry);
    }

    Ok(TrainOutcome {
        params: state.params.clone(),
        state,
        log,
        total_steps,
        alpha_evaluations,
    })
}

/// Batch members the constraints range over: every sentence for encoder
/// regularization, the first sentence of each distinct entity pair for
/// decoder regularization.
fn constraint_members(corpus: &Corpus, chunk: &[usize], target: RegTarget) -> Vec<usize> {
    match target {
        RegTarget::Encoder => chunk.to_vec(),
        RegTarget::Decoder => {
            let mut seen = std::collections::HashSet::new();
            chunk
                .iter()
                .copied()
                .filter(|&i| {
                    let s = &corpus.sentences[i];
                    seen.insert((s.head, s.tail))
                })
                .collect()
        }
    }
}

/// Uniform draws from `0..n_entities`, never equal to `gold`.
pub fn sample_negatives<R: Rng>(rng: &mut R, n_entities: usize, gold: usize, count: usize) -> Vec<usize> {
    (0..count)
        .map(|_| loop {
            let e = rng.gen_range(0..n_entities);
            if e != gold {
                break e;
            }
        })
        .collect()
}

/// Objective over the whole corpus with negatives drawn once from
/// `negatives_seed`, no constraints and no L2: a fixed yardstick for
/// comparing parameters across epochs.
pub fn corpus_bound(
    params: &ModelParams,
    corpus: &Corpus,
    dense: Option<&DenseFeatures>,
    hyper: &HyperParams,
    alpha: f64,
    negatives_seed: u64,
) -> Result<ObjectiveParts> {
    let mut rng = stream_rng(negatives_seed, INIT_STREAM);
    let n_entities = corpus.entity_vocab.len();
    let negatives = corpus
        .sentences
        .iter()
        .map(|s| SideNegatives {
            head: sample_negatives(&mut rng, n_entities, s.head, hyper.n_negatives),
            tail: sample_negatives(&mut rng, n_entities, s.tail, hyper.n_negatives),
        })
        .collect();
    let batch = Batch {
        sentences: corpus.sentences.iter().collect(),
        dense: dense.map(|d| (0..corpus.len()).map(|i| d.row(i)).collect()),
        negatives,
        constraints: vec![],
    };
    let mut h = hyper.clone();
    h.beta = 0.0;
    h.lambda = 0.0;
    objective(params, &batch, &h, alpha)
}
