//! Soft must-link / cannot-link constraints between sentences, scored by the
//! cosine of their entity pairs' KB translation vectors
//! (`e_tail − e_head`) and thresholded into a dead zone `[−γ⁻, γ⁺]`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::{EntityLink, Sentence};
use crate::error::{Error, Result};
use crate::kbembed::{latent_relation, KBEmbedding};
use crate::linalg::{dot, l2_norm};

/// Difference vectors shorter than this carry no direction.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintConfig {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
}

impl ConstraintConfig {
    pub fn symmetric(gamma: f64) -> Self {
        ConstraintConfig {
            gamma_plus: gamma,
            gamma_minus: gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("gamma_plus", self.gamma_plus), ("gamma_minus", self.gamma_minus)] {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::InvalidConfig(format!("{name} = {g} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self::symmetric(0.9)
    }
}

/// A materialized constraint: `i < j` are corpus sentence indices, `score`
/// is positive for must-link and negative for cannot-link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintPair {
    pub i: usize,
    pub j: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSimilarity {
    pub cosine: f64,
    /// Set when either translation vector is (numerically) zero; the
    /// cosine is then reported as 0.
    pub degenerate: bool,
}

fn cosine_of(a: &[f64], b: &[f64]) -> PairSimilarity {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
        return PairSimilarity {
            cosine: 0.0,
            degenerate: true,
        };
    }
    PairSimilarity {
        cosine: dot(a, b) / (na * nb),
        degenerate: false,
    }
}

fn sentence_translation(emb: &KBEmbedding, link: &EntityLink, s: &Sentence) -> Result<Vec<f64>> {
    let head = link
        .get(s.head)
        .ok_or(Error::UnknownId { kind: "linked entity", id: s.head })?;
    let tail = link
        .get(s.tail)
        .ok_or(Error::UnknownId { kind: "linked entity", id: s.tail })?;
    latent_relation(emb, head, tail)
}

pub fn pair_similarity(
    emb: &KBEmbedding,
    link: &EntityLink,
    s1: &Sentence,
    s2: &Sentence,
) -> Result<PairSimilarity> {
    let a = sentence_translation(emb, link, s1)?;
    let b = sentence_translation(emb, link, s2)?;
    Ok(cosine_of(&a, &b))
}

/// Keeps `sim` outside the dead zone, zero inside it.
pub fn score_constraint(sim: f64, cfg: &ConstraintConfig) -> f64 {
    if sim > cfg.gamma_plus || sim < -cfg.gamma_minus {
        sim
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchConstraints {
    pub pairs: Vec<ConstraintPair>,
    /// Number of unordered pairs examined.
    pub evaluated: usize,
    pub degenerate: usize,
}

/// Scores every unordered pair of the batch (indices into `sentences`) and
/// keeps the ones with a nonzero thresholded score, in batch order.
pub fn gather_batch_constraints(
    batch: &[usize],
    sentences: &[Sentence],
    emb: &KBEmbedding,
    link: &EntityLink,
    cfg: &ConstraintConfig,
) -> Result<BatchConstraints> {
    let translations = batch
        .iter()
        .map(|&i| {
            let s = sentences
                .get(i)
                .ok_or(Error::UnknownId { kind: "sentence", id: i })?;
            sentence_translation(emb, link, s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = BatchConstraints::default();
    for a in 0..batch.len() {
        for b in a + 1..batch.len() {
            out.evaluated += 1;
            let sim = cosine_of(&translations[a], &translations[b]);
            out.degenerate += usize::from(sim.degenerate);
            let score = score_constraint(sim.cosine, cfg);
            if score != 0.0 {
                let (i, j) = (batch[a].min(batch[b]), batch[a].max(batch[b]));
                out.pairs.push(ConstraintPair { i, j, score });
            }
        }
    }
    Ok(out)
}

pub fn constraints_to_tsv(pairs: &[ConstraintPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let _ = writeln!(out, "{}\t{}\t{}", p.i, p.j, p.score);
    }
    out
}

pub fn dump_constraints(pairs: &[ConstraintPair], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, constraints_to_tsv(pairs)).map_err(|e| Error::io(path, e))
}
