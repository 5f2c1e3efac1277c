//! Translation-based KB embeddings (TransE): a gold triplet `(h, r, t)`
//! should satisfy `e_h + r ≈ e_t`, trained with a margin ranking loss against
//! uniformly corrupted heads or tails.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{KBStore, KBTriplet, Vocabulary};
use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm, normalize_in_place};
use crate::rng::{epoch_stream, stream_rng, INIT_STREAM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransEConfig {
    pub dim: usize,
    pub epochs: usize,
    pub margin: f64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TransEConfig {
    fn default() -> Self {
        TransEConfig {
            dim: 50,
            epochs: 1000,
            margin: 1.0,
            lr: 0.01,
            seed: 0,
        }
    }
}

/// Entity and relation vectors, row-major `n × dim`, with the KB
/// vocabularies they are indexed by.
#[derive(Debug, Clone, PartialEq)]
pub struct KBEmbedding {
    pub dim: usize,
    pub entity_vocab: Vocabulary,
    pub relation_vocab: Vocabulary,
    pub entity_vecs: Vec<f64>,
    pub relation_vecs: Vec<f64>,
}

impl KBEmbedding {
    pub fn n_entities(&self) -> usize {
        self.entity_vocab.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_vocab.len()
    }

    pub fn entity(&self, id: usize) -> Result<&[f64]> {
        if id >= self.n_entities() {
            return Err(Error::UnknownId { kind: "KB entity", id });
        }
        Ok(&self.entity_vecs[id * self.dim..(id + 1) * self.dim])
    }

    pub fn relation(&self, id: usize) -> Result<&[f64]> {
        if id >= self.n_relations() {
            return Err(Error::UnknownId { kind: "KB relation", id });
        }
        Ok(&self.relation_vecs[id * self.dim..(id + 1) * self.dim])
    }

    fn entity_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.entity_vecs[id * self.dim..(id + 1) * self.dim]
    }

    fn relation_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.relation_vecs[id * self.dim..(id + 1) * self.dim]
    }

    /// Uniform initialization in `[-6/sqrt(dim), 6/sqrt(dim)]`.
    pub fn init(kb: &KBStore, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be >= 1".into()));
        }
        let bound = 6.0 / (dim as f64).sqrt();
        let mut rng = stream_rng(seed, INIT_STREAM);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n * dim).map(|_| rng.gen_range(-bound..=bound)).collect()
        };
        let entity_vecs = draw(kb.entity_vocab.len());
        let relation_vecs = draw(kb.relation_vocab.len());
        Ok(KBEmbedding {
            dim,
            entity_vocab: kb.entity_vocab.clone(),
            relation_vocab: kb.relation_vocab.clone(),
            entity_vecs,
            relation_vecs,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("dim {}\n", self.dim);
        let mut section = |label: &str, vocab: &Vocabulary, vecs: &[f64]| {
            let _ = writeln!(out, "{label} {}", vocab.len());
            for (id, name) in vocab.iter() {
                out.push_str(name);
                for v in &vecs[id * self.dim..(id + 1) * self.dim] {
                    let _ = write!(out, "\t{v}");
                }
                out.push('\n');
            }
        };
        section("entities", &self.entity_vocab, &self.entity_vecs);
        section("relations", &self.relation_vocab, &self.relation_vecs);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let header = |lines: &mut dyn Iterator<Item = (usize, &str)>, key: &str| -> Result<usize> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| Error::parse(source, 0, format!("missing `{key}` header")))?;
            line.strip_prefix(key)
                .and_then(|rest| rest.trim().parse().ok())
                .ok_or_else(|| Error::parse(source, no, format!("expected `{key} N`")))
        };
        let dim = header(&mut lines, "dim")?;
        if dim == 0 {
            return Err(Error::parse(source, 1, "dim must be >= 1"));
        }
        let read_block = |lines: &mut dyn Iterator<Item = (usize, &str)>,
                              key: &str|
         -> Result<(Vocabulary, Vec<f64>)> {
            let n = header(lines, key)?;
            let mut vocab = Vocabulary::new();
            let mut vecs = Vec::with_capacity(n * dim);
            for _ in 0..n {
                let (no, line) = lines
                    .next()
                    .ok_or_else(|| Error::parse(source, 0, format!("truncated `{key}` block")))?;
                let mut fields = line.split('\t');
                let name = fields.next().unwrap_or_default();
                let values: Vec<f64> = fields
                    .map(|f| f.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(source, no, e.to_string()))?;
                if values.len() != dim || values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::parse(
                        source,
                        no,
                        format!("expected {dim} finite values, found {}", values.len()),
                    ));
                }
                if vocab.id_of(name).is_some() {
                    return Err(Error::parse(source, no, format!("duplicate name `{name}`")));
                }
                vocab.get_or_insert(name);
                vecs.extend(values);
            }
            Ok((vocab, vecs))
        };
        let (entity_vocab, entity_vecs) = read_block(&mut lines, "entities")?;
        let (relation_vocab, relation_vecs) = read_block(&mut lines, "relations")?;
        Ok(KBEmbedding {
            dim,
            entity_vocab,
            relation_vocab,
            entity_vecs,
            relation_vecs,
        })
    }
}

/// `‖e_head + r − e_tail‖₂`; lower is more plausible.
pub fn transe_score(emb: &KBEmbedding, t: &KBTriplet) -> Result<f64> {
    let h = emb.entity(t.head)?;
    let r = emb.relation(t.relation)?;
    let tl = emb.entity(t.tail)?;
    Ok(translation_residual(h, r, tl).iter().map(|x| x * x).sum::<f64>().sqrt())
}

fn translation_residual(h: &[f64], r: &[f64], t: &[f64]) -> Vec<f64> {
    h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t).collect()
}

/// `e_tail − e_head`: the translation the pair would need.
pub fn latent_relation(emb: &KBEmbedding, head: usize, tail: usize) -> Result<Vec<f64>> {
    let h = emb.entity(head)?;
    let t = emb.entity(tail)?;
    Ok(t.iter().zip(h).map(|(t, h)| t - h).collect())
}

/// Cosine between a trained relation vector and a pair's latent relation.
pub fn relation_agreement(emb: &KBEmbedding, t: &KBTriplet) -> Result<f64> {
    let latent = latent_relation(emb, t.head, t.tail)?;
    let r = emb.relation(t.relation)?;
    let denom = l2_norm(&latent) * l2_norm(r);
    Ok(if denom < 1e-12 { 0.0 } else { dot(&latent, r) / denom })
}

#[derive(Debug, Clone)]
pub struct TransERun {
    pub embedding: KBEmbedding,
    /// Summed hinge loss per epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
}

pub fn train_transe(kb: &KBStore, cfg: &TransEConfig) -> Result<KBEmbedding> {
    train_transe_logged(kb, cfg).map(|run| run.embedding)
}

pub fn train_transe_logged(kb: &KBStore, cfg: &TransEConfig) -> Result<TransERun> {
    if kb.is_empty() {
        return Err(Error::EmptyKb);
    }
    let n_entities = kb.entity_vocab.len();
    if n_entities < 2 && cfg.epochs > 0 {
        return Err(Error::InvalidConfig("TransE needs at least two entities".into()));
    }
    let mut emb = KBEmbedding::init(kb, cfg.dim, cfg.seed)?;
    let dim = cfg.dim;
    let mut order: Vec<usize> = (0..kb.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut grad = vec![0.0; dim];

    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, epoch_stream(epoch));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &idx in &order {
            let gold = kb.triplets[idx];
            let corrupt_head = rng.gen_bool(0.5);
            let original = if corrupt_head { gold.head } else { gold.tail };
            let replacement = loop {
                let e = rng.gen_range(0..n_entities);
                if e != original {
                    break e;
                }
            };
            let corrupted = if corrupt_head {
                KBTriplet { head: replacement, ..gold }
            } else {
                KBTriplet { tail: replacement, ..gold }
            };

            let gold_res = translation_residual(
                emb.entity(gold.head)?,
                emb.relation(gold.relation)?,
                emb.entity(gold.tail)?,
            );
            let corr_res = translation_residual(
                emb.entity(corrupted.head)?,
                emb.relation(corrupted.relation)?,
                emb.entity(corrupted.tail)?,
            );
            let gold_d = l2_norm(&gold_res);
            let corr_d = l2_norm(&corr_res);
            let loss = cfg.margin + gold_d - corr_d;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "TransE loss at epoch {epoch}, triplet {idx}: gold distance {gold_d}, corrupted distance {corr_d}"
                )));
            }
            if loss <= 0.0 {
                continue;
            }
            epoch_loss += loss;

            // d‖u‖/du = u/‖u‖; the gold distance is pushed down, the corrupted one up.
            for (sign, res, norm, t) in [(1.0, &gold_res, gold_d, gold), (-1.0, &corr_res, corr_d, corrupted)] {
                if norm < 1e-12 {
                    continue;
                }
                for (g, u) in grad.iter_mut().zip(res.iter()) {
                    *g = sign * cfg.lr * u / norm;
                }
                for (p, g) in emb.entity_mut(t.head).iter_mut().zip(&grad) {
                    *p -= g;
                }
                for (p, g) in emb.relation_mut(t.relation).iter_mut().zip(&grad) {
                    *p -= g;
                }
                for (p, g) in emb.entity_mut(t.tail).iter_mut().zip(&grad) {
                    *p += g;
                }
            }
        }
        for e in 0..n_entities {
            normalize_in_place(emb.entity_mut(e));
        }
        epoch_losses.push(epoch_loss);
    }
    Ok(TransERun {
        embedding: emb,
        epoch_losses,
    })
}

/// Fraction of gold triplets that score strictly lower than every
/// head and tail corruption not itself in the KB (filtered ranking).
pub fn filtered_hits_at_1(emb: &KBEmbedding, kb: &KBStore) -> Result<f64> {
    let gold = kb.triplet_set();
    let mut hits = 0usize;
    for t in &kb.triplets {
        let s = transe_score(emb, t)?;
        let mut best = true;
        for e in 0..emb.n_entities() {
            for c in [KBTriplet { head: e, ..*t }, KBTriplet { tail: e, ..*t }] {
                if gold.contains(&c) {
                    continue;
                }
                if transe_score(emb, &c)? <= s {
                    best = false;
                }
            }
        }
        hits += usize::from(best);
    }
    Ok(hits as f64 / kb.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_emb(ents: &[&[f64]], rels: &[&[f64]]) -> KBEmbedding {
        let dim = ents[0].len();
        KBEmbedding {
            dim,
            entity_vocab: Vocabulary::from_items((0..ents.len()).map(|i| format!("e{i}"))),
            relation_vocab: Vocabulary::from_items((0..rels.len()).map(|i| format!("r{i}"))),
            entity_vecs: ents.concat(),
            relation_vecs: rels.concat(),
        }
    }

    #[test]
    fn score_examples() {
        let emb = toy_emb(&[&[1.0, 0.0], &[1.0, 1.0]], &[&[0.0, 1.0]]);
        let t = KBTriplet { head: 0, relation: 0, tail: 1 };
        assert_eq!(transe_score(&emb, &t).unwrap(), 0.0);

        let emb = toy_emb(&[&[0.0, 0.0], &[3.0, 4.0]], &[&[0.0, 0.0]]);
        assert_eq!(transe_score(&emb, &t).unwrap(), 5.0);
    }

    #[test]
    fn unknown_ids_error() {
        let emb = toy_emb(&[&[0.0], &[1.0]], &[&[0.0]]);
        let bad = KBTriplet { head: 5, relation: 0, tail: 1 };
        assert!(matches!(transe_score(&emb, &bad), Err(Error::UnknownId { .. })));
        assert!(latent_relation(&emb, 0, 9).is_err());
    }

    #[test]
    fn latent_relation_examples() {
        let emb = toy_emb(&[&[1.0, 2.0], &[4.0, 6.0]], &[&[0.0, 0.0]]);
        assert_eq!(latent_relation(&emb, 0, 1).unwrap(), vec![3.0, 4.0]);
        assert_eq!(latent_relation(&emb, 1, 1).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_epochs_returns_init() {
        let kb = KBStore::from_name_triplets([("a", "r", "b"), ("b", "r", "c")]);
        let cfg = TransEConfig { dim: 4, epochs: 0, seed: 3, ..Default::default() };
        let emb = train_transe(&kb, &cfg).unwrap();
        assert_eq!(emb, KBEmbedding::init(&kb, 4, 3).unwrap());
        let bound = 6.0 / 2.0;
        assert!(emb.entity_vecs.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn text_round_trip() {
        let kb = KBStore::from_name_triplets([("a", "r", "b"), ("b", "s", "c")]);
        let emb = train_transe(&kb, &TransEConfig { dim: 3, epochs: 5, ..Default::default() }).unwrap();
        let text = emb.to_text();
        assert!(text.starts_with("dim 3\n"));
        assert_eq!(KBEmbedding::parse(&text, "mem").unwrap(), emb);
    }

    #[test]
    fn empty_kb_and_zero_dim_rejected() {
        let kb = KBStore::from_name_triplets(Vec::<(&str, &str, &str)>::new());
        assert!(matches!(train_transe(&kb, &TransEConfig::default()), Err(Error::EmptyKb)));
        let kb = KBStore::from_name_triplets([("a", "r", "b")]);
        let cfg = TransEConfig { dim: 0, ..Default::default() };
        assert!(train_transe(&kb, &cfg).is_err());
    }
}
