//! Synthetic corpora and KBs with known relation clusters.
//!
//! Entities are split into types. Every KB relation links one ordered type
//! pair and every text relation links a different one, so KB and text
//! relation names never overlap, yet TransE trained on the KB still places
//! types where entity-pair differences separate the text relations. Text
//! relations share head and tail types, so a pair's types alone do not
//! decide its relation for the decoder. A sentence carries trigger tokens of
//! its relation, each replaced by a shared noise token with probability
//! `feature_noise`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Corpus, CorpusBuilder, KBStore};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

const STREAM_LAYOUT: u64 = 0;
const STREAM_KB: u64 = 1;
const STREAM_CORPUS: u64 = 2;
const STREAM_OVERLAP: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_relations_text: usize,
    pub n_relations_kb: usize,
    pub n_entities: usize,
    pub sentences_per_relation: usize,
    pub feature_noise: f64,
    pub kb_consistency: f64,
    pub seed: u64,
    /// Number of entity types; defaults to `max(n_relations_kb, 3)`.
    #[serde(default)]
    pub n_types: Option<usize>,
    #[serde(default = "default_triggers")]
    pub triggers_per_relation: usize,
    #[serde(default = "default_tokens")]
    pub tokens_per_sentence: usize,
    #[serde(default = "default_noise_vocab")]
    pub noise_vocab: usize,
    /// Fraction of the tail type each head is linked to in the KB; 1 gives
    /// complete bipartite links between the two types.
    #[serde(default = "default_coverage")]
    pub kb_coverage: f64,
}

fn default_triggers() -> usize {
    6
}
fn default_tokens() -> usize {
    3
}
fn default_noise_vocab() -> usize {
    10
}
fn default_coverage() -> f64 {
    1.0
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_relations_text: 5,
            n_relations_kb: 10,
            n_entities: 200,
            sentences_per_relation: 100,
            feature_noise: 0.3,
            kb_consistency: 0.9,
            seed: 0,
            n_types: None,
            triggers_per_relation: default_triggers(),
            tokens_per_sentence: default_tokens(),
            noise_vocab: default_noise_vocab(),
            kb_coverage: default_coverage(),
        }
    }
}

impl SynthSpec {
    pub fn n_types(&self) -> usize {
        self.n_types.unwrap_or(self.n_relations_kb.max(3))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [
            ("n_relations_text", self.n_relations_text),
            ("n_relations_kb", self.n_relations_kb),
            ("n_entities", self.n_entities),
            ("sentences_per_relation", self.sentences_per_relation),
            ("triggers_per_relation", self.triggers_per_relation),
            ("tokens_per_sentence", self.tokens_per_sentence),
            ("noise_vocab", self.noise_vocab),
        ] {
            if v == 0 {
                return fail(format!("{name} must be >= 1"));
            }
        }
        if !(self.kb_coverage > 0.0 && self.kb_coverage <= 1.0) {
            return fail(format!("kb_coverage = {} outside (0, 1]", self.kb_coverage));
        }
        for (name, v) in [("feature_noise", self.feature_noise), ("kb_consistency", self.kb_consistency)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} = {v} outside [0, 1]"));
            }
        }
        let t = self.n_types();
        if t < 2 {
            return fail("need at least two entity types".into());
        }
        if t * (t - 1) < self.n_relations_kb + self.n_relations_text {
            return fail(format!(
                "{t} types give {} ordered type pairs, fewer than the {} relations requested",
                t * (t - 1),
                self.n_relations_kb + self.n_relations_text
            ));
        }
        let (grid_h, grid_w) = text_grid(self.n_relations_text);
        if grid_h + grid_w > t {
            return fail(format!(
                "{} text relations need {} entity types, only {t} available",
                self.n_relations_text,
                grid_h + grid_w
            ));
        }
        if self.n_entities < 2 * t {
            return fail(format!("n_entities = {} must be at least twice n_types = {t}", self.n_entities));
        }
        Ok(())
    }
}

pub fn entity_name(i: usize) -> String {
    format!("ent_{i}")
}

pub fn text_relation_name(j: usize) -> String {
    format!("text_rel_{j}")
}

pub fn kb_relation_name(k: usize) -> String {
    format!("kb_rel_{k}")
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub corpus: Corpus,
    pub kb: KBStore,
    /// Gold text relation index of every corpus sentence.
    pub gold: Vec<usize>,
    /// Type of every entity, indexed by entity number.
    pub entity_types: Vec<usize>,
    /// Ordered type pair of every text relation.
    pub text_type_pairs: Vec<(usize, usize)>,
    pub kb_type_pairs: Vec<(usize, usize)>,
}

impl SynthData {
    pub fn text_relation_names(&self) -> BTreeSet<String> {
        self.corpus.relation_names()
    }

    pub fn kb_relation_names(&self) -> BTreeSet<String> {
        self.kb.relation_vocab.items().iter().cloned().collect()
    }
}

struct Layout {
    types: Vec<usize>,
    members: Vec<Vec<usize>>,
    kb_pairs: Vec<(usize, usize)>,
    text_pairs: Vec<(usize, usize)>,
}

fn layout(spec: &SynthSpec) -> Layout {
    let t = spec.n_types();
    let mut rng = stream_rng(spec.seed, STREAM_LAYOUT);
    let mut types: Vec<usize> = (0..spec.n_entities).map(|i| i % t).collect();
    types.shuffle(&mut rng);
    let mut members = vec![Vec::new(); t];
    for (e, &ty) in types.iter().enumerate() {
        members[ty].push(e);
    }

    // Text relations fill cells of a grid of head types by tail types, so
    // each head type and each tail type is shared by several relations and
    // the relation is needed to tell which entities go together.
    let (grid_h, grid_w) = text_grid(spec.n_relations_text);
    let mut order: Vec<usize> = (0..t).collect();
    order.shuffle(&mut rng);
    let mut cells: Vec<(usize, usize)> = order[..grid_h]
        .iter()
        .flat_map(|&a| order[grid_h..grid_h + grid_w].iter().map(move |&b| (a, b)))
        .collect();
    cells.shuffle(&mut rng);
    let text_pairs = cells[..spec.n_relations_text].to_vec();

    // KB relation k takes head type k mod t so every type is covered as
    // soon as there are at least t relations.
    let mut used: BTreeSet<(usize, usize)> = text_pairs.iter().copied().collect();
    let mut kb_pairs = Vec::with_capacity(spec.n_relations_kb);
    for k in 0..spec.n_relations_kb {
        let head = k % t;
        let free: Vec<usize> = (0..t).filter(|&b| b != head && !used.contains(&(head, b))).collect();
        let pair = match free.choose(&mut rng) {
            Some(&tail) => (head, tail),
            None => {
                let open: Vec<(usize, usize)> = all_pairs(t).into_iter().filter(|p| !used.contains(p)).collect();
                *open.choose(&mut rng).expect("validated pair budget")
            }
        };
        used.insert(pair);
        kb_pairs.push(pair);
    }
    Layout {
        types,
        members,
        kb_pairs,
        text_pairs,
    }
}

/// Rows and columns of the smallest near-square grid holding `n` cells.
fn text_grid(n: usize) -> (usize, usize) {
    let h = (n as f64).sqrt().ceil() as usize;
    (h, n.div_ceil(h))
}

fn all_pairs(t: usize) -> Vec<(usize, usize)> {
    (0..t)
        .flat_map(|a| (0..t).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect()
}

/// Every head of type `a` linked to a `coverage` share of the entities of
/// type `b`.
fn type_pair_triplets<R: Rng>(
    rng: &mut R,
    layout: &Layout,
    (a, b): (usize, usize),
    coverage: f64,
    relation: &str,
    out: &mut Vec<(String, String, String)>,
) {
    let n_tails = ((coverage * layout.members[b].len() as f64).ceil() as usize).max(1);
    for &h in &layout.members[a] {
        let tails: Vec<usize> = layout.members[b]
            .choose_multiple(rng, n_tails)
            .copied()
            .collect();
        for t in tails {
            out.push((entity_name(h), relation.to_string(), entity_name(t)));
        }
    }
}

fn build_kb(spec: &SynthSpec, layout: &Layout, extra: &[(String, String, String)]) -> KBStore {
    let mut rng = stream_rng(spec.seed, STREAM_KB);
    let mut triplets = Vec::new();
    for (k, &pair) in layout.kb_pairs.iter().enumerate() {
        type_pair_triplets(&mut rng, layout, pair, spec.kb_coverage, &kb_relation_name(k), &mut triplets);
    }
    triplets.extend_from_slice(extra);
    KBStore::from_name_triplets(triplets.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())))
}

fn build_corpus(spec: &SynthSpec, layout: &Layout) -> (Corpus, Vec<usize>) {
    let mut rng = stream_rng(spec.seed, STREAM_CORPUS);
    let mut rows: Vec<(usize, usize, usize, Vec<String>)> = Vec::new();
    for (j, &(a, b)) in layout.text_pairs.iter().enumerate() {
        for _ in 0..spec.sentences_per_relation {
            let (head, tail) = if rng.gen_bool(spec.kb_consistency) {
                (
                    *layout.members[a].choose(&mut rng).expect("non-empty type"),
                    *layout.members[b].choose(&mut rng).expect("non-empty type"),
                )
            } else {
                let h = rng.gen_range(0..spec.n_entities);
                let t = loop {
                    let t = rng.gen_range(0..spec.n_entities);
                    if t != h {
                        break t;
                    }
                };
                (h, t)
            };
            let features = (0..spec.tokens_per_sentence)
                .map(|_| {
                    if rng.gen_bool(spec.feature_noise) {
                        format!("noise_{}", rng.gen_range(0..spec.noise_vocab))
                    } else {
                        format!("trig_{j}_{}", rng.gen_range(0..spec.triggers_per_relation))
                    }
                })
                .collect();
            rows.push((j, head, tail, features));
        }
    }
    rows.shuffle(&mut rng);
    let mut builder = CorpusBuilder::new();
    let mut gold = Vec::with_capacity(rows.len());
    for (id, (j, h, t, features)) in rows.into_iter().enumerate() {
        builder.push(
            id as u64,
            &entity_name(h),
            &entity_name(t),
            Some(&text_relation_name(j)),
            &features,
        );
        gold.push(j);
    }
    (builder.build(), gold)
}

/// Corpus, KB and gold labels for `spec`; bitwise deterministic per seed.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    overlap_variant(spec, 0.0)
}

/// Like [`generate`], but `⌈ratio · n_relations_text⌉` text relations also
/// appear in the KB under their own names with triplets over their type
/// pair. Ratio 0 reproduces [`generate`] exactly.
pub fn overlap_variant(spec: &SynthSpec, overlap_ratio: f64) -> Result<SynthData> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&overlap_ratio) {
        return Err(Error::InvalidConfig(format!("overlap_ratio = {overlap_ratio} outside [0, 1]")));
    }
    let layout = layout(spec);
    let n_overlap = (overlap_ratio * spec.n_relations_text as f64).ceil() as usize;
    let mut extra = Vec::new();
    if n_overlap > 0 {
        let mut rng = stream_rng(spec.seed, STREAM_OVERLAP);
        let mut chosen: Vec<usize> = (0..spec.n_relations_text).collect();
        chosen.shuffle(&mut rng);
        chosen.truncate(n_overlap);
        chosen.sort_unstable();
        for j in chosen {
            type_pair_triplets(
                &mut rng,
                &layout,
                layout.text_pairs[j],
                spec.kb_coverage,
                &text_relation_name(j),
                &mut extra,
            );
        }
    }
    let kb = build_kb(spec, &layout, &extra);
    let (corpus, gold) = build_corpus(spec, &layout);
    Ok(SynthData {
        corpus,
        kb,
        gold,
        entity_types: layout.types,
        text_type_pairs: layout.text_pairs,
        kb_type_pairs: layout.kb_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n_relations_text: 4,
            n_relations_kb: 6,
            n_entities: 60,
            sentences_per_relation: 20,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn sizes_and_balance() {
        let spec = SynthSpec {
            feature_noise: 0.0,
            kb_consistency: 1.0,
            ..SynthSpec::default()
        };
        let data = generate(&spec).unwrap();
        assert_eq!(data.corpus.len(), 500);
        for j in 0..5 {
            assert_eq!(data.gold.iter().filter(|&&g| g == j).count(), 100);
        }
    }

    #[test]
    fn relation_names_disjoint() {
        let data = generate(&small()).unwrap();
        assert!(data.text_relation_names().is_disjoint(&data.kb_relation_names()));
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.corpus.to_tsv(), b.corpus.to_tsv());
        assert_eq!(a.kb.to_tsv(), b.kb.to_tsv());
    }

    #[test]
    fn overlap_counts() {
        let spec = small();
        let base = generate(&spec).unwrap();
        let zero = overlap_variant(&spec, 0.0).unwrap();
        assert_eq!(base.kb.to_tsv(), zero.kb.to_tsv());
        assert_eq!(base.corpus.to_tsv(), zero.corpus.to_tsv());
        let half = overlap_variant(&spec, 0.5).unwrap();
        assert_eq!(half.text_relation_names().intersection(&half.kb_relation_names()).count(), 2);
        let full = overlap_variant(&spec, 1.0).unwrap();
        assert!(full.text_relation_names().is_subset(&full.kb_relation_names()));
        assert_eq!(half.corpus.to_tsv(), base.corpus.to_tsv());
    }

    #[test]
    fn every_entity_in_kb() {
        let data = generate(&SynthSpec::default()).unwrap();
        for name in data.corpus.entity_vocab.items() {
            assert!(data.kb.entity_vocab.id_of(name).is_some(), "{name}");
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small();
        s.feature_noise = 1.5;
        assert!(generate(&s).is_err());
        let mut s = small();
        s.n_entities = 3;
        assert!(generate(&s).is_err());
        assert!(overlap_variant(&small(), -0.1).is_err());
    }
}
