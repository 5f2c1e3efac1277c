//! Corpus and knowledge-base data types, TSV ingestion, and the
//! relation-holdout protocol that keeps KB relations disjoint from the
//! relations annotated in the corpus.
//!
//! Corpus TSV, one sentence per line:
//!
//! ```text
//! sent_id <TAB> head_entity <TAB> tail_entity <TAB> gold_label_or_NA <TAB> feat1 feat2 ...
//! ```
//!
//! KB TSV: `head <TAB> relation <TAB> tail`. Entity-link TSV:
//! `corpus_entity <TAB> kb_entity`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Label written in the gold column for unlabeled sentences.
pub const NO_LABEL: &str = "NA";

/// Dense symbol table: IDs are `0..len()` in first-insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_items<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::new();
        for item in items {
            vocab.get_or_insert(&item.into());
        }
        vocab
    }

    pub fn get_or_insert(&mut self, symbol: &str) -> usize {
        if let Some(&id) = self.index.get(symbol) {
            return id;
        }
        let id = self.items.len();
        self.items.push(symbol.to_owned());
        self.index.insert(symbol.to_owned(), id);
        id
    }

    pub fn id_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn lookup(&self, id: usize) -> Option<&str> {
        self.items.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.items.iter().enumerate().map(|(i, s)| (i, s.as_str()))
    }
}

/// One training instance: an ordered entity pair plus a sparse binary
/// feature set. `gold_relation` is only read by evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: u64,
    pub head: usize,
    pub tail: usize,
    /// Strictly increasing feature IDs.
    pub features: Vec<usize>,
    pub gold_relation: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub entity_vocab: Vocabulary,
    pub feature_vocab: Vocabulary,
    pub label_vocab: Option<Vocabulary>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Gold label per sentence, `None` where unlabeled.
    pub fn gold_labels(&self) -> Vec<Option<usize>> {
        self.sentences.iter().map(|s| s.gold_relation).collect()
    }

    /// Names of every relation label that occurs in the corpus.
    pub fn relation_names(&self) -> BTreeSet<String> {
        let Some(labels) = &self.label_vocab else {
            return BTreeSet::new();
        };
        self.sentences
            .iter()
            .filter_map(|s| s.gold_relation)
            .filter_map(|id| labels.lookup(id))
            .map(str::to_owned)
            .collect()
    }

    pub fn entity_name(&self, id: usize) -> &str {
        self.entity_vocab.lookup(id).unwrap_or("<unknown>")
    }

    /// Serialize in the corpus TSV format. Re-parsing the output yields an
    /// equal corpus.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            let label = match (s.gold_relation, &self.label_vocab) {
                (Some(id), Some(v)) => v.lookup(id).unwrap_or(NO_LABEL),
                _ => NO_LABEL,
            };
            let feats: Vec<&str> = s
                .features
                .iter()
                .map(|&f| self.feature_vocab.lookup(f).unwrap_or(""))
                .collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                s.id,
                self.entity_name(s.head),
                self.entity_name(s.tail),
                label,
                feats.join(" ")
            );
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Builds a corpus from symbol strings, assigning IDs in first-occurrence
/// order (head before tail, features in the order given).
#[derive(Debug, Default)]
pub struct CorpusBuilder {
    sentences: Vec<Sentence>,
    entity_vocab: Vocabulary,
    feature_vocab: Vocabulary,
    label_vocab: Vocabulary,
}

impl CorpusBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builder whose entity and feature ids start from existing
    /// vocabularies; entries not yet used are kept.
    pub fn with_vocabularies(entity_vocab: Vocabulary, feature_vocab: Vocabulary) -> Self {
        CorpusBuilder {
            entity_vocab,
            feature_vocab,
            ..Self::default()
        }
    }

    pub fn push<S: AsRef<str>>(
        &mut self,
        id: u64,
        head: &str,
        tail: &str,
        label: Option<&str>,
        features: &[S],
    ) {
        let head = self.entity_vocab.get_or_insert(head);
        let tail = self.entity_vocab.get_or_insert(tail);
        let gold_relation = label.map(|l| self.label_vocab.get_or_insert(l));
        let mut feats: Vec<usize> = features
            .iter()
            .map(|f| self.feature_vocab.get_or_insert(f.as_ref()))
            .collect();
        feats.sort_unstable();
        feats.dedup();
        self.sentences.push(Sentence {
            id,
            head,
            tail,
            features: feats,
            gold_relation,
        });
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn build(self) -> Corpus {
        let label_vocab = (!self.label_vocab.is_empty()).then_some(self.label_vocab);
        Corpus {
            sentences: self.sentences,
            entity_vocab: self.entity_vocab,
            feature_vocab: self.feature_vocab,
            label_vocab,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Tsv,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(Error::UnknownFormat(other.to_owned())),
        }
    }
}

/// Counters for lines skipped during ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub lines: usize,
    pub self_pairs_rejected: usize,
}

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Corpus> {
    load_corpus_with_stats(path, format).map(|(c, _)| c)
}

pub fn load_corpus_with_stats(
    path: impl AsRef<Path>,
    format: CorpusFormat,
) -> Result<(Corpus, LoadStats)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        CorpusFormat::Tsv => parse_corpus_tsv(&text, &path.display().to_string()),
    }
}

pub fn parse_corpus_tsv(text: &str, source: &str) -> Result<(Corpus, LoadStats)> {
    let mut builder = CorpusBuilder::new();
    let mut stats = LoadStats::default();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                source,
                lineno,
                format!("expected 5 tab-separated fields, found {}", fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(source, lineno, format!("bad sentence id `{}`", fields[0])))?;
        let head = fields[1].trim();
        let tail = fields[2].trim();
        if head.is_empty() || tail.is_empty() {
            return Err(Error::parse(source, lineno, "empty entity field"));
        }
        if head == tail {
            log::warn!("{source}:{lineno}: head equals tail (`{head}`), sentence skipped");
            stats.self_pairs_rejected += 1;
            continue;
        }
        let label = match fields[3].trim() {
            "" => return Err(Error::parse(source, lineno, "empty label field")),
            NO_LABEL => None,
            l => Some(l),
        };
        let feats: Vec<&str> = fields[4].split_whitespace().collect();
        builder.push(id, head, tail, label, &feats);
    }
    if builder.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok((builder.build(), stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KBTriplet {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KBStore {
    pub triplets: Vec<KBTriplet>,
    pub entity_vocab: Vocabulary,
    pub relation_vocab: Vocabulary,
    /// Explicit corpus-entity name → KB-entity name links that take
    /// precedence over normalized exact matching.
    pub entity_link: HashMap<String, String>,
}

impl KBStore {
    /// Deduplicating constructor from name triplets.
    pub fn from_name_triplets<'a, I>(triplets: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut entity_vocab = Vocabulary::new();
        let mut relation_vocab = Vocabulary::new();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (h, r, t) in triplets {
            let triplet = KBTriplet {
                head: entity_vocab.get_or_insert(h),
                relation: relation_vocab.get_or_insert(r),
                tail: entity_vocab.get_or_insert(t),
            };
            if seen.insert(triplet) {
                out.push(triplet);
            }
        }
        KBStore {
            triplets: out,
            entity_vocab,
            relation_vocab,
            entity_link: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn contains(&self, t: &KBTriplet) -> bool {
        self.triplets.contains(t)
    }

    pub fn triplet_set(&self) -> HashSet<KBTriplet> {
        self.triplets.iter().copied().collect()
    }

    pub fn relation_name(&self, id: usize) -> &str {
        self.relation_vocab.lookup(id).unwrap_or("<unknown>")
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.triplets {
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                self.entity_vocab.lookup(t.head).unwrap_or(""),
                self.relation_name(t.relation),
                self.entity_vocab.lookup(t.tail).unwrap_or("")
            );
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// Rebuilds the relation vocabulary over the given triplet subset in
    /// first-occurrence order. The entity vocabulary is kept as is so that
    /// entity links stay valid.
    fn with_triplets(&self, keep: impl Fn(&KBTriplet) -> bool) -> KBStore {
        let mut relation_vocab = Vocabulary::new();
        let triplets = self
            .triplets
            .iter()
            .filter(|t| keep(t))
            .map(|t| KBTriplet {
                head: t.head,
                relation: relation_vocab.get_or_insert(self.relation_name(t.relation)),
                tail: t.tail,
            })
            .collect();
        KBStore {
            triplets,
            entity_vocab: self.entity_vocab.clone(),
            relation_vocab,
            entity_link: self.entity_link.clone(),
        }
    }
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<KBStore> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kb_tsv(&text, &path.display().to_string())
}

pub fn parse_kb_tsv(text: &str, source: &str) -> Result<KBStore> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::parse(
                source,
                lineno,
                format!("expected 3 non-empty tab-separated fields, found {}", fields.len()),
            ));
        }
        rows.push((fields[0], fields[1], fields[2]));
    }
    if rows.is_empty() {
        return Err(Error::EmptyKb);
    }
    Ok(KBStore::from_name_triplets(rows))
}

/// Reads `corpus_entity <TAB> kb_entity` override links.
pub fn load_entity_links(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    let mut links = HashMap::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::parse(&source, lineno, "expected `corpus_entity<TAB>kb_entity`"));
        }
        links.insert(fields[0].to_owned(), fields[1].to_owned());
    }
    Ok(links)
}

/// Relation-name normalization used for holdout matching: trim, lowercase,
/// drop surrounding angle brackets and a leading `prefix:` namespace.
pub fn normalize_relation(name: &str) -> String {
    let mut s = name.trim().to_lowercase();
    if s.starts_with('<') && s.ends_with('>') && s.len() >= 2 {
        s = s[1..s.len() - 1].to_owned();
    }
    if let Some((prefix, rest)) = s.split_once(':') {
        let is_curie = !prefix.is_empty()
            && !rest.is_empty()
            && !rest.starts_with("//")
            && prefix.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if is_curie {
            s = rest.to_owned();
        }
    }
    s
}

/// Entity-name normalization for exact-match linking: trim + lowercase.
pub fn normalize_entity(name: &str) -> String {
    name.trim().to_lowercase()
}

/// Removes every triplet whose relation matches a corpus relation after
/// normalization.
pub fn holdout_overlapping_relations<S: AsRef<str>>(
    kb: &KBStore,
    corpus_relations: &[S],
) -> KBStore {
    let (held, _) = holdout_with_overlap_ratio(kb, corpus_relations, 0.0, 0);
    held
}

/// Holdout that keeps `ceil(ratio * n_overlap)` of the overlapping relation
/// types, chosen by a seeded shuffle. `ratio = 0` is the strict holdout and
/// `ratio = 1` keeps the KB unchanged. Returns the filtered KB and the KB
/// names of the retained overlapping relations.
pub fn holdout_with_overlap_ratio<S: AsRef<str>>(
    kb: &KBStore,
    corpus_relations: &[S],
    ratio: f64,
    seed: u64,
) -> (KBStore, Vec<String>) {
    let wanted: HashSet<String> = corpus_relations
        .iter()
        .map(|r| normalize_relation(r.as_ref()))
        .collect();
    let mut overlapping: Vec<usize> = kb
        .relation_vocab
        .iter()
        .filter(|(_, name)| wanted.contains(&normalize_relation(name)))
        .map(|(id, _)| id)
        .collect();
    let ratio = ratio.clamp(0.0, 1.0);
    let n_keep = (ratio * overlapping.len() as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    overlapping.shuffle(&mut rng);
    let retained: HashSet<usize> = overlapping[..n_keep].iter().copied().collect();
    let dropped: HashSet<usize> = overlapping[n_keep..].iter().copied().collect();

    let out = kb.with_triplets(|t| !dropped.contains(&t.relation));
    if out.is_empty() {
        log::warn!("relation holdout removed every KB triplet");
    }
    let mut retained_names: Vec<String> = retained
        .iter()
        .map(|&r| kb.relation_name(r).to_owned())
        .collect();
    retained_names.sort();
    (out, retained_names)
}

/// Text-entity ID → KB-entity ID map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityLink {
    kb_ids: Vec<Option<usize>>,
}

impl EntityLink {
    /// Resolves each corpus entity against a KB entity vocabulary: an
    /// explicit override wins, otherwise normalized exact match.
    pub fn resolve(
        corpus_entities: &Vocabulary,
        kb_entities: &Vocabulary,
        overrides: &HashMap<String, String>,
    ) -> Self {
        let normalized: HashMap<String, usize> = kb_entities
            .iter()
            .map(|(id, name)| (normalize_entity(name), id))
            .collect();
        let kb_ids = corpus_entities
            .items()
            .iter()
            .map(|name| match overrides.get(name) {
                Some(target) => kb_entities
                    .id_of(target)
                    .or_else(|| normalized.get(&normalize_entity(target)).copied()),
                None => normalized.get(&normalize_entity(name)).copied(),
            })
            .collect();
        EntityLink { kb_ids }
    }

    pub fn from_ids(kb_ids: Vec<Option<usize>>) -> Self {
        EntityLink { kb_ids }
    }

    pub fn get(&self, text_entity: usize) -> Option<usize> {
        self.kb_ids.get(text_entity).copied().flatten()
    }

    pub fn is_total(&self) -> bool {
        self.kb_ids.iter().all(Option::is_some)
    }

    pub fn len(&self) -> usize {
        self.kb_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kb_ids.is_empty()
    }

    /// Errors with the first unlinked corpus entity name.
    pub fn require_total(&self, corpus_entities: &Vocabulary) -> Result<()> {
        match self.kb_ids.iter().position(Option::is_none) {
            None => Ok(()),
            Some(i) => Err(Error::Unlinked(
                corpus_entities.lookup(i).unwrap_or("<unknown>").to_owned(),
            )),
        }
    }
}

/// Drops sentences whose head or tail does not link into the KB and rebuilds
/// dense vocabularies over the survivors.
pub fn filter_unlinked_entities(corpus: &Corpus, kb: &KBStore) -> Result<Corpus> {
    filter_by_entity_vocab(corpus, &kb.entity_vocab, &kb.entity_link)
}

/// Same as [`filter_unlinked_entities`] against an arbitrary KB entity
/// vocabulary (for example the one stored with a trained embedding).
pub fn filter_by_entity_vocab(
    corpus: &Corpus,
    kb_entities: &Vocabulary,
    overrides: &HashMap<String, String>,
) -> Result<Corpus> {
    let link = EntityLink::resolve(&corpus.entity_vocab, kb_entities, overrides);
    let mut builder = CorpusBuilder::new();
    for s in &corpus.sentences {
        if link.get(s.head).is_none() || link.get(s.tail).is_none() {
            continue;
        }
        let label = s
            .gold_relation
            .and_then(|l| corpus.label_vocab.as_ref().and_then(|v| v.lookup(l)));
        let feats: Vec<&str> = s
            .features
            .iter()
            .filter_map(|&f| corpus.feature_vocab.lookup(f))
            .collect();
        builder.push(
            s.id,
            corpus.entity_name(s.head),
            corpus.entity_name(s.tail),
            label,
            &feats,
        );
    }
    if builder.is_empty() {
        return Err(Error::NoLinkableSentences);
    }
    Ok(builder.build())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(text: &str) -> Result<(Corpus, LoadStats)> {
        parse_corpus_tsv(text, "test")
    }

    #[test]
    fn three_line_corpus() {
        let (c, _) = corpus("1\tA\tB\tr1\tf1 f2\n2\tB\tC\tNA\tf2 f3\n3\tA\tC\tr2\tf1 f3\n").unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.entity_vocab.len(), 3);
        assert_eq!(c.feature_vocab.len(), 3);
        assert_eq!(c.sentences[1].gold_relation, None);
        assert_eq!(c.label_vocab.as_ref().unwrap().len(), 2);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(corpus(""), Err(Error::EmptyCorpus)));
        assert!(matches!(corpus("\n  \n"), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn self_pair_is_rejected_and_counted() {
        let (c, stats) = corpus("1\tA\tA\tr\tf\n2\tA\tB\tr\tf\n").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(stats.self_pairs_rejected, 1);
        assert_eq!(c.entity_vocab.len(), 2);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let err = corpus("1\tA\tB\tr\tf\n2\tA\tB\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = corpus("x\tA\tB\tr\tf\n").unwrap_err();
        assert!(err.to_string().contains(":1:"));
    }

    #[test]
    fn unknown_format_tag() {
        assert!(matches!("bin".parse::<CorpusFormat>(), Err(Error::UnknownFormat(_))));
        assert_eq!("TSV".parse::<CorpusFormat>().unwrap(), CorpusFormat::Tsv);
    }

    #[test]
    fn features_are_strictly_increasing() {
        let (c, _) = corpus("1\tA\tB\tNA\tz y z x y\n").unwrap();
        let f = &c.sentences[0].features;
        assert!(f.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(f.len(), 3);
    }

    #[test]
    fn kb_dedup_and_vocab_sizes() {
        let text = "a\tr1\tb\nb\tr1\tc\nc\tr2\td\na\tr2\td\nb\tr2\ta\na\tr1\tb\n";
        let kb = parse_kb_tsv(text, "kb").unwrap();
        assert_eq!(kb.len(), 5);
        assert_eq!(kb.entity_vocab.len(), 4);
        assert_eq!(kb.relation_vocab.len(), 2);
    }

    #[test]
    fn kb_errors() {
        assert!(matches!(parse_kb_tsv("", "kb"), Err(Error::EmptyKb)));
        let err = parse_kb_tsv("a\tr\tb\na\tr\n", "kb").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn holdout_removes_corpus_relations() {
        let kb = KBStore::from_name_triplets([("a", "r1", "b"), ("a", "r2", "c")]);
        let out = holdout_overlapping_relations(&kb, &["r1"]);
        assert_eq!(out.len(), 1);
        assert_eq!(out.relation_vocab.items(), &["r2".to_owned()]);
        let t = out.triplets[0];
        assert_eq!(out.entity_vocab.lookup(t.head), Some("a"));
        assert_eq!(out.entity_vocab.lookup(t.tail), Some("c"));
    }

    #[test]
    fn holdout_disjoint_is_identity() {
        let kb = KBStore::from_name_triplets([("a", "r1", "b"), ("a", "r2", "c")]);
        let out = holdout_overlapping_relations(&kb, &["r9"]);
        assert_eq!(out, kb);
    }

    #[test]
    fn holdout_matches_after_normalization() {
        let kb = KBStore::from_name_triplets([("a", "fb:Located_In", "b"), ("a", "r2", "c")]);
        let out = holdout_overlapping_relations(&kb, &["  located_in "]);
        assert_eq!(out.len(), 1);
        assert_eq!(normalize_relation("<wd:P31>"), "p31");
        assert_eq!(normalize_relation("/location/contained_by"), "/location/contained_by");
    }

    #[test]
    fn overlap_ratio_one_keeps_everything() {
        let kb = KBStore::from_name_triplets([("a", "r1", "b"), ("a", "r2", "c"), ("b", "r3", "c")]);
        let (out, retained) = holdout_with_overlap_ratio(&kb, &["r1", "r2"], 1.0, 7);
        assert_eq!(out, kb);
        assert_eq!(retained, vec!["r1".to_owned(), "r2".to_owned()]);
    }

    #[test]
    fn filter_unlinked() {
        let mut text = String::new();
        for i in 0..10 {
            let tail = if i < 4 { format!("X{i}") } else { "B".to_owned() };
            text.push_str(&format!("{i}\tA\t{tail}\tr\tf\n"));
        }
        let (c, _) = corpus(&text).unwrap();
        let kb = KBStore::from_name_triplets([("a", "q", "b")]);
        let filtered = filter_unlinked_entities(&c, &kb).unwrap();
        assert_eq!(filtered.len(), 6);
        assert_eq!(filtered.entity_vocab.len(), 2);
        assert_eq!(filter_unlinked_entities(&filtered, &kb).unwrap(), filtered);
    }

    #[test]
    fn filter_all_linked_is_identity_and_none_linked_errors() {
        let (c, _) = corpus("1\tA\tB\tr\tf\n2\tB\tA\tr\tg\n").unwrap();
        let kb = KBStore::from_name_triplets([("A", "q", "B")]);
        assert_eq!(filter_unlinked_entities(&c, &kb).unwrap(), c);
        let other = KBStore::from_name_triplets([("Z", "q", "Y")]);
        assert!(matches!(
            filter_unlinked_entities(&c, &other),
            Err(Error::NoLinkableSentences)
        ));
    }

    #[test]
    fn link_overrides_win() {
        let (c, _) = corpus("1\tNYC\tUSA\tr\tf\n").unwrap();
        let mut kb = KBStore::from_name_triplets([("new_york", "q", "usa")]);
        assert!(filter_unlinked_entities(&c, &kb).is_err());
        kb.entity_link.insert("NYC".into(), "new_york".into());
        let out = filter_unlinked_entities(&c, &kb).unwrap();
        assert_eq!(out.len(), 1);
        let link = EntityLink::resolve(&out.entity_vocab, &kb.entity_vocab, &kb.entity_link);
        assert!(link.is_total());
        assert_eq!(link.get(0), kb.entity_vocab.id_of("new_york"));
    }
}
