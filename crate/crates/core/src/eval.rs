//! Cluster predictions from either side of the model, B³ and NMI scoring,
//! seeded validation/test splits and multi-run aggregation.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datamodel::Corpus;
use crate::dvae::{decoder_posterior, encode_with_dense, DecoderParams, EncoderParams, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::argmax;
use crate::rng::stream_rng;
use crate::trainer::DenseFeatures;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMode {
    Encoder,
    Decoder,
}

impl fmt::Display for PredictionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictionMode::Encoder => "encoder",
            PredictionMode::Decoder => "decoder",
        })
    }
}

/// One cluster per unit: a sentence in encoder mode, a distinct entity pair
/// in decoder mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub mode: PredictionMode,
    pub labels: Vec<usize>,
}

/// Argmax of `q(r | x)` per sentence, in corpus order.
pub fn predict_encoder(psi: &EncoderParams, corpus: &Corpus, dense: Option<&DenseFeatures>) -> ClusterAssignment {
    let labels = corpus
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| argmax(&encode_with_dense(psi, s, dense.map(|d| d.row(i)))))
        .collect();
    ClusterAssignment {
        mode: PredictionMode::Encoder,
        labels,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderPrediction {
    /// Distinct `(head, tail)` pairs in first-occurrence order.
    pub pairs: Vec<(usize, usize)>,
    pub pair_labels: ClusterAssignment,
    /// Index into `pairs` for every sentence.
    pub sentence_pair: Vec<usize>,
}

impl DecoderPrediction {
    /// Sentence-level labels inherited from each sentence's pair.
    pub fn sentence_labels(&self) -> ClusterAssignment {
        ClusterAssignment {
            mode: PredictionMode::Decoder,
            labels: self.sentence_pair.iter().map(|&p| self.pair_labels.labels[p]).collect(),
        }
    }
}

/// Argmax over clusters of the decoder score for every distinct entity
/// pair, with a uniform prior over clusters.
pub fn predict_decoder(theta: &DecoderParams, corpus: &Corpus) -> DecoderPrediction {
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut pairs = Vec::new();
    let sentence_pair = corpus
        .sentences
        .iter()
        .map(|s| {
            *index.entry((s.head, s.tail)).or_insert_with(|| {
                pairs.push((s.head, s.tail));
                pairs.len() - 1
            })
        })
        .collect();
    let labels = pairs.iter().map(|&(h, t)| argmax(&decoder_posterior(theta, h, t))).collect();
    DecoderPrediction {
        pairs,
        pair_labels: ClusterAssignment {
            mode: PredictionMode::Decoder,
            labels,
        },
        sentence_pair,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BCubed {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check_units(pred: &[usize], gold: &[usize]) -> Result<()> {
    if pred.is_empty() || gold.is_empty() {
        return Err(Error::EmptyInput);
    }
    if pred.len() != gold.len() {
        return Err(Error::InvalidConfig(format!(
            "prediction covers {} units but gold covers {}",
            pred.len(),
            gold.len()
        )));
    }
    Ok(())
}

struct Contingency {
    n: f64,
    cells: HashMap<(usize, usize), f64>,
    pred: HashMap<usize, f64>,
    gold: HashMap<usize, f64>,
}

fn contingency(pred: &[usize], gold: &[usize]) -> Contingency {
    let mut c = Contingency {
        n: pred.len() as f64,
        cells: HashMap::new(),
        pred: HashMap::new(),
        gold: HashMap::new(),
    };
    for (&p, &g) in pred.iter().zip(gold) {
        *c.cells.entry((p, g)).or_default() += 1.0;
        *c.pred.entry(p).or_default() += 1.0;
        *c.gold.entry(g).or_default() += 1.0;
    }
    c
}

/// Element-averaged B³ precision, recall and their harmonic mean.
pub fn b_cubed(pred: &[usize], gold: &[usize]) -> Result<BCubed> {
    check_units(pred, gold)?;
    let c = contingency(pred, gold);
    // each of the n_pg elements in a cell contributes n_pg / |P| and n_pg / |G|
    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut cells: Vec<_> = c.cells.iter().collect();
    cells.sort_by_key(|(k, _)| **k);
    for (&(p, g), &npg) in cells {
        precision += npg * npg / c.pred[&p];
        recall += npg * npg / c.gold[&g];
    }
    precision /= c.n;
    recall /= c.n;
    Ok(BCubed {
        precision,
        recall,
        f1: harmonic(precision, recall),
    })
}

fn entropy_of(counts: &HashMap<usize, f64>, n: f64) -> f64 {
    let mut keys: Vec<_> = counts.keys().copied().collect();
    keys.sort_unstable();
    keys.iter()
        .map(|k| {
            let p = counts[k] / n;
            -p * p.ln()
        })
        .sum()
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let mut ab = HashMap::new();
    let mut ba = HashMap::new();
    a.iter()
        .zip(b)
        .all(|(&x, &y)| *ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x)
}

/// `I(P; G) / √(H(P) · H(G))` with natural logs. Identical partitions give
/// exactly 1; otherwise a zero-entropy side gives 0.
pub fn nmi(pred: &[usize], gold: &[usize]) -> Result<f64> {
    check_units(pred, gold)?;
    if same_partition(pred, gold) {
        return Ok(1.0);
    }
    let c = contingency(pred, gold);
    let hp = entropy_of(&c.pred, c.n);
    let hg = entropy_of(&c.gold, c.n);
    if hp == 0.0 || hg == 0.0 {
        return Ok(0.0);
    }
    let mut cells: Vec<_> = c.cells.iter().collect();
    cells.sort_by_key(|(k, _)| **k);
    let mut mi = 0.0;
    for (&(p, g), &npg) in cells {
        mi += npg / c.n * (c.n * npg / (c.pred[&p] * c.gold[&g])).ln();
    }
    Ok((mi / (hp * hg).sqrt()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { val_frac: 0.4, seed: 0 }
    }
}

/// Seeded partition of `units` into (validation, test), each sorted;
/// validation gets `round(val_frac · n)` units.
pub fn split_units(units: &[usize], cfg: &SplitConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&cfg.val_frac) {
        return Err(Error::InvalidConfig(format!("val_frac = {} outside [0, 1]", cfg.val_frac)));
    }
    let mut shuffled = units.to_vec();
    shuffled.sort_unstable();
    shuffled.shuffle(&mut stream_rng(cfg.seed, u64::MAX));
    let n_val = (cfg.val_frac * units.len() as f64).round() as usize;
    let mut val = shuffled[..n_val].to_vec();
    let mut test = shuffled[n_val..].to_vec();
    val.sort_unstable();
    test.sort_unstable();
    Ok((val, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Val,
    Test,
    All,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Val => "val",
            Split::Test => "test",
            Split::All => "all",
        })
    }
}

/// Sentence-level scores, or entity-pair-level scores in decoder mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Sentence,
    Pair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub mode: PredictionMode,
    pub level: Level,
    pub b3_precision: f64,
    pub b3_recall: f64,
    pub b3_f1: f64,
    pub nmi: f64,
    pub n_units: usize,
    pub seed: u64,
}

impl EvalReport {
    pub const TSV_HEADER: &'static str = "split\tmode\tlevel\tseed\tn_units\tb3_precision\tb3_recall\tb3_f1\tnmi";

    pub fn to_tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.split,
            self.mode,
            match self.level {
                Level::Sentence => "sentence",
                Level::Pair => "pair",
            },
            self.seed,
            self.n_units,
            self.b3_precision,
            self.b3_recall,
            self.b3_f1,
            self.nmi
        )
    }
}

fn score(
    split: Split,
    mode: PredictionMode,
    level: Level,
    seed: u64,
    pred: &[usize],
    gold: &[usize],
) -> Result<EvalReport> {
    let b3 = b_cubed(pred, gold)?;
    Ok(EvalReport {
        split,
        mode,
        level,
        b3_precision: b3.precision,
        b3_recall: b3.recall,
        b3_f1: b3.f1,
        nmi: nmi(pred, gold)?,
        n_units: pred.len(),
        seed,
    })
}

/// Majority gold label per pair over `units`; ties go to the lowest label.
fn pair_level(
    units: &[usize],
    decoder: &DecoderPrediction,
    gold: &[Option<usize>],
) -> (Vec<usize>, Vec<usize>) {
    let mut votes: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for &i in units {
        if let Some(g) = gold[i] {
            *votes.entry(decoder.sentence_pair[i]).or_default().entry(g).or_default() += 1;
        }
    }
    let mut pairs: Vec<usize> = votes.keys().copied().collect();
    pairs.sort_unstable();
    let pred = pairs.iter().map(|&p| decoder.pair_labels.labels[p]).collect();
    let gold = pairs
        .iter()
        .map(|p| {
            let v = &votes[p];
            let best = v.values().copied().max().unwrap_or(0);
            v.iter().filter(|(_, &c)| c == best).map(|(&g, _)| g).min().unwrap_or(0)
        })
        .collect();
    (pred, gold)
}

/// Scores one model on a seeded validation/test split of the gold-labeled
/// sentences, for each requested mode. Decoder mode yields both
/// sentence-level (inherited) and pair-level reports.
pub fn evaluate(
    params: &ModelParams,
    corpus: &Corpus,
    dense: Option<&DenseFeatures>,
    modes: &[PredictionMode],
    split_cfg: &SplitConfig,
) -> Result<Vec<EvalReport>> {
    let gold = corpus.gold_labels();
    let labeled: Vec<usize> = (0..corpus.len()).filter(|&i| gold[i].is_some()).collect();
    if labeled.is_empty() {
        return Err(Error::MissingGold("no sentence carries a gold relation label".into()));
    }
    let (val, test) = split_units(&labeled, split_cfg)?;
    let encoder = modes
        .contains(&PredictionMode::Encoder)
        .then(|| predict_encoder(&params.encoder, corpus, dense));
    let decoder = modes
        .contains(&PredictionMode::Decoder)
        .then(|| predict_decoder(&params.decoder, corpus));
    let inherited = decoder.as_ref().map(DecoderPrediction::sentence_labels);

    let seed = split_cfg.seed;
    let mut reports = Vec::new();
    for (split, units) in [(Split::Val, &val), (Split::Test, &test)] {
        if units.is_empty() {
            continue;
        }
        let gold_units: Vec<usize> = units.iter().map(|&i| gold[i].expect("labeled")).collect();
        if let Some(enc) = &encoder {
            let pred: Vec<usize> = units.iter().map(|&i| enc.labels[i]).collect();
            reports.push(score(split, PredictionMode::Encoder, Level::Sentence, seed, &pred, &gold_units)?);
        }
        if let (Some(dec), Some(inh)) = (&decoder, &inherited) {
            let pred: Vec<usize> = units.iter().map(|&i| inh.labels[i]).collect();
            reports.push(score(split, PredictionMode::Decoder, Level::Sentence, seed, &pred, &gold_units)?);
            let (pair_pred, pair_gold) = pair_level(units, dec, &gold);
            reports.push(score(split, PredictionMode::Decoder, Level::Pair, seed, &pair_pred, &pair_gold)?);
        }
    }
    Ok(reports)
}

/// Looks up the report for a split/mode/level combination.
pub fn find_report(reports: &[EvalReport], split: Split, mode: PredictionMode, level: Level) -> Option<&EvalReport> {
    reports
        .iter()
        .find(|r| r.split == split && r.mode == mode && r.level == level)
}

/// Mean and sample (n − 1) standard deviation; the deviation is 0 for a
/// single value.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub split: Split,
    pub mode: PredictionMode,
    pub level: Level,
    pub n_runs: usize,
    pub b3_f1_mean: f64,
    pub b3_f1_std: f64,
    pub nmi_mean: f64,
    pub nmi_std: f64,
}

/// Groups reports by split/mode/level and aggregates across runs.
pub fn aggregate(reports: &[EvalReport]) -> Result<Vec<AggregateRow>> {
    let mut keys: Vec<(Split, PredictionMode, Level)> = Vec::new();
    for r in reports {
        let k = (r.split, r.mode, r.level);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(split, mode, level)| {
            let group: Vec<&EvalReport> = reports
                .iter()
                .filter(|r| r.split == split && r.mode == mode && r.level == level)
                .collect();
            let (b3_f1_mean, b3_f1_std) = mean_std(&group.iter().map(|r| r.b3_f1).collect::<Vec<_>>())?;
            let (nmi_mean, nmi_std) = mean_std(&group.iter().map(|r| r.nmi).collect::<Vec<_>>())?;
            Ok(AggregateRow {
                split,
                mode,
                level,
                n_runs: group.len(),
                b3_f1_mean,
                b3_f1_std,
                nmi_mean,
                nmi_std,
            })
        })
        .collect()
}
