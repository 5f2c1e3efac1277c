//! Versioned plain-text checkpoints. Floats are written in Rust's shortest
//! round-trip form, so save → load is exact and resuming is bitwise
//! identical to an uninterrupted run.

use std::fmt::Write as _;
use std::path::Path;

use crate::datamodel::{Corpus, CorpusBuilder, Vocabulary};
use crate::dvae::{DecoderParams, EncoderParams, ModelParams, PARAM_BLOCKS};
use crate::error::{Error, Result};
use crate::trainer::{AdaGrad, TrainConfig, TrainState};

const MAGIC: &str = "reldisc-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub entity_vocab: Vocabulary,
    pub feature_vocab: Vocabulary,
    pub params: ModelParams,
    /// AdaGrad accumulators; absent in export-only checkpoints.
    pub accumulators: Option<ModelParams>,
    pub epoch: usize,
    pub step: u64,
}

impl Checkpoint {
    pub fn from_state(config: &TrainConfig, corpus: &Corpus, state: &TrainState) -> Self {
        Checkpoint {
            config: config.clone(),
            entity_vocab: corpus.entity_vocab.clone(),
            feature_vocab: corpus.feature_vocab.clone(),
            params: state.params.clone(),
            accumulators: Some(state.optimizer.accumulators.clone()),
            epoch: state.epoch,
            step: state.step,
        }
    }

    /// Optimizer state to continue training from.
    pub fn train_state(&self) -> Result<TrainState> {
        let accumulators = self
            .accumulators
            .clone()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state to resume from".into()))?;
        Ok(TrainState {
            params: self.params.clone(),
            optimizer: AdaGrad {
                lr0: self.config.lr0,
                accumulators,
            },
            epoch: self.epoch,
            step: self.step,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let p = &self.params;
        let config = serde_json::to_string(&self.config).expect("config serializes");
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "config {config}");
        let _ = writeln!(
            out,
            "shape clusters={} features={} dense={} entities={} dim={} frozen={}",
            p.encoder.n_clusters,
            p.encoder.n_features,
            p.encoder.dense_dim,
            p.decoder.n_entities,
            p.decoder.dim,
            p.decoder.frozen_entities
        );
        let _ = writeln!(out, "state epoch={} step={}", self.epoch, self.step);
        for (name, vocab) in [("entities", &self.entity_vocab), ("features", &self.feature_vocab)] {
            let _ = writeln!(out, "{name} {}", vocab.len());
            for item in vocab.items() {
                let _ = writeln!(out, "{item}");
            }
        }
        write_blocks(&mut out, "block", p);
        if let Some(acc) = &self.accumulators {
            write_blocks(&mut out, "accum", acc);
        }
        out.push_str("end\n");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("truncated before {what}")));
        if next("header")? != MAGIC {
            return Err(bad("not a reldisc checkpoint (bad header)".into()));
        }
        let config: TrainConfig = serde_json::from_str(
            next("config")?
                .strip_prefix("config ")
                .ok_or_else(|| bad("expected `config` line".into()))?,
        )
        .map_err(|e| bad(format!("config: {e}")))?;

        let shape = keyvals(next("shape")?, "shape")?;
        let get = |k: &str| -> Result<usize> {
            shape
                .iter()
                .find(|(key, _)| key == k)
                .ok_or_else(|| bad(format!("shape lacks `{k}`")))?
                .1
                .parse()
                .map_err(|_| bad(format!("shape `{k}` is not an integer")))
        };
        let frozen = shape.iter().any(|(k, v)| k == "frozen" && v == "true");
        let mut params = ModelParams {
            encoder: EncoderParams::zeros(get("clusters")?, get("features")?, get("dense")?),
            decoder: DecoderParams::zeros(get("clusters")?, get("entities")?, get("dim")?),
        };
        params.decoder.frozen_entities = frozen;

        let state = keyvals(next("state")?, "state")?;
        let state_val = |k: &str| -> Result<u64> {
            state
                .iter()
                .find(|(key, _)| key == k)
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| bad(format!("state lacks integer `{k}`")))
        };
        let epoch = state_val("epoch")? as usize;
        let step = state_val("step")?;

        let mut vocabs = Vec::new();
        for name in ["entities", "features"] {
            let header = next(name)?;
            let n: usize = header
                .strip_prefix(name)
                .map(str::trim)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(format!("expected `{name} N`, got `{header}`")))?;
            let mut items = Vec::with_capacity(n);
            for _ in 0..n {
                items.push(next(name)?.to_string());
            }
            vocabs.push(Vocabulary::from_items(items));
        }
        let feature_vocab = vocabs.pop().expect("two vocabularies");
        let entity_vocab = vocabs.pop().expect("two vocabularies");
        if entity_vocab.len() != params.decoder.n_entities || feature_vocab.len() != params.encoder.n_features {
            return Err(bad("vocabulary sizes disagree with the parameter shape".into()));
        }

        read_blocks(&mut next, "block", &mut params)?;
        let mut accumulators = None;
        let line = next("end")?;
        if line.starts_with("accum ") {
            let mut acc = params.zeros_like();
            read_blocks_from(line, &mut next, "accum", &mut acc)?;
            accumulators = Some(acc);
            if next("end")? != "end" {
                return Err(bad("expected `end`".into()));
            }
        } else if line != "end" {
            return Err(bad(format!("unexpected line `{line}`")));
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(Checkpoint {
            config,
            entity_vocab,
            feature_vocab,
            params,
            accumulators,
            epoch,
            step,
        })
    }

    /// Re-indexes `corpus` into this model's vocabularies. Errors name the
    /// first entity or feature the model has never seen.
    pub fn align_corpus(&self, corpus: &Corpus) -> Result<Corpus> {
        if corpus.entity_vocab == self.entity_vocab && corpus.feature_vocab == self.feature_vocab {
            return Ok(corpus.clone());
        }
        for (kind, corpus_vocab, model_vocab) in [
            ("entity", &corpus.entity_vocab, &self.entity_vocab),
            ("feature", &corpus.feature_vocab, &self.feature_vocab),
        ] {
            if let Some(missing) = corpus_vocab.items().iter().find(|s| model_vocab.id_of(s).is_none()) {
                return Err(Error::VocabMismatch(format!(
                    "{kind} `{missing}` of the corpus is not in the model vocabulary"
                )));
            }
        }
        // Seed the builder with the model's vocabularies so ids line up.
        let mut builder = CorpusBuilder::with_vocabularies(self.entity_vocab.clone(), self.feature_vocab.clone());
        for s in &corpus.sentences {
            let features: Vec<&str> = s.features.iter().map(|&f| corpus.feature_vocab.items()[f].as_str()).collect();
            let label = s
                .gold_relation
                .and_then(|g| corpus.label_vocab.as_ref().and_then(|v| v.lookup(g)));
            builder.push(s.id, corpus.entity_name(s.head), corpus.entity_name(s.tail), label, &features);
        }
        Ok(builder.build())
    }
}

fn bad(msg: String) -> Error {
    Error::Checkpoint(msg)
}

fn keyvals(line: &str, tag: &str) -> Result<Vec<(String, String)>> {
    let rest = line
        .strip_prefix(tag)
        .ok_or_else(|| bad(format!("expected `{tag}` line, got `{line}`")))?;
    rest.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| bad(format!("malformed `{kv}` in `{tag}` line")))
        })
        .collect()
}

fn write_blocks(out: &mut String, tag: &str, p: &ModelParams) {
    for (name, block) in PARAM_BLOCKS.iter().zip(p.blocks()) {
        let _ = writeln!(out, "{tag} {name} {}", block.len());
        let mut first = true;
        for v in block {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
}

fn read_blocks<'a>(
    next: &mut impl FnMut(&str) -> Result<&'a str>,
    tag: &str,
    p: &mut ModelParams,
) -> Result<()> {
    let first = next(tag)?;
    read_blocks_from(first, next, tag, p)
}

fn read_blocks_from<'a>(
    first: &str,
    next: &mut impl FnMut(&str) -> Result<&'a str>,
    tag: &str,
    p: &mut ModelParams,
) -> Result<()> {
    let mut header = first.to_string();
    let mut blocks = p.blocks_mut();
    for (i, name) in PARAM_BLOCKS.iter().enumerate() {
        if i > 0 {
            header = next(tag)?.to_string();
        }
        let expected = format!("{tag} {name} {}", blocks[i].len());
        if header != expected {
            return Err(bad(format!("expected `{expected}`, got `{header}`")));
        }
        let values = next(name)?;
        let block = &mut blocks[i];
        let mut n = 0;
        for (slot, tok) in block.iter_mut().zip(values.split_whitespace()) {
            *slot = tok.parse().map_err(|_| bad(format!("bad number `{tok}` in {tag} {name}")))?;
            n += 1;
        }
        if n != block.len() || values.split_whitespace().count() != block.len() {
            return Err(bad(format!("{tag} {name}: expected {} values", block.len())));
        }
    }
    Ok(())
}
