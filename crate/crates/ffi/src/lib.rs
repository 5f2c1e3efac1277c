//! C ABI over the `reldisc` library.
//!
//! Objects cross the boundary as opaque handles created by `rd_*_load`,
//! `rd_*_train` or `rd_*_new` and released with the matching `rd_*_free`.
//! Every fallible call returns an [`RdStatus`]; on failure
//! [`rd_last_error`] describes what went wrong on the calling thread.
//! Panics never unwind into C: they surface as `RD_STATUS_PANIC`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use reldisc::checkpoint::Checkpoint;
use reldisc::config::Preset;
use reldisc::datamodel::{load_corpus, load_kb, Corpus, CorpusFormat, KBStore};
use reldisc::dvae::{Distance, RegTarget};
use reldisc::eval::{b_cubed, nmi, predict_decoder, predict_encoder};
use reldisc::kbembed::{train_transe, KBEmbedding, TransEConfig};
use reldisc::trainer::{train, DenseFeatures, KbContext, TrainConfig, Variant};
use reldisc::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidConfig = 5,
    NonFinite = 6,
    VocabMismatch = 7,
    /// Empty corpus, KB or metric input.
    EmptyInput = 8,
    MissingGold = 9,
    /// The library panicked; the handle arguments should be discarded.
    Panic = 10,
    Other = 11,
}

impl From<&Error> for RdStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => RdStatus::Io,
            Error::Parse { .. } | Error::UnknownFormat(_) | Error::Checkpoint(_) => RdStatus::Parse,
            Error::InvalidConfig(_) | Error::Unlinked(_) | Error::NoLinkableSentences | Error::StepOutOfRange { .. } => {
                RdStatus::InvalidConfig
            }
            Error::NonFinite(_) => RdStatus::NonFinite,
            Error::VocabMismatch(_) | Error::UnknownId { .. } => RdStatus::VocabMismatch,
            Error::EmptyCorpus | Error::EmptyKb | Error::EmptyInput => RdStatus::EmptyInput,
            Error::MissingGold(_) => RdStatus::MissingGold,
            #[allow(unreachable_patterns)]
            _ => RdStatus::Other,
        }
    }
}

/// Model variant, mirroring the CLI's `--variant`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdVariant {
    Dvae = 0,
    DvaeE = 1,
    DvaeD = 2,
    Regdvae = 3,
    RegdvaeD = 4,
}

impl From<RdVariant> for Variant {
    fn from(v: RdVariant) -> Self {
        match v {
            RdVariant::Dvae => Variant::Dvae,
            RdVariant::DvaeE => Variant::DvaeE,
            RdVariant::DvaeD => Variant::DvaeD,
            RdVariant::Regdvae => Variant::Regdvae,
            RdVariant::RegdvaeD => Variant::RegdvaeD,
        }
    }
}

impl From<Variant> for RdVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Dvae => RdVariant::Dvae,
            Variant::DvaeE => RdVariant::DvaeE,
            Variant::DvaeD => RdVariant::DvaeD,
            Variant::Regdvae => RdVariant::Regdvae,
            Variant::RegdvaeD => RdVariant::RegdvaeD,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdPreset {
    Nyt122 = 0,
    Nyt71 = 1,
    Nyt27 = 2,
    Synth = 3,
    Custom = 4,
}

impl From<RdPreset> for Preset {
    fn from(p: RdPreset) -> Self {
        match p {
            RdPreset::Nyt122 => Preset::Nyt122,
            RdPreset::Nyt71 => Preset::Nyt71,
            RdPreset::Nyt27 => Preset::Nyt27,
            RdPreset::Synth => Preset::Synth,
            RdPreset::Custom => Preset::Custom,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdDistance {
    Euclidean = 0,
    Kl = 1,
    Js = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdMode {
    Encoder = 0,
    Decoder = 1,
}

/// Flat training configuration. Fill it with [`rd_train_options_default`]
/// and override fields as needed.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdTrainOptions {
    pub variant: RdVariant,
    pub n_clusters: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub seed: u64,
    pub alpha0: f64,
    pub alpha_final: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub distance: RdDistance,
    /// Nonzero regularizes decoder posteriors instead of encoder ones.
    pub regularize_decoder: u8,
    pub n_negatives: usize,
    /// Decoder entity embedding width.
    pub dim: usize,
}

impl From<&TrainConfig> for RdTrainOptions {
    fn from(c: &TrainConfig) -> Self {
        let h = &c.hyper;
        RdTrainOptions {
            variant: c.variant.into(),
            n_clusters: h.n_clusters,
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr0: c.lr0,
            seed: c.seed,
            alpha0: h.alpha0,
            alpha_final: h.alpha_final,
            beta: h.beta,
            gamma: h.gamma,
            lambda: h.lambda,
            distance: match h.distance {
                Distance::Euclidean => RdDistance::Euclidean,
                Distance::Kl => RdDistance::Kl,
                Distance::Js => RdDistance::Js,
            },
            regularize_decoder: u8::from(h.reg_target == RegTarget::Decoder),
            n_negatives: h.n_negatives,
            dim: h.dim,
        }
    }
}

impl RdTrainOptions {
    fn to_config(self) -> TrainConfig {
        let mut cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr0: self.lr0,
            seed: self.seed,
            variant: self.variant.into(),
            ..TrainConfig::default()
        };
        let h = &mut cfg.hyper;
        h.n_clusters = self.n_clusters;
        h.alpha0 = self.alpha0;
        h.alpha_final = self.alpha_final;
        h.beta = self.beta;
        h.gamma = self.gamma;
        h.lambda = self.lambda;
        h.distance = match self.distance {
            RdDistance::Euclidean => Distance::Euclidean,
            RdDistance::Kl => Distance::Kl,
            RdDistance::Js => Distance::Js,
        };
        h.reg_target = if self.regularize_decoder != 0 { RegTarget::Decoder } else { RegTarget::Encoder };
        h.n_negatives = self.n_negatives;
        h.dim = self.dim;
        cfg
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RdBCubed {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Sentence corpus.
pub struct RdCorpus(Corpus);

/// Knowledge-base triplet store.
pub struct RdKb(KBStore);

/// Trained TransE embedding.
pub struct RdEmbedding(KBEmbedding);

/// Trained model with its configuration and vocabularies.
pub struct RdModel(Checkpoint);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Message of the last failed call on this thread, or null if none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rd_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

struct Failure(RdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(RdStatus::from(&e), e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

/// Runs `body`, recording any error or panic as the thread's last error.
fn guard(body: impl FnOnce() -> FfiResult<()>) -> RdStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => RdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            RdStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(RdStatus::NullArgument, format!("`{name}` is null"))
}

unsafe fn path_arg(ptr: *const c_char, name: &str) -> FfiResult<PathBuf> {
    if ptr.is_null() {
        return Err(null(name));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(RdStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(ptr: *const T, name: &str) -> FfiResult<&'a T> {
    ptr.as_ref().ok_or_else(|| null(name))
}

unsafe fn put<T>(out: *mut *mut T, value: T, name: &str) -> FfiResult<()> {
    if out.is_null() {
        return Err(null(name));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(ptr: *mut T) {
    if !ptr.is_null() {
        drop(Box::from_raw(ptr));
    }
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize, name: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// Loads a corpus TSV (`id, head, tail, label, features`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_corpus_load(path: *const c_char, out: *mut *mut RdCorpus) -> RdStatus {
    guard(|| {
        let corpus = load_corpus(path_arg(path, "path")?, CorpusFormat::Tsv)?;
        put(out, RdCorpus(corpus), "out")
    })
}

/// Number of sentences in the corpus.
///
/// # Safety
/// `corpus` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_corpus_len(corpus: *const RdCorpus, out: *mut usize) -> RdStatus {
    guard(|| {
        let c = handle(corpus, "corpus")?;
        *out.as_mut().ok_or_else(|| null("out"))? = c.0.len();
        Ok(())
    })
}

/// Writes the gold relation id of every sentence into `labels` (length
/// `len`, which must equal the corpus size); unlabeled sentences get
/// `SIZE_MAX`.
///
/// # Safety
/// `labels` must point to `len` writable elements.
#[no_mangle]
pub unsafe extern "C" fn rd_corpus_gold(corpus: *const RdCorpus, labels: *mut usize, len: usize) -> RdStatus {
    guard(|| {
        let c = handle(corpus, "corpus")?;
        let gold = c.0.gold_labels();
        write_labels(labels, len, gold.iter().map(|g| g.unwrap_or(usize::MAX)), gold.len())
    })
}

/// # Safety
/// `corpus` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn rd_corpus_free(corpus: *mut RdCorpus) {
    free(corpus)
}

/// Loads KB triplets (`head, relation, tail`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_kb_load(path: *const c_char, out: *mut *mut RdKb) -> RdStatus {
    guard(|| {
        let kb = load_kb(path_arg(path, "path")?)?;
        put(out, RdKb(kb), "out")
    })
}

/// Number of distinct triplets in the KB.
///
/// # Safety
/// `kb` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_kb_len(kb: *const RdKb, out: *mut usize) -> RdStatus {
    guard(|| {
        let k = handle(kb, "kb")?;
        *out.as_mut().ok_or_else(|| null("out"))? = k.0.len();
        Ok(())
    })
}

/// # Safety
/// `kb` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn rd_kb_free(kb: *mut RdKb) {
    free(kb)
}

/// Trains TransE on the KB.
///
/// # Safety
/// `kb` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_transe_train(
    kb: *const RdKb,
    dim: usize,
    epochs: usize,
    margin: f64,
    lr: f64,
    seed: u64,
    out: *mut *mut RdEmbedding,
) -> RdStatus {
    guard(|| {
        let k = handle(kb, "kb")?;
        let cfg = TransEConfig { dim, epochs, margin, lr, seed };
        let emb = train_transe(&k.0, &cfg)?;
        put(out, RdEmbedding(emb), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_embedding_load(path: *const c_char, out: *mut *mut RdEmbedding) -> RdStatus {
    guard(|| {
        let emb = KBEmbedding::load(path_arg(path, "path")?)?;
        put(out, RdEmbedding(emb), "out")
    })
}

/// # Safety
/// `emb` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rd_embedding_save(emb: *const RdEmbedding, path: *const c_char) -> RdStatus {
    guard(|| {
        let e = handle(emb, "emb")?;
        e.0.save(path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Embedding width.
///
/// # Safety
/// `emb` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_embedding_dim(emb: *const RdEmbedding, out: *mut usize) -> RdStatus {
    guard(|| {
        let e = handle(emb, "emb")?;
        *out.as_mut().ok_or_else(|| null("out"))? = e.0.dim;
        Ok(())
    })
}

/// # Safety
/// `emb` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn rd_embedding_free(emb: *mut RdEmbedding) {
    free(emb)
}

/// Fills `out` with the preset's training defaults (variant regdvae, seed 0).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_train_options_default(preset: RdPreset, out: *mut RdTrainOptions) -> RdStatus {
    guard(|| {
        let slot = out.as_mut().ok_or_else(|| null("out"))?;
        *slot = RdTrainOptions::from(&Preset::from(preset).train_config());
        Ok(())
    })
}

/// Trains a model. `emb` may be null for the `dvae` variant; corpus
/// entities are linked to KB entities by normalized name.
///
/// # Safety
/// `corpus` must be a live handle, `emb` null or a live handle, `options`
/// and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rd_model_train(
    corpus: *const RdCorpus,
    emb: *const RdEmbedding,
    options: *const RdTrainOptions,
    out: *mut *mut RdModel,
) -> RdStatus {
    guard(|| {
        let c = &handle(corpus, "corpus")?.0;
        let cfg = handle(options, "options")?.to_config();
        let kb = match emb.as_ref() {
            Some(e) if cfg.variant.needs_kb() => Some(KbContext::new(c, &e.0, &HashMap::new())?),
            _ => None,
        };
        let outcome = train(c, kb.as_ref(), &cfg)?;
        put(out, RdModel(Checkpoint::from_state(&cfg, c, &outcome.state)), "out")
    })
}

/// Training options the model was built with.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_model_options(model: *const RdModel, out: *mut RdTrainOptions) -> RdStatus {
    guard(|| {
        let m = handle(model, "model")?;
        *out.as_mut().ok_or_else(|| null("out"))? = RdTrainOptions::from(&m.0.config);
        Ok(())
    })
}

/// Cluster of every corpus sentence, written into `labels` (length `len`,
/// which must equal the corpus size). The corpus is matched to the model
/// vocabularies by name; unknown entities or features fail with
/// `RD_STATUS_VOCAB_MISMATCH`. `emb` is needed only for dvae_e models.
///
/// # Safety
/// Handles must be live (`emb` may be null); `labels` must point to `len`
/// writable elements.
#[no_mangle]
pub unsafe extern "C" fn rd_model_predict(
    model: *const RdModel,
    corpus: *const RdCorpus,
    emb: *const RdEmbedding,
    mode: RdMode,
    labels: *mut usize,
    len: usize,
) -> RdStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let c = m.align_corpus(&handle(corpus, "corpus")?.0)?;
        let pred = match mode {
            RdMode::Encoder => {
                let dense = if m.config.variant.dense_encoder() {
                    let e = emb.as_ref().ok_or_else(|| null("emb"))?;
                    let kb = KbContext::new(&c, &e.0, &HashMap::new())?;
                    let dense = DenseFeatures::from_kb(&c, &kb)?;
                    if dense.dim != m.params.encoder.dense_dim {
                        return Err(Error::VocabMismatch(format!(
                            "embedding gives {} dense inputs, model expects {}",
                            dense.dim, m.params.encoder.dense_dim
                        ))
                        .into());
                    }
                    Some(dense)
                } else {
                    None
                };
                predict_encoder(&m.params.encoder, &c, dense.as_ref()).labels
            }
            RdMode::Decoder => predict_decoder(&m.params.decoder, &c).sentence_labels().labels,
        };
        write_labels(labels, len, pred.iter().copied(), pred.len())
    })
}

unsafe fn write_labels(labels: *mut usize, len: usize, values: impl Iterator<Item = usize>, n: usize) -> FfiResult<()> {
    if len != n {
        return Err(Failure(
            RdStatus::InvalidConfig,
            format!("label buffer holds {len} entries, corpus has {n} sentences"),
        ));
    }
    if n == 0 {
        return Ok(());
    }
    if labels.is_null() {
        return Err(null("labels"));
    }
    let dst = std::slice::from_raw_parts_mut(labels, len);
    for (d, v) in dst.iter_mut().zip(values) {
        *d = v;
    }
    Ok(())
}

/// Saves the model as a text checkpoint.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rd_model_save(model: *const RdModel, path: *const c_char) -> RdStatus {
    guard(|| {
        let m = handle(model, "model")?;
        m.0.save(path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Loads a checkpoint written by `rd_model_save` or `reldisc train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_model_load(path: *const c_char, out: *mut *mut RdModel) -> RdStatus {
    guard(|| {
        let ck = Checkpoint::load(path_arg(path, "path")?)?;
        put(out, RdModel(ck), "out")
    })
}

/// # Safety
/// `model` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn rd_model_free(model: *mut RdModel) {
    free(model)
}

/// B-cubed precision, recall and F1 of a predicted clustering against gold
/// labels, both of length `n`.
///
/// # Safety
/// `pred` and `gold` must point to `n` readable elements.
#[no_mangle]
pub unsafe extern "C" fn rd_b_cubed(pred: *const usize, gold: *const usize, n: usize, out: *mut RdBCubed) -> RdStatus {
    guard(|| {
        let p = slice_arg(pred, n, "pred")?;
        let g = slice_arg(gold, n, "gold")?;
        let slot = out.as_mut().ok_or_else(|| null("out"))?;
        let b = b_cubed(p, g)?;
        *slot = RdBCubed {
            precision: b.precision,
            recall: b.recall,
            f1: b.f1,
        };
        Ok(())
    })
}

/// Normalized mutual information of two labelings of length `n`.
///
/// # Safety
/// `pred` and `gold` must point to `n` readable elements.
#[no_mangle]
pub unsafe extern "C" fn rd_nmi(pred: *const usize, gold: *const usize, n: usize, out: *mut f64) -> RdStatus {
    guard(|| {
        let p = slice_arg(pred, n, "pred")?;
        let g = slice_arg(gold, n, "gold")?;
        let slot = out.as_mut().ok_or_else(|| null("out"))?;
        *slot = nmi(p, g)?;
        Ok(())
    })
}
