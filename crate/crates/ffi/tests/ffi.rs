use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use reldisc::config::Preset;
use reldisc::eval::{b_cubed, nmi, predict_encoder};
use reldisc::kbembed::{train_transe, TransEConfig};
use reldisc::synth::{generate, SynthSpec};
use reldisc::trainer::{train, KbContext, Variant};
use reldisc_ffi::*;

fn small_spec() -> SynthSpec {
    SynthSpec {
        n_relations_text: 3,
        n_relations_kb: 4,
        n_entities: 60,
        sentences_per_relation: 30,
        kb_coverage: 0.5,
        ..SynthSpec::default()
    }
}

/// Writes the small synthetic corpus and KB and returns their paths.
fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let data = generate(&small_spec()).unwrap();
    let corpus = dir.join("corpus.tsv");
    let kb = dir.join("kb.tsv");
    data.corpus.save(&corpus).unwrap();
    data.kb.save(&kb).unwrap();
    (corpus, kb)
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = rd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// F1 and NMI of the encoder clustering from training directly in Rust with
/// the settings the C smoke program uses.
fn expected_scores(dir: &Path) -> (f64, f64) {
    let data = generate(&small_spec()).unwrap();
    let corpus = reldisc::datamodel::load_corpus(dir.join("corpus.tsv"), reldisc::datamodel::CorpusFormat::Tsv).unwrap();
    let kb = reldisc::datamodel::load_kb(dir.join("kb.tsv")).unwrap();
    assert_eq!(corpus.len(), data.corpus.len());
    let emb = train_transe(&kb, &TransEConfig { dim: 8, epochs: 50, margin: 1.0, lr: 0.01, seed: 0 }).unwrap();
    let ctx = KbContext::new(&corpus, &emb, &Default::default()).unwrap();
    let mut cfg = Preset::Synth.train_config();
    cfg.epochs = 5;
    let out = train(&corpus, Some(&ctx), &cfg).unwrap();
    let pred = predict_encoder(&out.params.encoder, &corpus, None).labels;
    let gold: Vec<usize> = corpus.gold_labels().into_iter().map(Option::unwrap).collect();
    (b_cubed(&pred, &gold).unwrap().f1, nmi(&pred, &gold).unwrap())
}

#[test]
fn handles_round_trip_and_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus_path, kb_path) = fixture(dir.path());
    let model_path = dir.path().join("model.ckpt");
    unsafe {
        let mut corpus = ptr::null_mut();
        let mut kb = ptr::null_mut();
        let mut emb = ptr::null_mut();
        let mut model = ptr::null_mut();
        let mut reloaded = ptr::null_mut();
        assert_eq!(rd_corpus_load(cstr(&corpus_path).as_ptr(), &mut corpus), RdStatus::Ok);
        assert_eq!(rd_kb_load(cstr(&kb_path).as_ptr(), &mut kb), RdStatus::Ok);
        let mut n = 0usize;
        assert_eq!(rd_corpus_len(corpus, &mut n), RdStatus::Ok);
        assert_eq!(n, 90);
        assert_eq!(rd_transe_train(kb, 8, 50, 1.0, 0.01, 0, &mut emb), RdStatus::Ok);
        let mut dim = 0usize;
        assert_eq!(rd_embedding_dim(emb, &mut dim), RdStatus::Ok);
        assert_eq!(dim, 8);

        let mut opts = std::mem::zeroed::<RdTrainOptions>();
        assert_eq!(rd_train_options_default(RdPreset::Synth, &mut opts), RdStatus::Ok);
        assert_eq!((opts.n_clusters, opts.beta, opts.gamma), (5, 0.005, 0.9));
        assert_eq!(opts.variant, RdVariant::Regdvae);
        opts.epochs = 5;
        assert_eq!(rd_model_train(corpus, emb, &opts, &mut model), RdStatus::Ok);
        let mut back = std::mem::zeroed::<RdTrainOptions>();
        assert_eq!(rd_model_options(model, &mut back), RdStatus::Ok);
        assert_eq!(back, opts);

        assert_eq!(rd_model_save(model, cstr(&model_path).as_ptr()), RdStatus::Ok);
        assert_eq!(rd_model_load(cstr(&model_path).as_ptr(), &mut reloaded), RdStatus::Ok);
        let mut pred = vec![0usize; n];
        let mut pred2 = vec![0usize; n];
        let mut gold = vec![0usize; n];
        assert_eq!(rd_model_predict(model, corpus, ptr::null(), RdMode::Encoder, pred.as_mut_ptr(), n), RdStatus::Ok);
        assert_eq!(rd_model_predict(reloaded, corpus, ptr::null(), RdMode::Encoder, pred2.as_mut_ptr(), n), RdStatus::Ok);
        assert_eq!(pred, pred2);
        assert_eq!(rd_corpus_gold(corpus, gold.as_mut_ptr(), n), RdStatus::Ok);
        let mut dec = vec![0usize; n];
        assert_eq!(rd_model_predict(model, corpus, ptr::null(), RdMode::Decoder, dec.as_mut_ptr(), n), RdStatus::Ok);
        assert!(dec.iter().all(|&l| l < 5));

        let mut b3 = RdBCubed::default();
        let mut score = 0.0;
        assert_eq!(rd_b_cubed(pred.as_ptr(), gold.as_ptr(), n, &mut b3), RdStatus::Ok);
        assert_eq!(rd_nmi(pred.as_ptr(), gold.as_ptr(), n, &mut score), RdStatus::Ok);
        let (f1, expected_nmi) = expected_scores(dir.path());
        assert_eq!(b3.f1, f1);
        assert_eq!(score, expected_nmi);

        rd_model_free(reloaded);
        rd_model_free(model);
        rd_embedding_free(emb);
        rd_kb_free(kb);
        rd_corpus_free(corpus);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut corpus = ptr::null_mut();
        let missing = CString::new("/nonexistent/corpus.tsv").unwrap();
        assert_eq!(rd_corpus_load(missing.as_ptr(), &mut corpus), RdStatus::Io);
        assert!(corpus.is_null());
        assert!(last_error().contains("/nonexistent/corpus.tsv"));

        assert_eq!(rd_corpus_load(ptr::null(), &mut corpus), RdStatus::NullArgument);
        assert!(last_error().contains("path"));

        let bad = [0xffu8, 0];
        assert_eq!(rd_kb_load(bad.as_ptr().cast(), &mut ptr::null_mut()), RdStatus::InvalidUtf8);

        let mut b3 = RdBCubed::default();
        assert_eq!(rd_b_cubed(ptr::null(), ptr::null(), 0, &mut b3), RdStatus::EmptyInput);
        let mut v = 0.0;
        let p = [0usize, 1];
        assert_eq!(rd_nmi(p.as_ptr(), ptr::null(), 2, &mut v), RdStatus::NullArgument);

        // Freeing null is a no-op.
        rd_corpus_free(ptr::null_mut());
        rd_model_free(ptr::null_mut());
    }
}

#[test]
fn regdvae_without_embedding_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus_path, _) = fixture(dir.path());
    unsafe {
        let mut corpus = ptr::null_mut();
        assert_eq!(rd_corpus_load(cstr(&corpus_path).as_ptr(), &mut corpus), RdStatus::Ok);
        let mut opts = std::mem::zeroed::<RdTrainOptions>();
        rd_train_options_default(RdPreset::Synth, &mut opts);
        opts.epochs = 1;
        let mut model = ptr::null_mut();
        assert_eq!(rd_model_train(corpus, ptr::null(), &opts, &mut model), RdStatus::InvalidConfig);
        assert!(last_error().contains(Variant::Regdvae.as_str()));
        opts.variant = RdVariant::Dvae;
        assert_eq!(rd_model_train(corpus, ptr::null(), &opts, &mut model), RdStatus::Ok);
        rd_model_free(model);
        rd_corpus_free(corpus);
    }
}

#[test]
fn metrics_match_hand_values() {
    // One gold cluster of three split 2 + 1: precision 1, recall 5/9.
    let pred = [0usize, 0, 1];
    let gold = [7usize, 7, 7];
    let mut b3 = RdBCubed::default();
    unsafe {
        assert_eq!(rd_b_cubed(pred.as_ptr(), gold.as_ptr(), 3, &mut b3), RdStatus::Ok);
    }
    assert!((b3.precision - 1.0).abs() < 1e-12);
    assert!((b3.recall - 5.0 / 9.0).abs() < 1e-12);
    let mut v = -1.0;
    unsafe {
        assert_eq!(rd_nmi(pred.as_ptr(), pred.as_ptr(), 3, &mut v), RdStatus::Ok);
    }
    assert_eq!(v, 1.0);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(rd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    // Test binaries live in <target>/<profile>/deps.
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/reldisc.h")).unwrap();
    for name in [
        "rd_last_error",
        "rd_version",
        "rd_corpus_load",
        "rd_corpus_len",
        "rd_corpus_gold",
        "rd_corpus_free",
        "rd_kb_load",
        "rd_kb_len",
        "rd_kb_free",
        "rd_transe_train",
        "rd_embedding_load",
        "rd_embedding_save",
        "rd_embedding_dim",
        "rd_embedding_free",
        "rd_train_options_default",
        "rd_model_train",
        "rd_model_options",
        "rd_model_predict",
        "rd_model_save",
        "rd_model_load",
        "rd_model_free",
        "rd_b_cubed",
        "rd_nmi",
        "typedef struct RdTrainOptions",
        "RD_STATUS_VOCAB_MISMATCH = 7",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn c_program_links_against_the_static_library() {
    // `cargo test` links the rlib only, so build the static archive explicitly.
    let built = Command::new(env!("CARGO"))
        .args(["build", "-p", "reldisc-ffi", "--lib"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .status()
        .expect("cargo runs");
    assert!(built.success(), "building the static library failed");
    let lib = target_dir().join("libreldisc_ffi.a");
    assert!(lib.is_file(), "static library not built at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let status = Command::new(std::env::var("CC").unwrap_or_else(|_| "cc".into()))
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler runs");
    assert!(status.success(), "C smoke program failed to compile");

    let (corpus, kb) = fixture(dir.path());
    let model = dir.path().join("c_model.ckpt");
    let out = Command::new(&exe).arg(&corpus).arg(&kb).arg(&model).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "smoke failed: {}\n{}", stdout, String::from_utf8_lossy(&out.stderr));
    let value = |key: &str| -> String {
        stdout
            .lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
            .unwrap_or_else(|| panic!("no `{key}` in output:\n{stdout}"))
            .to_string()
    };
    assert_eq!(value("missing_status"), (RdStatus::Io as i32).to_string());
    assert_eq!(value("missing_has_message"), "1");
    assert_eq!(value("n"), "90");
    assert_eq!(value("reload_same"), "1");
    assert_eq!(value("short_buffer"), (RdStatus::InvalidConfig as i32).to_string());
    let (f1, expected_nmi) = expected_scores(dir.path());
    assert_eq!(value("f1").parse::<f64>().unwrap(), f1);
    assert_eq!(value("nmi").parse::<f64>().unwrap(), expected_nmi);
}
