//! The five pipeline commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fedembed_core::corpus::{self, TrainPair};
use fedembed_core::embedder::{FeatureExtractor, ModelParams};
use fedembed_core::error::{Error, Result};
use fedembed_core::fed::{self, build_client_datasets, FileRoundSink, HeContext, Mode};
use fedembed_core::he::{save_public_key, save_secret_key};
use fedembed_core::io;
use fedembed_core::retrieval::{build_index, evaluate, MetricReport};
use fedembed_core::texteval::{evaluate_text, TextPair};

use crate::config::RunConfig;
use crate::manifest::{hash_file, write_manifest};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// Generates the synthetic dataset files: one training JSONL per client,
/// the held-out eval queries, the retrieval corpus, and a manifest with
/// content hashes.
pub fn cmd_gen(config_path: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(s) = seed {
        cfg.corpus.seed = s;
    }
    let generated = corpus::generate(&cfg.corpus)?;
    ensure_dir(out)?;

    let mut files: BTreeMap<String, String> = BTreeMap::new();
    for client in 0..cfg.corpus.n_clients as u64 {
        let pairs: Vec<TrainPair> = generated
            .pairs
            .iter()
            .filter(|p| p.client_id == client)
            .cloned()
            .collect();
        let name = format!("train_client_{client}.jsonl");
        let path = out.join(&name);
        corpus::save_pairs(&path, &pairs)?;
        files.insert(name, hash_file(&path)?);
    }
    let eval_path = out.join("eval.jsonl");
    corpus::save_eval(&eval_path, &generated.eval)?;
    files.insert("eval.jsonl".into(), hash_file(&eval_path)?);

    let corpus_path = out.join("corpus.jsonl");
    corpus::save_corpus(&corpus_path, &generated.corpus)?;
    files.insert("corpus.jsonl".into(), hash_file(&corpus_path)?);

    write_manifest(out, &cfg, &files)?;
    log::info!(
        "generated {} pairs, {} eval queries, {} corpus chunks into {}",
        generated.pairs.len(),
        generated.eval.len(),
        generated.corpus.len(),
        out.display()
    );
    Ok(())
}

pub struct TrainOverrides {
    pub seed: Option<u64>,
    pub rounds: Option<usize>,
    pub he: Option<bool>,
    pub client_id: Option<u64>,
}

fn load_training_pairs(data: &Path) -> Result<Vec<TrainPair>> {
    let entries = std::fs::read_dir(data).map_err(|e| Error::Io {
        path: data.to_path_buf(),
        source: e,
    })?;
    let mut names: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("train_client_") && n.ends_with(".jsonl"))
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Config(format!(
            "no train_client_*.jsonl files in {}",
            data.display()
        )));
    }
    let mut pairs = Vec::new();
    for path in names {
        pairs.extend(corpus::load_pairs(&path)?);
    }
    Ok(pairs)
}

/// Trains in the requested mode and writes the final checkpoint, per-round
/// checkpoints, the round log and a manifest.
pub fn cmd_train(
    config_path: Option<&Path>,
    data: &Path,
    mode: Mode,
    out: &Path,
    overrides: TrainOverrides,
) -> Result<()> {
    let mut cfg = RunConfig::load(config_path)?;
    cfg.fed.mode = mode;
    if let Some(s) = overrides.seed {
        cfg.fed.seed = s;
    }
    if let Some(r) = overrides.rounds {
        cfg.fed.rounds = r;
    }
    if let Some(he) = overrides.he {
        cfg.fed.he_enabled = he;
    }
    if let Some(c) = overrides.client_id {
        cfg.fed.client_id = Some(c);
    }
    cfg.fed.validate()?;

    let pairs = load_training_pairs(data)?;
    let mut files: BTreeMap<String, String> = BTreeMap::new();

    let extractor = FeatureExtractor::new(cfg.model.d_in, cfg.model.hash_seed)?;
    let clients = build_client_datasets(&pairs, &extractor);
    let init = ModelParams::seeded_uniform(
        cfg.model.d_out,
        cfg.model.d_in,
        cfg.model.init_scale,
        cfg.fed.seed,
    );

    ensure_dir(out)?;
    let use_he = cfg.fed.he_enabled && cfg.fed.mode == Mode::FedE4Rag;
    let he_ctx = if use_he {
        let enc_seed = cfg.he.seeded_encryption.then_some(cfg.fed.seed);
        let ctx = HeContext::setup(cfg.he.params(), cfg.fed.seed, enc_seed)?;
        save_public_key(&out.join("pk.json"), &ctx.pk)?;
        save_secret_key(&out.join("sk.json"), &ctx.sk)?;
        Some(ctx)
    } else {
        None
    };

    let mut sink = FileRoundSink::new(out)?;
    let result = fed::run(&cfg.fed, init, &clients, he_ctx.as_ref(), Some(&mut sink))?;

    let final_path = out.join("final.json");
    io::write_text(&final_path, &result.params.to_json())?;
    files.insert("final.json".into(), hash_file(&final_path)?);
    let rounds_path = out.join("rounds.jsonl");
    if rounds_path.exists() {
        files.insert("rounds.jsonl".into(), hash_file(&rounds_path)?);
    }
    write_manifest(out, &cfg, &files)?;

    let last_loss = result
        .records
        .last()
        .map(|r| r.mean_local_loss())
        .unwrap_or(f64::NAN);
    log::info!(
        "trained mode={mode:?} rounds={} final mean loss {last_loss:.6}",
        result.records.len()
    );
    Ok(())
}

pub struct EvalRetrievalArgs {
    pub percent: bool,
    pub acc_theta: Option<f64>,
    pub acc_mode: Option<String>,
    pub run_name: Option<String>,
}

/// Embeds the corpus under a checkpoint, retrieves for every eval query
/// and writes the metric report as JSON and CSV.
pub fn cmd_eval_retrieval(
    config_path: Option<&Path>,
    checkpoint: &Path,
    eval_path: &Path,
    corpus_path: &Path,
    out: &Path,
    args: EvalRetrievalArgs,
) -> Result<()> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(t) = args.acc_theta {
        cfg.eval.acc_theta = t;
    }
    if let Some(m) = args.acc_mode {
        cfg.eval.acc_mode = m;
    }
    let opts = cfg.eval.options()?;

    let params = ModelParams::from_json(&io::read_text(checkpoint)?)?;
    let eval_set = corpus::load_eval(eval_path)?;
    let chunks = corpus::load_corpus(corpus_path)?;
    // featurizer dimension must match the checkpoint, whatever the config says
    let extractor = FeatureExtractor::new(params.d_in(), cfg.model.hash_seed)?;

    let index = build_index(&params, &extractor, &chunks)?;
    let report = evaluate(&index, &params, &extractor, &eval_set, &opts)?;

    ensure_dir(out)?;
    let run_name = args.run_name.unwrap_or_else(|| {
        checkpoint
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("run")
            .to_string()
    });
    io::write_text(&out.join("report.json"), &report.to_json(args.percent))?;
    io::write_text(&out.join("report.csv"), &report.to_csv(&run_name, args.percent))?;
    log::info!(
        "evaluated {} queries against {} chunks",
        eval_set.len(),
        index.len()
    );
    Ok(())
}

/// Scores externally produced answers against references and writes the
/// generation-metric report.
pub fn cmd_eval_text(answers: &Path, out: &Path) -> Result<()> {
    let pairs: Vec<TextPair> = io::read_jsonl(answers)?;
    let report = evaluate_text(&pairs)?;
    ensure_dir(out)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    io::write_text(&out.join("gen_report.json"), &text)?;
    log::info!("scored {} answer pairs", pairs.len());
    Ok(())
}

/// Joins metric reports into a metrics-by-runs CSV matrix.
pub fn cmd_compare(report_paths: &[PathBuf], out: Option<&Path>) -> Result<()> {
    if report_paths.len() < 2 {
        return Err(Error::Config(
            "compare needs at least two report files".into(),
        ));
    }
    let mut names = Vec::new();
    let mut reports = Vec::new();
    for (i, path) in report_paths.iter().enumerate() {
        let report = MetricReport::from_json(&io::read_text(path)?)?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .map(str::to_string)
            .unwrap_or_else(|| format!("run{i}"));
        let name = if names.contains(&stem) {
            format!("{stem}_{i}")
        } else {
            stem
        };
        names.push(name);
        reports.push(report);
    }

    let first_keys: Vec<&str> = reports[0].entries().iter().map(|(k, _)| k.as_str()).collect();
    for (i, r) in reports.iter().enumerate().skip(1) {
        let mut a: Vec<&str> = first_keys.clone();
        let mut b: Vec<&str> = r.entries().iter().map(|(k, _)| k.as_str()).collect();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(Error::Config(format!(
                "metric sets differ between {} and {}",
                report_paths[0].display(),
                report_paths[i].display()
            )));
        }
    }

    let mut csv = String::from("metric");
    for n in &names {
        csv.push(',');
        csv.push_str(n);
    }
    csv.push('\n');
    for key in first_keys {
        csv.push_str(key);
        for r in &reports {
            csv.push(',');
            csv.push_str(&r.get(key).expect("key checked").to_string());
        }
        csv.push('\n');
    }

    match out {
        Some(path) => io::write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
