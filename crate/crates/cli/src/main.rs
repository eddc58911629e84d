#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod data;
mod fail;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ptmfuse::features::{
    aaindex_ids, encode_aaindex, encode_blosum62, encode_pseaac, parse_dataset, parse_fasta, EmbeddingWriter,
    FeatureBundle, PseAacConfig, ResidueEmbedder, DTYPE_F32,
};
use ptmfuse::model::{Model, ModelConfig};
use ptmfuse::tensor::ParamStore;
use ptmfuse::train::{
    ablation_tsv, checkpoint_bytes, evaluate, gradient_suite, load_checkpoint, run_ablation, scan_tsv,
    sliding_window_scan, train, MetricsReport,
};
use ptmfuse::Tensor;
use sha2::{Digest, Sha256};

use config::{RunConfig, SyntheticConfig};
use data::{read_text, window_rows, Embeddings};
use fail::{Failure, EXIT_GRADCHECK};

#[derive(Parser)]
#[command(name = "ptmfuse", version, about = "Multi-stage feature fusion for PTM site prediction")]
struct Cli {
    /// Log progress at info level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute PseAAC, BLOSUM62 and AAindex feature files.
    Encode(EncodeArgs),
    /// Train a model and write a checkpoint plus history.
    Train(RunArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(CheckpointArgs),
    /// Score every target residue of each FASTA record.
    Scan(ScanArgs),
    /// Train and compare the eight interaction ablations.
    Ablate(RunArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Mini,
    Toy,
    ToyMini,
}

impl Preset {
    fn config(self) -> ModelConfig {
        match self {
            Preset::Full => ModelConfig::full(),
            Preset::Mini => ModelConfig::mini(),
            Preset::Toy => ModelConfig::toy(),
            Preset::ToyMini => ModelConfig::toy_mini(),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Model preset used when no configuration file is given.
    #[arg(long, value_enum, conflicts_with = "config")]
    preset: Option<Preset>,
    /// Use generated data instead of TSV and embedding files.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CheckpointArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    fasta: PathBuf,
    /// Residues to score, e.g. STY; defaults to the configured targets.
    #[arg(long)]
    targets: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Auto,
    Tsv,
    Fasta,
}

#[derive(Args)]
struct EncodeArgs {
    /// Sample TSV (`id  window  label`) or FASTA file.
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, default_value = "ptmfuse-out")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    format: InputFormat,
    /// Window length expected in TSV input.
    #[arg(long, default_value_t = 33)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    pseaac_lambda: usize,
    #[arg(long, default_value_t = 0.05)]
    pseaac_weight: f64,
    /// Comma-separated AAindex ids; defaults to the bundled selection.
    #[arg(long, value_delimiter = ',')]
    aaindex: Option<Vec<String>>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Master width of the checked blocks; the slave width is half.
    #[arg(long, default_value_t = 16)]
    dims: usize,
    #[arg(long, default_value_t = 9)]
    len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = set_threads().and_then(|_| match cli.cmd {
        Cmd::Encode(a) => cmd_encode(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Scan(a) => cmd_scan(a),
        Cmd::Ablate(a) => cmd_ablate(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}

/// Caps the worker pool at `UPTM_THREADS` when set.
fn set_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("UPTM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::config(format!("UPTM_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::config(format!("thread pool: {e}")))
}

/// File config (or preset), then flag overrides.
fn resolve(a: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig {
            model: a.preset.unwrap_or(Preset::Full).config(),
            ..RunConfig::default()
        },
    };
    if let Some(s) = a.seed {
        cfg.model.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.model.epochs = e;
    }
    if let Some(o) = &a.out_dir {
        cfg.out_dir = o.clone();
    }
    if a.synthetic && cfg.synthetic.is_none() {
        cfg.synthetic = Some(SyntheticConfig::default());
    }
    Ok(cfg)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Creates `out_dir` and echoes the resolved configuration into it.
fn prepare_out(cfg: &RunConfig) -> Result<(), Failure> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Failure::io(&cfg.out_dir, e))?;
    write(&cfg.out_dir.join("config.json"), to_json(cfg))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn metrics_tsv(name: &str, m: &MetricsReport, params: usize) -> String {
    let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
    format!(
        "config\tACC\tSEN\tSPEC\tMCC\tAUC\tAP\tparams\n{name}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{params}\n",
        m.acc,
        m.sen,
        m.spec,
        m.mcc,
        opt(m.auc),
        opt(m.ap)
    )
}

fn cmd_train(a: RunArgs) -> Result<(), Failure> {
    let cfg = resolve(&a)?;
    cfg.validate(true, false)?;
    prepare_out(&cfg)?;
    let (train_set, test_set) = data::splits(&cfg, true, false)?;
    log::info!("train: {} samples", train_set.len());
    let t = train(&cfg.model, &train_set)?;
    let bytes = checkpoint_bytes(&t.store)?;
    let ckpt = cfg.out_dir.join("checkpoint.uptm");
    write(&ckpt, &bytes)?;
    let digest = sha256_hex(&bytes);
    write(&cfg.out_dir.join("checkpoint.sha256"), format!("{digest}  checkpoint.uptm\n"))?;
    write(&cfg.out_dir.join("history.tsv"), t.history.to_tsv())?;
    write(&cfg.out_dir.join("history.json"), to_json(&t.history))?;
    println!("checkpoint {} sha256 {digest}", ckpt.display());
    println!(
        "epochs {}  params {}  final l_c {:.6}",
        t.history.epochs.len(),
        t.model.param_count(None),
        t.history.epochs.last().map_or(f64::NAN, |e| e.l_c)
    );
    if let Some(test) = test_set {
        let m = evaluate(&t.model, &t.store, &test)?;
        write(&cfg.out_dir.join("metrics.json"), to_json(&m))?;
        write(&cfg.out_dir.join("metrics.tsv"), metrics_tsv("test", &m, t.model.param_count(None)))?;
        println!("test ACC {:.4}  MCC {:.4}  AUC {:?}  AP {:?}", m.acc, m.mcc, m.auc, m.ap);
    }
    Ok(())
}

fn restore(cfg: &RunConfig, path: &Path) -> Result<(Model, ParamStore), Failure> {
    let model = Model::new(&cfg.model)?;
    let mut store = ParamStore::from_layout(&model.layout, cfg.model.seed);
    if !path.is_file() {
        return Err(Failure::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
    }
    load_checkpoint(&mut store, path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    Ok((model, store))
}

fn cmd_eval(a: CheckpointArgs) -> Result<(), Failure> {
    let cfg = resolve(&a.run)?;
    cfg.validate(false, true)?;
    prepare_out(&cfg)?;
    let (model, store) = restore(&cfg, &a.checkpoint)?;
    let (_, test) = data::splits(&cfg, false, true)?;
    let test = test.ok_or_else(|| Failure::config("evaluation needs test_tsv or synthetic data"))?;
    let m = evaluate(&model, &store, &test)?;
    write(&cfg.out_dir.join("metrics.json"), to_json(&m))?;
    write(&cfg.out_dir.join("metrics.tsv"), metrics_tsv("test", &m, model.param_count(None)))?;
    print!("{}", to_json(&m));
    Ok(())
}

/// File-name-safe form of a record id.
fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn cmd_scan(a: ScanArgs) -> Result<(), Failure> {
    let mut cfg = resolve(&a.run)?;
    if let Some(t) = &a.targets {
        cfg.targets = Some(t.clone());
    }
    let targets = cfg
        .target_bytes()
        .ok_or_else(|| Failure::config("scan needs target residues (--targets or \"targets\")"))?;
    cfg.validate(false, false)?;
    let text = read_text(&a.fasta)?;
    let records = parse_fasta(&text, &a.fasta.display().to_string())?;
    prepare_out(&cfg)?;
    let (model, store) = restore(&cfg, &a.checkpoint)?;
    let m = &cfg.model;
    let embedder = cfg
        .synthetic
        .as_ref()
        .map(|s| ResidueEmbedder::new(s.seed, m.ember_dim));
    let files = match &embedder {
        Some(_) => None,
        None => Some(Embeddings::open(&cfg)?),
    };
    log::info!("scan: {} records from {}", records.len(), a.fasta.display());
    for rec in &records {
        let rows = match (&embedder, &files) {
            (Some(e), _) => {
                let f = |_: usize, w: &str| e.bundle(w, &m.pseaac, &m.aaindex_ids);
                sliding_window_scan(&rec.sequence, &targets, &model, &store, f)?
            }
            (None, Some(files)) => {
                // Per-protein embeddings, one row per residue.
                let full = files.load(&rec.id, rec.sequence.len(), m)?;
                let f = |c: usize, w: &str| {
                    let [a, b, e] = full.each_ref().map(|t| window_rows(t, c, m.window));
                    FeatureBundle::from_window(w, a, b, e, &m.pseaac, &m.aaindex_ids)
                };
                sliding_window_scan(&rec.sequence, &targets, &model, &store, f)?
            }
            _ => unreachable!("one feature source is always set"),
        };
        let path = cfg.out_dir.join(format!("{}.scan.tsv", safe_name(&rec.id)));
        write(&path, scan_tsv(&rows))?;
        let calls = rows.iter().filter(|r| r.call).count();
        println!("{}\t{} residues\t{} calls\t{}", rec.id, rows.len(), calls, path.display());
    }
    Ok(())
}

fn cmd_ablate(a: RunArgs) -> Result<(), Failure> {
    let cfg = resolve(&a)?;
    cfg.validate(true, true)?;
    prepare_out(&cfg)?;
    let (train_set, test) = data::splits(&cfg, true, true)?;
    let test = test.ok_or_else(|| Failure::config("ablation needs test_tsv or synthetic data"))?;
    log::info!("ablation: {} train, {} test samples", train_set.len(), test.len());
    let rows = run_ablation(&cfg.model, &train_set, &test)?;
    let tsv = ablation_tsv(&rows);
    write(&cfg.out_dir.join("ablation.tsv"), &tsv)?;
    write(&cfg.out_dir.join("ablation.json"), to_json(&rows))?;
    print!("{tsv}");
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let entries = gradient_suite(a.dims, a.len, a.seed)?;
    let mut worst: f64 = 0.0;
    for e in &entries {
        println!("{:<18} {:.3e}  ({} coords, worst at {})", e.name, e.max_rel_err, e.coords, e.worst_path);
        // NaN must fail the check.
        worst = if e.max_rel_err.is_nan() { f64::NAN } else { worst.max(e.max_rel_err) };
    }
    println!("max rel err {worst:.3e} (tolerance {:.1e})", a.tol);
    if worst < a.tol {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_GRADCHECK,
            msg: format!("gradient check failed: max rel err {worst:.3e} >= {:.1e}", a.tol),
        })
    }
}

/// One labelled or unlabelled sequence to encode.
struct EncodeItem {
    id: String,
    seq: String,
}

fn encode_items(a: &EncodeArgs) -> Result<Vec<EncodeItem>, Failure> {
    let text = read_text(&a.input)?;
    let source = a.input.display().to_string();
    let fasta = match a.format {
        InputFormat::Fasta => true,
        InputFormat::Tsv => false,
        InputFormat::Auto => text.trim_start().starts_with('>'),
    };
    if fasta {
        Ok(parse_fasta(&text, &source)?
            .into_iter()
            .map(|r| EncodeItem {
                id: r.id,
                seq: r.sequence,
            })
            .collect())
    } else {
        Ok(parse_dataset(&text, &source, a.window, None)?
            .into_iter()
            .map(|r| EncodeItem { id: r.id, seq: r.window })
            .collect())
    }
}

fn cmd_encode(a: EncodeArgs) -> Result<(), Failure> {
    let pseaac = PseAacConfig {
        lambda: a.pseaac_lambda,
        weight: a.pseaac_weight,
    };
    pseaac.validate()?;
    let ids = a.aaindex.clone().unwrap_or_else(aaindex_ids);
    let items = encode_items(&a)?;
    if items.is_empty() {
        return Err(Failure::config(format!("{}: no records", a.input.display())));
    }
    use rayon::prelude::*;
    let encoded: Vec<[Tensor; 3]> = items
        .par_iter()
        .map(|it| {
            let wrap = |e: ptmfuse::Error| Failure::config(format!("{}: record {:?}: {e}", a.input.display(), it.id));
            Ok([
                encode_pseaac(&it.seq, &pseaac).map_err(wrap)?,
                encode_blosum62(&it.seq).map_err(wrap)?,
                encode_aaindex(&it.seq, &ids).map_err(wrap)?,
            ])
        })
        .collect::<Result<_, Failure>>()?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Failure::io(&a.out_dir, e))?;
    for (k, name) in ["pseaac", "blosum62", "aaindex"].iter().enumerate() {
        let mut w = EmbeddingWriter::new(DTYPE_F32)?;
        for (it, t) in items.iter().zip(&encoded) {
            w.push(it.id.clone(), &t[k])?;
        }
        let path = a.out_dir.join(format!("{name}.uptm"));
        write(&path, w.to_bytes()?)?;
        println!("{name}\trows={}\tcols={}\t{}", items.len(), encoded[0][k].shape()[1], path.display());
    }
    Ok(())
}
