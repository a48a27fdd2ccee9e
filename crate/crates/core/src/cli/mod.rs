//! Command-line front end: `train`, `eval`, `analyze`, `gen` and `inspect`.
//!
//! Every subcommand that writes files puts them under `--out` together with
//! `manifest.json`, which lists each file with its size and SHA-256.

mod plot;

pub use plot::{render_svg_lineplot, write_svg_lineplot, Axes, Marker, Series, PALETTE};

use crate::analysis::{
    centered_cosine_curve, collect_states, corr_csv, geometry_csv, geometry_report, halflives_csv,
    horizons_memory_csv, horizons_state_csv, log_lags, mean_direction_csv, mean_direction_report, pca_csv,
    retention_curves, GeometryReport, Pool, RetentionReport, DEFAULT_POOL_THRESHOLD,
};
use crate::error::{GpnError, Result};
use crate::exec::ExecPolicy;
use crate::model::{Mode, ModelConfig};
use crate::trainer::{
    evaluate_ppl, gen_assoc_recall, inspect_checkpoint, load_checkpoint, load_corpus, tokens_of, train_loop,
    unigram_counts, Corpus, TrainHyper, TrainOptions,
};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "gpn", version, about = "Grounded prediction networks: train, evaluate and analyze")]
pub struct Cli {
    /// Run chunked work on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a byte-level model on a text corpus.
    Train(TrainArgs),
    /// Report mean CE, perplexity and bits per byte of a checkpoint.
    Eval(EvalArgs),
    /// Collect states from a checkpoint and write geometry, mean-direction and horizon reports.
    Analyze(AnalyzeArgs),
    /// Generate an associative-recall dataset.
    Gen(GenArgs),
    /// Print a checkpoint's header, config and tensor shapes.
    Inspect(InspectArgs),
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Flat JSON with any ModelConfig and TrainHyper fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Total optimizer steps. Without `--warmup` the warmup keeps its share of the run.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory for eval.csv; nothing is written without it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "val")]
    pub split: Split,
    /// Window length; defaults to the checkpoint's training sequence length.
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Evaluate at most this many predicted tokens.
    #[arg(long)]
    pub tokens: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Geometry,
    Mean,
    Horizons,
    All,
}

#[derive(Debug, clap::Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub which: Which,
    #[arg(long, value_enum, default_value = "val")]
    pub split: Split,
    #[arg(long, default_value_t = 100_000)]
    pub tokens: usize,
    /// Length of each state-collection window, in tokens.
    #[arg(long, default_value_t = 1024)]
    pub window: usize,
    #[arg(long, default_value_t = 512)]
    pub max_lag: usize,
    #[arg(long, default_value_t = DEFAULT_POOL_THRESHOLD)]
    pub pool_threshold: f64,
    /// Disjoint batches for the mean-direction stability check.
    #[arg(long, default_value_t = 4)]
    pub batches: usize,
    #[arg(long, default_value_t = 16)]
    pub top_k: usize,
}

#[derive(Debug, clap::Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub n_pairs: usize,
    #[arg(long, default_value_t = 64)]
    pub key_vocab: usize,
    #[arg(long, default_value_t = 64)]
    pub val_vocab: usize,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
}

#[derive(Debug, clap::Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
}

/// Model and training settings in one flat record, as stored in `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(flatten)]
    pub train: TrainHyper,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { model: ModelConfig::desk(Mode::GpnM), train: TrainHyper::default() }
    }
}

/// Overlays the keys of a flat JSON object on `base`. Unknown keys are
/// rejected.
pub fn merge_config(base: &RunConfig, json: &str) -> Result<RunConfig> {
    let overlay: serde_json::Value = serde_json::from_str(json)?;
    let overlay = overlay.as_object().ok_or_else(|| GpnError::Usage("config file must hold a JSON object".into()))?;
    let mut merged = serde_json::to_value(base)?;
    let obj = merged.as_object_mut().expect("RunConfig serializes to an object");
    for (k, v) in overlay {
        if !obj.contains_key(k) {
            return Err(GpnError::Usage(format!("unknown config key {k:?}")));
        }
        obj.insert(k.clone(), v.clone());
    }
    serde_json::from_value(merged).map_err(|e| GpnError::Usage(format!("config: {e}")))
}

fn resolve_train_config(args: &TrainArgs, base: RunConfig) -> Result<RunConfig> {
    let mut rc = match &args.config {
        Some(path) => merge_config(&base, &read_text(path)?)?,
        None => base,
    };
    if let Some(m) = args.mode {
        rc.model.mode = m;
    }
    if let Some(s) = args.seed {
        rc.train.seed = s;
    }
    if let Some(steps) = args.steps {
        if args.warmup.is_none() {
            rc.train.warmup_steps = rc.train.warmup_steps * steps / rc.train.total_steps.max(1);
        }
        rc.train.total_steps = steps;
    }
    if let Some(w) = args.warmup {
        rc.train.warmup_steps = w;
    }
    if let Some(b) = args.batch {
        rc.train.batch = b;
    }
    if let Some(t) = args.seq_len {
        rc.train.seq_len = t;
    }
    if let Some(lr) = args.lr {
        rc.train.peak_lr = lr;
    }
    rc.model.validate().map_err(as_usage)?;
    rc.train.validate().map_err(as_usage)?;
    Ok(rc)
}

fn as_usage(e: GpnError) -> GpnError {
    match e {
        GpnError::Config(m) => GpnError::Usage(m),
        other => other,
    }
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(GpnError::Usage(format!("{} does not exist", path.display())));
    }
    Ok(std::fs::read_to_string(path)?)
}

fn open_corpus(path: &Path, val_fraction: f64) -> Result<Corpus> {
    if !path.exists() {
        return Err(GpnError::Usage(format!("corpus {} does not exist", path.display())));
    }
    load_corpus(path, val_fraction)
}

fn policy(cli: &Cli) -> ExecPolicy {
    if cli.sequential {
        ExecPolicy::Sequential
    } else {
        ExecPolicy::Auto
    }
}

fn write_out(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

/// Writes `manifest.json` listing every other regular file in `dir`, sorted
/// by name, with its size and SHA-256.
pub fn write_manifest(dir: &Path) -> Result<()> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n != "manifest.json" && !n.ends_with(".tmp"))
        .collect();
    names.sort();
    let mut files = Vec::with_capacity(names.len());
    for n in names {
        let bytes = std::fs::read(dir.join(&n))?;
        files.push(serde_json::json!({
            "name": n,
            "bytes": bytes.len(),
            "sha256": hex::encode(Sha256::digest(&bytes)),
        }));
    }
    let manifest = serde_json::json!({ "files": files });
    write_out(dir, "manifest.json", serde_json::to_string_pretty(&manifest)? + "\n")
}

fn split_tokens(corpus: &Corpus, split: Split) -> Vec<u32> {
    tokens_of(match split {
        Split::Train => corpus.train(),
        Split::Val => corpus.val(),
    })
}

pub fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let resume = args.resume.as_deref().map(load_checkpoint).transpose()?;
    let base = match &resume {
        Some(ck) => RunConfig { model: ck.config, train: ck.hyper.clone().unwrap_or_default() },
        None => RunConfig::default(),
    };
    let rc = resolve_train_config(args, base)?;
    let corpus = open_corpus(&args.corpus, rc.train.val_fraction)?;
    std::fs::create_dir_all(&args.out)?;
    if let Some(path) = &args.config {
        write_out(&args.out, "config.input.json", read_text(path)?)?;
    }
    write_out(&args.out, "config.json", serde_json::to_string_pretty(&rc)? + "\n")?;
    let opts = TrainOptions {
        out_dir: Some(args.out.clone()),
        resume,
        policy: policy(cli),
        stop_after: None,
        verbose: !args.quiet,
    };
    let result = train_loop(&rc.model, &rc.train, &corpus, &opts);
    write_manifest(&args.out)?;
    let out = result?;
    if let Some(last) = out.metrics.last() {
        println!("step {} train_ce {:.6} val_ce {}", last.step, last.train_ce, last.val_ce.map_or("-".into(), |v| format!("{v:.6}")));
    }
    Ok(())
}

pub fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&args.ckpt)?;
    let hyper = ck.hyper.clone().unwrap_or_default();
    let corpus = open_corpus(&args.corpus, hyper.val_fraction)?;
    let mut data = split_tokens(&corpus, args.split);
    if let Some(n) = args.tokens {
        data.truncate(n + 1);
    }
    let seq_len = args.seq_len.unwrap_or(hyper.seq_len);
    let r = evaluate_ppl(&ck.params, &data, seq_len, policy(cli))?;
    let bpb = r.mean_ce / std::f64::consts::LN_2;
    println!("tokens {}", r.tokens);
    println!("mean_ce {}", r.mean_ce);
    println!("ppl {}", r.ppl);
    println!("bits_per_byte {bpb}");
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        let name = args.ckpt.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let split = format!("{:?}", args.split).to_lowercase();
        let csv = format!(
            "checkpoint,step,split,seq_len,tokens,mean_ce,ppl,bits_per_byte\n{name},{},{split},{seq_len},{},{},{},{bpb}\n",
            ck.step, r.tokens, r.mean_ce, r.ppl
        );
        write_out(dir, "eval.csv", csv)?;
        write_manifest(dir)?;
    }
    Ok(())
}

fn geometry_plots(g: &GeometryReport, dir: &Path) -> Result<()> {
    let std_pts = g.std_sorted.iter().enumerate().map(|(i, (_, s))| ((i + 1) as f64, *s)).collect();
    write_svg_lineplot(
        &[Series::new("per-dimension std", std_pts)],
        &Axes { title: "Sorted per-dimension std".into(), x_label: "rank".into(), y_label: "std".into(), log_x: false },
        &dir.join("std_sorted.svg"),
    )?;
    let cv = g.cumvar.iter().enumerate().map(|(i, c)| ((i + 1) as f64, *c)).collect();
    write_svg_lineplot(
        &[Series::new("cumulative variance", cv)],
        &Axes {
            title: "PCA cumulative explained variance".into(),
            x_label: "components".into(),
            y_label: "fraction".into(),
            log_x: false,
        },
        &dir.join("cumvar.svg"),
    )
}

fn retention_plot(r: &RetentionReport, dir: &Path) -> Result<()> {
    let series: Vec<Series> = r
        .curves
        .iter()
        .enumerate()
        .map(|(h, c)| {
            let mut s = Series::new(
                format!("head {h} ({})", r.pools[h]),
                r.lags.iter().skip(1).map(|&k| (k as f64, c[k])).collect(),
            );
            if let Some(k) = r.half_lives[h].filter(|k| *k >= 1.0) {
                let color = match r.pools[h] {
                    Pool::Fast => "#d62728",
                    Pool::Slow => "#1f77b4",
                };
                s.markers.push(Marker { x: k, y: (-1.0f64).exp(), color: color.into() });
            }
            s
        })
        .collect();
    write_svg_lineplot(
        &series,
        &Axes {
            title: "Memory retention per head".into(),
            x_label: "lag (tokens)".into(),
            y_label: "R(k)".into(),
            log_x: true,
        },
        &dir.join("retention.svg"),
    )
}

pub fn cmd_analyze(cli: &Cli, args: &AnalyzeArgs) -> Result<()> {
    let ck = load_checkpoint(&args.ckpt)?;
    let p = &ck.params;
    let hyper = ck.hyper.clone().unwrap_or_default();
    let corpus = open_corpus(&args.corpus, hyper.val_fraction)?;
    let data = split_tokens(&corpus, args.split);
    let horizons = matches!(args.which, Which::Horizons | Which::All);
    if horizons && args.window <= args.max_lag {
        return Err(GpnError::Usage(format!(
            "lag {} needs windows of at least {} tokens, --window is {}",
            args.max_lag,
            args.max_lag + 1,
            args.window
        )));
    }
    let available = data.len().saturating_sub(1);
    if available < args.window {
        return Err(GpnError::Corpus(format!(
            "analysis with window {} (max lag {}) needs at least {} tokens of data, got {}",
            args.window,
            args.max_lag,
            args.window + 1,
            data.len()
        )));
    }
    let n_tokens = args.tokens.min(available);
    let pol = policy(cli);
    let (states, decay) = collect_states(p, &data, n_tokens, args.window, pol)?;
    let dir = &args.out;
    std::fs::create_dir_all(dir)?;
    let mut summary = serde_json::Map::new();
    summary.insert("checkpoint_step".into(), ck.step.into());
    summary.insert("rows".into(), states.rows.into());
    summary.insert("window".into(), args.window.into());

    if matches!(args.which, Which::Geometry | Which::All) {
        let g = geometry_report(&states)?;
        write_out(dir, "geometry.csv", geometry_csv(&g))?;
        write_out(dir, "corr.csv", corr_csv(&g))?;
        write_out(dir, "pca.csv", pca_csv(&g))?;
        geometry_plots(&g, dir)?;
        summary.insert(
            "geometry".into(),
            serde_json::json!({
                "mean_abs_offdiag_corr": g.mean_abs_offdiag_corr,
                "max_abs_offdiag_corr": g.max_abs_offdiag_corr,
                "n_components_90": g.n_components_90,
                "n_components_99": g.n_components_99,
                "stable_rank_raw": g.stable_rank_raw,
                "stable_rank_centered": g.stable_rank_centered,
                "participation_ratio": g.participation_ratio,
                "mean_norm": g.mean_norm,
                "std_norm": g.std_norm,
                "underdetermined": g.underdetermined,
            }),
        );
        println!(
            "geometry: PR {:.2}  stable rank raw {:.2} centered {:.2}  PCs to 90% {}",
            g.participation_ratio, g.stable_rank_raw, g.stable_rank_centered, g.n_components_90
        );
    }

    if matches!(args.which, Which::Mean | Which::All) {
        let unigram = unigram_counts(corpus.train())?;
        let m = mean_direction_report(&states, p, &unigram, args.batches, args.top_k)?;
        write_out(dir, "mean_direction.csv", mean_direction_csv(&m, &unigram))?;
        summary.insert(
            "mean_direction".into(),
            serde_json::json!({
                "mean_norm": m.mean_norm,
                "expected_norm": m.expected_norm,
                "ratio": m.ratio,
                "spearman_unigram": m.spearman_unigram,
                "top_tokens": m.top_tokens.iter().map(|t| t.0).collect::<Vec<_>>(),
                "batch_cosines": m.batch_cosines,
                "running_cosines": m.running_cosines,
                "control_overlap": m.control_overlap,
                "control_cosine": m.control_cosine,
            }),
        );
        let min_cos = m.batch_cosines.iter().copied().fold(f64::INFINITY, f64::min);
        println!(
            "mean direction: |mean|/E|s| {:.3}  spearman {:.3}  min batch cosine {:.4}",
            m.ratio, m.spearman_unigram, min_cos
        );
    }

    if horizons {
        let mut lags = vec![0];
        lags.extend(log_lags(args.max_lag));
        let c = centered_cosine_curve(&states, &lags, pol)?;
        write_out(dir, "horizons_state.csv", horizons_state_csv(&c))?;
        let pick = |v: &[f64]| c.lags.iter().zip(v).filter(|(k, _)| **k > 0).map(|(k, y)| (*k as f64, *y)).collect();
        write_svg_lineplot(
            &[Series::new("raw", pick(&c.raw)), Series::new("centered", pick(&c.centered))],
            &Axes {
                title: "State cosine across lags".into(),
                x_label: "lag (tokens)".into(),
                y_label: "mean cosine".into(),
                log_x: true,
            },
            &dir.join("cosine.svg"),
        )?;
        let mut h = serde_json::json!({
            "lags": c.lags,
            "raw": c.raw,
            "centered": c.centered,
            "degenerate": c.degenerate,
        });
        if decay.heads > 0 {
            let r = retention_curves(&decay, args.max_lag, args.pool_threshold, pol)?;
            write_out(dir, "horizons_memory.csv", horizons_memory_csv(&r))?;
            write_out(dir, "halflives.csv", halflives_csv(&r))?;
            retention_plot(&r, dir)?;
            h["half_lives"] = serde_json::json!(r.half_lives);
            h["pools"] = serde_json::json!(r.pools);
            let mut line = String::from("half-lives:");
            for (hl, pool) in r.half_lives.iter().zip(&r.pools) {
                match hl {
                    Some(k) => write!(line, " {k:.2} ({pool})").unwrap(),
                    None => write!(line, " >{} ({pool})", args.max_lag).unwrap(),
                }
            }
            println!("{line}");
        }
        summary.insert("horizons".into(), h);
        println!(
            "cosine at lag {}: raw {:.4} centered {:.4}",
            c.lags.last().unwrap(),
            c.raw.last().unwrap(),
            c.centered.last().unwrap()
        );
    }
    write_out(dir, "summary.json", serde_json::to_string_pretty(&serde_json::Value::Object(summary))? + "\n")?;
    write_manifest(dir)
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let data = gen_assoc_recall(args.n_pairs, args.key_vocab, args.val_vocab, args.count, args.seed)
        .map_err(as_usage)?;
    std::fs::create_dir_all(&args.out)?;
    let mut seqs = String::new();
    let mut answers = String::from("index,answer_pos,answer\n");
    for (i, (s, &pos)) in data.sequences.iter().zip(&data.answer_pos).enumerate() {
        let line: Vec<String> = s.iter().map(|t| t.to_string()).collect();
        seqs.push_str(&line.join(" "));
        seqs.push('\n');
        writeln!(answers, "{i},{pos},{}", s[pos]).unwrap();
    }
    write_out(&args.out, "recall.txt", seqs)?;
    write_out(&args.out, "answers.csv", answers)?;
    let task = serde_json::json!({
        "n_pairs": args.n_pairs,
        "key_vocab": args.key_vocab,
        "val_vocab": args.val_vocab,
        "query_marker": data.task.query_marker(),
        "vocab": data.task.vocab(),
        "seq_len": data.task.seq_len(),
        "count": args.count,
        "seed": args.seed,
    });
    write_out(&args.out, "task.json", serde_json::to_string_pretty(&task)? + "\n")?;
    write_manifest(&args.out)?;
    println!("{} sequences of {} tokens", args.count, data.task.seq_len());
    Ok(())
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let h = inspect_checkpoint(&args.ckpt)?;
    println!("format version {}", h.version);
    let record: serde_json::Value = serde_json::from_str(&h.record_json)?;
    println!("{}", serde_json::to_string_pretty(&record)?);
    let mut total = 0usize;
    for (name, shape) in &h.tensors {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        println!("{name} [{}]", dims.join(", "));
        total += shape.iter().product::<usize>();
    }
    println!("{} tensors, {total} scalars", h.tensors.len());
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Analyze(a) => cmd_analyze(cli, a),
        Command::Gen(a) => cmd_gen(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

/// Parses arguments, runs the subcommand and returns the process exit code:
/// 0 success, 2 usage, 3 I/O or format, 4 numeric failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            e.exit_code()
        }
    }
}
