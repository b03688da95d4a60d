//! Command-line front end. `main.rs` only parses arguments and maps the
//! result to an exit code.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{filter_by_duration, generate_corpus, Corpus};
use crate::decode::{evaluate_logprobs, infer_corpus, tune_fusion, MergeMode, NgramLm};
use crate::error::{Error, Result};
use crate::model::AcousticModel;
use crate::train::{format_table, hyperparam_sweep, TrainData, Trainer};

/// Exit status for a run that completed.
pub const EXIT_OK: i32 = 0;
/// Any failure without a more specific code.
pub const EXIT_FAILURE: i32 = 1;
/// Bad command-line usage (clap's own code).
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_PATH: i32 = 3;
/// Malformed or mismatched configuration, or a malformed file.
pub const EXIT_CONFIG: i32 = 4;
/// Data that cannot be trained or evaluated on.
pub const EXIT_DATA: i32 = 5;
pub const EXIT_DIVERGED: i32 = 6;
/// A gradient check exceeded its tolerance.
pub const EXIT_GRADCHECK: i32 = 7;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MissingPath(_) => EXIT_MISSING_PATH,
        Error::Config(_) | Error::ConfigMismatch | Error::Format { .. } | Error::Json(_) => EXIT_CONFIG,
        Error::EmptyCorpus(_)
        | Error::AlignmentInfeasible { .. }
        | Error::InputTooShort { .. }
        | Error::NoNegatives
        | Error::UndefinedRate => EXIT_DATA,
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "joint-asr", version, about = "Joint contrastive + CTC speech recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration; missing keys take the preset's values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `toy` or `paper`.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// Omit for supervised-only training.
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    /// Defaults to a split of the labeled corpus.
    #[arg(long)]
    pub valid: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes labeled, unlabeled and validation corpora under `--out`.
    SynthData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains one model; the run directory receives the resolved config,
    /// metrics.jsonl, best.ckpt and last.ckpt.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        corpora: CorpusArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Decodes a labeled corpus and reports WER and CER.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// 0 selects best-path decoding.
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, value_parser = parse_merge)]
        merge: Option<MergeMode>,
        /// N-gram LM file; written here when `--lm-from` is also given.
        #[arg(long)]
        lm: Option<PathBuf>,
        /// Trains the LM on this corpus's transcripts.
        #[arg(long)]
        lm_from: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        alpha: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        beta: Option<f64>,
        /// Grid-searches alpha and beta on the evaluated corpus first.
        #[arg(long)]
        tune: bool,
        /// Per-utterance JSONL report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trains every cell of the configured grid for every seed.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        corpora: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds, overriding the configured ones.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Finite-difference checks of every operation and both losses.
    Gradcheck {
        /// Runs only the suites whose name contains this string.
        #[arg(long)]
        only: Option<String>,
    },
    /// Writes curves.csv and curves.svg from a run's metrics.jsonl.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_merge(s: &str) -> std::result::Result<MergeMode, String> {
    match s {
        "log-sum-exp" | "sum" => Ok(MergeMode::LogSumExp),
        "max" => Ok(MergeMode::Max),
        _ => Err(format!("unknown merge mode {s:?} (log-sum-exp or max)")),
    }
}

fn resolve(a: &ConfigArgs) -> Result<RunConfig> {
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p, a.preset.as_deref())?,
        None => RunConfig::preset(a.preset.as_deref().unwrap_or("toy"))?,
    };
    Ok(match a.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn load_corpus(p: &Path) -> Result<Corpus> {
    if !p.exists() {
        return Err(Error::MissingPath(p.to_path_buf()));
    }
    Corpus::load(p)
}

/// Command-line paths override the `[paths]` section; the resolved ones are
/// written back so the echoed config describes the run.
fn load_data(cfg: &mut RunConfig, c: &CorpusArgs) -> Result<TrainData> {
    let pick = |arg: &Option<PathBuf>, conf: &Option<PathBuf>| arg.clone().or_else(|| conf.clone());
    cfg.paths.labeled = pick(&c.labeled, &cfg.paths.labeled);
    cfg.paths.unlabeled = pick(&c.unlabeled, &cfg.paths.unlabeled);
    cfg.paths.valid = pick(&c.valid, &cfg.paths.valid);
    let lab_path = cfg
        .paths
        .labeled
        .clone()
        .ok_or_else(|| Error::Config("no labeled corpus (--labeled or paths.labeled)".into()))?;
    let (lo, hi) = (cfg.data.min_duration_s, cfg.data.max_duration_s);
    let labeled = filter_by_duration(&load_corpus(&lab_path)?, lo, hi)?;
    let (labeled, valid) = match &cfg.paths.valid {
        Some(v) => (labeled, load_corpus(v)?),
        None => labeled.split_tail(cfg.data.valid_split),
    };
    let unlabeled = match &cfg.paths.unlabeled {
        Some(u) => filter_by_duration(&load_corpus(u)?, lo, hi)?,
        None => Corpus::new(labeled.sample_rate, Vec::new()),
    };
    TrainData::new(&labeled, &unlabeled, &valid)
}

fn synth_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    for (name, spec) in [
        ("labeled", &cfg.data.labeled),
        ("unlabeled", &cfg.data.unlabeled),
        ("valid", &cfg.data.valid),
    ] {
        let mut corpus = generate_corpus(spec)?;
        if name == "unlabeled" {
            corpus = corpus.unlabeled();
        }
        corpus.save(&out.join(name))?;
        println!("{name}: {} utterances, {:.1} s", corpus.len(), corpus.total_duration());
    }
    cfg.echo(out)
}

fn train_cmd(mut cfg: RunConfig, corpora: &CorpusArgs, out: Option<PathBuf>, resume: Option<PathBuf>) -> Result<()> {
    let data = load_data(&mut cfg, corpora)?;
    cfg.paths.out = out.or(cfg.paths.out.clone());
    let dir = cfg
        .paths
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output directory (--out or paths.out)".into()))?;
    let trainer = match &resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            ck.check_config(&cfg.model, Some(&cfg.trainer))?;
            Trainer::resume(&ck, cfg.trainer.clone(), data)?
        }
        None => {
            if dir.join("metrics.jsonl").exists() {
                return Err(Error::Config(format!(
                    "{} already holds a run; pass --resume to continue it",
                    dir.display()
                )));
            }
            Trainer::new(AcousticModel::new(cfg.model.clone(), cfg.seed)?, cfg.trainer.clone(), data)?
        }
    };
    cfg.echo(&dir)?;
    let outcome = trainer.with_output(&dir)?.run()?;
    let st = &outcome.state;
    println!(
        "updates {} (unsupervised {}, supervised {}), best valid WER {} at step {}",
        st.global_step,
        st.unsup_steps,
        st.sup_steps,
        st.best_wer.map_or("-".into(), |w| format!("{w:.4}")),
        st.best_step.map_or("-".into(), |s| s.to_string()),
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval_cmd(
    cfg: RunConfig,
    checkpoint: &Path,
    corpus: &Path,
    beam: Option<usize>,
    merge: Option<MergeMode>,
    lm_path: Option<PathBuf>,
    lm_from: Option<PathBuf>,
    alpha: Option<f64>,
    beta: Option<f64>,
    tune: bool,
    out: Option<PathBuf>,
) -> Result<()> {
    let model = Checkpoint::load(checkpoint)?.build_model()?;
    let corpus = load_corpus(corpus)?;
    let mut dc = cfg.decode;
    if let Some(b) = beam {
        dc.beam_size = b;
    }
    if let Some(m) = merge {
        dc.merge = m;
    }
    dc.alpha = alpha.unwrap_or(dc.alpha);
    dc.beta = beta.unwrap_or(dc.beta);
    dc.validate()?;
    let lm = match (&lm_from, &lm_path) {
        (Some(src), _) => {
            let text = load_corpus(src)?;
            let lm = NgramLm::train(&text.transcripts(), dc.lm_order, dc.smoothing.clone())?;
            if let Some(p) = &lm_path {
                lm.save(p)?;
            }
            Some(lm)
        }
        (None, Some(p)) => Some(NgramLm::load(p)?),
        (None, None) => None,
    };
    if (dc.alpha != 0.0 || dc.beta != 0.0 || tune) && lm.is_none() {
        return Err(Error::Config("fusion needs an LM (--lm or --lm-from)".into()));
    }
    if lm.is_some() && dc.beam_size == 0 {
        return Err(Error::Config("LM fusion needs --beam >= 1".into()));
    }
    let items = infer_corpus(&model, &corpus)?;
    let blank = model.config().blank();
    if let (true, Some(lm)) = (tune, &lm) {
        let t = tune_fusion(&items, blank, &dc, lm)?;
        println!("tuned alpha {} beta {} (WER {:.4})", t.alpha, t.beta, t.wer);
        dc.alpha = t.alpha;
        dc.beta = t.beta;
    }
    let report = evaluate_logprobs(&items, blank, &dc, lm.as_ref())?;
    if let Some(p) = &out {
        report.write_jsonl(p)?;
    }
    println!("{}", serde_json::to_string(&report.summary)?);
    Ok(())
}

fn sweep_cmd(mut cfg: RunConfig, corpora: &CorpusArgs, out: &Path, seeds: Option<Vec<u64>>) -> Result<()> {
    if let Some(s) = seeds {
        cfg.sweep.seeds = s;
    }
    let data = load_data(&mut cfg, corpora)?;
    cfg.paths.out = Some(out.to_path_buf());
    cfg.echo(out)?;
    let rows = hyperparam_sweep(&cfg.model, &cfg.trainer, &cfg.sweep, &data, Some(out))?;
    let table = format_table(&rows);
    std::fs::write(out.join("results.md"), &table)?;
    std::fs::write(out.join("results.json"), serde_json::to_string_pretty(&rows)?)?;
    print!("{table}");
    Ok(())
}

fn gradcheck_cmd(only: Option<&str>) -> Result<i32> {
    let reports = crate::gradcheck::run_all(only)?;
    if reports.is_empty() {
        return Err(Error::Config(format!("no gradient suite matches {:?}", only.unwrap_or(""))));
    }
    for r in &reports {
        println!(
            "{} {:<20} {:>6} checked  max rel err {:.3e} (tol {:.0e})",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.checked,
            r.max_rel_err,
            r.tolerance
        );
    }
    Ok(if reports.iter().all(|r| r.passed) { EXIT_OK } else { EXIT_GRADCHECK })
}

/// Executes a parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::SynthData { cfg, out } => synth_data(&resolve(&cfg)?, &out)?,
        Command::Train {
            cfg,
            corpora,
            out,
            resume,
        } => train_cmd(resolve(&cfg)?, &corpora, out, resume)?,
        Command::Eval {
            cfg,
            checkpoint,
            corpus,
            beam,
            merge,
            lm,
            lm_from,
            alpha,
            beta,
            tune,
            out,
        } => eval_cmd(resolve(&cfg)?, &checkpoint, &corpus, beam, merge, lm, lm_from, alpha, beta, tune, out)?,
        Command::Sweep {
            cfg,
            corpora,
            out,
            seeds,
        } => sweep_cmd(resolve(&cfg)?, &corpora, &out, seeds)?,
        Command::Gradcheck { only } => return gradcheck_cmd(only.as_deref()),
        Command::Plot { metrics, out } => {
            let pts = crate::plot::plot_metrics(&metrics, &out)?;
            println!("{} points written to {}", pts.len(), out.display());
        }
    }
    Ok(EXIT_OK)
}

/// Sizes the global thread pool from `JOINT_ASR_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("JOINT_ASR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| Error::Config(format!("JOINT_ASR_THREADS={v:?} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    use super::*;

    #[test]
    fn command_line_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from([
            "joint-asr", "eval", "--checkpoint", "a.ckpt", "--corpus", "v", "--beam", "8", "--beta", "-1",
            "--merge", "max",
        ])
        .unwrap();
        match cli.command {
            Command::Eval { beam, beta, merge, .. } => {
                assert_eq!(beam, Some(8));
                assert_eq!(beta, Some(-1.0));
                assert_eq!(merge, Some(MergeMode::Max));
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["joint-asr", "train", "--bogus"]).is_err());
    }

    #[test]
    fn error_codes_are_distinct() {
        let codes = [
            exit_code(&Error::MissingPath("x".into())),
            exit_code(&Error::Config("x".into())),
            exit_code(&Error::EmptyCorpus("x".into())),
            exit_code(&Error::Diverged { step: 1 }),
            exit_code(&Error::contract("x")),
        ];
        let mut sorted = codes.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), codes.len());
        assert!(!codes.contains(&EXIT_OK) && !codes.contains(&EXIT_USAGE));
    }
}
