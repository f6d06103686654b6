//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 domain-invalid result (failing
//! dilation pattern, inconsistent model), 3 file read/parse/write failure.
//! `--json` switches standard output to one machine-readable document.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use msdr_core::hdc::{hdc_validate, receptive_field, DilationPattern};
use msdr_core::metrics::psnr;
use msdr_core::model::{Model, ModelConfig};
use serde_json::json;

use crate::config::{CliConfig, ModelSection};
use crate::error::{AppError, AppResult, EXIT_INVALID, EXIT_USAGE};
use crate::evaluate::{db_json, denoise_image, eval_noisy, evaluate, render_table};
use crate::{ckpt, corpus, pnm, train};

#[derive(Debug, Parser)]
#[command(name = "msdr", version, about = "Multiscale dilated residual image denoiser")]
struct Cli {
    /// Print one JSON document on standard output instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from a JSON config; flags override config keys.
    Train(TrainArgs),
    /// Denoise one PGM/PPM image.
    Denoise(DenoiseArgs),
    /// Average PSNR of a model over a directory of clean images.
    Eval(EvalArgs),
    /// Check a dilation pattern for gridding with the max-gap rule.
    ValidateHdc(HdcArgs),
    /// Receptive field of a stack of (kernel, dilation) layers.
    Rf(RfArgs),
    /// Configuration, parameter counts and receptive field of a model.
    Info(InfoArgs),
    /// Write the synthetic image corpus as PGM/PPM files.
    GenCorpus(GenArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DenoiseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Treat the input as clean, add noise of this level first and report PSNR.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the synthesized noisy image (requires --sigma).
    #[arg(long)]
    noisy_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the JSON report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HdcArgs {
    /// Comma-separated dilation rates, e.g. 1,2,5.
    #[arg(long, value_delimiter = ',', required = true)]
    rates: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
}

#[derive(Debug, Args)]
struct RfArgs {
    /// Comma-separated kernel:dilation pairs, e.g. 3:1,3:2,3:5.
    #[arg(long, value_delimiter = ',', value_parser = parse_layer, required = true)]
    layers: Vec<(usize, usize)>,
}

#[derive(Debug, Args)]
struct InfoArgs {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    model: Option<PathBuf>,
    /// A freshly initialized model: gray, color, reduced or miniature.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    count: usize,
    #[arg(long, default_value_t = 96)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_layer(s: &str) -> Result<(usize, usize), String> {
    let (k, r) = s
        .split_once(':')
        .ok_or_else(|| format!("expected kernel:dilation, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(k)?, parse(r)?))
}

/// Output channel for one command: text lines or a JSON document.
struct Out {
    json: bool,
}

impl Out {
    fn emit(&self, text: impl FnOnce() -> String, doc: impl FnOnce() -> serde_json::Value) {
        let body = if self.json {
            serde_json::to_string_pretty(&doc()).expect("json")
        } else {
            text()
        };
        // A closed pipe (`msdr info | head`) is not an error worth reporting.
        let _ = writeln!(std::io::stdout().lock(), "{body}");
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let out = Out { json: cli.json };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, &out),
        Command::Denoise(a) => cmd_denoise(a, &out),
        Command::Eval(a) => cmd_eval(a, &out),
        Command::ValidateHdc(a) => cmd_validate_hdc(a, &out),
        Command::Rf(a) => cmd_rf(a, &out),
        Command::Info(a) => cmd_info(a, &out),
        Command::GenCorpus(a) => cmd_gen(a, &out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn cmd_train(a: TrainArgs, out: &Out) -> AppResult<i32> {
    let mut file = match &a.config {
        Some(p) => CliConfig::from_file(p)?,
        None => CliConfig::default(),
    };
    // Flags win over the file.
    file.out_dir = a.out_dir.or(file.out_dir);
    file.data_dir = a.data_dir.or(file.data_dir);
    file.epochs = a.epochs.or(file.epochs);
    file.seed = a.seed.or(file.seed);
    file.sigma = a.sigma.or(file.sigma);
    file.batch_size = a.batch_size.or(file.batch_size);
    file.max_steps = a.max_steps.or(file.max_steps);
    file.resume = a.resume.or(file.resume);
    let cfg = file.resolve()?;
    let images = train::load_corpus(&cfg)?;
    let outcome = train::train(&cfg, &images)?;
    let s = &outcome.summary;
    out.emit(
        // Per-epoch lines already went to the log and train.log.
        || {
            format!(
                "trained {} epochs, {} steps; checkpoint {}",
                s.epochs.len(),
                s.total_steps,
                s.final_checkpoint.display()
            )
        },
        || serde_json::to_value(s).expect("summary serializes"),
    );
    Ok(0)
}

fn load_infer_model(path: &std::path::Path) -> AppResult<Model> {
    // Decoded checkpoints are already in infer mode.
    Ok(ckpt::load(path)?.model)
}

fn cmd_denoise(a: DenoiseArgs, out: &Out) -> AppResult<i32> {
    let model = load_infer_model(&a.model)?;
    let input = pnm::read_file(&a.input)?;
    if input.channels() != model.config().input_channels {
        return Err(AppError::Invalid(format!(
            "{} has {} channels but the model takes {}",
            a.input.display(),
            input.channels(),
            model.config().input_channels
        )));
    }
    let (noisy, clean) = match a.sigma {
        Some(sigma) => (eval_noisy(&input, sigma, a.seed, 0)?, Some(&input)),
        None => {
            if a.noisy_out.is_some() {
                return Err(AppError::Usage("--noisy-out needs --sigma".into()));
            }
            (input.clone(), None)
        }
    };
    let denoised = denoise_image(&model, &noisy)?;
    pnm::write_file(&a.out, &denoised)?;
    if let Some(p) = &a.noisy_out {
        pnm::write_file(p, &noisy)?;
    }
    let scores = match clean {
        Some(c) => Some((psnr(&denoised, c)?.psnr_db, psnr(&noisy, c)?.psnr_db)),
        None => None,
    };
    out.emit(
        || match scores {
            Some((d, n)) => format!(
                "wrote {}\nnoisy PSNR {n:.4} dB\ndenoised PSNR {d:.4} dB",
                a.out.display()
            ),
            None => format!("wrote {}", a.out.display()),
        },
        || {
            json!({
                "output": a.out,
                "sigma": a.sigma,
                "seed": a.seed,
                "psnr_db": scores.map(|s| db_json(s.0)),
                "noisy_psnr_db": scores.map(|s| db_json(s.1)),
            })
        },
    );
    Ok(0)
}

fn cmd_eval(a: EvalArgs, out: &Out) -> AppResult<i32> {
    let model = load_infer_model(&a.model)?;
    let images = corpus::load_dir(&a.dir)?;
    let report = evaluate(&model, &images, a.sigma, a.seed)?;
    let doc = serde_json::to_value(&report).expect("report serializes");
    if let Some(p) = &a.report {
        let text = serde_json::to_string_pretty(&doc).expect("json");
        std::fs::write(p, text).map_err(|e| AppError::io(p, e))?;
    }
    out.emit(|| render_table(&report), || doc.clone());
    Ok(0)
}

fn format_list(v: &[usize]) -> String {
    let items: Vec<String> = v.iter().map(usize::to_string).collect();
    format!("[{}]", items.join(","))
}

fn cmd_validate_hdc(a: HdcArgs, out: &Out) -> AppResult<i32> {
    let pattern = DilationPattern::new(a.rates.clone(), a.kernel).map_err(|e| AppError::Usage(e.to_string()))?;
    let report = hdc_validate(&pattern);
    let (idx, gap) = (
        report
            .failing_index
            .unwrap_or(if report.gaps.len() > 1 { 2 } else { 1 }),
        report.checked_gap(),
    );
    out.emit(
        || {
            let verdict = if report.valid { "VALID" } else { "INVALID" };
            let cmp = if report.valid { "<=" } else { ">" };
            format!(
                "M = {} {verdict} (M{idx} = {gap} {cmp} K = {})",
                format_list(&report.gaps),
                a.kernel
            )
        },
        || {
            json!({
                "rates": a.rates,
                "kernel": a.kernel,
                "gaps": report.gaps,
                "checked_index": idx,
                "checked_gap": gap,
                "valid": report.valid,
            })
        },
    );
    Ok(if report.valid { 0 } else { EXIT_INVALID })
}

fn cmd_rf(a: RfArgs, out: &Out) -> AppResult<i32> {
    let rf = receptive_field(&a.layers).map_err(|e| AppError::Usage(e.to_string()))?;
    out.emit(
        || format!("receptive field {rf}x{rf}"),
        || json!({ "layers": a.layers, "receptive_field": rf }),
    );
    Ok(0)
}

fn cmd_info(a: InfoArgs, out: &Out) -> AppResult<i32> {
    let (model, epoch, seed) = match (&a.model, &a.preset) {
        (Some(p), _) => {
            let ck = ckpt::load(p)?;
            (ck.model, Some(ck.epoch), Some(ck.seed))
        }
        (None, Some(name)) => {
            let section = ModelSection {
                preset: Some(name.clone()),
                ..ModelSection::default()
            };
            (Model::build(&section.resolve()?, 0)?, None, None)
        }
        (None, None) => return Err(AppError::Usage("info needs --model or --preset".into())),
    };
    let config: &ModelConfig = model.config();
    let count = model.count_params();
    let rf = config.receptive_field()?;
    out.emit(
        || {
            let mut lines = vec![
                format!(
                    "layers {} ({} residual blocks of dilations {})",
                    config.depth,
                    config.num_blocks,
                    format_list(&config.block_dilations)
                ),
                format!(
                    "multiscale {}",
                    config
                        .multiscale
                        .iter()
                        .map(|(k, f)| format!("{k}x{k}:{f}"))
                        .collect::<Vec<_>>()
                        .join(" ")
                ),
                format!(
                    "channels in {} features {}",
                    config.input_channels, config.feature_channels
                ),
                format!("receptive field {rf}x{rf}"),
            ];
            if let (Some(e), Some(s)) = (epoch, seed) {
                lines.push(format!("trained epochs {e} seed {s}"));
            }
            lines.push(format!(
                "{:<16} {:>9} {:>7} {:>5} {:>6}",
                "layer", "weights", "biases", "bn", "prelu"
            ));
            for l in &count.layers {
                lines.push(format!(
                    "{:<16} {:>9} {:>7} {:>5} {:>6}",
                    l.name, l.conv_weights, l.conv_biases, l.bn, l.prelu
                ));
            }
            lines.push(format!(
                "{:<16} {:>9} {:>7} {:>5} {:>6}",
                "sum",
                count.conv_weights(),
                count.conv_biases(),
                count.bn(),
                count.prelu()
            ));
            lines.push(format!("total parameters {}", count.total()));
            lines.join("\n")
        },
        || {
            json!({
                "config": ModelSection::from_config(config),
                "receptive_field": rf,
                "epoch": epoch,
                "seed": seed,
                "params": {
                    "total": count.total(),
                    "conv_weights": count.conv_weights(),
                    "conv_biases": count.conv_biases(),
                    "bn": count.bn(),
                    "prelu": count.prelu(),
                    "layers": count.layers.iter().map(|l| json!({
                        "name": l.name,
                        "conv_weights": l.conv_weights,
                        "conv_biases": l.conv_biases,
                        "bn": l.bn,
                        "prelu": l.prelu,
                    })).collect::<Vec<_>>(),
                },
            })
        },
    );
    Ok(0)
}

fn cmd_gen(a: GenArgs, out: &Out) -> AppResult<i32> {
    if a.channels != 1 && a.channels != 3 {
        return Err(AppError::Usage(format!(
            "--channels must be 1 or 3, got {}",
            a.channels
        )));
    }
    if a.count == 0 || a.size == 0 {
        return Err(AppError::Usage("--count and --size must be >= 1".into()));
    }
    let images = corpus::synthetic(a.count, a.size, a.channels, a.seed)?;
    corpus::write_dir(&a.out, &images)?;
    let names: Vec<&str> = images.iter().map(|i| i.name.as_str()).collect();
    out.emit(
        || format!("wrote {} images to {}", names.len(), a.out.display()),
        || json!({ "dir": a.out, "images": names }),
    );
    Ok(0)
}
