//! The `flame` command line: synthetic data, training, evaluation,
//! ablation and resolution tables, gradient checks, and plots.
//!
//! Exit codes: 0 success, 1 invalid input (config, arguments, malformed
//! files), 2 failure while running.

pub mod config;
pub mod plot;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::data::{
    export_records, load_records_with_stats, split_cross_subject, synth_generate_detailed, Record,
    SynthConfig,
};
use crate::error::{FlameError, Result};
use crate::model::{stored_precision, Checkpoint, ModelSpec, Preset, Variant};
use crate::nn::{Element, GradCheckConfig};
use crate::trainer::{
    ablate, evaluate, resolution_sweep, train, ComparisonReport, EvalReport, Precision, TrainOutput,
};
use crate::verify::{check_variant, GRADCHECK_TOLERANCE};

pub use config::{EvalSplit, RunConfig};

use config::Key;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

fn key_args(cmd: Command, groups: &[&[Key]]) -> Command {
    let mut cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(clap::value_parser!(PathBuf))
            .help("flat key = value config file; flags override its keys"),
    );
    let mut listing =
        String::from("Config keys (file form `key = value`, flag form --key-name):\n");
    for k in groups.iter().copied().flatten() {
        cmd = cmd.arg(
            Arg::new(k.name)
                .long(flag(k.name))
                .value_name("VALUE")
                .help(k.help),
        );
        listing.push_str(&format!("  {:<26}{}\n", k.name, k.help));
    }
    cmd.after_help(listing)
}

pub fn command() -> Command {
    use config::*;
    let run_keys: &[&[Key]] = &[PATH_KEYS, MODEL_KEYS, TRAIN_KEYS, SPLIT_KEYS];
    Command::new("flame")
        .about("Landmark-heatmap multimodal gaze estimation")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("synth")
                .about("Write a synthetic eye dataset (manifest, images, landmarks)")
                .arg(Arg::new("n").long("n").value_name("N").required(true).value_parser(clap::value_parser!(usize)).help("number of records"))
                .arg(Arg::new("seed").long("seed").value_name("SEED").value_parser(clap::value_parser!(u64)).help("generator seed; falls back to FLAME_SEED, then 0"))
                .arg(Arg::new("noise").long("noise").value_name("LEVEL").default_value("0").value_parser(clap::value_parser!(f64)).help("landmark jitter in pixels (image noise scales with it)"))
                .arg(Arg::new("subjects").long("subjects").value_name("K").value_parser(clap::value_parser!(usize)).help("number of synthetic subjects [max(10, n/16)]"))
                .arg(Arg::new("out").long("out").value_name("DIR").required(true).value_parser(clap::value_parser!(PathBuf)).help("dataset directory to write")),
        )
        .subcommand(key_args(
            Command::new("train").about("Train one model on the training split; evaluate on the test split"),
            run_keys,
        ))
        .subcommand(key_args(
            Command::new("eval").about("Evaluate a checkpoint on a dataset"),
            &[PATH_KEYS, EVAL_KEYS, EVAL_RUN_KEYS, SPLIT_KEYS],
        ))
        .subcommand(key_args(
            Command::new("ablate").about("Train and test each variant on the same split"),
            &[PATH_KEYS, MODEL_KEYS, TRAIN_KEYS, SPLIT_KEYS, ABLATE_KEYS],
        ))
        .subcommand(key_args(
            Command::new("resolution").about("Train and test one variant at several input resolutions"),
            &[PATH_KEYS, MODEL_KEYS, TRAIN_KEYS, SPLIT_KEYS, RESOLUTION_KEYS],
        ))
        .subcommand(
            Command::new("gradcheck")
                .about("Finite-difference check of the full model gradient (64-bit)")
                .arg(Arg::new("preset").long("preset").default_value("tiny").help("tiny or paper"))
                .arg(Arg::new("resolution").long("resolution").default_value("30").value_parser(clap::value_parser!(usize)).help("input resolution"))
                .arg(Arg::new("variant").long("variant").action(ArgAction::Append).help("variant to check (repeatable) [all]"))
                .arg(Arg::new("batch").long("batch").default_value("3").value_parser(clap::value_parser!(usize)).help("batch size, at least 2"))
                .arg(Arg::new("seed").long("seed").value_parser(clap::value_parser!(u64)).help("seed; falls back to FLAME_SEED, then 0")),
        )
        .subcommand(
            Command::new("plot")
                .about("Plot history files, evaluation reports (eval_*.json) and comparison tables as SVG")
                .arg(Arg::new("inputs").value_name("FILE").num_args(1..).required(true).value_parser(clap::value_parser!(PathBuf)))
                .arg(Arg::new("out").long("out").value_name("DIR").required(true).value_parser(clap::value_parser!(PathBuf)).help("directory for the SVG files")),
        )
}

/// Merges the config file (if any) with flags; flags win.
fn settings(m: &ArgMatches) -> Result<BTreeMap<String, String>> {
    let mut s = match m.get_one::<PathBuf>("config") {
        Some(p) => config::parse_config_file(p)?,
        None => BTreeMap::new(),
    };
    for k in config::all_keys() {
        if let Ok(Some(v)) = m.try_get_one::<String>(k.name) {
            s.insert(k.name.to_string(), v.clone());
        }
    }
    Ok(s)
}

fn env_seed() -> Option<String> {
    std::env::var("FLAME_SEED")
        .ok()
        .filter(|s| !s.trim().is_empty())
}

fn seed_arg(m: &ArgMatches) -> Result<u64> {
    match (m.get_one::<u64>("seed"), env_seed()) {
        (Some(&s), _) => Ok(s),
        (None, Some(v)) => v
            .trim()
            .parse()
            .map_err(|e| FlameError::Config(format!("FLAME_SEED: cannot parse `{v}`: {e}"))),
        (None, None) => Ok(0),
    }
}

fn run_config(m: &ArgMatches) -> Result<RunConfig> {
    RunConfig::from_settings(&settings(m)?, env_seed().as_deref())
}

fn require<'a>(v: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| {
        FlameError::Config(format!(
            "`{key}` is required (--{} or `{key} =` in the config)",
            flag(key)
        ))
    })
}

struct Tee {
    file: fs::File,
}

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let _ = std::io::stderr().write_all(buf);
        self.file.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.file.flush()
    }
}

/// Logs go to stderr and, when there is an output directory, to
/// `flame.log` in it. Timestamps appear only in the log stream.
fn init_logging(out: Option<&Path>) {
    let mut b = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if let Some(dir) = out {
        if fs::create_dir_all(dir).is_ok() {
            if let Ok(file) = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join("flame.log"))
            {
                b.target(env_logger::Target::Pipe(Box::new(Tee { file })));
            }
        }
    }
    let _ = b.try_init();
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| FlameError::io(path, e))
}

fn write_report(path: &Path, r: &EvalReport) -> Result<()> {
    let json = serde_json::to_string_pretty(r).map_err(|e| FlameError::Plot(e.to_string()))?;
    write_file(path, json)
}

fn load_dataset(root: &Path) -> Result<Vec<Record>> {
    let (records, stats) = load_records_with_stats(root)?;
    log::info!(
        "loaded {} records from {} ({} excluded)",
        stats.loaded,
        root.display(),
        stats.excluded
    );
    Ok(records)
}

fn cmd_synth(m: &ArgMatches) -> Result<()> {
    let out = m.get_one::<PathBuf>("out").expect("required");
    init_logging(None);
    let mut cfg = SynthConfig::new(
        *m.get_one::<usize>("n").expect("required"),
        seed_arg(m)?,
        *m.get_one::<f64>("noise").expect("default"),
    );
    cfg.subjects = m.get_one::<usize>("subjects").copied();
    let records: Vec<Record> = synth_generate_detailed(&cfg)?
        .into_iter()
        .map(|s| s.record)
        .collect();
    export_records(&records, out)?;
    println!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

fn train_with<F: Element>(cfg: &RunConfig, out: &Path, records: &[Record]) -> Result<()> {
    let split = split_cross_subject(records, &cfg.split)?;
    log::info!(
        "split: {} train, {} val, {} test records",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    let outcome = train::<F>(
        &cfg.train,
        &split.train,
        &split.val,
        &TrainOutput {
            dir: Some(out.to_path_buf()),
        },
    )?;
    let mut model = outcome.selected().build_model()?;
    let t = &cfg.train;
    let report = evaluate(&mut model, &split.test, t.eval_eye, t.seed, t.patch_size)?;
    write_report(&out.join("eval_test.json"), &report)?;
    println!(
        "{}: {} epochs, {} steps; test mean {:.4} deg, std {:.4} deg over {} samples",
        t.model.variant,
        outcome.history.len(),
        outcome.steps,
        report.mean_deg,
        report.std_deg,
        report.samples.len()
    );
    Ok(())
}

fn cmd_train(m: &ArgMatches) -> Result<()> {
    let cfg = run_config(m)?;
    cfg.train.validate()?;
    let out = require(&cfg.out, "out")?;
    let data = require(&cfg.data, "data")?;
    init_logging(Some(out));
    write_file(&out.join("config.txt"), cfg.to_text())?;
    let records = load_dataset(data)?;
    match cfg.train.precision {
        Precision::F32 => train_with::<f32>(&cfg, out, &records),
        Precision::F64 => train_with::<f64>(&cfg, out, &records),
    }
}

fn eval_with<F: Element>(cfg: &RunConfig, ckpt: &Path, records: &[Record]) -> Result<EvalReport> {
    let mut model = Checkpoint::<F>::load(ckpt)?.build_model()?;
    let t = &cfg.train;
    evaluate(&mut model, records, t.eval_eye, t.seed, t.patch_size)
}

fn cmd_eval(m: &ArgMatches) -> Result<()> {
    let cfg = run_config(m)?;
    let out = require(&cfg.out, "out")?;
    let data = require(&cfg.data, "data")?;
    let ckpt = require(&cfg.checkpoint, "checkpoint")?;
    init_logging(Some(out));
    let all = load_dataset(data)?;
    let records = match cfg.eval_split {
        EvalSplit::All => all,
        part => {
            let s = split_cross_subject(&all, &cfg.split)?;
            match part {
                EvalSplit::Train => s.train,
                EvalSplit::Val => s.val,
                _ => s.test,
            }
        }
    };
    let report = match stored_precision(ckpt)?.as_str() {
        "f64" => eval_with::<f64>(&cfg, ckpt, &records)?,
        _ => eval_with::<f32>(&cfg, ckpt, &records)?,
    };
    write_report(&out.join("eval.json"), &report)?;
    println!(
        "{} ({} split): mean {:.4} deg, std {:.4} deg over {} samples, {} flagged",
        report.variant,
        cfg.eval_split,
        report.mean_deg,
        report.std_deg,
        report.samples.len(),
        report.flagged.len()
    );
    Ok(())
}

fn comparison(m: &ArgMatches, table: &str) -> Result<()> {
    let cfg = run_config(m)?;
    cfg.train.validate()?;
    let out = require(&cfg.out, "out")?;
    let data = require(&cfg.data, "data")?;
    init_logging(Some(out));
    write_file(&out.join("config.txt"), cfg.to_text())?;
    let records = load_dataset(data)?;
    let run = |records: &[Record]| -> Result<ComparisonReport> {
        let (t, s) = (&cfg.train, &cfg.split);
        match (table, t.precision) {
            ("ablation.tsv", Precision::F32) => {
                ablate::<f32>(t, records, s, &cfg.variants, Some(out))
            }
            ("ablation.tsv", Precision::F64) => {
                ablate::<f64>(t, records, s, &cfg.variants, Some(out))
            }
            (_, Precision::F32) => {
                resolution_sweep::<f32>(t, records, s, &cfg.resolutions, Some(out))
            }
            (_, Precision::F64) => {
                resolution_sweep::<f64>(t, records, s, &cfg.resolutions, Some(out))
            }
        }
    };
    let report = run(&records)?;
    report.write(out, table)?;
    print!("{}", report.to_tsv());
    Ok(())
}

fn cmd_gradcheck(m: &ArgMatches) -> Result<bool> {
    init_logging(None);
    let preset: Preset = m.get_one::<String>("preset").expect("default").parse()?;
    let resolution = *m.get_one::<usize>("resolution").expect("default");
    let batch = *m.get_one::<usize>("batch").expect("default");
    let seed = seed_arg(m)?;
    let variants: Vec<Variant> = match m.get_many::<String>("variant") {
        Some(vs) => vs.map(|v| v.parse()).collect::<Result<_>>()?,
        None => Variant::ALL.to_vec(),
    };
    if batch < 2 {
        return Err(FlameError::Config(
            "batch must be >= 2 (batch normalisation)".into(),
        ));
    }
    let mut worst = 0.0f64;
    let mut all_pass = true;
    for v in variants {
        let spec = ModelSpec::new(v, preset, resolution);
        spec.validate()?;
        let r = check_variant(spec, batch, seed, &GradCheckConfig::default())?;
        println!(
            "{:<13} max_rel_error {:.3e}  checked {:>5}  {}",
            v.tag(),
            r.max_rel_error,
            r.checked,
            if r.passed(GRADCHECK_TOLERANCE) {
                "PASS"
            } else {
                "FAIL"
            }
        );
        if let Some(w) = &r.worst {
            log::debug!("{v}: worst coordinate {w}");
        }
        worst = worst.max(r.max_rel_error);
        all_pass &= r.passed(GRADCHECK_TOLERANCE);
    }
    println!(
        "max relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:e}): {}",
        if all_pass { "PASS" } else { "FAIL" }
    );
    Ok(all_pass)
}

fn cmd_plot(m: &ArgMatches) -> Result<()> {
    let inputs: Vec<PathBuf> = m
        .get_many::<PathBuf>("inputs")
        .expect("required")
        .cloned()
        .collect();
    let out = m.get_one::<PathBuf>("out").expect("required");
    for p in plot::plot_files(&inputs, out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn exit_code(e: &FlameError) -> i32 {
    if e.is_validation() {
        EXIT_INVALID
    } else {
        EXIT_FAILED
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    let (name, m) = matches.subcommand().expect("subcommand required");
    let result = match name {
        "synth" => cmd_synth(m),
        "train" => cmd_train(m),
        "eval" => cmd_eval(m),
        "ablate" => comparison(m, "ablation.tsv"),
        "resolution" => comparison(m, "resolution.tsv"),
        "gradcheck" => match cmd_gradcheck(m) {
            Ok(true) => Ok(()),
            Ok(false) => return EXIT_FAILED,
            Err(e) => Err(e),
        },
        "plot" => cmd_plot(m),
        other => unreachable!("unhandled subcommand {other}"),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
