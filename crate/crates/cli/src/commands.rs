use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cpl_core::benchgen::toy::{toy_fixture, B, C};
use cpl_core::benchgen::{
    gen_path_instance, gen_subset_instance, read_jsonl, write_jsonl, PathConfig, PathInstance, SubsetConfig,
    SubsetInstance,
};
use cpl_core::experiment::eval::default_input;
use cpl_core::experiment::train::train_with;
use cpl_core::experiment::{
    evaluate_prepared, prepare_all, run_bench, run_gradcheck, split_ids, summarize, verify_toy, BenchConfig,
    BenchRow, Checkpoint, EvalOptions, Fault, GradcheckConfig, GradcheckReport, Instance, Method, MethodEval,
    Summary, Task, ToyReport, TrainConfig, TrainOutcome,
};
use serde::Serialize;

use crate::config::load_over;
use crate::output::{write_bench, write_log, write_metrics, write_summary};
use crate::{
    BenchArgs, CliError, Command, EvalArgs, FaultArg, GenerateArgs, GradcheckArgs, Result, Split, ToyArgs,
    TrainArgs, GRADCHECK_TOL,
};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VAL_FILE: &str = "val.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateReport {
    pub task: Task,
    pub train: usize,
    pub val: usize,
    /// `clusters` for subsets, `n_paths` for paths.
    pub statistic: &'static str,
    pub histogram: BTreeMap<usize, usize>,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn split_counts(args: &GenerateArgs) -> Result<(Vec<usize>, Vec<usize>)> {
    if let Some(n_val) = args.n_val {
        if n_val > args.n {
            return Err(CliError::Usage(format!("--n-val {n_val} exceeds --n {}", args.n)));
        }
        return Ok(split_ids(args.n, n_val as f64 / args.n.max(1) as f64, args.seed));
    }
    if !(0.0..=1.0).contains(&args.val_fraction) {
        return Err(CliError::Usage("--val-fraction must lie in [0, 1]".into()));
    }
    Ok(split_ids(args.n, args.val_fraction, args.seed))
}

fn pick<T: Clone>(items: &[T], ids: &[usize]) -> Vec<T> {
    ids.iter().map(|&i| items[i].clone()).collect()
}

/// Writes a deterministic train/validation split of freshly generated instances.
pub fn cmd_generate(args: &GenerateArgs) -> Result<GenerateReport> {
    let (train_ids, val_ids) = split_counts(args)?;
    create_dir(&args.out)?;
    let ids = 0..args.n as u64;
    let (statistic, histogram) = match args.task {
        Task::Subset => {
            let cfg: SubsetConfig = load_over(&SubsetConfig::default(), args.config.as_deref())?;
            cfg.validate()?;
            let all: Vec<SubsetInstance> = ids
                .map(|id| gen_subset_instance(&cfg, args.seed, id))
                .collect::<cpl_core::error::Result<_>>()?;
            write_jsonl(&args.out.join(TRAIN_FILE), &pick(&all, &train_ids))?;
            write_jsonl(&args.out.join(VAL_FILE), &pick(&all, &val_ids))?;
            ("clusters", histogram(all.iter().map(|s| s.num_clusters)))
        }
        Task::Path => {
            let mut cfg: PathConfig = load_over(&PathConfig::default(), args.config.as_deref())?;
            if let Some(f) = args.fork_count {
                cfg.fork_count = f;
                cfg.min_forks = cfg.min_forks.map(|m| m.min(f));
            }
            cfg.validate()?;
            let all: Vec<PathInstance> = ids
                .map(|id| gen_path_instance(&cfg, args.seed, id))
                .collect::<cpl_core::error::Result<_>>()?;
            write_jsonl(&args.out.join(TRAIN_FILE), &pick(&all, &train_ids))?;
            write_jsonl(&args.out.join(VAL_FILE), &pick(&all, &val_ids))?;
            ("n_paths", histogram(all.iter().map(PathInstance::n_paths)))
        }
    };
    Ok(GenerateReport {
        task: args.task,
        train: train_ids.len(),
        val: val_ids.len(),
        statistic,
        histogram,
    })
}

fn histogram(values: impl Iterator<Item = usize>) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for v in values {
        *h.entry(v).or_insert(0) += 1;
    }
    h
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} does not exist", path.display())))
    }
}

pub fn load_instances(task: Task, path: &Path) -> Result<Vec<Instance>> {
    require(path)?;
    Ok(match task {
        Task::Subset => read_jsonl::<SubsetInstance>(path)?.into_iter().map(Instance::Subset).collect(),
        Task::Path => read_jsonl::<PathInstance>(path)?.into_iter().map(Instance::Path).collect(),
    })
}

fn raw_dim(instances: &[Instance]) -> usize {
    match instances.first() {
        Some(Instance::Subset(s)) => s.embeddings.ncols(),
        _ => 0,
    }
}

/// Training settings: task defaults, then the config file, then flags.
pub fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = load_over(&TrainConfig::for_task(args.task), args.config.as_deref())?;
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(o) = args.objective {
        cfg.objective = o;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = args.batch {
        cfg.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.adam.lr = lr;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Trains on `<data>/train.jsonl`, validates on `<data>/val.jsonl`, and writes
/// the best checkpoint and the per-epoch log.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let cfg = train_config(args)?;
    let train_raw = load_instances(args.task, &args.data.join(TRAIN_FILE))?;
    let val_raw = load_instances(args.task, &args.data.join(VAL_FILE))?;
    let spec = cfg.input_spec(args.task, raw_dim(&train_raw));
    let train = prepare_all(train_raw, &spec)?;
    let val = prepare_all(val_raw, &spec)?;
    create_dir(&args.out)?;
    let verbose = args.verbose;
    let outcome = train_with(&train, &val, &spec, &cfg, |row| {
        if verbose {
            eprintln!("{}", serde_json::to_string(row).expect("plain row"));
        }
    })?;
    fs::write(args.out.join(CHECKPOINT_FILE), outcome.checkpoint.to_json()?)?;
    write_log(writer(&args.out.join(LOG_FILE))?, args.task, &outcome.log)?;
    Ok(outcome)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require(path)?;
    Ok(Checkpoint::from_json(&fs::read_to_string(path)?)?)
}

fn checkpoint_for(method: Method, cks: &[Checkpoint]) -> Result<Option<&Checkpoint>> {
    if !method.needs_checkpoint() {
        return Ok(None);
    }
    let fits = |c: &&Checkpoint| {
        if method.is_sequential() {
            c.method.is_sequential()
        } else {
            c.method.is_unary()
        }
    };
    cks.iter()
        .find(|c| c.method == method)
        .or_else(|| cks.iter().find(fits))
        .map(Some)
        .ok_or_else(|| CliError::Usage(format!("no checkpoint can drive method {method}")))
}

/// Evaluates each requested method and writes per-instance and summary CSVs.
pub fn cmd_eval(args: &EvalArgs) -> Result<Vec<(MethodEval, Summary)>> {
    let file = match args.split {
        Split::Train => TRAIN_FILE,
        Split::Val => VAL_FILE,
    };
    let instances = load_instances(args.task, &args.data.join(file))?;
    let cks: Vec<Checkpoint> = args.checkpoints.iter().map(|p| load_checkpoint(p)).collect::<Result<_>>()?;
    if let Some(c) = cks.iter().find(|c| c.task != args.task) {
        return Err(CliError::Usage(format!("checkpoint for task {} used with --task {}", c.task, args.task)));
    }
    let opts = EvalOptions {
        seed: args.seed,
        max_steps: args.max_steps,
        sweep: args.threshold_sweep,
        ..EvalOptions::default()
    };
    let mut evals = Vec::with_capacity(args.methods.len());
    let mut prepared = Vec::new();
    for &method in &args.methods {
        let ck = checkpoint_for(method, &cks)?;
        let spec = ck.map_or_else(|| default_input(args.task), |c| c.input.clone());
        let data = prepare_all(instances.clone(), &spec)?;
        let eval = evaluate_prepared(method, ck, &data, &opts)?;
        let summary = summarize(&eval, &data);
        evals.push((eval, summary));
        prepared = data;
    }
    create_dir(&args.out)?;
    let only: Vec<MethodEval> = evals.iter().map(|(e, _)| e.clone()).collect();
    write_metrics(writer(&args.out.join(METRICS_FILE))?, args.task, &only, &prepared)?;
    let pairs: Vec<(&MethodEval, Summary)> = evals.iter().map(|(e, s)| (e, s.clone())).collect();
    write_summary(writer(&args.out.join(SUMMARY_FILE))?, args.task, &pairs)?;
    Ok(evals)
}

pub fn bench_config(args: &BenchArgs) -> BenchConfig {
    let d = BenchConfig::default();
    BenchConfig {
        ks: args.ks.clone().unwrap_or(d.ks),
        sizes: args.sizes.clone().unwrap_or(d.sizes),
        reps: args.reps.unwrap_or(d.reps),
        decodes_per_rep: args.decodes.unwrap_or(d.decodes_per_rep),
        warmup: args.warmup.unwrap_or(d.warmup),
        seed: args.seed,
    }
}

pub fn cmd_bench(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    Ok(run_bench(&bench_config(args))?)
}

pub fn cmd_toy_verify(args: &ToyArgs) -> ToyReport {
    let mut fx = toy_fixture();
    if args.ablate_promotion {
        fx = fx.with_interaction(C, B, 0.0);
    }
    if let Some(t) = args.theta_eos {
        let eos = fx.model.eos();
        fx = fx.with_theta(eos, t);
    }
    verify_toy(&fx)
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<GradcheckReport> {
    if !(args.eps > 0.0) || args.samples == 0 {
        return Err(CliError::Usage("--eps and --samples must be positive".into()));
    }
    let cfg = GradcheckConfig {
        eps: args.eps,
        samples: args.samples,
        seed: args.seed,
        ..GradcheckConfig::default()
    };
    let fault = match args.inject_fault {
        FaultArg::None => Fault::None,
        FaultArg::FlipGradW => Fault::FlipGradW,
    };
    Ok(run_gradcheck(&cfg, fault)?)
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    checkpoint: PathBuf,
    log: PathBuf,
    best_epoch: usize,
    tau: Option<f64>,
    final_train_loss: Option<f64>,
    method: &'a str,
}

#[derive(Serialize)]
struct EvalLine<'a> {
    method: &'a str,
    tau: Option<f64>,
    summary: &'a Summary,
}

#[derive(Serialize)]
struct Verdict<'a, T> {
    result: &'static str,
    #[serde(flatten)]
    report: &'a T,
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Executes one subcommand, writing its machine-readable report to `out`.
pub fn run(command: &Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Generate(a) => print_json(out, &cmd_generate(a)?),
        Command::Train(a) => {
            let o = cmd_train(a)?;
            print_json(
                out,
                &TrainSummary {
                    checkpoint: a.out.join(CHECKPOINT_FILE),
                    log: a.out.join(LOG_FILE),
                    best_epoch: o.checkpoint.epoch,
                    tau: o.checkpoint.tau,
                    final_train_loss: o.log.last().map(|r| r.train_loss),
                    method: o.checkpoint.method.name(),
                },
            )
        }
        Command::Eval(a) => {
            for (e, s) in cmd_eval(a)? {
                print_json(
                    out,
                    &EvalLine {
                        method: e.method.name(),
                        tau: e.tau,
                        summary: &s,
                    },
                )?;
            }
            Ok(())
        }
        Command::Bench(a) => {
            let rows = cmd_bench(a)?;
            match &a.out {
                Some(p) => write_bench(writer(p)?, &rows),
                None => write_bench(&mut *out, &rows),
            }
        }
        Command::ToyVerify(a) => {
            let report = cmd_toy_verify(a);
            print_json(out, &Verdict { result: verdict(report.passed()), report: &report })?;
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::Verification("toy fixture".into()))
            }
        }
        Command::Gradcheck(a) => {
            let report = cmd_gradcheck(a)?;
            let ok = report.passed(GRADCHECK_TOL);
            print_json(out, &Verdict { result: verdict(ok), report: &report })?;
            if ok {
                Ok(())
            } else {
                Err(CliError::Verification(format!(
                    "max relative error {:.3e} >= {GRADCHECK_TOL:e}",
                    report.max_error()
                )))
            }
        }
    }
}
