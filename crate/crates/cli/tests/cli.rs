use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use cpl_cli::commands::{
    cmd_bench, cmd_eval, cmd_generate, cmd_gradcheck, cmd_toy_verify, cmd_train, CHECKPOINT_FILE, LOG_FILE,
    METRICS_FILE, SUMMARY_FILE, TRAIN_FILE, VAL_FILE,
};
use cpl_cli::{
    BenchArgs, EvalArgs, FaultArg, GenerateArgs, GradcheckArgs, Split, ToyArgs, TrainArgs, GRADCHECK_TOL,
};
use cpl_core::experiment::{Method, Metrics, Summary, Task};

fn gen_args(task: Task, n: usize, seed: u64, out: &Path) -> GenerateArgs {
    GenerateArgs {
        task,
        n,
        seed,
        out: out.to_path_buf(),
        val_fraction: 0.2,
        n_val: None,
        config: None,
        fork_count: None,
    }
}

fn train_args(task: Task, data: &Path, out: &Path, epochs: usize) -> TrainArgs {
    TrainArgs {
        task,
        data: data.to_path_buf(),
        out: out.to_path_buf(),
        config: None,
        method: None,
        objective: None,
        epochs: Some(epochs),
        batch: None,
        lr: None,
        seed: Some(3),
        verbose: false,
    }
}

fn eval_args(task: Task, data: &Path, out: &Path, methods: Vec<Method>, checkpoints: Vec<PathBuf>) -> EvalArgs {
    EvalArgs {
        task,
        data: data.to_path_buf(),
        split: Split::Val,
        checkpoints,
        methods,
        out: out.to_path_buf(),
        threshold_sweep: true,
        max_steps: None,
        seed: 0,
    }
}

fn lines(p: &Path) -> usize {
    fs::read_to_string(p).unwrap().lines().count()
}

fn cpl(args: &[&str]) -> (i32, String) {
    let out = Process::new(env!("CARGO_BIN_EXE_cpl")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap())
}

#[test]
fn generate_splits_eighty_twenty() {
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_generate(&gen_args(Task::Subset, 100, 7, dir.path())).unwrap();
    assert_eq!((report.train, report.val), (80, 20));
    assert_eq!(lines(&dir.path().join(TRAIN_FILE)), 80);
    assert_eq!(lines(&dir.path().join(VAL_FILE)), 20);
    assert_eq!(report.histogram.values().sum::<usize>(), 100);
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for task in [Task::Subset, Task::Path] {
        let a = dir.path().join(format!("{task}-a"));
        let b = dir.path().join(format!("{task}-b"));
        cmd_generate(&gen_args(task, 30, 5, &a)).unwrap();
        cmd_generate(&gen_args(task, 30, 5, &b)).unwrap();
        for f in [TRAIN_FILE, VAL_FILE] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        }
    }
}

#[test]
fn two_forks_give_three_or_more_paths() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = gen_args(Task::Path, 60, 1, dir.path());
    args.fork_count = Some(2);
    let report = cmd_generate(&args).unwrap();
    assert_eq!(report.statistic, "n_paths");
    assert!(report.histogram.range(3..).map(|(_, c)| c).sum::<usize>() > 0, "{:?}", report.histogram);
    assert!(report.histogram.keys().all(|&n| n <= 3));
}

#[test]
fn one_epoch_on_ten_instances_writes_both_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_generate(&gen_args(Task::Subset, 10, 2, &data)).unwrap();
    let out = dir.path().join("run");
    let outcome = cmd_train(&train_args(Task::Subset, &data, &out, 1)).unwrap();
    assert_eq!(outcome.log.len(), 1);
    assert!(out.join(CHECKPOINT_FILE).exists());
    let log = fs::read_to_string(out.join(LOG_FILE)).unwrap();
    assert!(log.starts_with("epoch,train_loss,val_loss,val_clu_f1\n"));
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn training_is_deterministic_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_generate(&gen_args(Task::Path, 20, 4, &data)).unwrap();
    let a = cmd_train(&train_args(Task::Path, &data, &dir.path().join("a"), 2)).unwrap();
    let b = cmd_train(&train_args(Task::Path, &data, &dir.path().join("b"), 2)).unwrap();
    assert_eq!(a.log.last().unwrap().train_loss, b.log.last().unwrap().train_loss);
    for f in [CHECKPOINT_FILE, LOG_FILE] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn default_subset_training_lowers_validation_loss_by_epoch_five() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_generate(&gen_args(Task::Subset, 250, 8, &data)).unwrap();
    let outcome = cmd_train(&train_args(Task::Subset, &data, &dir.path().join("run"), 5)).unwrap();
    assert!(outcome.log[4].val_loss < outcome.log[0].val_loss, "{:?}", outcome.log);
}

#[test]
fn oracle_and_empty_predictions_evaluate_without_error() {
    let dir = tempfile::tempdir().unwrap();
    for task in [Task::Subset, Task::Path] {
        let data = dir.path().join(format!("{task}-data"));
        let out = dir.path().join(format!("{task}-eval"));
        cmd_generate(&gen_args(task, 40, 6, &data)).unwrap();
        let evals = cmd_eval(&eval_args(task, &data, &out, vec![Method::Oracle, Method::Empty], vec![])).unwrap();
        for r in &evals[0].0.results {
            match r.metrics {
                Metrics::Cluster(m) => assert_eq!(m.clu_f1, 1.0),
                Metrics::Path(m) => assert_eq!(m.min_ade, 0.0),
            }
        }
        for r in &evals[1].0.results {
            match r.metrics {
                Metrics::Cluster(m) => assert_eq!((m.clu_rec, m.clu_prec, m.clu_f1), (0.0, 0.0, 0.0)),
                Metrics::Path(m) => {
                    assert!(m.min_ade > 0.0 && m.min_ade == m.min_hd);
                    assert_eq!(m.offroad_rate, 1.0);
                }
            }
        }
        assert_eq!(lines(&out.join(METRICS_FILE)), 1 + 8 * 2);
    }
}

#[test]
fn metric_rows_cover_every_instance_and_method() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_generate(&gen_args(Task::Subset, 50, 9, &data)).unwrap();
    let cpl_dir = dir.path().join("cpl");
    let thr_dir = dir.path().join("thr");
    cmd_train(&train_args(Task::Subset, &data, &cpl_dir, 1)).unwrap();
    let mut thr = train_args(Task::Subset, &data, &thr_dir, 1);
    thr.method = Some(Method::Threshold);
    cmd_train(&thr).unwrap();
    let methods = vec![Method::Cpl, Method::Threshold, Method::Hungarian, Method::Kmeans, Method::RecomputeRef];
    let out = dir.path().join("eval");
    let cks = vec![cpl_dir.join(CHECKPOINT_FILE), thr_dir.join(CHECKPOINT_FILE)];
    let evals = cmd_eval(&eval_args(Task::Subset, &data, &out, methods.clone(), cks)).unwrap();
    let text = fs::read_to_string(out.join(METRICS_FILE)).unwrap();
    assert!(text.starts_with("method,instance_id,k,clu_rec,clu_prec,clu_f1,card_err\n"));
    assert_eq!(text.lines().count(), 1 + 10 * methods.len());
    assert_eq!(lines(&out.join(SUMMARY_FILE)), 1 + methods.len());
    assert!(evals[1].0.tau.is_some());
    // Incremental and from-scratch decoding agree exactly.
    let pred = |i: usize| evals[i].0.results.iter().map(|r| r.prediction.clone()).collect::<Vec<_>>();
    assert_eq!(pred(0), pred(4));
}

#[test]
fn path_summary_is_stratified() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_generate(&gen_args(Task::Path, 60, 3, &data)).unwrap();
    let out = dir.path().join("eval");
    let evals = cmd_eval(&eval_args(Task::Path, &data, &out, vec![Method::Oracle], vec![])).unwrap();
    let Summary::Path(s) = &evals[0].1 else { panic!("path summary expected") };
    let summary = fs::read_to_string(out.join(SUMMARY_FILE)).unwrap();
    assert!(summary.starts_with("method,tau,stratum,count,min_ade,min_hd,offroad_rate,single_branch_two_mode\n"));
    assert_eq!(summary.lines().count(), 1 + 1 + s.by_n_paths.len() + 1);
    assert!(summary.contains("oracle,,n_paths>=2,"));
    let text = fs::read_to_string(out.join(METRICS_FILE)).unwrap();
    assert!(text.starts_with("method,instance_id,n_paths,min_ade,min_hd,offroad_rate\n"));
}

#[test]
fn eval_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_generate(&gen_args(Task::Subset, 40, 1, &data)).unwrap();
    for run in ["a", "b"] {
        cmd_eval(&eval_args(Task::Subset, &data, &dir.path().join(run), vec![Method::Kmeans], vec![])).unwrap();
    }
    for f in [METRICS_FILE, SUMMARY_FILE] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn small_bench_grid() {
    let rows = cmd_bench(&BenchArgs {
        out: None,
        ks: Some(vec![64, 128]),
        sizes: Some(vec![4, 16]),
        reps: Some(3),
        decodes: Some(10),
        warmup: Some(5),
        seed: 0,
    })
    .unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.recompute_mean_us > 0.0 && r.advance_mean_ns > 0.0));
}

#[test]
fn toy_verification_and_its_ablations() {
    let pass = cmd_toy_verify(&ToyArgs { ablate_promotion: false, theta_eos: None });
    assert!(pass.passed());
    assert_eq!(pass.costs[..2], [1.0, 1.0]);
    assert!((pass.costs[2] - 23.0 / 24.0).abs() < 1e-12);
    assert!(!cmd_toy_verify(&ToyArgs { ablate_promotion: true, theta_eos: None }).passed());
    assert!(!cmd_toy_verify(&ToyArgs { ablate_promotion: false, theta_eos: Some(10.0) }).passed());
}

#[test]
fn gradcheck_passes_and_catches_a_flipped_gradient() {
    let args = |f| GradcheckArgs { eps: 1e-5, samples: 80, seed: 0, inject_fault: f };
    let ok = cmd_gradcheck(&args(FaultArg::None)).unwrap();
    assert!(ok.passed(GRADCHECK_TOL), "{ok:?}");
    let best = ok.best_eps().unwrap();
    assert!(best > 1e-6 && best < 1e-3);
    assert!(!cmd_gradcheck(&args(FaultArg::FlipGradW)).unwrap().passed(GRADCHECK_TOL));
}

#[test]
fn exit_codes() {
    let (code, stdout) = cpl(&["toy-verify"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("\"result\":\"PASS\""));
    assert_eq!(cpl(&["toy-verify", "--theta-eos", "10"]).0, 1);
    assert_eq!(cpl(&["gradcheck", "--inject-fault", "flip-grad-w"]).0, 1);
    assert_eq!(cpl(&["gradcheck"]).0, 0);
    assert_eq!(cpl(&["no-such-command"]).0, 2);
    assert_eq!(cpl(&["train", "--task", "subset", "--data", "/nonexistent", "--out", "/tmp/x"]).0, 2);
    assert_eq!(cpl(&["generate", "--task", "ring", "--out", "/tmp/x"]).0, 2);
}

#[test]
fn invalid_training_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_generate(&gen_args(Task::Subset, 10, 0, &data)).unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "batch_size = 0\n").unwrap();
    let (code, _) = cpl(&[
        "train",
        "--task",
        "subset",
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}
