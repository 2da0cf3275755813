use cpl_core::benchgen::{
    gen_path_instance, gen_subset_instance, read_jsonl, write_jsonl, PathConfig, PathInstance, SubsetConfig,
    SubsetInstance,
};
use cpl_core::experiment::{
    evaluate_prepared, prepare_all, summarize, train, Checkpoint, EvalOptions, Instance, Method, Metrics, Summary,
    Task, TrainConfig,
};

fn subsets(n: u64, seed: u64) -> Vec<SubsetInstance> {
    (0..n)
        .map(|id| gen_subset_instance(&SubsetConfig::default(), seed, id).unwrap())
        .collect()
}

fn paths(n: u64, seed: u64) -> Vec<PathInstance> {
    (0..n)
        .map(|id| gen_path_instance(&PathConfig::default(), seed, id).unwrap())
        .collect()
}

#[test]
fn stored_instances_reload_identically() {
    let dir = tempfile::tempdir().unwrap();
    let s = subsets(6, 1);
    let p = paths(6, 1);
    write_jsonl(&dir.path().join("s.jsonl"), &s).unwrap();
    write_jsonl(&dir.path().join("p.jsonl"), &p).unwrap();
    assert_eq!(read_jsonl::<SubsetInstance>(&dir.path().join("s.jsonl")).unwrap(), s);
    assert_eq!(read_jsonl::<PathInstance>(&dir.path().join("p.jsonl")).unwrap(), p);
}

#[test]
fn subset_training_improves_on_the_initial_head() {
    let all: Vec<Instance> = subsets(300, 4).into_iter().map(Instance::Subset).collect();
    let cfg = TrainConfig {
        epochs: 8,
        ..TrainConfig::for_task(Task::Subset)
    };
    let spec = cfg.input_spec(Task::Subset, 16);
    let data = prepare_all(all, &spec).unwrap();
    let (tr, va) = data.split_at(250);
    let out = train(tr, va, &spec, &cfg).unwrap();
    let first = out.log.first().unwrap();
    let best = out.log.iter().map(|r| r.val_metric).fold(f64::MIN, f64::max);
    assert!(best > first.val_metric, "{:?}", out.log);
    assert!(out.log.last().unwrap().val_loss < first.val_loss);

    // The stored checkpoint reproduces the in-memory predictions.
    let ck = Checkpoint::from_json(&out.checkpoint.to_json().unwrap()).unwrap();
    let opts = EvalOptions::default();
    let a = evaluate_prepared(Method::Cpl, Some(&out.checkpoint), va, &opts).unwrap();
    let b = evaluate_prepared(Method::Cpl, Some(&ck), va, &opts).unwrap();
    assert_eq!(a, b);
    let Summary::Cluster(s) = summarize(&a, va) else { panic!("cluster summary expected") };
    assert!((s.clu_f1 - best).abs() < 1e-12);
}

#[test]
fn path_threshold_baseline_trains_and_reports_a_threshold() {
    let all: Vec<Instance> = paths(60, 2).into_iter().map(Instance::Path).collect();
    let cfg = TrainConfig {
        method: Method::Threshold,
        epochs: 2,
        ..TrainConfig::for_task(Task::Path)
    };
    let spec = cfg.input_spec(Task::Path, 0);
    let data = prepare_all(all, &spec).unwrap();
    let (tr, va) = data.split_at(50);
    let out = train(tr, va, &spec, &cfg).unwrap();
    assert!(out.checkpoint.tau.is_some());
    let eval = evaluate_prepared(Method::Threshold, Some(&out.checkpoint), va, &EvalOptions::default()).unwrap();
    assert_eq!(eval.results.len(), 10);
    for r in &eval.results {
        let Metrics::Path(m) = r.metrics else { panic!("path metrics expected") };
        assert!(m.min_hd >= m.min_ade);
    }
}

#[test]
fn unary_checkpoints_cannot_drive_sequential_decoding() {
    let all: Vec<Instance> = subsets(12, 3).into_iter().map(Instance::Subset).collect();
    let cfg = TrainConfig {
        method: Method::Hungarian,
        epochs: 1,
        ..TrainConfig::for_task(Task::Subset)
    };
    let spec = cfg.input_spec(Task::Subset, 16);
    let data = prepare_all(all, &spec).unwrap();
    let out = train(&data[..10], &data[10..], &spec, &cfg).unwrap();
    assert!(evaluate_prepared(Method::Cpl, Some(&out.checkpoint), &data, &EvalOptions::default()).is_err());
}
