//! CSV layouts for metric, summary, training-log and benchmark files.

use std::collections::BTreeMap;
use std::io::Write;

use cpl_core::experiment::eval::PathEvalSummary;
use cpl_core::experiment::train::val_metric_name;
use cpl_core::experiment::{BenchRow, LogRow, MethodEval, Metrics, Prepared, Summary, Task};
use cpl_core::metrics::PathSummary;

use crate::Result;

pub const SUBSET_HEADER: [&str; 7] = ["method", "instance_id", "k", "clu_rec", "clu_prec", "clu_f1", "card_err"];
pub const PATH_HEADER: [&str; 6] = ["method", "instance_id", "n_paths", "min_ade", "min_hd", "offroad_rate"];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per instance and method.
pub fn write_metrics<W: Write>(out: W, task: Task, evals: &[MethodEval], data: &[Prepared]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match task {
        Task::Subset => w.write_record(SUBSET_HEADER)?,
        Task::Path => w.write_record(PATH_HEADER)?,
    }
    let clusters: BTreeMap<u64, usize> = data
        .iter()
        .filter_map(|p| match p {
            Prepared::Subset { inst, .. } => Some((inst.id, inst.num_clusters)),
            Prepared::Path { .. } => None,
        })
        .collect();
    for eval in evals {
        let name = eval.method.name();
        for r in &eval.results {
            let id = r.instance_id.to_string();
            match r.metrics {
                Metrics::Cluster(m) => w.write_record([
                    name.to_string(),
                    id,
                    clusters.get(&r.instance_id).copied().unwrap_or_default().to_string(),
                    m.clu_rec.to_string(),
                    m.clu_prec.to_string(),
                    m.clu_f1.to_string(),
                    m.card_err.to_string(),
                ])?,
                Metrics::Path(m) => w.write_record([
                    name.to_string(),
                    id,
                    m.n_paths.to_string(),
                    m.min_ade.to_string(),
                    m.min_hd.to_string(),
                    m.offroad_rate.to_string(),
                ])?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn path_rows(name: &str, tau: &str, s: &PathEvalSummary) -> Vec<[String; 8]> {
    let row = |stratum: String, p: &PathSummary, single: String| {
        [
            name.to_string(),
            tau.to_string(),
            stratum,
            p.count.to_string(),
            p.min_ade.to_string(),
            p.min_hd.to_string(),
            p.offroad_rate.to_string(),
            single,
        ]
    };
    let mut rows = vec![row("all".into(), &s.overall, s.single_branch_two_mode.to_string())];
    rows.extend(s.by_n_paths.iter().map(|(n, p)| row(format!("n_paths={n}"), p, String::new())));
    rows.push(row("n_paths>=2".into(), &s.multi_path, String::new()));
    rows
}

/// Aggregate rows; path results are also stratified by the number of valid paths.
pub fn write_summary<W: Write>(out: W, task: Task, summaries: &[(&MethodEval, Summary)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match task {
        Task::Subset => w.write_record(["method", "tau", "count", "clu_rec", "clu_prec", "clu_f1", "card_err"])?,
        Task::Path => w.write_record([
            "method",
            "tau",
            "stratum",
            "count",
            "min_ade",
            "min_hd",
            "offroad_rate",
            "single_branch_two_mode",
        ])?,
    }
    for (eval, summary) in summaries {
        let name = eval.method.name();
        let tau = opt(eval.tau);
        match summary {
            Summary::Cluster(s) => w.write_record([
                name.to_string(),
                tau,
                s.count.to_string(),
                s.clu_rec.to_string(),
                s.clu_prec.to_string(),
                s.clu_f1.to_string(),
                s.card_err.to_string(),
            ])?,
            Summary::Path(s) => {
                for row in path_rows(name, &tau, s) {
                    w.write_record(row)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_log<W: Write>(out: W, task: Task, log: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "val_loss", val_metric_name(task)])?;
    for r in log {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.val_metric.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bench<W: Write>(out: W, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
