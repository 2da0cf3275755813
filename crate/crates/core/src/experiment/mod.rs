//! End-to-end experiment plumbing shared by the command line tools:
//! input encodings, training loops, evaluation and diagnostics.

pub mod bench;
pub mod data;
pub mod eval;
pub mod features;
pub mod gradcheck;
pub mod toy;
pub mod train;

pub use data::{prepare_all, split_ids, InputSpec, Instance, Prepared, Task};
pub use features::{order_cells, path_candidates, FourierLift, PathCandidates, PathEncoding, SubsetEncoding};
pub use eval::{evaluate, evaluate_prepared, summarize, EvalOptions, InstanceResult, Method, MethodEval, Metrics, Summary};
pub use train::{train, train_with, Checkpoint, LogRow, Objective, TrainConfig, TrainOutcome};
pub use bench::{advance_scaling, run_bench, BenchConfig, BenchRow};
pub use gradcheck::{run_gradcheck, Fault, GradcheckConfig, GradcheckReport};
pub use toy::{verify_toy, ToyCheck, ToyReport};
