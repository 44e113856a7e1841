//! Convex-composition training objectives for sequence generation: loss
//! kernels, an optimal-distribution solver on the simplex, a small autodiff
//! engine, exactly enumerable toy sequence models, and the trainer that ties
//! them together.

pub mod autodiff;
pub mod decode;
pub mod dist;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod models;
pub mod oracle;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use autodiff::{FdReport, Graph, Var};
pub use decode::{beam_decode, exact_argmax, greedy_decode, nar_argmax, DecodeMethod, DecodeResult};
pub use dist::FiniteDistribution;
pub use error::{Error, Result};
pub use loss::{ConvexVariant, LossEval, LossFamily, SequenceLogProb};
pub use metrics::{eval_context, eval_metrics, ContextMetrics, MetricsBundle};
pub use models::{ModelClass, ModelConfig, ModelDistribution, NeuralModel, SequenceModel, TabularModel, Vocab};
pub use oracle::{OracleResult, SimplexObjective, SolverConfig, TheoremReport};
pub use tasks::{build_task, nar_lower_bound, product_fit, sample_dataset, Dataset, Task, TaskSpec};
pub use tensor::Tensor;
pub use train::{run_two_phase, sweep_k, train_phase, OptimizerCfg, PhasePlan, RunRecord};
