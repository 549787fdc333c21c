//! The five batch entry points. Each takes a resolved config plus paths,
//! writes its artifacts under an output directory, and returns a summary
//! value so tests (and the ablation runner) can drive them in-process.

mod ablate;
mod evaluate;
mod separate;
mod synth;
mod train;

pub use ablate::{cmd_ablate, AblationReport, AblationRow, ABLATION_ROWS};
pub use evaluate::{cmd_evaluate, EvalMode, EvalReport, PairReport};
pub use separate::{cmd_separate, SeparateReport};
pub use synth::cmd_synth;
pub use train::{cmd_train, TrainSummary};
