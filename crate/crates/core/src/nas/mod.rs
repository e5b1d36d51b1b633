//! Architecture search: the decision space, the controller policy, child
//! networks and their training, and the REINFORCE search loop.

mod child;
mod controller;
mod search;
mod space;
mod train;

pub use child::{
    instantiate_child, output_frames, propagate_shape, ChildNetwork, Instantiated,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use controller::{Controller, ControllerConfig, Episode, UpdateOutcome};
pub use search::{
    best_child, compare_children, read_search_log, run_search, ChildEvaluator, ChildResult,
    Evaluation, SearchConfig, SearchOutcome, TrainingEvaluator,
};
pub use space::{ArchSpec, BlockSpec, DecisionKind, SearchSpace, DEFAULT_HIDDEN};
pub use train::{
    check_feasible, compute_reward, evaluate_child, load_features, train_child, ChildStatus, Dataset, TrainConfig,
    TrainReport, Utterance,
};
