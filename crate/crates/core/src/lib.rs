//! Payoff-based learning of Nash equilibria in convex games.
//!
//! Players sample states from Gaussian mixed strategies, observe only their
//! own scalar cost, and move projected means along a score-function
//! direction. Alongside the learner the crate ships the oracles used to check
//! it: exact projection onto box-budget sets, a variational-inequality solver
//! for ground-truth equilibria, and Monte Carlo estimator diagnostics.

pub mod diagnostics;
pub mod error;
pub mod games;
pub mod harness;
pub mod joint;
pub mod learner;
pub mod projection;
pub mod vi_oracle;

pub use error::{Error, Result};
pub use games::{
    random_instance, CostOracle, Game, GameMappingAffine, GameSpec, InstanceSpec, PayoffOracle,
    QuadraticAggregativeGame, SmoothTestGame, SmoothedMapping,
};
pub use joint::JointVector;
pub use learner::{
    validate_schedule, InitialMeans, Learner, LearnerState, RunOptions, SampleRecord,
    ScheduleSpec, Trajectory,
};
pub use projection::{ActionSet, BoxBudgetSet, BoxSet, ProductSet};
