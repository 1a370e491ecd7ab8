//! Cooperative spectrum sharing between a UAV fleet and a terrestrial primary
//! link. The emergency center picks a relay UAV and assigns the rest to
//! prioritized sensing regions; each UAV then learns where to hover inside its
//! region with tabular Q-learning.

pub mod allocator;
pub mod channel;
pub mod config;
pub mod engine;
pub mod error;
pub mod learner;
pub mod oracle;
pub mod scenario;
pub mod verify;

pub use allocator::{allocate, Allocation, Role, UavAllocation};
pub use channel::{primary_rate, sensing_rate, TimeAllocation};
pub use config::{preset, preset_names, ExperimentConfig};
pub use engine::{run, run_observed, EpisodeMetrics, MetricsTensor, Mode, RunConfig, RunOutput};
pub use error::{Error, Result};
pub use learner::{Action, LearningParams, QTable};
pub use scenario::{
    build_scenario, random_scenario, GridSpec, NodeSet, PhysicalParams, Position3D, PriorityMap,
    Scenario, ScenarioTemplate,
};
