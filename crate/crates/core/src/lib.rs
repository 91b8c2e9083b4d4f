//! Regional traffic signal control laboratory.
//!
//! A fixed-step mesoscopic simulator for signalized grid networks, wrapped as a
//! single-agent reinforcement-learning environment. One agent observes the whole
//! region as an `M x M` matrix (signal splits on the diagonal, link queues off the
//! diagonal) and adjusts one intersection's phase split per control step.

pub mod agents;
pub mod demand;
pub mod env;
pub mod queue;
pub mod rng;
pub mod signal;
pub mod sim;
pub mod topology;

pub use demand::{FluctuationSpec, OdEntry, OdMatrix, Trip};
pub use env::{
    ActionCode, EnvConfig, LinkWeighting, RewardParams, Spaces, StateMatrix, StepInfo, StepResult,
    TscEnv,
};
pub use signal::{Phase, PhaseSchedule, PhaseTiming, SignalPlan, SplitDelta};
pub use sim::{SimConfig, Simulation};
pub use topology::{
    Axis, IntersectionId, LinkId, LinkKind, LinkSpec, Movement, NetworkConfig, NetworkTopology,
    NodeId, Orientation, Route, TazId,
};
