//! Advice-conformance verification for reward-shaped agents.
//!
//! A human's pairwise preferences over sampled gridworld states are gathered
//! through a noisy single-elimination tournament, condensed into a
//! preference tree, and grounded into a shaping reward. After training, the
//! same tournament is replayed with the agent's own shaped values, and the
//! two trees are compared to tell whether the agent followed the advice.
//!
//! * [`envsim`]: gridworld, featurization and candidate sampling
//! * [`tournament`]: brackets, oracles and dendrograms
//! * [`preftree`]: condensation, grounding, the preference reward and tree comparison
//! * [`agent`]: shaped Q-learning with an adaptive shaping weight
//! * [`verify`]: good/bad advice experiment drivers and conformance reports

pub mod agent;
pub mod envsim;
pub mod preftree;
pub mod seeds;
pub mod tournament;
pub mod verify;

pub use envsim::{CandidateState, Cell, GridWorld, WorldConfig};
pub use preftree::{GroundedTree, GroundingParams, PreferenceTree};
pub use tournament::{Bracket, Choice, Dendrogram, PreferenceLabel};
