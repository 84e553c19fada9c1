//! Reward-shaped agent: `R̃ = R + z·F` with a learned shaping weight `z`,
//! the agent-side preference oracle, and extraction of the agent's own
//! preference tree on the human's bracket.

mod planning;
mod train;

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envsim::{Action, CandidateState, Cell, EnvError, GridWorld, FEATURE_DIM};
use crate::preftree::{condense, ground, GroundedTree, GroundingParams, PreferenceReward, TreeError};
use crate::tournament::{
    ordered_choice, run_tournament, Bracket, Choice, LabelSource, Oracle, PreferenceLabel, TournamentError,
};

pub use planning::{greedy_return, optimal_return, plan_shaped, value_iteration};
pub use train::{
    train, train_with, Checkpoint, ModelCheckpoint, Policy, ProbeMode, TrainOutcome, TrainingConfig, TrainingTrace,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("divergence")]
    Divergence { trace: TrainingTrace },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("bracket and candidates do not match: {0}")]
    PairingMismatch(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Tournament(#[from] TournamentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ShapingMode {
    PerState,
    #[default]
    Scalar,
}

/// Where the preference signal `F` comes from.
#[derive(Debug, Clone)]
pub enum AdviceSignal {
    /// Grounded human preference tree, evaluated through feature similarity.
    Tree(PreferenceReward),
    /// `scale · stateReward(cell)`.
    StateReward {
        scale: f64,
    },
    Constant(f64),
}

/// Shaping weight(s) plus the memoized preference signal over a world.
#[derive(Debug, Clone)]
pub struct ShapingModel {
    world: GridWorld,
    mode: ShapingMode,
    z: Vec<f64>,
    signal: Arc<AdviceSignal>,
    memo: Arc<Vec<OnceLock<f64>>>,
}

pub const Z_INIT: f64 = 1.0;

impl ShapingModel {
    /// Starts with `z ≡ 1`, i.e. full trust in the advice.
    pub fn new(world: &GridWorld, mode: ShapingMode, signal: AdviceSignal) -> Result<Self, AgentError> {
        if let AdviceSignal::Tree(f) = &signal {
            // every featurized cell has this dimension and a unit bias, so a
            // single probe rules out evaluation errors later on
            f.value(&world.featurize(world.start())?)?;
            debug_assert_eq!(world.featurize(world.start())?.len(), FEATURE_DIM);
        }
        let z_len = match mode {
            ShapingMode::Scalar => 1,
            ShapingMode::PerState => world.num_cells(),
        };
        Ok(ShapingModel {
            world: world.clone(),
            mode,
            z: vec![Z_INIT; z_len],
            signal: Arc::new(signal),
            memo: Arc::new((0..world.num_cells()).map(|_| OnceLock::new()).collect()),
        })
    }

    pub fn with_constant_z(mut self, value: f64) -> Self {
        self.z.iter_mut().for_each(|z| *z = value);
        self
    }

    pub fn world(&self) -> &GridWorld {
        &self.world
    }

    pub fn mode(&self) -> ShapingMode {
        self.mode
    }

    pub fn signal(&self) -> &AdviceSignal {
        &self.signal
    }

    pub fn z(&self, cell: Cell) -> f64 {
        match self.mode {
            ShapingMode::Scalar => self.z[0],
            ShapingMode::PerState => self.z[self.world.index(cell)],
        }
    }

    /// Raw weight storage: one entry in scalar mode, one per cell otherwise.
    pub fn weights(&self) -> &[f64] {
        &self.z
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.z
    }

    pub fn set_z(&mut self, cell: Cell, value: f64) {
        match self.mode {
            ShapingMode::Scalar => self.z[0] = value,
            ShapingMode::PerState => {
                let i = self.world.index(cell);
                self.z[i] = value;
            }
        }
    }

    /// Preference signal at `cell`, computed once per cell.
    pub fn preference(&self, cell: Cell) -> f64 {
        *self.memo[self.world.index(cell)].get_or_init(|| match &*self.signal {
            AdviceSignal::Tree(f) => {
                let features = self.world.featurize(cell).expect("cell is in bounds");
                f.value(&features).expect("feature dimension checked at construction")
            }
            AdviceSignal::StateReward { scale } => scale * self.world.state_reward(cell),
            AdviceSignal::Constant(c) => *c,
        })
    }

    /// State-level shaped value used to rank states: `stateReward + z·F`.
    pub fn shaped_value(&self, cell: Cell) -> f64 {
        self.world.state_reward(cell) + self.z(cell) * self.preference(cell)
    }

    /// Summary of the weights over open cells: (mean, min, max).
    pub fn z_summary(&self) -> (f64, f64, f64) {
        let values: Vec<f64> = match self.mode {
            ShapingMode::Scalar => vec![self.z[0]],
            ShapingMode::PerState => self.world.open_cells().into_iter().map(|c| self.z(c)).collect(),
        };
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (mean, min, max)
    }
}

/// `envReward + z(after)·F(after)`.
pub fn shaped_reward(_before: Cell, _action: Action, after: Cell, env_reward: f64, model: &ShapingModel) -> f64 {
    env_reward + model.z(after) * model.preference(after)
}

/// How the agent decides a pairwise query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionRule {
    /// Higher `stateReward + z·F` wins.
    #[default]
    ShapedValue,
    /// Higher grounded human-tree reward wins.
    TreeReward,
}

/// Deterministic agent-side labeller. Exact ties go to the smaller id.
#[derive(Debug, Clone)]
pub struct AgentOracle<'a> {
    model: &'a ShapingModel,
    rule: DecisionRule,
    tree: Option<&'a GroundedTree>,
}

impl<'a> AgentOracle<'a> {
    pub fn new(model: &'a ShapingModel) -> Self {
        AgentOracle { model, rule: DecisionRule::ShapedValue, tree: None }
    }

    /// Ranks by the grounded rewards of `tree` instead of the shaped value.
    pub fn by_tree_reward(model: &'a ShapingModel, tree: &'a GroundedTree) -> Self {
        AgentOracle { model, rule: DecisionRule::TreeReward, tree: Some(tree) }
    }

    pub fn value(&self, state: &CandidateState) -> f64 {
        match (self.rule, self.tree) {
            (DecisionRule::TreeReward, Some(t)) => t.reward(&state.id).unwrap_or(f64::NEG_INFINITY),
            _ => self.model.shaped_value(state.cell),
        }
    }

    pub fn decide(&self, left: &CandidateState, right: &CandidateState) -> Choice {
        ordered_choice(self.value(left), self.value(right), &left.id, &right.id)
    }
}

impl Oracle for AgentOracle<'_> {
    fn source(&self) -> LabelSource {
        LabelSource::Agent
    }

    fn choose(&mut self, left: &CandidateState, right: &CandidateState) -> Option<Choice> {
        Some(self.decide(left, right))
    }
}

/// Replays the human's round-one pairing with the agent oracle, then
/// condenses and grounds the result.
pub fn extract_agent_tree(
    human_bracket: &Bracket,
    candidates: &[CandidateState],
    oracle: &AgentOracle<'_>,
    params: GroundingParams,
) -> Result<(GroundedTree, Vec<PreferenceLabel>), AgentError> {
    let by_id: BTreeMap<&str, &CandidateState> = candidates.iter().map(|c| (c.id.as_str(), c)).collect();
    if by_id.len() != human_bracket.entrants.len()
        || human_bracket.entrants.iter().any(|e| !by_id.contains_key(e.as_str()))
    {
        return Err(AgentError::PairingMismatch(format!(
            "{} entrants vs {} candidates",
            human_bracket.entrants.len(),
            candidates.len()
        )));
    }
    let mut oracle = oracle.clone();
    let (dendrogram, labels) = run_tournament(human_bracket, candidates, &mut oracle)?;
    let tree = ground(&condense(&dendrogram)?, params)?;
    Ok((tree, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::WorldConfig;
    use crate::preftree::SimilarityRule;
    use crate::tournament::{BmParams, SimulatedOracle};

    fn world() -> GridWorld {
        GridWorld::default_benchmark()
    }

    #[test]
    fn zero_weight_leaves_env_reward() {
        let w = world();
        let m = ShapingModel::new(&w, ShapingMode::Scalar, AdviceSignal::Constant(3.0)).unwrap().with_constant_z(0.0);
        for c in w.open_cells() {
            for a in Action::ALL {
                let next = w.move_from(c, a);
                let r = w.reward_for(next);
                assert_eq!(shaped_reward(c, a, next, r, &m), r);
            }
        }
    }

    #[test]
    fn constant_signal_adds_constant() {
        let w = world();
        let m = ShapingModel::new(&w, ShapingMode::PerState, AdviceSignal::Constant(0.7)).unwrap();
        let next = Cell::new(1, 0);
        assert!((shaped_reward(Cell::new(0, 0), Action::Right, next, -0.05, &m) - 0.65).abs() < 1e-12);
    }

    #[test]
    fn agent_oracle_clauses() {
        let w = world();
        let m = ShapingModel::new(&w, ShapingMode::Scalar, AdviceSignal::Constant(0.0)).unwrap();
        let mut a = w.candidate(Cell::new(8, 7)).unwrap();
        let mut b = w.candidate(Cell::new(0, 0)).unwrap();
        assert_eq!(AgentOracle::new(&m).decide(&a, &b), Choice::Left);
        assert_eq!(AgentOracle::new(&m).decide(&b, &a), Choice::Right);
        // equal values fall back to id order
        a.id = "b".into();
        b.id = "a".into();
        b.cell = a.cell;
        assert_eq!(AgentOracle::new(&m).decide(&a, &b), Choice::Right);
    }

    #[test]
    fn zero_weight_oracle_ranks_like_env_reward() {
        let w = world();
        let m = ShapingModel::new(&w, ShapingMode::Scalar, AdviceSignal::Constant(-4.0)).unwrap().with_constant_z(0.0);
        let cands: Vec<_> = w.open_cells().into_iter().map(|c| w.candidate(c).unwrap()).collect();
        let env = SimulatedOracle::from_env_reward(&cands, BmParams::noiseless(), 0);
        let agent = AgentOracle::new(&m);
        for a in &cands {
            for b in &cands {
                if a.id != b.id {
                    assert_eq!(Some(agent.decide(a, b)), env.stronger(&a.id, &b.id));
                }
            }
        }
    }

    #[test]
    fn per_state_weights() {
        let w = world();
        let mut m = ShapingModel::new(&w, ShapingMode::PerState, AdviceSignal::Constant(1.0)).unwrap();
        m.set_z(Cell::new(2, 2), -3.0);
        assert_eq!(m.z(Cell::new(2, 2)), -3.0);
        assert_eq!(m.z(Cell::new(2, 3)), 1.0);
        let (mean, min, max) = m.z_summary();
        assert_eq!((min, max), (-3.0, 1.0));
        assert!(mean < 1.0);
    }

    #[test]
    fn extraction_rejects_mismatched_pairings() {
        let w = world();
        let cands = w.sample_candidates(4, 1).unwrap();
        let bracket = Bracket::seed(&cands, 1).unwrap();
        let m = ShapingModel::new(&w, ShapingMode::Scalar, AdviceSignal::Constant(0.0)).unwrap();
        let err = extract_agent_tree(&bracket, &cands[..3], &AgentOracle::new(&m), GroundingParams::default());
        assert!(matches!(err, Err(AgentError::PairingMismatch(_))));
    }

    #[test]
    fn tree_signal_dimension_is_checked() {
        let w = GridWorld::new(WorldConfig::default_benchmark()).unwrap();
        let tree = ground(&crate::preftree::PreferenceTree::from_edges("a", &[]).unwrap(), GroundingParams::default())
            .unwrap();
        let feats = BTreeMap::from([("a".to_string(), vec![1.0, 2.0])]);
        let f = PreferenceReward::new(&tree, &feats, SimilarityRule::MinProduct).unwrap();
        assert!(ShapingModel::new(&w, ShapingMode::Scalar, AdviceSignal::Tree(f)).is_err());
    }
}
