use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdviceSignal, AgentError, ShapingMode, ShapingModel};
use crate::envsim::{Action, Cell, GridWorld};
use crate::seeds;

/// How a probed shaping weight is scored during the meta-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ProbeMode {
    /// Greedy policy of the shaped-optimal action values under the probed
    /// weight, obtained by value iteration on the world model.
    #[default]
    Planning,
    /// Greedy policy after a short run of TD episodes on a copy of Q.
    Lookahead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episode budget over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub episodes: usize,
    /// Episodes between shaping-weight updates (and trace checkpoints).
    pub meta_interval: usize,
    pub eval_episodes: usize,
    /// Evaluation episodes start from uniformly random cells instead of the
    /// world start.
    pub eval_random_starts: bool,
    pub probe: ProbeMode,
    /// TD episodes run on a copy of Q for each probed weight.
    pub lookahead_episodes: usize,
    /// Exploration rate of lookahead episodes, which start from uniformly
    /// random cells.
    pub lookahead_epsilon: f64,
    /// Training episodes start from uniformly random cells instead of the
    /// world start.
    pub exploring_starts: bool,
    /// Smallest probe radius; the radius doubles `meta_expansions` times.
    pub meta_step: f64,
    pub meta_expansions: u32,
    /// A probe must beat the current weight by more than this.
    pub meta_tolerance: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub adapt_z: bool,
    /// Restart TD learning from a zero table whenever the meta-step moves
    /// the weights, so values learned under the old shaping cannot pin the
    /// greedy policy.
    pub reset_on_z_change: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.1,
            discount: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
            episodes: 5000,
            meta_interval: 200,
            eval_episodes: 20,
            eval_random_starts: false,
            probe: ProbeMode::Planning,
            lookahead_episodes: 100,
            lookahead_epsilon: 0.3,
            exploring_starts: false,
            meta_step: 0.25,
            meta_expansions: 3,
            meta_tolerance: 1e-9,
            z_min: -5.0,
            z_max: 5.0,
            adapt_z: true,
            reset_on_z_change: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |what: &str| Err(AgentError::InvalidConfig(what.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learningRate must be positive");
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_fraction) {
            return bad("epsilonDecayFraction must lie in [0, 1]");
        }
        if self.episodes == 0 || self.meta_interval == 0 || self.eval_episodes == 0 {
            return bad("episodes, metaInterval and evalEpisodes must be positive");
        }
        if !(0.0..=1.0).contains(&self.lookahead_epsilon) {
            return bad("lookaheadEpsilon must lie in [0, 1]");
        }
        if !(self.meta_step > 0.0 && self.meta_step.is_finite()) || self.meta_tolerance.is_nan() {
            return bad("metaStep must be positive");
        }
        if !(self.z_min.is_finite() && self.z_max.is_finite() && self.z_min <= self.z_max) {
            return bad("zMin must not exceed zMax");
        }
        Ok(())
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        let span = self.epsilon_decay_fraction * self.episodes as f64;
        let t = if span > 0.0 { (episode as f64 / span).min(1.0) } else { 1.0 };
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }
}

/// Tabular action values, one row per grid cell in `Action::ALL` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    width: usize,
    pub(super) q: Vec<[f64; 4]>,
}

impl Policy {
    pub fn zeros(world: &GridWorld) -> Self {
        Policy { width: world.width(), q: vec![[0.0; 4]; world.num_cells()] }
    }

    pub(super) fn idx(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn q_values(&self, c: Cell) -> [f64; 4] {
        self.q[self.idx(c)]
    }

    /// Highest-valued action; ties go to the first action in `Action::ALL`.
    pub fn greedy(&self, c: Cell) -> Action {
        let row = &self.q[self.idx(c)];
        let mut best = 0;
        for a in 1..4 {
            if row[a] > row[best] {
                best = a;
            }
        }
        Action::ALL[best]
    }

    pub fn greedy_map(&self, world: &GridWorld) -> BTreeMap<Cell, Action> {
        world.open_cells().into_iter().map(|c| (c, self.greedy(c))).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Checkpoint {
    pub episode: usize,
    pub mean_env_return: f64,
    pub z_mean: f64,
    pub z_min: f64,
    pub z_max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainingTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode,meanEnvReturn,zMean,zMin,zMax\n");
        for c in &self.checkpoints {
            let _ = writeln!(out, "{},{},{},{},{}", c.episode, c.mean_env_return, c.z_mean, c.z_min, c.z_max);
        }
        out
    }

    pub fn last(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub model: ShapingModel,
    pub trace: TrainingTrace,
}

pub fn train(
    world: &GridWorld,
    model: ShapingModel,
    config: &TrainingConfig,
    seed: u64,
) -> Result<TrainOutcome, AgentError> {
    train_with(world, model, config, seed, &mut |_, _, _| {})
}

/// Like [`train`], calling `observer` after every checkpoint with read-only
/// views of the current policy and shaping model.
pub fn train_with(
    world: &GridWorld,
    mut model: ShapingModel,
    config: &TrainingConfig,
    seed: u64,
    observer: &mut dyn FnMut(&Checkpoint, &Policy, &ShapingModel),
) -> Result<TrainOutcome, AgentError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, seeds::EXPLORATION));
    let starts = if config.eval_random_starts {
        eval_starts(world, config.eval_episodes, seeds::derive(seed, seeds::EVALUATION))
    } else {
        vec![world.start(); config.eval_episodes]
    };
    let pool = start_pool(world);
    let mut policy = Policy::zeros(world);
    let mut trace = TrainingTrace::default();

    let mut episode = 0;
    let mut meta_round = 0u64;
    while episode < config.episodes {
        let block_end = (episode + config.meta_interval).min(config.episodes);
        while episode < block_end {
            let start = if config.exploring_starts { random_start(&pool, &mut rng) } else { world.start() };
            if !run_episode(world, &mut policy, &model, config, start, config.epsilon(episode), &mut rng) {
                return Err(AgentError::Divergence { trace });
            }
            episode += 1;
        }
        if config.adapt_z {
            let lookahead_seed = seeds::derive(seeds::derive(seed, seeds::LOOKAHEAD), meta_round);
            if meta_step(world, &policy, &mut model, config, &starts, lookahead_seed, meta_round)
                && config.reset_on_z_change
            {
                policy = Policy::zeros(world);
            }
        }
        meta_round += 1;
        let (z_mean, z_min, z_max) = model.z_summary();
        let checkpoint =
            Checkpoint { episode, mean_env_return: mean_greedy_return(world, &policy, &starts), z_mean, z_min, z_max };
        observer(&checkpoint, &policy, &model);
        trace.checkpoints.push(checkpoint);
    }
    Ok(TrainOutcome { policy, model, trace })
}

/// Uniform non-goal open start cells for evaluation, fixed for a whole run.
fn eval_starts(world: &GridWorld, count: usize, seed: u64) -> Vec<Cell> {
    let pool = start_pool(world);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_start(&pool, &mut rng)).collect()
}

fn mean_greedy_return(world: &GridWorld, policy: &Policy, starts: &[Cell]) -> f64 {
    starts.iter().map(|&s| super::greedy_return(world, policy, s)).sum::<f64>() / starts.len() as f64
}

/// One epsilon-greedy Q-learning episode from `start`. Step-limit
/// truncation bootstraps; only the goal is terminal. Returns false as soon
/// as an update produces a non-finite value.
fn run_episode(
    world: &GridWorld,
    policy: &mut Policy,
    model: &ShapingModel,
    config: &TrainingConfig,
    start: Cell,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> bool {
    let mut state = world.reset_at(start);
    while !state.done {
        let action =
            if rng.gen::<f64>() < epsilon { Action::ALL[rng.gen_range(0..4)] } else { policy.greedy(state.cell) };
        let t = world.step(&state, action).expect("episode is live");
        let r = super::shaped_reward(state.cell, action, t.next.cell, t.reward, model);
        let bootstrap = if t.reached_goal {
            0.0
        } else {
            policy.q_values(t.next.cell).into_iter().fold(f64::NEG_INFINITY, f64::max)
        };
        let i = policy.idx(state.cell);
        let q = &mut policy.q[i][action.index()];
        *q += config.learning_rate * (r + config.discount * bootstrap - *q);
        if !q.is_finite() {
            return false;
        }
        state = t.next;
    }
    true
}

fn random_start(pool: &[Cell], rng: &mut ChaCha8Rng) -> Cell {
    pool[rng.gen_range(0..pool.len())]
}

fn start_pool(world: &GridWorld) -> Vec<Cell> {
    world.open_cells().into_iter().filter(|&c| c != world.goal()).collect()
}

/// Pattern search on the shaping weight. Each probed weight is scored by the
/// mean greedy environment return of the policy it leads to, see
/// [`ProbeMode`]. Lookahead probes share their random numbers. The radius starts at
/// `meta_step` and doubles until some probe strictly beats the current
/// weight. Returns whether the weights moved; Q itself is left untouched.
///
/// Scalar mode moves the single weight. Per-state mode moves one row of
/// cells at a time, cycling through rows across meta rounds.
#[allow(clippy::too_many_arguments)]
fn meta_step(
    world: &GridWorld,
    policy: &Policy,
    model: &mut ShapingModel,
    config: &TrainingConfig,
    starts: &[Cell],
    lookahead_seed: u64,
    meta_round: u64,
) -> bool {
    let block: Vec<usize> = match model.mode() {
        ShapingMode::Scalar => vec![0],
        ShapingMode::PerState => {
            let row = (meta_round % world.height() as u64) as usize;
            (0..world.width())
                .map(|x| world.index(Cell::new(x, row)))
                .filter(|&i| !world.is_wall(world.cell_at(i)))
                .collect()
        }
    };
    if block.is_empty() {
        return false;
    }
    let pool = start_pool(world);
    let probe = |shift: f64| -> (f64, ShapingModel) {
        let mut candidate = model.clone();
        let weights = candidate.weights_mut();
        for &i in &block {
            weights[i] = (weights[i] + shift).clamp(config.z_min, config.z_max);
        }
        if config.probe == ProbeMode::Planning {
            let planned = super::plan_shaped(world, &candidate, config.discount);
            return (mean_greedy_return(world, &planned, starts), candidate);
        }
        let mut q = policy.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(lookahead_seed);
        for _ in 0..config.lookahead_episodes {
            let start = random_start(&pool, &mut rng);
            if !run_episode(world, &mut q, &candidate, config, start, config.lookahead_epsilon, &mut rng) {
                return (f64::NEG_INFINITY, candidate);
            }
        }
        (mean_greedy_return(world, &q, starts), candidate)
    };

    let (base, _) = probe(0.0);
    for j in 0..=config.meta_expansions {
        let radius = config.meta_step * f64::from(1u32 << j);
        let mut best: Option<(f64, ShapingModel)> = None;
        // the downward probe is listed first and wins exact ties
        for shift in [-radius, radius] {
            let (score, candidate) = probe(shift);
            if candidate.weights() == model.weights() {
                continue;
            }
            if score > base + config.meta_tolerance && best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, candidate));
            }
        }
        if let Some((_, candidate)) = best {
            *model = candidate;
            return true;
        }
    }
    false
}

/// Serialized snapshot of a training run: weights, action values and the
/// configuration that produced them. Cells are keyed `"x,y"`; a scalar
/// weight is stored under `"*"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelCheckpoint {
    pub mode: ShapingMode,
    pub z: BTreeMap<String, f64>,
    pub q_table: BTreeMap<String, [f64; 4]>,
    pub config: TrainingConfig,
    pub seed: u64,
    pub episode_index: usize,
}

const SCALAR_KEY: &str = "*";

fn cell_key(c: Cell) -> String {
    format!("{},{}", c.x, c.y)
}

fn parse_cell_key(key: &str) -> Option<Cell> {
    let (x, y) = key.split_once(',')?;
    Some(Cell::new(x.trim().parse().ok()?, y.trim().parse().ok()?))
}

impl ModelCheckpoint {
    pub fn capture(
        world: &GridWorld,
        policy: &Policy,
        model: &ShapingModel,
        config: &TrainingConfig,
        seed: u64,
        episode_index: usize,
    ) -> Self {
        let open = world.open_cells();
        let z = match model.mode() {
            ShapingMode::Scalar => BTreeMap::from([(SCALAR_KEY.to_string(), model.weights()[0])]),
            ShapingMode::PerState => open.iter().map(|&c| (cell_key(c), model.z(c))).collect(),
        };
        let q_table = open.iter().map(|&c| (cell_key(c), policy.q_values(c))).collect();
        ModelCheckpoint { mode: model.mode(), z, q_table, config: config.clone(), seed, episode_index }
    }

    /// Rebuilds the policy and shaping model. The advice signal is not part
    /// of the checkpoint and must be supplied again.
    pub fn restore(&self, world: &GridWorld, signal: AdviceSignal) -> Result<(Policy, ShapingModel), AgentError> {
        let mut model = ShapingModel::new(world, self.mode, signal)?;
        let bad = |what: String| AgentError::InvalidConfig(format!("checkpoint: {what}"));
        for (key, &value) in &self.z {
            if !value.is_finite() {
                return Err(bad(format!("non-finite weight at {key}")));
            }
            match self.mode {
                ShapingMode::Scalar if key == SCALAR_KEY => model.weights_mut()[0] = value,
                ShapingMode::PerState => {
                    let c = parse_cell_key(key)
                        .filter(|&c| world.in_bounds(c))
                        .ok_or_else(|| bad(format!("bad cell {key}")))?;
                    model.set_z(c, value);
                }
                _ => return Err(bad(format!("unexpected weight key {key}"))),
            }
        }
        let mut policy = Policy::zeros(world);
        for (key, row) in &self.q_table {
            let c =
                parse_cell_key(key).filter(|&c| world.in_bounds(c)).ok_or_else(|| bad(format!("bad cell {key}")))?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("non-finite action value at {key}")));
            }
            let i = policy.idx(c);
            policy.q[i] = *row;
        }
        Ok((policy, model))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{greedy_return, optimal_return};

    fn quick() -> TrainingConfig {
        TrainingConfig { episodes: 600, meta_interval: 200, lookahead_episodes: 20, ..TrainingConfig::default() }
    }

    #[test]
    fn epsilon_schedule() {
        let c = TrainingConfig::default();
        assert_eq!(c.epsilon(0), 1.0);
        assert!((c.epsilon(1250) - 0.525).abs() < 1e-12);
        assert!((c.epsilon(2500) - 0.05).abs() < 1e-12);
        assert!((c.epsilon(4999) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn greedy_ties_follow_action_order() {
        let w = GridWorld::default_benchmark();
        let mut p = Policy::zeros(&w);
        assert_eq!(p.greedy(Cell::new(3, 3)), Action::Down);
        let i = p.idx(Cell::new(3, 3));
        p.q[i] = [0.0, 1.0, 1.0, 0.5];
        assert_eq!(p.greedy(Cell::new(3, 3)), Action::Left);
    }

    #[test]
    fn frozen_zero_weight_reaches_optimum() {
        let w = GridWorld::default_benchmark();
        let m = ShapingModel::new(&w, ShapingMode::Scalar, AdviceSignal::Constant(0.0)).unwrap().with_constant_z(0.0);
        let cfg = TrainingConfig { adapt_z: false, ..TrainingConfig::default() };
        let out = train(&w, m, &cfg, 3).unwrap();
        let opt = optimal_return(&w);
        let got = greedy_return(&w, &out.policy, w.start());
        assert!((got - opt).abs() <= 0.01 * opt.abs(), "{got} vs {opt}");
    }

    #[test]
    fn deterministic_under_seed() {
        let w = GridWorld::default_benchmark();
        let m = ShapingModel::new(&w, ShapingMode::Scalar, AdviceSignal::StateReward { scale: 1.0 }).unwrap();
        let a = train(&w, m.clone(), &quick(), 9).unwrap();
        let b = train(&w, m, &quick(), 9).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.checkpoints.iter().map(|c| c.episode).collect::<Vec<_>>(), vec![200, 400, 600]);
    }

    #[test]
    fn divergence_carries_trace() {
        let w = GridWorld::default_benchmark();
        let m = ShapingModel::new(&w, ShapingMode::Scalar, AdviceSignal::Constant(1e300)).unwrap().with_constant_z(5.0);
        let cfg = TrainingConfig { learning_rate: 50.0, adapt_z: false, ..quick() };
        match train(&w, m, &cfg, 1) {
            Err(AgentError::Divergence { trace }) => assert!(trace.checkpoints.len() < 3),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.trace)),
        }
    }

    #[test]
    fn csv_header_and_rows() {
        let w = GridWorld::default_benchmark();
        let m = ShapingModel::new(&w, ShapingMode::Scalar, AdviceSignal::Constant(0.0)).unwrap();
        let out = train(&w, m, &quick(), 2).unwrap();
        let csv = out.trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("episode,meanEnvReturn,zMean,zMin,zMax"));
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn checkpoint_round_trip() {
        let w = GridWorld::default_benchmark();
        for mode in [ShapingMode::Scalar, ShapingMode::PerState] {
            let m = ShapingModel::new(&w, mode, AdviceSignal::StateReward { scale: 0.5 }).unwrap();
            let out = train(&w, m, &quick(), 4).unwrap();
            let ck = ModelCheckpoint::capture(&w, &out.policy, &out.model, &quick(), 4, 600);
            let text = serde_json::to_string(&ck).unwrap();
            let v: serde_json::Value = serde_json::from_str(&text).unwrap();
            for key in ["mode", "z", "qTable", "config", "seed", "episodeIndex"] {
                assert!(v.get(key).is_some(), "{key}");
            }
            let back: ModelCheckpoint = serde_json::from_str(&text).unwrap();
            let (p, restored) = back.restore(&w, AdviceSignal::StateReward { scale: 0.5 }).unwrap();
            for c in w.open_cells() {
                assert_eq!(p.q_values(c), out.policy.q_values(c));
                assert_eq!(restored.z(c), out.model.z(c));
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            TrainingConfig { learning_rate: 0.0, ..TrainingConfig::default() },
            TrainingConfig { discount: 1.5, ..TrainingConfig::default() },
            TrainingConfig { episodes: 0, ..TrainingConfig::default() },
            TrainingConfig { z_min: 2.0, z_max: 1.0, ..TrainingConfig::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(AgentError::InvalidConfig(_))));
        }
    }

    #[test]
    fn config_defaults_fill_missing_fields() {
        let c: TrainingConfig = serde_json::from_str(r#"{"episodes": 10}"#).unwrap();
        assert_eq!(c.episodes, 10);
        assert_eq!(c.meta_interval, 200);
    }
}
