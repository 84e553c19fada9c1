//! Desk-scale gridworld MDP, state featurization, uniform candidate sampling
//! and resolution-independent scene descriptions for human queries.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of components produced by [`GridWorld::featurize`].
pub const FEATURE_DIM: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("unknown built-in world {0:?}")]
    UnknownWorld(String),
    #[error("episode-terminated")]
    EpisodeTerminated,
    #[error("cell {0} is out of bounds")]
    OutOfBounds(Cell),
    #[error("requested {requested} candidates but only {available} open cells exist")]
    TooManyCandidates { requested: usize, available: usize },
    #[error("candidate count must be positive")]
    NoCandidates,
}

/// Grid coordinate. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl From<[usize; 2]> for Cell {
    fn from([x, y]: [usize; 2]) -> Self {
        Cell { x, y }
    }
}

impl From<Cell> for [usize; 2] {
    fn from(c: Cell) -> Self {
        [c.x, c.y]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Movement actions. Declaration order is lexicographic by name, which is
/// also the greedy tie-breaking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Down,
    Left,
    Right,
    Up,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Down, Action::Left, Action::Right, Action::Up];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// On-disk world description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorldConfig {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub walls: Vec<Cell>,
    pub start: Cell,
    pub goal: Cell,
    pub step_penalty: f64,
    pub goal_reward: f64,
    pub max_episode_steps: usize,
}

impl WorldConfig {
    /// 9×9 benchmark: a wall down column 4 from row 1 to the bottom edge, so
    /// every route from the top-left start to the bottom-right goal has to
    /// squeeze through the single opening at (4, 0).
    pub fn default_benchmark() -> Self {
        WorldConfig {
            width: 9,
            height: 9,
            walls: (1..9).map(|y| Cell::new(4, y)).collect(),
            start: Cell::new(0, 0),
            goal: Cell::new(8, 8),
            step_penalty: -0.05,
            goal_reward: 1.0,
            max_episode_steps: 200,
        }
    }
}

/// A validated gridworld. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    config: WorldConfig,
    wall: Vec<bool>,
    shortest_path: usize,
}

pub const DEFAULT_WORLD: &str = "default";

impl GridWorld {
    pub fn new(config: WorldConfig) -> Result<Self, EnvError> {
        let WorldConfig { width, height, .. } = config;
        if width == 0 || height == 0 {
            return Err(EnvError::InvalidWorld("width and height must be positive".into()));
        }
        if width + height < 3 {
            return Err(EnvError::InvalidWorld("grid needs at least two cells".into()));
        }
        if config.max_episode_steps == 0 {
            return Err(EnvError::InvalidWorld("maxEpisodeSteps must be positive".into()));
        }
        if !config.step_penalty.is_finite() || config.step_penalty > 0.0 {
            return Err(EnvError::InvalidWorld("stepPenalty must be a finite value <= 0".into()));
        }
        if !config.goal_reward.is_finite() || config.goal_reward <= 0.0 {
            return Err(EnvError::InvalidWorld("goalReward must be a finite value > 0".into()));
        }
        let in_bounds = |c: Cell| c.x < width && c.y < height;
        let mut wall = vec![false; width * height];
        for &w in &config.walls {
            if !in_bounds(w) {
                return Err(EnvError::InvalidWorld(format!("wall {w} is off the grid")));
            }
            wall[w.y * width + w.x] = true;
        }
        for (name, c) in [("start", config.start), ("goal", config.goal)] {
            if !in_bounds(c) {
                return Err(EnvError::InvalidWorld(format!("{name} {c} is off the grid")));
            }
            if wall[c.y * width + c.x] {
                return Err(EnvError::InvalidWorld(format!("{name} {c} is a wall")));
            }
        }
        if config.start == config.goal {
            return Err(EnvError::InvalidWorld("start and goal coincide".into()));
        }
        let mut world = GridWorld { config, wall, shortest_path: 0 };
        let dist = world.distances_to_goal();
        match dist[world.index(world.config.start)] {
            Some(d) => world.shortest_path = d,
            None => {
                return Err(EnvError::InvalidWorld("no path from start to goal".into()));
            }
        }
        Ok(world)
    }

    pub fn default_benchmark() -> Self {
        GridWorld::new(WorldConfig::default_benchmark()).expect("benchmark world is valid")
    }

    /// Looks up a named built-in world.
    pub fn builtin(name: &str) -> Result<Self, EnvError> {
        match name {
            DEFAULT_WORLD => Ok(GridWorld::default_benchmark()),
            other => Err(EnvError::UnknownWorld(other.to_string())),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        let config: WorldConfig = serde_json::from_str(text).map_err(|e| EnvError::InvalidWorld(e.to_string()))?;
        GridWorld::new(config)
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn height(&self) -> usize {
        self.config.height
    }

    pub fn start(&self) -> Cell {
        self.config.start
    }

    pub fn goal(&self) -> Cell {
        self.config.goal
    }

    pub fn step_penalty(&self) -> f64 {
        self.config.step_penalty
    }

    pub fn goal_reward(&self) -> f64 {
        self.config.goal_reward
    }

    pub fn max_episode_steps(&self) -> usize {
        self.config.max_episode_steps
    }

    /// Number of moves on a shortest start→goal route.
    pub fn shortest_path_len(&self) -> usize {
        self.shortest_path
    }

    pub fn num_cells(&self) -> usize {
        self.config.width * self.config.height
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x < self.config.width && c.y < self.config.height
    }

    /// Row-major index. Caller guarantees `c` is in bounds.
    pub fn index(&self, c: Cell) -> usize {
        c.y * self.config.width + c.x
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index % self.config.width, index / self.config.width)
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.wall[self.index(c)]
    }

    /// Non-wall cells in row-major order.
    pub fn open_cells(&self) -> Vec<Cell> {
        (0..self.num_cells()).filter(|&i| !self.wall[i]).map(|i| self.cell_at(i)).collect()
    }

    /// Deterministic transition ignoring rewards and step limits. Moves into
    /// walls or off the grid leave the position unchanged.
    pub fn move_from(&self, c: Cell, action: Action) -> Cell {
        let target = match action {
            Action::Up if c.y > 0 => Cell::new(c.x, c.y - 1),
            Action::Down if c.y + 1 < self.config.height => Cell::new(c.x, c.y + 1),
            Action::Left if c.x > 0 => Cell::new(c.x - 1, c.y),
            Action::Right if c.x + 1 < self.config.width => Cell::new(c.x + 1, c.y),
            _ => return c,
        };
        if self.wall[self.index(target)] {
            c
        } else {
            target
        }
    }

    /// Environment reward for arriving in `next`.
    pub fn reward_for(&self, next: Cell) -> f64 {
        if next == self.config.goal {
            self.config.goal_reward
        } else {
            self.config.step_penalty
        }
    }

    pub fn reset(&self) -> EpisodeState {
        self.reset_at(self.config.start)
    }

    /// Starts an episode at an arbitrary open cell.
    pub fn reset_at(&self, cell: Cell) -> EpisodeState {
        EpisodeState { cell, steps: 0, done: cell == self.config.goal }
    }

    pub fn step(&self, state: &EpisodeState, action: Action) -> Result<Transition, EnvError> {
        if state.done {
            return Err(EnvError::EpisodeTerminated);
        }
        let next_cell = self.move_from(state.cell, action);
        let reward = self.reward_for(next_cell);
        let steps = state.steps + 1;
        let reached = next_cell == self.config.goal;
        let done = reached || steps >= self.config.max_episode_steps;
        Ok(Transition { next: EpisodeState { cell: next_cell, steps, done }, reward, done, reached_goal: reached })
    }

    fn normalized_distance(&self, c: Cell) -> f64 {
        let span = (self.config.width - 1 + self.config.height - 1) as f64;
        c.manhattan(self.config.goal) as f64 / span
    }

    /// `[x/width, y/height, normalized Manhattan distance to goal, fraction of
    /// the four neighbours that are walls, 1.0]`.
    pub fn featurize(&self, c: Cell) -> Result<Vec<f64>, EnvError> {
        if !self.in_bounds(c) {
            return Err(EnvError::OutOfBounds(c));
        }
        let neighbours = [
            (c.x.checked_sub(1), Some(c.y)),
            (c.x.checked_add(1), Some(c.y)),
            (Some(c.x), c.y.checked_sub(1)),
            (Some(c.x), c.y.checked_add(1)),
        ];
        let walls =
            neighbours.iter().filter_map(|&(x, y)| Some(Cell::new(x?, y?))).filter(|&n| self.is_wall(n)).count();
        Ok(vec![
            c.x as f64 / self.config.width as f64,
            c.y as f64 / self.config.height as f64,
            self.normalized_distance(c),
            walls as f64 / 4.0,
            1.0,
        ])
    }

    /// Potential-like task progress: `goalReward · (1 − normalized distance)`.
    pub fn state_reward(&self, c: Cell) -> f64 {
        self.config.goal_reward * (1.0 - self.normalized_distance(c))
    }

    /// BFS move counts to the goal, `None` for walls and unreachable cells.
    pub fn distances_to_goal(&self) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_cells()];
        let goal = self.config.goal;
        dist[self.index(goal)] = Some(0);
        let mut queue = VecDeque::from([goal]);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.index(c)].unwrap_or(0);
            for a in Action::ALL {
                // moves are symmetric on a grid, so forward neighbours suffice
                let n = self.move_from(c, a);
                if n != c && dist[self.index(n)].is_none() {
                    dist[self.index(n)] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    pub fn render(&self, agent: Cell) -> Scene {
        let mut walls = self.config.walls.clone();
        walls.sort();
        walls.dedup();
        Scene {
            width: self.config.width,
            height: self.config.height,
            walls,
            start: self.config.start,
            goal: self.config.goal,
            agent,
        }
    }

    pub fn candidate(&self, cell: Cell) -> Result<CandidateState, EnvError> {
        Ok(CandidateState {
            id: candidate_id(cell),
            cell,
            features: self.featurize(cell)?,
            env_reward: self.state_reward(cell),
            render: self.render(cell),
        })
    }

    /// Samples `k` distinct open cells uniformly without replacement.
    pub fn sample_candidates(&self, k: usize, seed: u64) -> Result<Vec<CandidateState>, EnvError> {
        if k == 0 {
            return Err(EnvError::NoCandidates);
        }
        let open = self.open_cells();
        if k > open.len() {
            return Err(EnvError::TooManyCandidates { requested: k, available: open.len() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        index::sample(&mut rng, open.len(), k).into_iter().map(|i| self.candidate(open[i])).collect()
    }
}

/// Stable identifier for the candidate sitting at `cell`.
pub fn candidate_id(cell: Cell) -> String {
    format!("s{}_{}", cell.x, cell.y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeState {
    pub cell: Cell,
    pub steps: usize,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next: EpisodeState,
    pub reward: f64,
    pub done: bool,
    pub reached_goal: bool,
}

/// Vector scene of the grid with the agent marker placed on one cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub walls: Vec<Cell>,
    pub start: Cell,
    pub goal: Cell,
    pub agent: Cell,
}

impl Scene {
    /// Minimal SVG rendering in unit cells.
    pub fn to_svg(&self) -> String {
        let mut out =
            format!("<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\">", self.width, self.height);
        out.push_str(&format!(
            "<rect width=\"{}\" height=\"{}\" fill=\"#fff\" stroke=\"#888\" stroke-width=\"0.05\"/>",
            self.width, self.height
        ));
        for w in &self.walls {
            out.push_str(&format!("<rect x=\"{}\" y=\"{}\" width=\"1\" height=\"1\" fill=\"#333\"/>", w.x, w.y));
        }
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"1\" height=\"1\" fill=\"#4a4\"/>",
            self.goal.x, self.goal.y
        ));
        out.push_str(&format!(
            "<circle cx=\"{}.5\" cy=\"{}.5\" r=\"0.35\" fill=\"#c33\"/>",
            self.agent.x, self.agent.y
        ));
        out.push_str("</svg>");
        out
    }
}

/// A sampled state offered to the tournament.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CandidateState {
    pub id: String,
    pub cell: Cell,
    #[serde(rename = "featureVector")]
    pub features: Vec<f64>,
    pub env_reward: f64,
    #[serde(rename = "renderPayload")]
    pub render: Scene,
}
