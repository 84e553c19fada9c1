//! Single-elimination tournaments over candidate states.
//!
//! A [`Bracket`] fixes the round-one pairing. A [`Tournament`] is the
//! sequential state machine that consumes one label at a time, forms later
//! rounds lazily from the winners of the previous round, and finally yields
//! the [`Dendrogram`] together with the label set.
//!
//! Bye policy: when a round has an odd number of players, the last one in
//! bracket order advances without a match. Byes never produce labels, so a
//! finished tournament over `n` entrants always holds `n - 1` labels.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envsim::CandidateState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TournamentError {
    #[error("a tournament needs at least two entrants, got {0}")]
    TooFewEntrants(usize),
    #[error("duplicate entrant id {0:?}")]
    DuplicateEntrant(String),
    #[error("unknown entrant id {0:?}")]
    UnknownEntrant(String),
    #[error("pair ({left}, {right}) is not the pending query")]
    NotPending { left: String, right: String },
    #[error("tournament is already complete")]
    Complete,
    #[error("tournament is not complete")]
    Incomplete,
    #[error("oracle-unresolved")]
    OracleUnresolved { partial: Box<Tournament> },
    #[error("malformed tournament record: {0}")]
    Malformed(String),
    #[error("p must lie in [0, 0.5], got {0}")]
    InvalidNoise(f64),
    #[error("malformed dendrogram: {0}")]
    MalformedDendrogram(String),
}

/// Binary preference: `Left` (0) prefers the left state, `Right` (1) the right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Choice {
    Left,
    Right,
}

impl Choice {
    pub fn flipped(self) -> Choice {
        match self {
            Choice::Left => Choice::Right,
            Choice::Right => Choice::Left,
        }
    }

    pub fn pick<'a>(self, left: &'a str, right: &'a str) -> &'a str {
        match self {
            Choice::Left => left,
            Choice::Right => right,
        }
    }
}

impl TryFrom<u8> for Choice {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Choice::Left),
            1 => Ok(Choice::Right),
            other => Err(format!("choice must be 0 or 1, got {other}")),
        }
    }
}

impl From<Choice> for u8 {
    fn from(c: Choice) -> u8 {
        match c {
            Choice::Left => 0,
            Choice::Right => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    #[default]
    Simulated,
    Human,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PreferenceLabel {
    pub left_id: String,
    pub right_id: String,
    pub choice: Choice,
    pub round: usize,
    pub source: LabelSource,
}

impl PreferenceLabel {
    pub fn winner(&self) -> &str {
        self.choice.pick(&self.left_id, &self.right_id)
    }

    pub fn loser(&self) -> &str {
        self.choice.flipped().pick(&self.left_id, &self.right_id)
    }
}

/// Noise level of the Braverman–Mossel comparison model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct BmParams {
    p: f64,
}

impl BmParams {
    pub fn new(p: f64) -> Result<Self, TournamentError> {
        if (0.0..=0.5).contains(&p) {
            Ok(BmParams { p })
        } else {
            Err(TournamentError::InvalidNoise(p))
        }
    }

    pub fn noiseless() -> Self {
        BmParams { p: 0.0 }
    }

    pub fn p(self) -> f64 {
        self.p
    }
}

impl TryFrom<f64> for BmParams {
    type Error = TournamentError;

    fn try_from(p: f64) -> Result<Self, Self::Error> {
        BmParams::new(p)
    }
}

impl From<BmParams> for f64 {
    fn from(b: BmParams) -> f64 {
        b.p
    }
}

/// Anything that can decide a pairwise query. `None` means the decision is
/// not available (yet), e.g. a human who has not answered.
pub trait Oracle {
    fn source(&self) -> LabelSource;

    fn choose(&mut self, left: &CandidateState, right: &CandidateState) -> Option<Choice>;
}

/// Braverman–Mossel simulated labeller: the stronger state wins with
/// probability `1 - p`. Equal abilities are ordered by id, smaller id
/// counting as stronger.
#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    ability: BTreeMap<String, f64>,
    bm: BmParams,
    rng: ChaCha8Rng,
}

impl SimulatedOracle {
    pub fn new(ability: BTreeMap<String, f64>, bm: BmParams, seed: u64) -> Self {
        SimulatedOracle { ability, bm, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Ability map taken from the candidates' intrinsic environment reward.
    pub fn from_env_reward(candidates: &[CandidateState], bm: BmParams, seed: u64) -> Self {
        let ability = candidates.iter().map(|c| (c.id.clone(), c.env_reward)).collect();
        SimulatedOracle::new(ability, bm, seed)
    }

    pub fn ability(&self, id: &str) -> Option<f64> {
        self.ability.get(id).copied()
    }

    /// The choice a noiseless labeller would make.
    pub fn stronger(&self, left: &str, right: &str) -> Option<Choice> {
        let a = self.ability(left)?;
        let b = self.ability(right)?;
        Some(ordered_choice(a, b, left, right))
    }
}

/// Higher score wins; exact ties go to the lexicographically smaller id.
pub fn ordered_choice(left_score: f64, right_score: f64, left: &str, right: &str) -> Choice {
    if left_score > right_score {
        Choice::Left
    } else if right_score > left_score {
        Choice::Right
    } else if left <= right {
        Choice::Left
    } else {
        Choice::Right
    }
}

impl Oracle for SimulatedOracle {
    fn source(&self) -> LabelSource {
        LabelSource::Simulated
    }

    fn choose(&mut self, left: &CandidateState, right: &CandidateState) -> Option<Choice> {
        let favourite = self.stronger(&left.id, &right.id)?;
        // one draw per match keeps the random stream aligned across p values
        let upset = self.rng.gen::<f64>() < self.bm.p;
        Some(if upset { favourite.flipped() } else { favourite })
    }
}

/// Oracle backed by a fixed table of decisions, keyed by ordered pair.
#[derive(Debug, Clone, Default)]
pub struct RecordedOracle {
    decisions: BTreeMap<(String, String), Choice>,
    source: LabelSource,
}

impl RecordedOracle {
    pub fn new(labels: &[PreferenceLabel]) -> Self {
        let source = labels.first().map(|l| l.source).unwrap_or_default();
        let decisions = labels.iter().map(|l| ((l.left_id.clone(), l.right_id.clone()), l.choice)).collect();
        RecordedOracle { decisions, source }
    }
}

impl Oracle for RecordedOracle {
    fn source(&self) -> LabelSource {
        self.source
    }

    fn choose(&mut self, left: &CandidateState, right: &CandidateState) -> Option<Choice> {
        self.decisions.get(&(left.id.clone(), right.id.clone())).copied()
    }
}

/// Round-one seeding: a seeded random permutation of the entrants, paired
/// consecutively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bracket {
    pub seed: u64,
    pub entrants: Vec<String>,
}

/// One round of play: consecutive pairs plus at most one bye.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Round {
    pub pairs: Vec<(String, String)>,
    pub bye: Option<String>,
}

impl Round {
    fn from_players(players: &[String]) -> Round {
        let pairs = players.chunks_exact(2).map(|p| (p[0].clone(), p[1].clone())).collect();
        let bye = (players.len() % 2 == 1).then(|| players[players.len() - 1].clone());
        Round { pairs, bye }
    }
}

impl Bracket {
    /// Uniform random pairing of `candidates`, deterministic under `seed`.
    pub fn seed(candidates: &[CandidateState], seed: u64) -> Result<Bracket, TournamentError> {
        let mut entrants: Vec<String> = candidates.iter().map(|c| c.id.clone()).collect();
        Bracket::check_entrants(&entrants)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        entrants.shuffle(&mut rng);
        Ok(Bracket { seed, entrants })
    }

    /// Bracket with an explicit entrant order.
    pub fn with_order(seed: u64, entrants: Vec<String>) -> Result<Bracket, TournamentError> {
        Bracket::check_entrants(&entrants)?;
        Ok(Bracket { seed, entrants })
    }

    fn check_entrants(entrants: &[String]) -> Result<(), TournamentError> {
        if entrants.len() < 2 {
            return Err(TournamentError::TooFewEntrants(entrants.len()));
        }
        let mut seen = BTreeSet::new();
        for e in entrants {
            if !seen.insert(e.as_str()) {
                return Err(TournamentError::DuplicateEntrant(e.clone()));
            }
        }
        Ok(())
    }

    pub fn round_one(&self) -> Round {
        Round::from_players(&self.entrants)
    }

    pub fn num_matches(&self) -> usize {
        self.entrants.len() - 1
    }
}

/// A match slot; `choice` is `None` while the query is pending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub left: String,
    pub right: String,
    pub choice: Option<Choice>,
}

impl Match {
    fn winner(&self) -> Option<&str> {
        self.choice.map(|c| c.pick(&self.left, &self.right))
    }
}

/// Persisted form of a tournament: bracket plus every formed round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TournamentRecord {
    pub seed: u64,
    pub entrants: Vec<String>,
    pub rounds: Vec<Vec<Match>>,
    #[serde(default)]
    pub source: LabelSource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct RoundState {
    matches: Vec<Match>,
    bye: Option<String>,
}

impl RoundState {
    fn is_complete(&self) -> bool {
        self.matches.iter().all(|m| m.choice.is_some())
    }

    /// Winners in bracket order, the bye last.
    fn advancing(&self) -> Vec<String> {
        self.matches.iter().filter_map(|m| m.winner().map(str::to_string)).chain(self.bye.clone()).collect()
    }
}

/// In-progress or finished single-elimination tournament.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tournament {
    bracket: Bracket,
    rounds: Vec<RoundState>,
    source: LabelSource,
}

impl Tournament {
    pub fn new(bracket: Bracket, source: LabelSource) -> Self {
        let first = bracket.round_one();
        let mut t = Tournament { bracket, rounds: Vec::new(), source };
        t.push_round(first);
        t
    }

    fn push_round(&mut self, round: Round) {
        let matches = round.pairs.into_iter().map(|(left, right)| Match { left, right, choice: None }).collect();
        self.rounds.push(RoundState { matches, bye: round.bye });
    }

    pub fn bracket(&self) -> &Bracket {
        &self.bracket
    }

    pub fn source(&self) -> LabelSource {
        self.source
    }

    /// First unresolved pair in round order.
    pub fn pending(&self) -> Option<(&str, &str)> {
        self.rounds.last()?.matches.iter().find(|m| m.choice.is_none()).map(|m| (m.left.as_str(), m.right.as_str()))
    }

    /// Current round number (1-based) of the pending query.
    pub fn current_round(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_complete(&self) -> bool {
        self.pending().is_none()
    }

    pub fn answered(&self) -> usize {
        self.rounds.iter().flat_map(|r| &r.matches).filter(|m| m.choice.is_some()).count()
    }

    pub fn total_matches(&self) -> usize {
        self.bracket.num_matches()
    }

    /// Records the answer for the pending pair. The pair must match the
    /// pending query exactly, in order.
    pub fn submit(&mut self, left: &str, right: &str, choice: Choice) -> Result<(), TournamentError> {
        let round = self.rounds.last_mut().ok_or(TournamentError::Complete)?;
        let slot = round.matches.iter_mut().find(|m| m.choice.is_none()).ok_or(TournamentError::Complete)?;
        if slot.left != left || slot.right != right {
            return Err(TournamentError::NotPending { left: left.into(), right: right.into() });
        }
        slot.choice = Some(choice);
        if round.is_complete() {
            let advancing = round.advancing();
            if advancing.len() > 1 {
                self.push_round(Round::from_players(&advancing));
            }
        }
        Ok(())
    }

    pub fn champion(&self) -> Option<&str> {
        if !self.is_complete() {
            return None;
        }
        let last = self.rounds.last()?;
        last.matches.first().and_then(|m| m.winner()).or(last.bye.as_deref())
    }

    /// Labels answered so far, in play order.
    pub fn labels(&self) -> Vec<PreferenceLabel> {
        self.rounds
            .iter()
            .enumerate()
            .flat_map(|(r, round)| {
                round.matches.iter().filter_map(move |m| {
                    Some(PreferenceLabel {
                        left_id: m.left.clone(),
                        right_id: m.right.clone(),
                        choice: m.choice?,
                        round: r + 1,
                        source: self.source,
                    })
                })
            })
            .collect()
    }

    /// Plays every pending match against `oracle`. On an unresolved query
    /// the partially played tournament is returned inside the error.
    pub fn play(
        &mut self,
        candidates: &BTreeMap<&str, &CandidateState>,
        oracle: &mut dyn Oracle,
    ) -> Result<(), TournamentError> {
        while let Some((l, r)) = self.pending() {
            let (l, r) = (l.to_string(), r.to_string());
            let left = *candidates.get(l.as_str()).ok_or_else(|| TournamentError::UnknownEntrant(l.clone()))?;
            let right = *candidates.get(r.as_str()).ok_or_else(|| TournamentError::UnknownEntrant(r.clone()))?;
            match oracle.choose(left, right) {
                Some(choice) => self.submit(&l, &r, choice)?,
                None => return Err(TournamentError::OracleUnresolved { partial: Box::new(self.clone()) }),
            }
        }
        Ok(())
    }

    /// Builds the dendrogram of a finished tournament.
    pub fn dendrogram(&self) -> Result<Dendrogram, TournamentError> {
        if !self.is_complete() {
            return Err(TournamentError::Incomplete);
        }
        let mut nodes = Vec::with_capacity(2 * self.bracket.entrants.len() - 1);
        let mut current: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &self.bracket.entrants {
            current.insert(e, nodes.len());
            nodes.push(DendroNode { id: e.clone(), children: None });
        }
        for round in &self.rounds {
            for m in &round.matches {
                let winner = m.winner().ok_or(TournamentError::Incomplete)?;
                let l = current[m.left.as_str()];
                let r = current[m.right.as_str()];
                let idx = nodes.len();
                nodes.push(DendroNode { id: winner.to_string(), children: Some([l, r]) });
                current.insert(winner, idx);
            }
        }
        let champion = self.champion().ok_or(TournamentError::Incomplete)?;
        let root = current[champion];
        Dendrogram::new(nodes, root).map_err(|e| TournamentError::MalformedDendrogram(e.to_string()))
    }

    pub fn to_record(&self) -> TournamentRecord {
        TournamentRecord {
            seed: self.bracket.seed,
            entrants: self.bracket.entrants.clone(),
            rounds: self.rounds.iter().map(|r| r.matches.clone()).collect(),
            source: self.source,
        }
    }

    /// Replays a persisted record through the state machine, checking that
    /// every stored round is exactly what the bracket dictates.
    pub fn from_record(record: &TournamentRecord) -> Result<Tournament, TournamentError> {
        let bracket = Bracket::with_order(record.seed, record.entrants.clone())?;
        let mut t = Tournament::new(bracket, record.source);
        let mut open_slot_seen = false;
        for (r, round) in record.rounds.iter().enumerate() {
            let expected = t
                .rounds
                .get(r)
                .ok_or_else(|| TournamentError::Malformed(format!("round {} was never formed", r + 1)))?;
            if expected.matches.len() != round.len() {
                return Err(TournamentError::Malformed(format!("round {} has the wrong size", r + 1)));
            }
            for m in round {
                match m.choice {
                    Some(c) if !open_slot_seen => {
                        t.submit(&m.left, &m.right, c).map_err(|e| TournamentError::Malformed(e.to_string()))?
                    }
                    Some(_) => return Err(TournamentError::Malformed("answer recorded after a gap".into())),
                    None => {
                        open_slot_seen = true;
                        let slot = &t.rounds[r].matches;
                        if !slot.iter().any(|s| s.left == m.left && s.right == m.right) {
                            return Err(TournamentError::Malformed(format!(
                                "unexpected pair ({}, {})",
                                m.left, m.right
                            )));
                        }
                    }
                }
            }
        }
        if t.rounds.len() != record.rounds.len() {
            return Err(TournamentError::Malformed("record is missing a formed round".into()));
        }
        Ok(t)
    }
}

/// Plays a full tournament and returns its dendrogram and label set.
pub fn run_tournament(
    bracket: &Bracket,
    candidates: &[CandidateState],
    oracle: &mut dyn Oracle,
) -> Result<(Dendrogram, Vec<PreferenceLabel>), TournamentError> {
    let by_id: BTreeMap<&str, &CandidateState> = candidates.iter().map(|c| (c.id.as_str(), c)).collect();
    for e in &bracket.entrants {
        if !by_id.contains_key(e.as_str()) {
            return Err(TournamentError::UnknownEntrant(e.clone()));
        }
    }
    let mut t = Tournament::new(bracket.clone(), oracle.source());
    t.play(&by_id, oracle)?;
    Ok((t.dendrogram()?, t.labels()))
}

/// Raw bracket tree. Leaves carry entrants; each internal node carries the
/// id of the child that won the match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DendroNode {
    pub id: String,
    pub children: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDendrogram")]
pub struct Dendrogram {
    nodes: Vec<DendroNode>,
    root: usize,
}

#[derive(Deserialize)]
struct RawDendrogram {
    nodes: Vec<DendroNode>,
    root: usize,
}

impl TryFrom<RawDendrogram> for Dendrogram {
    type Error = TournamentError;

    fn try_from(raw: RawDendrogram) -> Result<Self, Self::Error> {
        Dendrogram::new(raw.nodes, raw.root)
    }
}

impl Dendrogram {
    /// Validates the arena: every node reachable exactly once from `root`,
    /// internal ids equal to exactly one child id, distinct leaf ids.
    pub fn new(nodes: Vec<DendroNode>, root: usize) -> Result<Dendrogram, TournamentError> {
        let bad = |msg: String| TournamentError::MalformedDendrogram(msg);
        if root >= nodes.len() {
            return Err(bad("root index out of range".into()));
        }
        let mut visited = vec![false; nodes.len()];
        let mut leaves = BTreeSet::new();
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut visited[i], true) {
                return Err(bad(format!("node {i} is shared")));
            }
            match nodes[i].children {
                None => {
                    if !leaves.insert(nodes[i].id.as_str()) {
                        return Err(bad(format!("entrant {:?} appears twice", nodes[i].id)));
                    }
                }
                Some([a, b]) => {
                    if a >= nodes.len() || b >= nodes.len() {
                        return Err(bad("child index out of range".into()));
                    }
                    let (ia, ib) = (&nodes[a].id, &nodes[b].id);
                    if ia == ib {
                        return Err(bad(format!("both children of node {i} carry {ia:?}")));
                    }
                    if &nodes[i].id != ia && &nodes[i].id != ib {
                        return Err(bad(format!("node {i} is not won by either child")));
                    }
                    stack.extend([a, b]);
                }
            }
        }
        if visited.iter().any(|v| !v) {
            return Err(bad("unreachable nodes".into()));
        }
        Ok(Dendrogram { nodes, root })
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, i: usize) -> &DendroNode {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn champion(&self) -> &str {
        &self.nodes[self.root].id
    }

    /// Entrant ids at the leaves, in arena order.
    pub fn leaves(&self) -> Vec<&str> {
        self.nodes.iter().filter(|n| n.children.is_none()).map(|n| n.id.as_str()).collect()
    }

    pub fn children(&self, i: usize) -> &[usize] {
        match &self.nodes[i].children {
            Some(c) => c,
            None => &[],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::GridWorld;

    fn candidates(n: usize) -> Vec<CandidateState> {
        GridWorld::default_benchmark().sample_candidates(n, 11).unwrap()
    }

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn seeding_shapes() {
        let c = candidates(2);
        let b = Bracket::seed(&c, 1).unwrap();
        let r = b.round_one();
        assert_eq!(r.pairs.len(), 1);
        assert!(r.bye.is_none());

        let c = candidates(5);
        let r = Bracket::seed(&c, 1).unwrap().round_one();
        assert_eq!(r.pairs.len(), 2);
        assert!(r.bye.is_some());

        assert_eq!(Bracket::seed(&candidates(1), 1), Err(TournamentError::TooFewEntrants(1)));
    }

    #[test]
    fn seeding_is_deterministic() {
        let c = candidates(16);
        assert_eq!(Bracket::seed(&c, 99).unwrap(), Bracket::seed(&c, 99).unwrap());
        assert_ne!(Bracket::seed(&c, 99).unwrap(), Bracket::seed(&c, 100).unwrap());
    }

    #[test]
    fn two_entrants_left_wins() {
        let c = candidates(2);
        let b = Bracket::with_order(0, vec![c[0].id.clone(), c[1].id.clone()]).unwrap();
        let mut oracle = RecordedOracle::new(&[PreferenceLabel {
            left_id: c[0].id.clone(),
            right_id: c[1].id.clone(),
            choice: Choice::Left,
            round: 1,
            source: LabelSource::Simulated,
        }]);
        let (d, h) = run_tournament(&b, &c, &mut oracle).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.champion(), c[0].id);
        assert_eq!(h.len(), 1);
    }

    #[test]
    fn six_entrants_have_a_bye_path() {
        let b = Bracket::with_order(0, ids(6)).unwrap();
        let mut t = Tournament::new(b, LabelSource::Human);
        let mut rounds = BTreeSet::new();
        while let Some((l, r)) = t.pending() {
            let (l, r) = (l.to_string(), r.to_string());
            rounds.insert(t.current_round());
            t.submit(&l, &r, Choice::Left).unwrap();
        }
        assert_eq!(t.labels().len(), 5);
        assert_eq!(rounds.len(), 3);
        assert_eq!(t.champion(), Some("s1"));
        // s5 advanced through the round-two bye
        let labels = t.labels();
        assert_eq!(labels.last().unwrap().right_id, "s5");
        assert_eq!(labels.last().unwrap().round, 3);
        let d = t.dendrogram().unwrap();
        assert_eq!(d.len(), 11);
    }

    #[test]
    fn pending_query_ordering() {
        let b = Bracket::with_order(0, ids(4)).unwrap();
        let mut t = Tournament::new(b, LabelSource::Human);
        assert_eq!(t.pending(), Some(("s1", "s2")));
        t.submit("s1", "s2", Choice::Right).unwrap();
        assert_eq!(t.pending(), Some(("s3", "s4")));
        assert_eq!(t.current_round(), 1);
        t.submit("s3", "s4", Choice::Left).unwrap();
        assert_eq!(t.pending(), Some(("s2", "s3")));
        t.submit("s2", "s3", Choice::Left).unwrap();
        assert_eq!(t.pending(), None);
        assert_eq!(t.champion(), Some("s2"));
    }

    #[test]
    fn submit_rejects_wrong_pair_and_completion() {
        let b = Bracket::with_order(0, ids(2)).unwrap();
        let mut t = Tournament::new(b, LabelSource::Human);
        assert!(matches!(t.submit("s2", "s1", Choice::Left), Err(TournamentError::NotPending { .. })));
        t.submit("s1", "s2", Choice::Left).unwrap();
        assert_eq!(t.submit("s1", "s2", Choice::Left), Err(TournamentError::Complete));
    }

    #[test]
    fn unresolved_oracle_keeps_partial_labels() {
        let c = candidates(4);
        let b = Bracket::seed(&c, 3).unwrap();
        let (l, r) = (b.entrants[0].clone(), b.entrants[1].clone());
        let mut oracle = RecordedOracle::new(&[PreferenceLabel {
            left_id: l,
            right_id: r,
            choice: Choice::Left,
            round: 1,
            source: LabelSource::Human,
        }]);
        match run_tournament(&b, &c, &mut oracle) {
            Err(TournamentError::OracleUnresolved { partial }) => {
                assert_eq!(partial.labels().len(), 1);
                assert!(!partial.is_complete());
            }
            other => panic!("expected unresolved, got {other:?}"),
        }
        assert_eq!(
            TournamentError::OracleUnresolved { partial: Box::new(Tournament::new(b, LabelSource::Human)) }.to_string(),
            "oracle-unresolved"
        );
    }

    #[test]
    fn noiseless_oracle_picks_stronger_and_breaks_ties_by_id() {
        let ability = BTreeMap::from([("a".to_string(), 1.0), ("b".to_string(), 3.0), ("c".to_string(), 1.0)]);
        let o = SimulatedOracle::new(ability, BmParams::noiseless(), 0);
        assert_eq!(o.stronger("a", "b"), Some(Choice::Right));
        assert_eq!(o.stronger("a", "c"), Some(Choice::Left));
        assert_eq!(o.stronger("c", "a"), Some(Choice::Right));
        assert_eq!(o.stronger("a", "zz"), None);
    }

    #[test]
    fn bm_params_bounds() {
        assert!(BmParams::new(-0.1).is_err());
        assert!(BmParams::new(0.51).is_err());
        assert!(BmParams::new(0.5).is_ok());
        assert!(serde_json::from_str::<BmParams>("0.7").is_err());
    }

    #[test]
    fn choice_serializes_as_bit() {
        assert_eq!(serde_json::to_string(&Choice::Right).unwrap(), "1");
        assert_eq!(serde_json::from_str::<Choice>("0").unwrap(), Choice::Left);
        assert!(serde_json::from_str::<Choice>("2").is_err());
    }

    #[test]
    fn record_json_shape() {
        let b = Bracket::with_order(7, ids(3)).unwrap();
        let mut t = Tournament::new(b, LabelSource::Human);
        t.submit("s1", "s2", Choice::Right).unwrap();
        let v = serde_json::to_value(t.to_record()).unwrap();
        assert_eq!(v["seed"], 7);
        assert_eq!(v["entrants"].as_array().unwrap().len(), 3);
        assert_eq!(v["rounds"][0][0]["choice"], 1);
        assert_eq!(v["rounds"][1][0]["left"], "s2");
        assert!(v["rounds"][1][0]["choice"].is_null());
        let back = Tournament::from_record(&t.to_record()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn tampered_record_is_rejected() {
        let b = Bracket::with_order(7, ids(4)).unwrap();
        let mut t = Tournament::new(b, LabelSource::Human);
        t.submit("s1", "s2", Choice::Right).unwrap();
        let mut rec = t.to_record();
        rec.rounds[0][1].left = "s9".into();
        assert!(Tournament::from_record(&rec).is_err());
        let mut rec = t.to_record();
        rec.rounds.push(vec![]);
        assert!(Tournament::from_record(&rec).is_err());
    }

    #[test]
    fn dendrogram_validation() {
        let leaf = |id: &str| DendroNode { id: id.into(), children: None };
        let ok = vec![leaf("a"), leaf("b"), DendroNode { id: "a".into(), children: Some([0, 1]) }];
        assert!(Dendrogram::new(ok, 2).is_ok());
        let wrong_winner = vec![leaf("a"), leaf("b"), DendroNode { id: "c".into(), children: Some([0, 1]) }];
        assert!(Dendrogram::new(wrong_winner, 2).is_err());
        let dup = vec![leaf("a"), leaf("a"), DendroNode { id: "a".into(), children: Some([0, 1]) }];
        assert!(Dendrogram::new(dup, 2).is_err());
        let orphan = vec![leaf("a"), leaf("b"), leaf("c"), DendroNode { id: "a".into(), children: Some([0, 1]) }];
        assert!(Dendrogram::new(orphan, 3).is_err());
        let text =
            r#"{"nodes":[{"id":"a","children":null},{"id":"b","children":null},{"id":"c","children":[0,1]}],"root":2}"#;
        assert!(serde_json::from_str::<Dendrogram>(text).is_err());
    }
}
