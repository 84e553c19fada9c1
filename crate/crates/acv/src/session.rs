//! Live labelling sessions.
//!
//! A [`Session`] owns one human tournament over sampled candidates plus the
//! bookkeeping for the training job that follows it. Everything here is
//! synchronous and pure; persistence and locking live in [`crate::store`].

use acv_core::agent::TrainingConfig;
use acv_core::envsim::{Cell, Scene};
use acv_core::tournament::{LabelSource, Tournament, TournamentError, TournamentRecord};
use acv_core::verify::{AdviceScenario, OracleSpec, SeedEcho};
use acv_core::{Bracket, CandidateState, Choice, GridWorld, GroundedTree, GroundingParams, WorldConfig};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("({left}, {right}) is not the pending pair")]
    Stale { left: String, right: String },
    #[error("tournament is still collecting labels")]
    Collecting,
    #[error("agent tree is not available before training finishes")]
    NotTrained,
    #[error("session is abandoned")]
    Abandoned,
    #[error(transparent)]
    Tournament(#[from] TournamentError),
}

/// Forward-only lifecycle. `Complete` sits between the last label and the
/// end of training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Collecting,
    Complete,
    Trained,
    Reported,
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub world_name: Option<String>,
    #[serde(default)]
    pub world_config: Option<WorldConfig>,
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grounding_params: GroundingParams,
}

impl CreateSession {
    pub fn world(&self) -> Result<GridWorld, SessionError> {
        let invalid = |e: acv_core::envsim::EnvError| SessionError::InvalidConfig(e.to_string());
        match (&self.world_name, &self.world_config) {
            (Some(_), Some(_)) => Err(SessionError::InvalidConfig("give worldName or worldConfig, not both".into())),
            (Some(name), None) => GridWorld::builtin(name).map_err(invalid),
            (None, Some(config)) => GridWorld::new(config.clone()).map_err(invalid),
            (None, None) => Ok(GridWorld::default_benchmark()),
        }
    }
}

/// What a labeller sees of a candidate: no rewards, just the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CandidateView {
    pub id: String,
    pub cell: Cell,
    pub render_payload: Scene,
}

impl From<&CandidateState> for CandidateView {
    fn from(c: &CandidateState) -> Self {
        CandidateView { id: c.id.clone(), cell: c.cell, render_payload: c.render.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPair {
    pub left: CandidateView,
    pub right: CandidateView,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub answered: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub pair: Option<QueryPair>,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "state")]
pub enum JobState {
    Running,
    Done,
    Failed {
        error: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        trace: Option<acv_core::agent::TrainingTrace>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainingJob {
    pub config: TrainingConfig,
    #[serde(flatten)]
    pub state: JobState,
}

/// Persisted session document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Session {
    pub id: String,
    pub status: SessionStatus,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
    pub request: CreateSession,
    pub world: WorldConfig,
    pub candidates: Vec<CandidateState>,
    pub tournament: TournamentRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job: Option<TrainingJob>,
    #[serde(skip)]
    live: Option<Tournament>,
}

impl Session {
    pub fn create(
        id: String,
        request: CreateSession,
        idempotency_key: Option<String>,
    ) -> Result<Session, SessionError> {
        let world = request.world()?;
        request.grounding_params.validate().map_err(|e| SessionError::InvalidConfig(e.to_string()))?;
        let open = world.open_cells().len();
        if request.k < 2 || request.k > open {
            return Err(SessionError::InvalidConfig(format!("k must lie in [2, {open}], got {}", request.k)));
        }
        let seeds = SeedEcho::derive(request.seed);
        let candidates = world
            .sample_candidates(request.k, seeds.candidates)
            .map_err(|e| SessionError::InvalidConfig(e.to_string()))?;
        let tournament = Tournament::new(Bracket::seed(&candidates, seeds.bracket)?, LabelSource::Human);
        let now = Utc::now();
        Ok(Session {
            id,
            status: SessionStatus::Collecting,
            created_at: now,
            updated_at: now,
            idempotency_key,
            request,
            world: world.config().clone(),
            candidates,
            tournament: tournament.to_record(),
            job: None,
            live: Some(tournament),
        })
    }

    /// Rebuilds the in-memory tournament from the stored record.
    pub fn replay(mut self) -> Result<Session, SessionError> {
        let t = Tournament::from_record(&self.tournament)?;
        if t.is_complete() != (self.status != SessionStatus::Collecting) && self.status != SessionStatus::Abandoned {
            return Err(
                TournamentError::Malformed(format!("status {:?} disagrees with the record", self.status)).into()
            );
        }
        self.live = Some(t);
        Ok(self)
    }

    pub fn tournament(&self) -> &Tournament {
        self.live.as_ref().expect("sessions are built by create or replay")
    }

    fn candidate(&self, id: &str) -> &CandidateState {
        self.candidates.iter().find(|c| c.id == id).expect("entrants come from the candidates")
    }

    pub fn query(&self) -> Query {
        let t = self.tournament();
        Query {
            pair: t
                .pending()
                .map(|(l, r)| QueryPair { left: self.candidate(l).into(), right: self.candidate(r).into() }),
            progress: Progress { answered: t.answered(), total: t.total_matches() },
        }
    }

    pub fn submit(&mut self, left: &str, right: &str, choice: Choice) -> Result<Query, SessionError> {
        if self.status == SessionStatus::Abandoned {
            return Err(SessionError::Abandoned);
        }
        let t = self.live.as_mut().expect("sessions are built by create or replay");
        match t.submit(left, right, choice) {
            Ok(()) => {}
            Err(TournamentError::NotPending { .. }) | Err(TournamentError::Complete) => {
                return Err(SessionError::Stale { left: left.into(), right: right.into() })
            }
            Err(e) => return Err(e.into()),
        }
        self.tournament = t.to_record();
        if t.is_complete() {
            self.status = SessionStatus::Complete;
        }
        self.touch();
        Ok(self.query())
    }

    pub fn human_tree(&self) -> Result<GroundedTree, SessionError> {
        let t = self.tournament();
        if !t.is_complete() {
            return Err(SessionError::Collecting);
        }
        let tree = acv_core::preftree::condense(&t.dendrogram()?)
            .and_then(|tree| acv_core::preftree::ground(&tree, self.request.grounding_params))
            .map_err(|e| SessionError::InvalidConfig(e.to_string()))?;
        Ok(tree)
    }

    /// Scenario that replays this session's labels as the human oracle.
    pub fn scenario(&self) -> Result<AdviceScenario, SessionError> {
        if !self.tournament().is_complete() {
            return Err(SessionError::Collecting);
        }
        Ok(AdviceScenario::custom(OracleSpec::Recorded {
            candidates: self.candidates.clone(),
            record: self.tournament.clone(),
        }))
    }

    pub fn world(&self) -> GridWorld {
        GridWorld::new(self.world.clone()).expect("stored worlds were validated at creation")
    }

    pub fn abandon(&mut self) {
        self.status = SessionStatus::Abandoned;
        self.touch();
    }

    /// Moves the status forward; never backward, and never out of `Abandoned`.
    pub fn advance(&mut self, status: SessionStatus) {
        if self.status == SessionStatus::Abandoned {
            return;
        }
        self.status = self.status.max(status);
        self.touch();
    }

    pub fn touch(&mut self) {
        self.updated_at = Utc::now();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(k: usize) -> CreateSession {
        CreateSession { world_name: None, world_config: None, k, seed: 7, grounding_params: GroundingParams::default() }
    }

    fn answer_all(s: &mut Session) {
        while let Some(pair) = s.query().pair {
            s.submit(&pair.left.id, &pair.right.id, Choice::Left).unwrap();
        }
    }

    #[test]
    fn four_player_session() {
        let s = Session::create("a".into(), request(4), None).unwrap();
        let q = s.query();
        assert!(q.pair.is_some());
        assert_eq!(q.progress, Progress { answered: 0, total: 3 });
        assert_eq!(s.tournament().bracket().round_one().pairs.len(), 2);
    }

    #[test]
    fn rejects_bad_k_and_worlds() {
        assert!(matches!(Session::create("a".into(), request(74), None), Err(SessionError::InvalidConfig(_))));
        assert!(matches!(Session::create("a".into(), request(1), None), Err(SessionError::InvalidConfig(_))));
        let mut r = request(4);
        r.world_name = Some("moon".into());
        assert!(Session::create("a".into(), r, None).is_err());
    }

    #[test]
    fn labels_advance_and_replay() {
        let mut s = Session::create("a".into(), request(4), None).unwrap();
        let pair = s.query().pair.unwrap();
        let q = s.submit(&pair.left.id, &pair.right.id, Choice::Right).unwrap();
        assert_eq!(q.progress.answered, 1);
        assert!(matches!(s.submit(&pair.left.id, &pair.right.id, Choice::Right), Err(SessionError::Stale { .. })));
        assert!(matches!(s.human_tree(), Err(SessionError::Collecting)));

        let copy: Session = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        let copy = copy.replay().unwrap();
        assert_eq!(copy.tournament(), s.tournament());

        answer_all(&mut s);
        assert_eq!(s.status, SessionStatus::Complete);
        assert_eq!(s.query().progress, Progress { answered: 3, total: 3 });
        assert_eq!(s.human_tree().unwrap().tree().len(), 4);
    }

    #[test]
    fn abandoned_sessions_refuse_labels() {
        let mut s = Session::create("a".into(), request(4), None).unwrap();
        s.abandon();
        let pair = s.query().pair.unwrap();
        assert!(matches!(s.submit(&pair.left.id, &pair.right.id, Choice::Left), Err(SessionError::Abandoned)));
    }
}
