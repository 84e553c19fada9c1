//! End-to-end experiment drivers for good and bad advice, and the
//! CONFORMED / DEVIATED summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    extract_agent_tree, greedy_return, optimal_return, train_with, AdviceSignal, AgentError, AgentOracle, DecisionRule,
    ShapingMode, ShapingModel, TrainingConfig, TrainingTrace,
};
use crate::envsim::{CandidateState, EnvError, GridWorld, WorldConfig};
use crate::preftree::{
    compare_trees, condense, ground, ConformanceMetrics, GroundedTree, GroundingParams, PreferenceReward,
    SimilarityRule, TreeError,
};
use crate::seeds;
use crate::tournament::{
    run_tournament, BmParams, Bracket, Choice, PreferenceLabel, SimulatedOracle, Tournament, TournamentError,
    TournamentRecord,
};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("session-incomplete")]
    SessionIncomplete,
    #[error("bad advice must be anti-correlated with the state reward (Pearson r = {0:.3}, need <= -0.5)")]
    NotAdverse(f64),
    #[error("good advice must use the state reward as ability")]
    NotAligned,
    #[error("no ability given for candidate {0}")]
    MissingAbility(String),
    #[error("recorded session does not match its candidates")]
    RecordMismatch,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Tournament(#[from] TournamentError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

impl VerifyError {
    /// Training trace attached to a divergence, if that is what failed.
    pub fn divergence_trace(&self) -> Option<&TrainingTrace> {
        match self {
            VerifyError::Agent(AgentError::Divergence { trace }) => Some(trace),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Good,
    Bad,
    Custom,
}

/// How the simulated human scores a candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "type")]
pub enum AbilityFunction {
    StateReward,
    /// `offset - stateReward`: prefers states far from the goal.
    InverseStateReward {
        offset: f64,
    },
    /// Explicit ability per candidate id.
    Table {
        values: BTreeMap<String, f64>,
    },
}

impl AbilityFunction {
    fn evaluate(&self, candidates: &[CandidateState]) -> Result<BTreeMap<String, f64>, VerifyError> {
        candidates
            .iter()
            .map(|c| {
                let v = match self {
                    AbilityFunction::StateReward => c.env_reward,
                    AbilityFunction::InverseStateReward { offset } => offset - c.env_reward,
                    AbilityFunction::Table { values } => {
                        *values.get(&c.id).ok_or_else(|| VerifyError::MissingAbility(c.id.clone()))?
                    }
                };
                Ok((c.id.clone(), v))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "type")]
pub enum OracleSpec {
    Simulated {
        ability: AbilityFunction,
        p: BmParams,
    },
    /// Labels collected from a live session.
    Recorded {
        candidates: Vec<CandidateState>,
        record: TournamentRecord,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AdviceScenario {
    pub kind: ScenarioKind,
    pub oracle: OracleSpec,
    #[serde(default)]
    pub similarity: SimilarityRule,
    #[serde(default)]
    pub shaping_mode: ShapingMode,
    #[serde(default)]
    pub decision_rule: DecisionRule,
}

/// Noise level used for simulated humans unless stated otherwise.
pub const DEFAULT_NOISE: f64 = 0.3;

impl AdviceScenario {
    /// Human ability equal to the state reward.
    pub fn good(p: BmParams) -> Self {
        AdviceScenario::new(ScenarioKind::Good, OracleSpec::Simulated { ability: AbilityFunction::StateReward, p })
    }

    /// Human ability `1 - stateReward`.
    pub fn bad(p: BmParams) -> Self {
        AdviceScenario::new(
            ScenarioKind::Bad,
            OracleSpec::Simulated { ability: AbilityFunction::InverseStateReward { offset: 1.0 }, p },
        )
    }

    pub fn custom(oracle: OracleSpec) -> Self {
        AdviceScenario::new(ScenarioKind::Custom, oracle)
    }

    fn new(kind: ScenarioKind, oracle: OracleSpec) -> Self {
        AdviceScenario {
            kind,
            oracle,
            similarity: SimilarityRule::default(),
            shaping_mode: ShapingMode::default(),
            decision_rule: DecisionRule::default(),
        }
    }

    /// Checks the ability function against the kind on a concrete candidate set.
    pub fn check(&self, candidates: &[CandidateState]) -> Result<(), VerifyError> {
        let OracleSpec::Simulated { ability, .. } = &self.oracle else {
            return Ok(());
        };
        match self.kind {
            ScenarioKind::Good if *ability != AbilityFunction::StateReward => Err(VerifyError::NotAligned),
            ScenarioKind::Bad => {
                let abilities = ability.evaluate(candidates)?;
                let xs: Vec<f64> = candidates.iter().map(|c| c.env_reward).collect();
                let ys: Vec<f64> = candidates.iter().map(|c| abilities[&c.id]).collect();
                let r = pearson(&xs, &ys).unwrap_or(0.0);
                if r <= -0.5 {
                    Ok(())
                } else {
                    Err(VerifyError::NotAdverse(r))
                }
            }
            _ => Ok(()),
        }
    }
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let d = (sxx * syy).sqrt();
    (d > 0.0).then(|| sxy / d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SeedEcho {
    pub experiment: u64,
    pub candidates: u64,
    pub bracket: u64,
    pub human: u64,
    pub training: u64,
}

impl SeedEcho {
    pub fn derive(seed: u64) -> Self {
        SeedEcho {
            experiment: seed,
            candidates: seeds::derive(seed, seeds::CANDIDATES),
            bracket: seeds::derive(seed, seeds::BRACKET),
            human: seeds::derive(seed, seeds::HUMAN),
            training: seeds::derive(seed, seeds::TRAINING),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentTreeAt {
    pub episode_index: usize,
    pub tree: GroundedTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentReport {
    pub scenario: AdviceScenario,
    pub world: WorldConfig,
    pub k: usize,
    pub seeds: SeedEcho,
    pub grounding: GroundingParams,
    pub training: TrainingConfig,
    pub candidates: Vec<CandidateState>,
    pub bracket: Bracket,
    pub human_labels: Vec<PreferenceLabel>,
    pub human_tree: GroundedTree,
    pub agent_tree_at_checkpoints: Vec<AgentTreeAt>,
    pub metrics_at_checkpoints: Vec<ConformanceMetrics>,
    pub training_trace: TrainingTrace,
    /// Greedy environment return from the start cell after training.
    pub final_return: f64,
    pub optimal_return: f64,
}

impl ExperimentReport {
    pub fn final_agent_tree(&self) -> Option<&GroundedTree> {
        self.agent_tree_at_checkpoints.last().map(|a| &a.tree)
    }

    pub fn final_metrics(&self) -> Option<&ConformanceMetrics> {
        self.metrics_at_checkpoints.last()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Runs the full pipeline: candidates, human tournament, human tree, shaped
/// training, and an agent tree plus metrics at every training checkpoint.
pub fn run_scenario(
    scenario: &AdviceScenario,
    world: &GridWorld,
    k: usize,
    grounding: GroundingParams,
    training: &TrainingConfig,
    seed: u64,
) -> Result<ExperimentReport, VerifyError> {
    grounding.validate()?;
    training.validate()?;
    let seeds = SeedEcho::derive(seed);

    let (candidates, bracket, dendrogram, human_labels) = match &scenario.oracle {
        OracleSpec::Simulated { ability, p } => {
            let candidates = world.sample_candidates(k, seeds.candidates)?;
            scenario.check(&candidates)?;
            let bracket = Bracket::seed(&candidates, seeds.bracket)?;
            let mut human = SimulatedOracle::new(ability.evaluate(&candidates)?, *p, seeds.human);
            let (dendrogram, labels) = run_tournament(&bracket, &candidates, &mut human)?;
            (candidates, bracket, dendrogram, labels)
        }
        OracleSpec::Recorded { candidates, record } => {
            let t = Tournament::from_record(record)?;
            if !t.is_complete() {
                return Err(VerifyError::SessionIncomplete);
            }
            let mut ids: Vec<&str> = candidates.iter().map(|c| c.id.as_str()).collect();
            let mut entrants: Vec<&str> = record.entrants.iter().map(String::as_str).collect();
            ids.sort_unstable();
            entrants.sort_unstable();
            if ids != entrants {
                return Err(VerifyError::RecordMismatch);
            }
            (candidates.clone(), t.bracket().clone(), t.dendrogram()?, t.labels())
        }
    };

    let human_tree = ground(&condense(&dendrogram)?, grounding)?;
    let features: BTreeMap<String, Vec<f64>> = candidates.iter().map(|c| (c.id.clone(), c.features.clone())).collect();
    let f = PreferenceReward::new(&human_tree, &features, scenario.similarity)?;
    let model = ShapingModel::new(world, scenario.shaping_mode, AdviceSignal::Tree(f))?;
    let by_id: BTreeMap<&str, &CandidateState> = candidates.iter().map(|c| (c.id.as_str(), c)).collect();

    let mut agent_trees = Vec::new();
    let mut metrics = Vec::new();
    let mut failure = None;
    let outcome = train_with(world, model, training, seeds.training, &mut |checkpoint, _policy, model| {
        if failure.is_some() {
            return;
        }
        let oracle = match scenario.decision_rule {
            DecisionRule::ShapedValue => AgentOracle::new(model),
            DecisionRule::TreeReward => AgentOracle::by_tree_reward(model, &human_tree),
        };
        let step = extract_agent_tree(&bracket, &candidates, &oracle, grounding).and_then(|(tree, _)| {
            let mut decide = |l: &str, r: &str| oracle.decide(by_id[l], by_id[r]);
            let m = compare_trees(&human_tree, &tree, &human_labels, &mut decide)?;
            Ok((tree, m))
        });
        match step {
            Ok((tree, m)) => {
                agent_trees.push(AgentTreeAt { episode_index: checkpoint.episode, tree });
                metrics.push(m);
            }
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }

    Ok(ExperimentReport {
        scenario: scenario.clone(),
        world: world.config().clone(),
        k: candidates.len(),
        seeds,
        grounding,
        training: training.clone(),
        final_return: greedy_return(world, &outcome.policy, world.start()),
        optimal_return: optimal_return(world),
        candidates,
        bracket,
        human_labels,
        human_tree,
        agent_tree_at_checkpoints: agent_trees,
        metrics_at_checkpoints: metrics,
        training_trace: outcome.trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Conformed,
    Deviated,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Conformed => 0,
            Verdict::Deviated => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub verdict: Verdict,
    pub text: String,
}

pub const CONFORMANCE_THRESHOLD: f64 = 0.9;

pub fn verdict(metrics: &ConformanceMetrics, threshold: f64) -> Verdict {
    if metrics.structural_match && metrics.pairwise_agreement >= threshold {
        Verdict::Conformed
    } else {
        Verdict::Deviated
    }
}

/// Human-readable verdict from final conformance metrics.
pub fn summarize_metrics(metrics: &ConformanceMetrics, threshold: f64) -> Summary {
    let verdict = verdict(metrics, threshold);
    let mut text = String::new();
    let _ = writeln!(text, "{}", if verdict == Verdict::Conformed { "CONFORMED" } else { "DEVIATED" });
    let _ = writeln!(text, "structural match:   {}", metrics.structural_match);
    let _ = writeln!(text, "root agreement:     {}", metrics.root_agreement);
    let _ = writeln!(text, "pairwise agreement: {:.3} (threshold {threshold})", metrics.pairwise_agreement);
    if verdict == Verdict::Deviated {
        let _ = writeln!(text, "flipped pairs ({}):", metrics.flipped_pairs.len());
        for l in &metrics.flipped_pairs {
            let agent = match l.choice {
                Choice::Left => &l.right_id,
                Choice::Right => &l.left_id,
            };
            let _ = writeln!(
                text,
                "  round {}: {} vs {}: human chose {}, agent chose {}",
                l.round,
                l.left_id,
                l.right_id,
                l.winner(),
                agent
            );
        }
        let _ = writeln!(text, "depth  overlap");
        for (d, o) in metrics.per_depth_overlap.iter().enumerate() {
            let _ = writeln!(text, "{:>5}  {o:.3}", d + 1);
        }
    }
    Summary { verdict, text }
}

/// Verdict on a report's final checkpoint. A report without checkpoints
/// deviates.
pub fn summarize(report: &ExperimentReport, threshold: f64) -> Summary {
    match report.final_metrics() {
        Some(m) => summarize_metrics(m, threshold),
        None => Summary { verdict: Verdict::Deviated, text: "DEVIATED\nno training checkpoints\n".into() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tournament::LabelSource;

    fn quick() -> TrainingConfig {
        TrainingConfig { episodes: 400, lookahead_episodes: 10, ..TrainingConfig::default() }
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn bad_kind_requires_anticorrelation() {
        let w = GridWorld::default_benchmark();
        let cands = w.sample_candidates(8, 1).unwrap();
        assert!(AdviceScenario::bad(BmParams::noiseless()).check(&cands).is_ok());
        let mut s = AdviceScenario::bad(BmParams::noiseless());
        s.oracle = OracleSpec::Simulated { ability: AbilityFunction::StateReward, p: BmParams::noiseless() };
        assert!(matches!(s.check(&cands), Err(VerifyError::NotAdverse(r)) if r > 0.99));
        let mut g = AdviceScenario::good(BmParams::noiseless());
        g.oracle = OracleSpec::Simulated {
            ability: AbilityFunction::InverseStateReward { offset: 0.0 },
            p: BmParams::noiseless(),
        };
        assert!(matches!(g.check(&cands), Err(VerifyError::NotAligned)));
    }

    #[test]
    fn two_candidate_pipeline() {
        let w = GridWorld::default_benchmark();
        let r =
            run_scenario(&AdviceScenario::good(BmParams::noiseless()), &w, 2, GroundingParams::default(), &quick(), 5)
                .unwrap();
        assert_eq!(r.human_labels.len(), 1);
        assert_eq!(r.agent_tree_at_checkpoints.len(), r.metrics_at_checkpoints.len());
        assert_eq!(r.agent_tree_at_checkpoints.len(), r.training_trace.checkpoints.len());
        let m = r.final_metrics().unwrap();
        assert!(m.pairwise_agreement.is_finite());
        assert!(m.per_depth_overlap.iter().all(|o| o.is_finite()));
    }

    #[test]
    fn incomplete_recorded_session() {
        let w = GridWorld::default_benchmark();
        let cands = w.sample_candidates(4, 2).unwrap();
        let t = Tournament::new(Bracket::seed(&cands, 2).unwrap(), LabelSource::Human);
        let s = AdviceScenario::custom(OracleSpec::Recorded { candidates: cands, record: t.to_record() });
        let err = run_scenario(&s, &w, 4, GroundingParams::default(), &quick(), 1).unwrap_err();
        assert!(matches!(err, VerifyError::SessionIncomplete));
        assert_eq!(err.to_string(), "session-incomplete");
    }

    #[test]
    fn summary_verdicts() {
        let ok = ConformanceMetrics {
            structural_match: true,
            root_agreement: true,
            pairwise_agreement: 1.0,
            per_depth_overlap: vec![1.0],
            flipped_pairs: vec![],
        };
        let s = summarize_metrics(&ok, CONFORMANCE_THRESHOLD);
        assert_eq!(s.verdict, Verdict::Conformed);
        assert!(s.text.starts_with("CONFORMED"));
        assert_eq!(s.verdict.exit_code(), 0);

        let flipped = PreferenceLabel {
            left_id: "a".into(),
            right_id: "b".into(),
            choice: Choice::Left,
            round: 2,
            source: LabelSource::Simulated,
        };
        let bad = ConformanceMetrics {
            structural_match: false,
            root_agreement: false,
            pairwise_agreement: 0.5,
            per_depth_overlap: vec![0.0, 0.5],
            flipped_pairs: vec![flipped],
        };
        let s = summarize_metrics(&bad, CONFORMANCE_THRESHOLD);
        assert_eq!(s.verdict.exit_code(), 1);
        assert!(s.text.starts_with("DEVIATED"));
        assert!(s.text.contains("round 2: a vs b: human chose a, agent chose b"));

        let nearly = ConformanceMetrics { pairwise_agreement: 0.85, ..ok };
        assert_eq!(verdict(&nearly, CONFORMANCE_THRESHOLD), Verdict::Deviated);
    }
}
