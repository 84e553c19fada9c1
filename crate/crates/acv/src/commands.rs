//! Offline commands behind the `acv` binary.

use std::fs;
use std::path::{Path, PathBuf};

use acv_core::agent::TrainingConfig;
use acv_core::preftree::{compare_trees, TreeDecider, TreeFormat};
use acv_core::tournament::{BmParams, LabelSource};
use acv_core::verify::{
    run_scenario, summarize, summarize_metrics, AdviceScenario, ExperimentReport, Summary, CONFORMANCE_THRESHOLD,
};
use acv_core::{GridWorld, GroundedTree, GroundingParams, PreferenceLabel};
use anyhow::{bail, Context, Result};

pub const DATA_DIR_ENV: &str = "ACV_DATA_DIR";

/// `ACV_DATA_DIR`, when set and non-empty, wins over the flag.
pub fn resolve_data_dir(flag: PathBuf, env: Option<String>) -> PathBuf {
    match env {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    Good,
    Bad,
}

impl std::str::FromStr for Case {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "good" => Ok(Case::Good),
            "bad" => Ok(Case::Bad),
            other => Err(format!("case must be good or bad, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub case: Case,
    pub players: usize,
    pub p: f64,
    pub seed: u64,
    /// Built-in world name or path to a world JSON file.
    pub world: String,
    pub training: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn load_world(spec: &str) -> Result<GridWorld> {
    if let Ok(w) = GridWorld::builtin(spec) {
        return Ok(w);
    }
    let text = fs::read_to_string(spec)
        .with_context(|| format!("{spec:?} is neither a built-in world nor a readable file"))?;
    Ok(GridWorld::from_json(&text)?)
}

pub fn simulate(args: &SimulateArgs) -> Result<(ExperimentReport, Summary)> {
    let world = load_world(&args.world)?;
    let p = BmParams::new(args.p)?;
    let scenario = match args.case {
        Case::Good => AdviceScenario::good(p),
        Case::Bad => AdviceScenario::bad(p),
    };
    let training = match &args.training {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)
            .with_context(|| format!("parsing training config {}", path.display()))?,
        None => TrainingConfig::default(),
    };
    let report = run_scenario(&scenario, &world, args.players, GroundingParams::default(), &training, args.seed)?;
    write(&args.out, &report.to_json())?;
    let summary = summarize(&report, CONFORMANCE_THRESHOLD);
    Ok((report, summary))
}

/// Writes `humanTree.<ext>` and `agentTree.<ext>` for the report's final
/// checkpoint and returns their paths.
pub fn render(report: &Path, format: TreeFormat, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let report = ExperimentReport::from_json(&fs::read_to_string(report)?)
        .with_context(|| format!("parsing report {}", report.display()))?;
    let Some(agent) = report.final_agent_tree() else {
        bail!("report has no agent tree");
    };
    let ext = match format {
        TreeFormat::Json => "json",
        TreeFormat::Dot => "dot",
    };
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (name, tree) in [("humanTree", &report.human_tree), ("agentTree", agent)] {
        let path = out_dir.join(format!("{name}.{ext}"));
        write(&path, &tree.serialize(format))?;
        written.push(path);
    }
    Ok(written)
}

/// Labels implied by a tree alone: every child lost to its parent in the
/// round after its last win.
pub fn labels_from_tree(tree: &GroundedTree) -> Vec<PreferenceLabel> {
    let mut labels: Vec<PreferenceLabel> = tree
        .tree()
        .edges()
        .into_iter()
        .map(|e| PreferenceLabel {
            left_id: e.parent,
            right_id: e.child,
            choice: acv_core::Choice::Left,
            round: e.weight as usize + 1,
            source: LabelSource::Human,
        })
        .collect();
    labels.sort_by(|a, b| (a.round, &a.left_id, &a.right_id).cmp(&(b.round, &b.left_id, &b.right_id)));
    labels
}

/// Compares two tree documents. Without the original bracket, the human
/// labels are read off the human tree and re-decided from the agent tree.
pub fn compare(human: &Path, agent: &Path) -> Result<Summary> {
    let read = |p: &Path| -> Result<GroundedTree> {
        GroundedTree::from_json(&fs::read_to_string(p)?).with_context(|| format!("parsing tree {}", p.display()))
    };
    let (h, a) = (read(human)?, read(agent)?);
    let decider = TreeDecider::new(&a);
    let metrics = compare_trees(&h, &a, &labels_from_tree(&h), &mut |l, r| decider.decide(l, r))?;
    Ok(summarize_metrics(&metrics, CONFORMANCE_THRESHOLD))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
