use std::fs;
use std::path::PathBuf;

use acv::commands::{compare, labels_from_tree, render, resolve_data_dir, simulate, Case, SimulateArgs};
use acv_core::preftree::TreeFormat;
use acv_core::verify::Verdict;
use acv_core::GroundedTree;

fn args(dir: &std::path::Path, case: Case) -> SimulateArgs {
    let training = dir.join("training.json");
    fs::write(&training, r#"{ "episodes": 600 }"#).unwrap();
    SimulateArgs {
        case,
        players: 8,
        p: 0.0,
        seed: 42,
        world: "default".into(),
        training: Some(training),
        out: dir.join("out/report.json"),
    }
}

#[test]
fn simulate_render_compare() {
    let dir = tempfile::tempdir().unwrap();
    let a = args(dir.path(), Case::Good);
    let (report, summary) = simulate(&a).unwrap();
    assert!(a.out.exists());
    assert_eq!(report.training.episodes, 600);
    assert!(summary.text.starts_with("CONFORMED") || summary.text.starts_with("DEVIATED"));

    let trees = dir.path().join("trees");
    let dots = render(&a.out, TreeFormat::Dot, &trees).unwrap();
    assert_eq!(dots, vec![trees.join("humanTree.dot"), trees.join("agentTree.dot")]);
    assert!(fs::read_to_string(&dots[0]).unwrap().starts_with("digraph"));

    let jsons = render(&a.out, TreeFormat::Json, &trees).unwrap();
    let same = compare(&jsons[0], &jsons[0]).unwrap();
    assert_eq!(same.verdict, Verdict::Conformed);
    let human = GroundedTree::from_json(&fs::read_to_string(&jsons[0]).unwrap()).unwrap();
    assert_eq!(labels_from_tree(&human).len(), 7);
}

#[test]
fn compare_flags_a_flipped_root() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = args(dir.path(), Case::Bad);
    a.players = 16;
    a.p = 0.3;
    a.training = None;
    let (report, _) = simulate(&a).unwrap();
    let human = dir.path().join("h.json");
    let agent = dir.path().join("a.json");
    fs::write(&human, report.human_tree.to_json()).unwrap();
    fs::write(&agent, report.final_agent_tree().unwrap().to_json()).unwrap();
    let s = compare(&human, &agent).unwrap();
    assert_eq!(s.verdict, Verdict::Deviated);
    assert_eq!(s.verdict.exit_code(), 1);
}

#[test]
fn bad_inputs_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = args(dir.path(), Case::Good);
    a.world = "no-such-world".into();
    assert!(simulate(&a).is_err());
    let mut a = args(dir.path(), Case::Good);
    a.p = 0.7;
    assert!(simulate(&a).is_err());
    assert!("ugly".parse::<Case>().is_err());
    assert!(render(&dir.path().join("missing.json"), TreeFormat::Dot, dir.path()).is_err());
}

#[test]
fn data_dir_env_wins() {
    let flag = PathBuf::from("./sessions");
    assert_eq!(resolve_data_dir(flag.clone(), None), flag);
    assert_eq!(resolve_data_dir(flag.clone(), Some(String::new())), flag);
    assert_eq!(resolve_data_dir(flag, Some("/srv/acv".into())), PathBuf::from("/srv/acv"));
}
