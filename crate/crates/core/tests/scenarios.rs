mod common;

use std::fs;

use common::scenario_path;
use ftitmr::harness::{ApplicationSpec, ConfigError, ScenarioConfig};
use ftitmr::{AppKind, PolicyKind};

#[test]
fn checked_in_scenarios_load() {
    let free = ScenarioConfig::load(&scenario_path("fault_free_9node.toml")).unwrap();
    assert_eq!(free.faulty_core_counts, vec![0; 9]);
    let mixed = ScenarioConfig::load(&scenario_path("mixed_faults_9node.toml")).unwrap();
    assert_eq!(mixed.faulty_core_counts, vec![0, 0, 0, 0, 0, 1, 2, 3, 4]);
    for cfg in [&free, &mixed] {
        assert_eq!(
            (cfg.n_nodes, cfg.cores_per_node, cfg.runs_per_node),
            (9, 4, 100)
        );
        assert_eq!(
            cfg.policies,
            vec![
                PolicyKind::CTmr,
                PolicyKind::TpTmrPlus,
                PolicyKind::RTmr,
                PolicyKind::FtiTmr
            ]
        );
        let apps = cfg.load_applications().unwrap();
        let shape: Vec<(String, AppKind, usize)> = apps
            .iter()
            .map(|a| (a.name.clone(), a.kind, a.real_task_count()))
            .collect();
        assert_eq!(
            shape,
            vec![
                ("robot".into(), AppKind::Dag, 88),
                ("sparse".into(), AppKind::Dag, 96),
                ("fppp".into(), AppKind::Dag, 334),
                ("random".into(), AppKind::Independent, 200),
            ]
        );
        for a in &apps {
            assert!(a.topological_order().is_some());
        }
    }
}

#[test]
fn relative_stg_paths_follow_the_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("graphs")).unwrap();
    fs::write(
        dir.path().join("graphs/tiny.stg"),
        "2\n0 0 0\n1 4 1 0\n2 3 1 0\n3 0 2 1 2\n",
    )
    .unwrap();
    let scenario = dir.path().join("s.toml");
    fs::write(
        &scenario,
        "[[applications]]\nkind = \"stg\"\npath = \"graphs/tiny.stg\"\n",
    )
    .unwrap();
    let cfg = ScenarioConfig::load(&scenario).unwrap();
    let apps = cfg.load_applications().unwrap();
    assert_eq!(apps[0].name, "tiny");
    assert_eq!(apps[0].real_task_count(), 2);

    fs::write(
        &scenario,
        "[[applications]]\nkind = \"stg\"\npath = \"graphs/missing.stg\"\n",
    )
    .unwrap();
    let cfg = ScenarioConfig::load(&scenario).unwrap();
    assert!(matches!(
        cfg.load_applications(),
        Err(ConfigError::Io { .. })
    ));
}

#[test]
fn toml_is_rejected_on_unknown_shapes() {
    assert!(ScenarioConfig::from_toml("n_nodes = \"nine\"", ".").is_err());
    assert!(matches!(
        ScenarioConfig::from_toml("faulty_core_counts = [5, 0, 0, 0, 0, 0, 0, 0, 0]", "."),
        Err(ConfigError::TooManyFaulty { node: 0, .. })
    ));
    let cfg = ScenarioConfig::from_toml("[[applications]]\nkind = \"random\"\ncount = 3\nmin_duration = 1.0\nmax_duration = 1.0\nseed = 0\n", ".").unwrap();
    assert!(matches!(
        cfg.applications[0],
        ApplicationSpec::Random { count: 3, .. }
    ));
}
