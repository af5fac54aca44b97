#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use ftitmr::fti::{Cluster, ProtocolConfig};
use ftitmr::harness::{run_cell, ApplicationSpec, ScenarioConfig};
use ftitmr::isolation::AlertKind;
use ftitmr::{
    FaultModel, Health, NodeState, PermanentFaultConfig, PolicyKind, TransientFaultConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

pub struct ElectionCase {
    pub cluster: Cluster,
    pub fault_free: Vec<usize>,
    pub counters: Vec<(u64, u64)>,
}

/// Random counters on every node and random faulty cores on up to
/// `n - (⌊n/2⌋ + 1)` nodes.
pub fn election_case(n: usize, seed: u64) -> ElectionCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let faulty_nodes = rng.gen_range(0..=n - (n / 2 + 1));
    let mut nodes: Vec<NodeState> = (0..n).map(|i| NodeState::new(i, 4)).collect();
    let mut counters = Vec::new();
    for ns in &mut nodes {
        let s = rng.gen_range(0..500u64);
        let d = if s == 0 { 0 } else { rng.gen_range(0..=s / 4) };
        for c in &mut ns.cores {
            c.executed_tasks = s;
            c.dispute_counter = d;
        }
        counters.push((s, d));
    }
    for &node in &ids[..faulty_nodes] {
        let k = rng.gen_range(1..=4);
        let mut cores: Vec<usize> = (0..4).collect();
        cores.shuffle(&mut rng);
        for &c in &cores[..k] {
            nodes[node].cores[c].health = Health::PermanentFault;
        }
    }
    let fault_free = ids[faulty_nodes..].to_vec();
    let permanent = PermanentFaultConfig {
        accident_prob: rng.gen_range(0.2..=1.0),
        ..Default::default()
    };
    let faults = FaultModel::new(TransientFaultConfig::default(), permanent).unwrap();
    let cluster = Cluster::new(nodes, faults, ProtocolConfig::default(), seed, false).unwrap();
    ElectionCase {
        cluster,
        fault_free,
        counters,
    }
}

/// Stability score straight from the counters; a node that has not run
/// anything counts as fully stable.
pub fn oracle_ss((s, d): (u64, u64)) -> f64 {
    if s == 0 {
        1.0
    } else {
        (s - d) as f64 / s as f64
    }
}

#[derive(Debug, Default)]
pub struct ElectionTally {
    pub runs: usize,
    pub with_faults: usize,
    pub multi_term: usize,
}

/// Runs one election case and checks single-primary, maximal score and
/// liveness.
pub fn check_election(n: usize, seed: u64, tally: &mut ElectionTally) -> Result<(), String> {
    let mut case = election_case(n, seed);
    let leaders = case
        .cluster
        .run_election(&BTreeSet::new())
        .map_err(|e| format!("n={n} seed={seed}: no leaders: {e}"))?;
    let audit = &case.cluster.audit;
    if audit.max_primaries_per_term() > 1 {
        return Err(format!(
            "n={n} seed={seed}: two primaries confirmed in one term"
        ));
    }
    if audit
        .confirmed_primaries
        .get(&leaders.term)
        .map(|s| s.len())
        != Some(1)
    {
        return Err(format!(
            "n={n} seed={seed}: term {} has no single confirmed primary",
            leaders.term
        ));
    }
    // honest fault-free reports always arrive, so the winner ranks at least
    // as high as every one of them
    let p = leaders.primary;
    let p_ss = oracle_ss(case.counters[p]);
    for &f in &case.fault_free {
        let f_ss = oracle_ss(case.counters[f]);
        if !(p_ss > f_ss || (p_ss == f_ss && p <= f)) {
            return Err(format!("n={n} seed={seed}: primary {p} (ss {p_ss}) outranked by fault-free {f} (ss {f_ss})"));
        }
    }
    if leaders.primary == leaders.secondary || leaders.group.len() <= n / 2 {
        return Err(format!("n={n} seed={seed}: malformed leaders {leaders:?}"));
    }
    tally.runs += 1;
    tally.with_faults += usize::from(case.fault_free.len() < n);
    tally.multi_term += usize::from(case.cluster.counters.terms_started > n as u64);
    Ok(())
}

/// FTI-TMR campaign with no transient faults, ε = 0 and six rounds, so
/// that exactly two sweeps run (after rounds 2 and 6).
pub fn isolation_case(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = [5usize, 7, 9][rng.gen_range(0..3)];
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let mut counts = vec![0; n];
    for &node in &ids[..rng.gen_range(1..=n - (n / 2 + 1))] {
        counts[node] = rng.gen_range(1..=4);
    }
    let mut cfg = ScenarioConfig {
        n_nodes: n,
        faulty_core_counts: counts,
        policies: vec![PolicyKind::FtiTmr],
        runs_per_node: 6,
        seed,
        applications: vec![ApplicationSpec::Random {
            count: rng.gen_range(8..=24),
            min_duration: 1.0,
            max_duration: 10.0,
            seed: rng.gen(),
            name: None,
        }],
        ..Default::default()
    };
    cfg.transient.lambda0 = 0.0;
    cfg.permanent.correct_result_prob = 0.0;
    cfg.permanent.accident_prob = rng.gen_range(0.0..=1.0);
    cfg
}

#[derive(Debug, Default)]
pub struct IsolationTally {
    pub scenarios: usize,
    pub disabled: usize,
    pub alerted_nodes: usize,
}

pub fn check_isolation(seed: u64, tally: &mut IsolationTally) -> Result<(), String> {
    let cfg = isolation_case(seed);
    let app = cfg
        .load_applications()
        .map_err(|e| e.to_string())?
        .remove(0);
    let r = run_cell(&cfg, &app, PolicyKind::FtiTmr, seed, false)
        .map_err(|e| format!("seed {seed}: {e}"))?;
    if r.sweeps.len() != 2 {
        return Err(format!(
            "seed {seed}: expected 2 sweeps, got {}",
            r.sweeps.len()
        ));
    }
    let healthy: BTreeSet<_> = r
        .final_nodes
        .iter()
        .flat_map(|n| n.cores.iter().filter(|c| !c.is_faulty()).map(|c| c.addr))
        .collect();
    for sweep in &r.sweeps {
        if let Some(addr) = sweep.disabled.iter().find(|a| healthy.contains(a)) {
            return Err(format!(
                "seed {seed}: healthy core {addr} isolated in sweep {}",
                sweep.sweep
            ));
        }
        tally.disabled += sweep.disabled.len();
    }
    let mut alerted: BTreeMap<usize, BTreeSet<AlertKind>> = BTreeMap::new();
    for a in r.sweeps.iter().flat_map(|s| &s.alerts) {
        alerted.entry(a.node_id).or_default().insert(a.kind);
    }
    for node in &r.final_nodes {
        if let Some(core) = node.cores.iter().find(|c| c.is_faulty() && c.enabled) {
            if !alerted.contains_key(&node.id) {
                return Err(format!(
                    "seed {seed}: faulty core {} still enabled and node not alerted",
                    core.addr
                ));
            }
        }
        if node.cores.iter().all(|c| c.is_faulty()) {
            // either every core was verdicted faulty or none of them answered
            if !alerted.contains_key(&node.id) {
                return Err(format!(
                    "seed {seed}: all-faulty node {} not alerted",
                    node.id
                ));
            }
            tally.alerted_nodes += 1;
        }
        if let Some(core) = node.cores.iter().find(|c| !c.enabled && !c.is_faulty()) {
            return Err(format!(
                "seed {seed}: healthy core {} left disabled",
                core.addr
            ));
        }
    }
    tally.scenarios += 1;
    Ok(())
}
