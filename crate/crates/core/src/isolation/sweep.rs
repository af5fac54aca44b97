use std::collections::{BTreeMap, BTreeSet};

use super::check::{check_core, CheckEnv, CoreCheck, CoreVerdict};
use super::{Alert, AlertKind, IsolationPhase, IsolationVerdict, NodeInspection, SweepReport};
use crate::fault::{Accident, AccidentContext, InputToken, Token};
use crate::fti::{Cluster, InjectionHook, LeaderKind, ProtocolError};
use crate::node::{CoreAddr, NodeId};
use crate::sim::TraceRecord;
use crate::tmr::{DisputedEntry, DtList};
use crate::workload::Application;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SweepEnd {
    Completed,
    /// Leaders must be re-elected without the given nodes; the sweep then
    /// restarts from node 0.
    Aborted {
        banned: BTreeSet<NodeId>,
    },
}

#[derive(Debug)]
struct Abort(BTreeSet<NodeId>);

/// Combines per-core checks into E, A and the cleaned DTList. `checks[j]`
/// is `None` for a core that did not answer the DTList request. Cores whose
/// entries were all under backoff keep their current enabled status.
pub fn assemble_verdict(
    list: &DtList,
    checks: &[Option<CoreCheck>],
    enabled: &[bool],
    sweep: u32,
) -> IsolationVerdict {
    let mut v = IsolationVerdict {
        faulty: BTreeSet::new(),
        fault_free: BTreeSet::new(),
        unresponsive: BTreeSet::new(),
        cleaned_dtlist: list.clone(),
    };
    for (j, check) in checks.iter().enumerate() {
        let Some(check) = check else {
            v.unresponsive.insert(j);
            continue;
        };
        let part = &mut v.cleaned_dtlist.partitions[j];
        if let Some(f) = check.failed {
            part[f].mark_failed(sweep);
        }
        let mut i = 0;
        part.retain(|_| {
            let keep = !check.passed.contains(&i);
            i += 1;
            keep
        });
        match check.verdict {
            CoreVerdict::FaultFree => v.fault_free.insert(j),
            CoreVerdict::Faulty => v.faulty.insert(j),
            CoreVerdict::Unresponsive => v.unresponsive.insert(j),
            CoreVerdict::Unchanged if enabled[j] => v.fault_free.insert(j),
            CoreVerdict::Unchanged => v.faulty.insert(j),
        };
    }
    v
}

impl Cluster {
    /// Elects leaders and runs one complete isolation sweep, re-electing
    /// and restarting from node 0 whenever the leaders fail.
    pub fn run_detection_cycle(
        &mut self,
        app: &Application,
        sweep: u32,
    ) -> Result<SweepReport, ProtocolError> {
        let mut report = SweepReport {
            sweep,
            ..Default::default()
        };
        let mut banned = BTreeSet::new();
        loop {
            let leaders = self.run_election(&banned)?;
            report.inspections.clear();
            report.alerts.clear();
            match self.sweep(app, sweep, &mut report) {
                SweepEnd::Completed => {
                    let l = self.leaders.as_ref().unwrap_or(&leaders);
                    report.leaders = Some((l.term, l.primary, l.secondary));
                    report.completed = true;
                    return Ok(report);
                }
                SweepEnd::Aborted { banned: b } => {
                    self.log(|| format!("sweep aborted, banning {b:?}"));
                    report.restarts += 1;
                    banned = b;
                    if report.restarts as usize > self.n() {
                        return Ok(report);
                    }
                }
            }
        }
    }

    /// Inspects every node in ascending id order under the current leaders.
    pub fn sweep(&mut self, app: &Application, sweep: u32, report: &mut SweepReport) -> SweepEnd {
        self.start_heartbeats();
        for target in 0..self.n() {
            match self.inspect_node(app, target, sweep, report) {
                Ok(ins) => report.inspections.push(ins),
                Err(Abort(banned)) => {
                    self.stop_heartbeats();
                    return SweepEnd::Aborted { banned };
                }
            }
        }
        self.stop_heartbeats();
        SweepEnd::Completed
    }

    fn pair_ban(&self) -> BTreeSet<NodeId> {
        self.leaders
            .as_ref()
            .map(|l| [l.primary, l.secondary].into_iter().collect())
            .unwrap_or_default()
    }

    /// Lets `dt` ms of simulated time pass while the sweep works. A silent
    /// primary stalls the sweep until the followers agree on re-election.
    fn step(&mut self, dt: u64) -> Result<(), Abort> {
        let until = self.kernel().now().after(dt);
        if self.pump_until(until) {
            return Err(Abort(self.reelection.clone().unwrap_or_default()));
        }
        let interval = self.config.heartbeat_interval_ms;
        let mut waited = 0;
        while self.leader_silent(LeaderKind::Primary) {
            let until = self.kernel().now().after(interval);
            if self.pump_until(until) {
                return Err(Abort(self.reelection.clone().unwrap_or_default()));
            }
            waited += interval;
            if waited > 20 * self.config.heartbeat_timeout_ms {
                return Err(Abort(self.pair_ban()));
            }
        }
        Ok(())
    }

    fn fire_hooks(&mut self, target: NodeId) {
        let mut fired = Vec::new();
        for (i, h) in self.hooks.iter().enumerate() {
            match *h {
                InjectionHook::CrashPrimaryWhenInspecting(n) if n == target => {
                    self.runtime.crashed[0] = true;
                    fired.push(i);
                }
                InjectionHook::SkewSecondaryWhenInspecting(n) if n == target => {
                    self.runtime.skewed = true;
                    fired.push(i);
                }
                _ => {}
            }
        }
        for i in fired.into_iter().rev() {
            self.hooks.remove(i);
        }
    }

    fn designate(&self, exclude: &[NodeId]) -> Option<NodeId> {
        let banned = self
            .leaders
            .as_ref()
            .map(|l| self.agents[l.primary].banned.clone())
            .unwrap_or_default();
        self.ranking()
            .into_iter()
            .find(|n| !exclude.contains(n) && !banned.contains(n))
    }

    fn note(&mut self, kind: &'static str, target: CoreAddr) {
        let term = self.leaders.as_ref().map_or(0, |l| l.term);
        self.kernel_mut().note(TraceRecord {
            kind,
            src: String::new(),
            dst: target.to_string(),
            term,
        });
    }

    fn inspect_node(
        &mut self,
        app: &Application,
        target: NodeId,
        sweep: u32,
        report: &mut SweepReport,
    ) -> Result<NodeInspection, Abort> {
        self.runtime.inspecting = target;
        self.fire_hooks(target);
        let leaders = self.leaders.clone().expect("sweep needs leaders");
        let (p, v) = (leaders.primary, leaders.secondary);
        let refs = if target == p || target == v {
            let other = if target == p { v } else { p };
            (other, self.designate(&[p, v, target]).unwrap_or(other))
        } else {
            (p, v)
        };
        let mut ins = NodeInspection {
            node: target,
            phases: vec![IsolationPhase::Init],
            verdict: None,
            alert: None,
            dtlist_before: 0,
            dtlist_after: 0,
        };
        let term = leaders.term;

        // DTList retrieval, core by core
        let mut silent = BTreeSet::new();
        let mut list = None;
        for (attempt, core) in self.nodes[target].enabled_cores().into_iter().enumerate() {
            ins.phases.push(IsolationPhase::RequestingDtlist(attempt));
            self.step(2 * self.config.latency_ms)?;
            self.note("dtlist_request", CoreAddr { node: target, core });
            let c = &self.nodes[target].cores[core];
            let accident = self.faults.sample_accident(
                c,
                AccidentContext::Isolation,
                &mut self.accident_rng[target],
            );
            let reply = c.dt_list.clone();
            let (reply_term, checksum) = match accident {
                Accident::None => (term, reply.checksum()),
                Accident::StaleTerm => (term - 1, reply.checksum()),
                Accident::CorruptPayload => (term, reply.checksum() ^ 1),
                Accident::Crash | Accident::Timeout => {
                    silent.insert(core);
                    continue;
                }
            };
            if reply_term != term || checksum != reply.checksum() {
                silent.insert(core);
                continue;
            }
            list = Some(reply);
            break;
        }
        let Some(list) = list else {
            ins.phases.push(IsolationPhase::NodeAlert);
            ins.phases.push(IsolationPhase::Advancing);
            ins.alert = Some(AlertKind::NodeUnresponsive);
            report.alerts.push(Alert {
                node_id: target,
                kind: AlertKind::NodeUnresponsive,
                term,
                time: self.kernel().now(),
            });
            return Ok(ins);
        };
        ins.dtlist_before = list.len();

        // triple re-execution checks, core by core
        let m = self.nodes[target].cores.len();
        let mut checks = Vec::with_capacity(m);
        let mut env = Inspector {
            cluster: self,
            app,
            target,
            core: 0,
            refs,
            cache: BTreeMap::new(),
        };
        for j in 0..m {
            ins.phases.push(IsolationPhase::CheckingCore(j));
            if silent.contains(&j) {
                checks.push(None);
                continue;
            }
            env.core = j;
            let check = check_core(list.partition(j), sweep, &mut env)?;
            checks.push(if check.verdict == CoreVerdict::Unresponsive {
                None
            } else {
                Some(check)
            });
        }
        ins.phases.push(IsolationPhase::VerdictsReady);
        let enabled: Vec<bool> = self.nodes[target].cores.iter().map(|c| c.enabled).collect();
        let verdict = assemble_verdict(&list, &checks, &enabled, sweep);
        ins.dtlist_after = verdict.cleaned_dtlist.len();

        if verdict.fault_free.is_empty() {
            ins.phases.push(IsolationPhase::NodeAlert);
            ins.alert = Some(AlertKind::AllCoresFaulty);
            self.nodes[target].all_cores_faulty = true;
            report.alerts.push(Alert {
                node_id: target,
                kind: AlertKind::AllCoresFaulty,
                term,
                time: self.kernel().now(),
            });
        } else {
            ins.phases.push(IsolationPhase::Applying);
            self.step(self.config.latency_ms)?;
            self.apply_isolation(target, &verdict, report);
        }
        ins.phases.push(IsolationPhase::Advancing);
        ins.verdict = Some(verdict);
        Ok(ins)
    }

    /// Verdict order to the fault-free cores: they take the cleaned DTList,
    /// disable E and the unresponsive cores, and re-enable any core now found
    /// fault-free.
    pub fn apply_isolation(
        &mut self,
        target: NodeId,
        verdict: &IsolationVerdict,
        report: &mut SweepReport,
    ) {
        let node = &mut self.nodes[target];
        node.all_cores_faulty = false;
        for core in node.cores.iter_mut() {
            let j = core.addr.core;
            if verdict.fault_free.contains(&j) {
                core.dt_list = verdict.cleaned_dtlist.clone();
                if !core.enabled {
                    core.enabled = true;
                    report.reenabled.push(core.addr);
                }
            } else if core.enabled {
                core.enabled = false;
                report.disabled.push(core.addr);
            }
        }
        if node.contact_core.is_some_and(|c| !node.cores[c].enabled) {
            node.contact_core = node.enabled_cores().first().copied();
        }
        self.log(|| {
            format!(
                "N{target} E={:?} A={:?} U={:?}",
                verdict.faulty, verdict.fault_free, verdict.unresponsive
            )
        });
    }

    /// One execution by `node` on its contact core (or first enabled core).
    fn leader_execute(&mut self, node: NodeId, input: InputToken, duration: f64) -> Token {
        let ns = &self.nodes[node];
        let core = ns
            .contact_core
            .filter(|&c| ns.cores[c].enabled)
            .or_else(|| ns.enabled_cores().first().copied())
            .unwrap_or(0);
        self.faults
            .sample_copy_outcome(
                &ns.cores[core],
                input,
                duration,
                &mut self.isolation_rng,
                &mut self.mint,
            )
            .token()
    }

    /// Two reference nodes disagreed: the next most stable node arbitrates
    /// with three executions. The contradicted reference is replaced by the
    /// arbiter; without a consistent arbiter both leaders are banned.
    fn leader_self_heal(
        &mut self,
        refs: &mut (NodeId, NodeId),
        target: NodeId,
        entry: &DisputedEntry,
        duration: f64,
        results: (Token, Token),
    ) -> Result<Token, Abort> {
        self.counters.self_heals += 1;
        let l = self.leaders.clone().expect("leaders");
        let Some(arbiter) = self.designate(&[l.primary, l.secondary, refs.0, refs.1, target])
        else {
            return Err(Abort(self.pair_ban()));
        };
        let mut votes = [Token(0); 3];
        for v in &mut votes {
            *v = self.leader_execute(arbiter, entry.input, duration);
        }
        self.counters.arbiter_execs += 3;
        self.step(3 * self.config.isolation_exec_ms)?;
        if votes.iter().any(|&t| t != votes[0]) {
            return Err(Abort(self.pair_ban()));
        }
        let agreed = votes[0];
        let loser = if agreed == results.0 {
            refs.1
        } else if agreed == results.1 {
            refs.0
        } else {
            return Err(Abort(self.pair_ban()));
        };
        let leaders = self.leaders.as_mut().expect("leaders");
        if leaders.primary == loser {
            leaders.primary = arbiter;
        } else if leaders.secondary == loser {
            leaders.secondary = arbiter;
        }
        if refs.0 == loser {
            refs.0 = arbiter;
        } else {
            refs.1 = arbiter;
        }
        self.apply_roles();
        self.log(|| format!("arbiter N{arbiter} replaces N{loser}"));
        Ok(agreed)
    }
}

struct Inspector<'a> {
    cluster: &'a mut Cluster,
    app: &'a Application,
    target: NodeId,
    core: usize,
    refs: (NodeId, NodeId),
    cache: BTreeMap<InputToken, Token>,
}

impl Inspector<'_> {
    fn duration(&self, e: &DisputedEntry) -> f64 {
        self.app.task(e.task).duration
    }
}

impl CheckEnv for Inspector<'_> {
    type Abort = Abort;

    fn reference(&mut self, entry: &DisputedEntry) -> Result<Token, Abort> {
        if let Some(&t) = self.cache.get(&entry.input) {
            return Ok(t);
        }
        let d = self.duration(entry);
        let c = &mut *self.cluster;
        let a = c.leader_execute(self.refs.0, entry.input, d);
        let b = c.leader_execute(self.refs.1, entry.input, d);
        c.counters.reference_execs += 2;
        c.step(c.config.isolation_exec_ms)?;
        let t = if a == b {
            a
        } else {
            c.leader_self_heal(&mut self.refs, self.target, entry, d, (a, b))?
        };
        self.cache.insert(entry.input, t);
        Ok(t)
    }

    fn execute_thrice(&mut self, entry: &DisputedEntry) -> Result<Option<[Token; 3]>, Abort> {
        let d = self.duration(entry);
        let c = &mut *self.cluster;
        let addr = CoreAddr {
            node: self.target,
            core: self.core,
        };
        c.note("exec_order", addr);
        let core = &c.nodes[self.target].cores[self.core];
        if c.faults.sample_accident(
            core,
            AccidentContext::Isolation,
            &mut c.accident_rng[self.target],
        ) != Accident::None
        {
            c.step(2 * c.config.latency_ms)?;
            return Ok(None);
        }
        let mut out = [Token(0); 3];
        for t in &mut out {
            *t = c
                .faults
                .sample_copy_outcome(core, entry.input, d, &mut c.isolation_rng, &mut c.mint)
                .token();
        }
        c.counters.reexecs += 3;
        c.step(3 * c.config.isolation_exec_ms + 2 * c.config.latency_ms)?;
        Ok(Some(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::{FaultModel, PermanentFaultConfig, TransientFaultConfig};
    use crate::fti::ProtocolConfig;
    use crate::node::{Health, NodeState};
    use crate::tmr::record_dispute;
    use crate::workload::generate_random_app;

    fn setup(faulty: &[(NodeId, &[usize])], seed: u64) -> (Cluster, Application) {
        let app = generate_random_app(10, (1.0, 10.0), 1).unwrap();
        let mut nodes: Vec<NodeState> = (0..9).map(|i| NodeState::new(i, 4)).collect();
        for &(n, cores) in faulty {
            for &c in cores {
                nodes[n].cores[c].health = Health::PermanentFault;
            }
        }
        // every faulty core took part in two disputes, next to healthy ones
        for ns in nodes.iter_mut() {
            for c in ns.cores.iter_mut() {
                c.executed_tasks = 100;
            }
            let bad: Vec<usize> = ns.faulty_cores().into_iter().collect();
            for (k, &b) in bad.iter().enumerate() {
                for task in [k as u32, k as u32 + 5] {
                    let others: Vec<usize> = (0..4).filter(|&c| c != b).take(2).collect();
                    record_dispute(
                        ns,
                        &[b, others[0], others[1]],
                        DisputedEntry::new(task, InputToken::new(task, 1)),
                    );
                }
            }
        }
        let t = TransientFaultConfig {
            lambda0: 0.0,
            ..Default::default()
        };
        let faults = FaultModel::new(t, PermanentFaultConfig::default()).unwrap();
        (
            Cluster::new(nodes, faults, ProtocolConfig::default(), seed, false).unwrap(),
            app,
        )
    }

    #[test]
    fn isolates_faulty_cores_and_cleans_lists() {
        let (mut c, app) = setup(&[(5, &[1]), (6, &[0, 2])], 3);
        let r = c.run_detection_cycle(&app, 0).unwrap();
        assert!(r.completed);
        assert_eq!(
            r.inspections.iter().map(|i| i.node).collect::<Vec<_>>(),
            (0..9).collect::<Vec<_>>()
        );
        assert!(!c.nodes[5].cores[1].enabled);
        assert!(
            c.nodes[5].cores[0].enabled
                && c.nodes[5].cores[2].enabled
                && c.nodes[5].cores[3].enabled
        );
        assert!(!c.nodes[6].cores[0].enabled && !c.nodes[6].cores[2].enabled);
        for core in c.nodes[5].cores.iter().filter(|c| c.enabled) {
            assert_eq!(core.dt_list.partition(0), &[]);
            assert_eq!(core.dt_list.partition(1).len(), 2);
            assert_eq!(core.dt_list, c.nodes[5].cores[0].dt_list);
        }
        for ins in &r.inspections {
            for w in ins.phases.windows(2) {
                assert!(w[1].can_follow(w[0]), "{:?}", ins.phases);
            }
        }
        assert!(c.counters.reexecs > 0 && c.counters.reference_execs > 0);
    }

    #[test]
    fn all_faulty_node_alerts() {
        let (mut c, app) = setup(&[(8, &[0, 1, 2, 3])], 5);
        let r = c.run_detection_cycle(&app, 0).unwrap();
        let alert = r.alerts.iter().find(|a| a.node_id == 8).expect("alert");
        assert!(matches!(
            alert.kind,
            AlertKind::AllCoresFaulty | AlertKind::NodeUnresponsive
        ));
        assert!(c.nodes[8].cores.iter().all(|c| c.enabled));
    }

    #[test]
    fn crashed_primary_causes_reelection_and_restart() {
        let (mut c, app) = setup(&[(5, &[1])], 7);
        c.hooks.push(InjectionHook::CrashPrimaryWhenInspecting(4));
        let r = c.run_detection_cycle(&app, 0).unwrap();
        assert!(r.completed);
        assert_eq!(r.restarts, 1);
        let (_, p, v) = r.leaders.unwrap();
        assert!(
            p != 0 && v != 0 && p != 1 && v != 1,
            "old pair 0/1 banned, got {p}/{v}"
        );
        assert_eq!(r.inspections.len(), 9);
        assert!(!c.nodes[5].cores[1].enabled);
    }

    #[test]
    fn skewed_secondary_triggers_reelection() {
        let (mut c, app) = setup(&[], 9);
        c.hooks.push(InjectionHook::SkewSecondaryWhenInspecting(2));
        // slow the sweep down so heartbeats are exchanged while it runs
        c.config.isolation_exec_ms = 50;
        for ns in c.nodes.iter_mut() {
            record_dispute(ns, &[0, 1, 2], DisputedEntry::new(1, InputToken::new(1, 1)));
        }
        let r = c.run_detection_cycle(&app, 0).unwrap();
        assert_eq!(r.restarts, 1);
        assert!(r.completed);
        assert_eq!(c.counters.reelections, 1);
    }

    #[test]
    fn healthy_heartbeats_never_trigger() {
        let (mut c, app) = setup(&[(3, &[2])], 2);
        c.config.isolation_exec_ms = 50;
        for ns in c.nodes.iter_mut() {
            record_dispute(ns, &[0, 1, 2], DisputedEntry::new(1, InputToken::new(1, 1)));
        }
        let r = c.run_detection_cycle(&app, 0).unwrap();
        assert_eq!(r.restarts, 0);
        assert_eq!(c.counters.reelections, 0);
    }

    #[test]
    fn verdict_assembly() {
        let mut list = DtList::new(3);
        let e = DisputedEntry::new(1, InputToken::new(1, 0));
        list.partitions[0] = vec![e, e];
        list.partitions[1] = vec![e];
        let checks = vec![
            Some(CoreCheck {
                verdict: CoreVerdict::FaultFree,
                passed: vec![0, 1],
                failed: None,
            }),
            Some(CoreCheck {
                verdict: CoreVerdict::Faulty,
                passed: vec![],
                failed: Some(0),
            }),
            None,
        ];
        let v = assemble_verdict(&list, &checks, &[true, true, true], 4);
        assert_eq!(v.fault_free, [0].into_iter().collect());
        assert_eq!(v.faulty, [1].into_iter().collect());
        assert_eq!(v.unresponsive, [2].into_iter().collect());
        assert!(v.cleaned_dtlist.partition(0).is_empty());
        assert_eq!(v.cleaned_dtlist.partition(1)[0].failed_count, 1);
        assert!(v.cleaned_dtlist.partition(1)[0].under_backoff(5));
    }
}
