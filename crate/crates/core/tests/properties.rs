use std::collections::BTreeSet;

use ftitmr::fault::{transient_fault_prob, transient_rate};
use ftitmr::fti::compute_ss;
use ftitmr::tmr::{build_schedule, majority};
use ftitmr::workload::parse_stg_named;
use ftitmr::{AppKind, Application, PolicyKind, Task, Token, TransientFaultConfig};
use proptest::prelude::*;

/// Random DAG: task `i` may depend on any lower id; durations are
/// integral so the STG text form is exact.
fn dag() -> impl Strategy<Value = Application> {
    (1usize..40).prop_flat_map(|n| {
        let durations = prop::collection::vec(0u32..30, n);
        let preds =
            prop::collection::vec(prop::collection::vec(any::<prop::sample::Index>(), 0..4), n);
        (durations, preds).prop_map(move |(d, p)| Application {
            name: "g".into(),
            kind: AppKind::Dag,
            tasks: (0..n)
                .map(|i| Task {
                    id: i as u32,
                    duration: f64::from(d[i]),
                    predecessors: if i == 0 {
                        BTreeSet::new()
                    } else {
                        p[i].iter().map(|ix| ix.index(i) as u32).collect()
                    },
                })
                .collect(),
        })
    })
}

fn policy() -> impl Strategy<Value = PolicyKind> {
    prop::sample::select(PolicyKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn stg_round_trip(app in dag()) {
        let back = parse_stg_named("g", &app.to_stg()).unwrap();
        prop_assert_eq!(back, app);
    }

    #[test]
    fn fault_prob_is_monotone(lambda in 0.0f64..1e-2, t in 0.0f64..1e3, dl in 0.0f64..1e-2, dt in 0.0f64..1e3) {
        let f = transient_fault_prob(lambda, t);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!(transient_fault_prob(lambda + dl, t) >= f);
        prop_assert!(transient_fault_prob(lambda, t + dt) >= f);
        prop_assert_eq!(transient_fault_prob(lambda, 0.0), 0.0);
    }

    #[test]
    fn rate_grows_as_level_drops(s in 0.55f64..1.0, ds in 0.0f64..0.3) {
        let at = |level: f64| transient_rate(&TransientFaultConfig { s_level: level, ..Default::default() }).unwrap();
        let lo = (s - ds).max(TransientFaultConfig::default().s_min);
        prop_assert!(at(lo) >= at(s));
    }

    #[test]
    fn schedules_respect_precedence_and_cores(app in dag(), policy in policy(), mask in 1u8..16) {
        let cores: Vec<usize> = (0..4).filter(|c| mask & (1 << c) != 0).collect();
        let s = build_schedule(&app, policy, &cores).unwrap();
        let mut finish = vec![0.0f64; app.tasks.len()];
        let mut per_core: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 4];
        let real: Vec<u32> = app.real_tasks().map(|t| t.id).collect();
        prop_assert_eq!(s.assignments.len(), 3 * real.len());
        let mut seen = BTreeSet::new();
        for &id in &s.order {
            prop_assert!(seen.insert(id));
        }
        prop_assert_eq!(seen.into_iter().collect::<Vec<_>>(), real.clone());
        // dummy tasks finish when their latest predecessor does
        for id in app.topological_order().unwrap() {
            let t = app.task(id);
            let ready = t.predecessors.iter().map(|&p| finish[p as usize]).fold(0.0, f64::max);
            if t.is_dummy() {
                finish[id as usize] = ready;
                continue;
            }
            let mine: Vec<_> = s.assignments.iter().filter(|a| a.task == id).collect();
            prop_assert_eq!(mine.len(), 3);
            for a in &mine {
                prop_assert!(cores.contains(&a.core));
                prop_assert!(a.start >= ready - 1e-9);
                per_core[a.core].push((a.start, a.start + t.duration));
            }
            finish[id as usize] = mine.iter().map(|a| a.start + t.duration).fold(ready, f64::max);
            let on: BTreeSet<usize> = mine.iter().map(|a| a.core).collect();
            if policy.distinct_cores() {
                prop_assert_eq!(on.len(), cores.len().min(3));
            }
            prop_assert_eq!(s.replicas(id).map(|r| r.to_vec()), Some(mine.iter().map(|a| a.core).collect::<Vec<_>>()));
        }
        for spans in &mut per_core {
            spans.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in spans.windows(2) {
                prop_assert!(w[1].0 >= w[0].1 - 1e-9, "overlap on a core: {:?}", w);
            }
        }
    }

    #[test]
    fn stability_score_in_unit_interval(s in 0u64..10_000, d in 0u64..10_000) {
        let d = d.min(s);
        let ss = compute_ss(s, d, 0.0, 0.0);
        prop_assert!((0.0..=1.0).contains(&ss));
        if s > 0 {
            prop_assert!(compute_ss(s + 1, d, 0.0, 0.0) >= ss);
        }
    }

    #[test]
    fn majority_needs_two_equal(a in 0u64..3, b in 0u64..3, c in 0u64..3) {
        let tokens = [Token(a), Token(b), Token(c)];
        let expect = if a == b || a == c { Some(Token(a)) } else if b == c { Some(Token(b)) } else { None };
        prop_assert_eq!(majority(&tokens), expect);
    }
}
