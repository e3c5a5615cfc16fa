use std::collections::BTreeMap;

use chrono::{Duration, TimeZone, Utc};
use gridops_core::clock::format_timestamp;
use gridops_core::{Element, ViewDocument};
use gridops_workflow::{transition_target, ActionKind, AlarmAction, AlarmStatus, AlarmStore, Topology};
use proptest::prelude::*;

fn topology() -> Topology {
    let mut sites = Element::new("sites");
    let mut nodes = Element::new("nodes");
    for s in ["A", "B", "C"] {
        sites.push(Element::new("site").with_attr("name", s).with_attr("contact", "x@y").with_attr("status", "CERTIFIED"));
        for n in 0..2 {
            nodes.push(Element::new("node").with_attr("hostname", format!("{s}{n}")).with_attr("site", s));
        }
    }
    Topology::load(&ViewDocument::new(Element::new("topology").with_child(sites).with_child(nodes))).unwrap()
}

fn seed_store(n: usize) -> AlarmStore {
    let store = AlarmStore::default();
    let base = Utc.with_ymd_and_hms(2009, 12, 1, 0, 0, 0).unwrap();
    let mut feed = Element::new("sam");
    for i in 0..n {
        let node = format!("{}{}", ["A", "B", "C"][i % 3], i % 2);
        feed.push(
            Element::new("failure")
                .with_attr("sensor", "CE")
                .with_attr("test", format!("t{i}"))
                .with_attr("node", node)
                .with_attr("time", format_timestamp(base + Duration::minutes(i as i64))),
        );
    }
    assert_eq!(store.ingest(&ViewDocument::new(feed), &topology()).new.len(), n);
    store
}

#[derive(Debug, Clone)]
enum Op {
    Act(u64, u8, u64),
    Sweep,
}

fn action(kind: u8, master: u64) -> AlarmAction {
    match kind % 5 {
        0 => AlarmAction::Assign,
        1 => AlarmAction::Mask(master),
        2 => AlarmAction::SetOff,
        3 => AlarmAction::Close,
        _ => AlarmAction::Unmask,
    }
}

const ALARMS: u64 = 24;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Random operations never break the forest invariants, and every rejected
    /// operation leaves the store untouched.
    #[test]
    fn invariants_hold_under_random_operations(
        ops in proptest::collection::vec(
            prop_oneof![
                8 => (1..=ALARMS, any::<u8>(), 1..=ALARMS).prop_map(|(a, k, m)| Op::Act(a, k, m)),
                1 => Just(Op::Sweep),
            ],
            1000,
        )
    ) {
        let store = seed_store(ALARMS as usize);
        let mut now = Utc.with_ymd_and_hms(2009, 12, 2, 0, 0, 0).unwrap();
        let mut succeeded = 0usize;
        for op in ops {
            now += Duration::seconds(1);
            match op {
                Op::Act(id, kind, master) => {
                    let before = store.all();
                    let from = store.get(id).unwrap().status;
                    let act = action(kind, master);
                    match store.transition(id, act, "op", now) {
                        Ok(after) => {
                            succeeded += 1;
                            prop_assert_eq!(Some(after.status), transition_target(from, act.kind()));
                        }
                        Err(_) => prop_assert_eq!(before, store.all()),
                    }
                }
                Op::Sweep => {
                    store.auto_close(now);
                }
            }
            prop_assert_eq!(store.check_invariants(), Ok(()));
        }
        prop_assert!(succeeded > 0);
        let audit = store.audit();
        let seqs: Vec<u64> = audit.iter().map(|r| r.seq).collect();
        prop_assert_eq!(seqs, (1..=audit.len() as u64).collect::<Vec<_>>());
    }
}

#[test]
fn all_25_pairs_follow_the_table() {
    for from in AlarmStatus::ALL {
        for kind in ActionKind::ALL {
            // Drive a fresh alarm into `from`, with a live same-site master.
            let store = seed_store(6);
            let (id, master) = (1, 4);
            let t = Utc.with_ymd_and_hms(2009, 12, 2, 0, 0, 0).unwrap();
            let path: &[AlarmAction] = match from {
                AlarmStatus::New => &[],
                AlarmStatus::Assigned => &[AlarmAction::Assign],
                AlarmStatus::Masked => &[AlarmAction::Mask(master)],
                AlarmStatus::Off => &[AlarmAction::SetOff],
                AlarmStatus::Closed => &[AlarmAction::Assign, AlarmAction::Close],
            };
            for step in path {
                store.transition(id, *step, "op", t).unwrap();
            }
            let act = match kind {
                ActionKind::Assign => AlarmAction::Assign,
                ActionKind::Mask => AlarmAction::Mask(master),
                ActionKind::SetOff => AlarmAction::SetOff,
                ActionKind::Close => AlarmAction::Close,
                ActionKind::Unmask => AlarmAction::Unmask,
            };
            let got = store.transition(id, act, "op", t).map(|a| a.status).map_err(|e| e.code());
            let expected = transition_target(from, kind).ok_or("ILLEGAL_TRANSITION");
            assert_eq!(got, expected, "{from} x {kind}");
        }
    }
}

#[test]
fn closing_a_master_unmasks_every_direct_dependent() {
    let store = seed_store(12);
    let t = Utc.with_ymd_and_hms(2009, 12, 2, 0, 0, 0).unwrap();
    // Alarms 1, 4, 7, 10 are on site A.
    store.transition(4, AlarmAction::Mask(1), "op", t).unwrap();
    store.transition(7, AlarmAction::Mask(1), "op", t).unwrap();
    store.transition(10, AlarmAction::Mask(4), "op", t).unwrap();
    store.transition(1, AlarmAction::SetOff, "op", t).unwrap();
    store.transition(1, AlarmAction::Close, "op", t).unwrap();
    let statuses: BTreeMap<u64, AlarmStatus> = [4, 7, 10].into_iter().map(|i| (i, store.get(i).unwrap().status)).collect();
    // Only direct dependents are released; 10 stays under 4.
    assert_eq!(statuses, BTreeMap::from([(4, AlarmStatus::New), (7, AlarmStatus::New), (10, AlarmStatus::Masked)]));
    assert_eq!(store.get(10).unwrap().masked_by, Some(4));
    assert_eq!(store.audit_for(4).len(), 2);
    store.check_invariants().unwrap();
}
