use chrono::{Duration, TimeZone, Utc};
use gridops_core::clock::Timestamp;
use gridops_workflow::{StoreId, TicketBridge, TicketStatus, MAX_STEP};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Write {
    Field { store: StoreId, field: &'static str, value: String },
    Escalate { store: StoreId },
}

fn arb_write() -> impl Strategy<Value = Write> {
    let store = prop_oneof![Just(StoreId::Ops), Just(StoreId::Central)];
    prop_oneof![
        4 => (store.clone(), prop_oneof![Just("subject"), Just("comment"), Just("impacted_node")], "[a-c]{1,2}")
            .prop_map(|(store, field, value)| Write::Field { store, field, value }),
        2 => (store.clone(), prop_oneof![Just("OPEN"), Just("IN_PROGRESS"), Just("SOLVED")])
            .prop_map(|(store, v)| Write::Field { store, field: "status", value: v.to_string() }),
        1 => store.prop_map(|store| Write::Escalate { store }),
    ]
}

fn base() -> Timestamp {
    Utc.with_ymd_and_hms(2009, 12, 1, 0, 0, 0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Any write sequence with arbitrary drains converges once the queues are
    /// empty, and the step never drops on either store.
    #[test]
    fn converges_after_drain(
        writes in proptest::collection::vec((arb_write(), any::<bool>(), 0i64..3), 0..24)
    ) {
        let bridge = TicketBridge::default();
        let id = bridge.create("subject", "A", None, "op", base()).unwrap().id;
        let mut now = base();
        let mut steps = [0u8, 0u8];
        for (write, drain, advance) in writes {
            now += Duration::seconds(advance);
            match write {
                Write::Field { store, field, value } => {
                    bridge.update(&id, &[(field.to_string(), value)], "op", store, now).unwrap();
                }
                Write::Escalate { store } => {
                    let _ = bridge.escalate(&id, "op", store, now);
                }
            }
            if drain {
                bridge.synchronize();
            }
            for (i, store) in [StoreId::Ops, StoreId::Central].into_iter().enumerate() {
                let step = bridge.get(&id, store).unwrap().escalation_step;
                prop_assert!(step >= steps[i] && step <= MAX_STEP);
                steps[i] = step;
            }
        }
        bridge.synchronize();
        prop_assert_eq!(bridge.pending_sync(), 0);
        let ops = bridge.get(&id, StoreId::Ops).unwrap();
        let central = bridge.get(&id, StoreId::Central).unwrap();
        prop_assert_eq!(ops.fields(), central.fields());
        for ticket in [&ops, &central] {
            let seqs: Vec<u64> = ticket.history.iter().map(|e| e.seq).collect();
            prop_assert_eq!(seqs, (1..=ticket.history.len() as u64).collect::<Vec<_>>());
            prop_assert_eq!(ticket.updated_at, ticket.history.last().unwrap().time);
        }
    }
}

#[test]
fn racing_status_writes_end_with_the_later_value() {
    // Every interleaving of one write per store at t1 < t2, with a drain at
    // each possible point, against a brute-force oracle.
    let orders = [[StoreId::Ops, StoreId::Central], [StoreId::Central, StoreId::Ops]];
    for order in orders {
        for times in [[1, 2], [2, 1]] {
            for drain_at in 0..3 {
                let bridge = TicketBridge::default();
                let id = bridge.create("s", "A", None, "op", base()).unwrap().id;
                let values = ["IN_PROGRESS", "SOLVED"];
                for i in 0..2 {
                    if drain_at == i {
                        bridge.synchronize();
                    }
                    let at = base() + Duration::seconds(times[i]);
                    bridge
                        .update(&id, &[("status".into(), values[i].into())], "op", order[i], at)
                        .unwrap();
                }
                bridge.synchronize();
                let ops = bridge.get(&id, StoreId::Ops).unwrap();
                assert_eq!(ops.fields(), bridge.get(&id, StoreId::Central).unwrap().fields());
                // A write that already saw the other one always wins.
                let expected = if drain_at == 1 || times[1] > times[0] { values[1] } else { values[0] };
                assert_eq!(ops.status, expected.parse::<TicketStatus>().unwrap(), "{order:?} {times:?} drain {drain_at}");
            }
        }
    }
}

#[test]
fn disjoint_fields_are_both_applied() {
    let bridge = TicketBridge::default();
    let id = bridge.create("s", "A", None, "op", base()).unwrap().id;
    bridge.update(&id, &[("comment".into(), "from ops".into())], "a", StoreId::Ops, base() + Duration::seconds(2)).unwrap();
    bridge.update(&id, &[("impacted_node".into(), "ce01".into())], "b", StoreId::Central, base() + Duration::seconds(1)).unwrap();
    bridge.synchronize();
    for store in [StoreId::Ops, StoreId::Central] {
        let t = bridge.get(&id, store).unwrap();
        assert_eq!(t.comment.as_deref(), Some("from ops"));
        assert_eq!(t.impacted_node.as_deref(), Some("ce01"));
    }
}
