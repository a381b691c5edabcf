use ncaudit_core::blocks::{decode_sources, subsets_of_size, CodedBlock, SystemParams};
use ncaudit_core::cluster::{
    spawn_cluster, Category, Cluster, ClusterError, FaultDescriptor, LayoutChoice, Party, CATEGORIES,
};
use ncaudit_core::field::{linalg, SymbolVector};
use ncaudit_core::repair::RepairMode;

const N: usize = 48;

fn file() -> Vec<u8> {
    b"network coded storage keeps any two of four nodes sufficient"
        .iter()
        .cycle()
        .take(4 * (N - 2) - 5)
        .copied()
        .collect()
}

fn evenodd(seed: u64) -> Cluster {
    spawn_cluster(SystemParams::evenodd4(N, 10), LayoutChoice::Evenodd4, &file(), seed).unwrap()
}

fn random_params() -> SystemParams {
    SystemParams {
        m: 4,
        nodes: 5,
        blocks_per_node: 2,
        helpers: 3,
        repair_blocks: 1,
        ..SystemParams::evenodd4(N, 10)
    }
}

fn row(bits: [u8; 4]) -> SymbolVector {
    SymbolVector::from_bytes(&bits)
}

#[test]
fn evenodd_contents_match_the_example_layout() {
    let c = evenodd(1);
    let expected = [
        vec![row([1, 0, 0, 0]), row([0, 1, 0, 0])],
        vec![row([0, 0, 1, 0]), row([0, 0, 0, 1])],
        vec![row([1, 0, 1, 0]), row([0, 1, 0, 1])],
        vec![row([0, 1, 1, 0]), row([1, 1, 0, 1])],
    ];
    assert_eq!(c.user_manifest().node_coeffs, expected);
    let blocks: Vec<CodedBlock> = (0..2)
        .flat_map(|i| {
            c.node(i)
                .unwrap()
                .store()
                .blocks()
                .flatten()
                .cloned()
                .collect::<Vec<_>>()
        })
        .collect();
    let refs: Vec<&CodedBlock> = blocks.iter().collect();
    let src = decode_sources(&refs, 4).unwrap();
    let data: Vec<SymbolVector> = src.iter().map(|s| s.data().iter().copied().collect()).collect();
    for (node, rows) in expected.iter().enumerate() {
        for (k, r) in rows.iter().enumerate() {
            let stored = &c.node(node).unwrap().store().get(k).unwrap().block;
            assert_eq!(stored.data(), linalg::combine_rows(&data, r, N).as_slice());
        }
        assert!(c.node_tags_valid(node).unwrap());
    }
}

#[test]
fn same_seed_same_state() {
    let mut a = evenodd(9);
    let mut b = evenodd(9);
    assert_eq!(a.fingerprint(), b.fingerprint());
    for _ in 0..5 {
        a.run_audit_round(2, 2).unwrap();
        b.run_audit_round(2, 2).unwrap();
    }
    assert_eq!(a.transcript().to_json_lines(), b.transcript().to_json_lines());
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_ne!(a.fingerprint(), evenodd(10).fingerprint());
}

#[test]
fn proof_size_follows_the_wire_layout() {
    let mut c = evenodd(2);
    let p = *c.params();
    let round = c.run_audit_round(0, 2).unwrap();
    assert!(round.accepted);
    assert_eq!(round.proof_bytes, (p.n - 2) + p.lambda / 8 + 2 + 2 * p.ell);
}

#[test]
fn key_scopes_are_enforced() {
    let c = evenodd(3);
    assert!(c.verification_key(Party::Tpa).is_ok());
    assert!(c.verification_key(Party::Node(0)).is_err());
    assert!(c.encryption_key(Party::Node(1)).is_ok());
    assert!(c.encryption_key(Party::Tpa).is_err());
    assert!(c.verification_key(Party::User).is_ok() && c.encryption_key(Party::User).is_ok());
}

#[test]
fn ledger_is_conserved() {
    let mut c = evenodd(4);
    c.run_audit_round(1, 2).unwrap();
    c.fail_and_repair(3, RepairMode::Exact).unwrap();
    let ledger = c.ledger();
    assert_eq!(ledger.total_sent(), ledger.total_received());
    let parties = [
        Party::User,
        Party::Tpa,
        Party::Node(0),
        Party::Node(1),
        Party::Node(2),
        Party::Node(3),
    ];
    for cat in CATEGORIES {
        let sent: u64 = parties.iter().map(|&p| ledger.sent(p, cat)).sum();
        let recv: u64 = parties.iter().map(|&p| ledger.received(p, cat)).sum();
        assert_eq!(sent, recv, "{cat:?}");
    }
}

#[test]
fn exact_repair_of_node_four() {
    let mut c = evenodd(5);
    let before = c.node(3).unwrap().store().clone();
    let report = c.fail_and_repair(3, RepairMode::Exact).unwrap();
    assert_eq!(report.plan.helpers, vec![0, 1, 2]);
    assert_eq!(report.user_data_block_bytes, 0);
    assert!(report.post_audit_accepted);
    assert_eq!(c.node(3).unwrap().store(), &before);
    assert_eq!(c.node(3).unwrap().epoch(), 1);
    for _ in 0..100 {
        assert!(c.run_audit_round(3, 2).unwrap().accepted);
    }
}

#[test]
fn every_node_repairs_exactly() {
    for node in 0..4 {
        let mut c = evenodd(6);
        let before = c.node(node).unwrap().store().clone();
        let r = c.fail_and_repair(node, RepairMode::Exact).unwrap();
        assert_eq!(c.node(node).unwrap().store(), &before, "node {}", node + 1);
        assert_eq!(r.user_data_block_bytes, 0);
    }
}

#[test]
fn corruption_and_deletion_are_detected() {
    let mut c = evenodd(7);
    c.inject_fault(
        0,
        FaultDescriptor::CorruptSymbol {
            block: 1,
            position: 5,
            delta: 0x40,
        },
    )
    .unwrap();
    assert!(!c.run_audit_round(0, 2).unwrap().accepted);
    c.inject_fault(2, FaultDescriptor::DeleteBlock { index: 0 }).unwrap();
    assert!(!c.run_audit_round(2, 2).unwrap().accepted);
    assert!(c.run_audit_round(1, 2).unwrap().accepted);
}

#[test]
fn malformed_faults_are_rejected() {
    let mut c = evenodd(8);
    let bad = [
        FaultDescriptor::CorruptSymbol {
            block: 0,
            position: 0,
            delta: 0,
        },
        FaultDescriptor::CorruptSymbol {
            block: 5,
            position: 0,
            delta: 1,
        },
        FaultDescriptor::CorruptSymbol {
            block: 0,
            position: 10_000,
            delta: 1,
        },
        FaultDescriptor::DeleteBlock { index: 2 },
        FaultDescriptor::LieProbability { epsilon: 1.5 },
    ];
    for f in bad {
        assert!(matches!(c.inject_fault(0, f), Err(ClusterError::InvalidFault(_))));
    }
    assert!(matches!(
        c.inject_fault(9, FaultDescriptor::DeleteBlock { index: 0 }),
        Err(ClusterError::UnknownNode(9))
    ));
    // A snapshot from the current epoch is not an old copy.
    let snapshot = c.snapshot(0).unwrap();
    assert!(c.inject_fault(0, FaultDescriptor::ReplayOld { snapshot }).is_err());
}

#[test]
fn replay_after_functional_repair_is_rejected() {
    let mut c = spawn_cluster(random_params(), LayoutChoice::RandomFunctional, &file(), 12).unwrap();
    let old = c.snapshot(1).unwrap();
    let r = c.fail_and_repair(1, RepairMode::Functional).unwrap();
    assert!(r.post_audit_accepted);
    assert_eq!(r.user_data_block_bytes, 0);
    assert_ne!(c.node(1).unwrap().store(), &old.store);
    c.inject_fault(1, FaultDescriptor::ReplayOld { snapshot: old }).unwrap();
    for _ in 0..200 {
        assert!(!c.run_audit_round(1, 2).unwrap().accepted);
    }
    c.clear_faults(1).unwrap();
    assert!(c.run_audit_round(1, 2).unwrap().accepted);
}

#[test]
fn functional_repair_keeps_the_file_decodable() {
    let mut c = spawn_cluster(random_params(), LayoutChoice::RandomFunctional, &file(), 13).unwrap();
    for node in [0, 3, 4, 0] {
        c.fail_and_repair(node, RepairMode::Functional).unwrap();
    }
    for pair in subsets_of_size(5, 2) {
        assert_eq!(c.decode_from(&pair).unwrap(), file(), "{pair:?}");
    }
}

#[test]
fn random_layout_decodes_from_any_spanning_subset() {
    let c = spawn_cluster(random_params(), LayoutChoice::RandomFunctional, &file(), 14).unwrap();
    for k in 1..=5 {
        for set in subsets_of_size(5, k) {
            let decodable = c.user_manifest().rank_of(&set) == 4;
            assert_eq!(c.decode_from(&set).is_ok(), decodable, "{set:?}");
            if decodable {
                assert_eq!(c.decode_from(&set).unwrap(), file());
            }
        }
    }
}

#[test]
fn any_two_nodes_of_four_decode() {
    let c = evenodd(15);
    for pair in subsets_of_size(4, 2) {
        assert_eq!(c.decode_from(&pair).unwrap(), file(), "{pair:?}");
    }
}

#[test]
fn evenodd_rejects_other_shapes() {
    let p = SystemParams {
        m: 5,
        ..SystemParams::evenodd4(N, 2)
    };
    assert!(matches!(
        spawn_cluster(p, LayoutChoice::Evenodd4, b"x", 1),
        Err(ClusterError::Layout(_))
    ));
}

#[test]
fn extraction_against_a_lying_node() {
    let mut c = evenodd(16);
    c.inject_fault(2, FaultDescriptor::LieProbability { epsilon: 0.2 })
        .unwrap();
    let x = c.extract(2, 15).unwrap();
    let stored: Vec<CodedBlock> = c.node(2).unwrap().store().blocks().flatten().cloned().collect();
    assert_eq!(x.blocks, stored);
    assert!(c.ledger().traffic(Party::User, Category::Proof) > 0);

    // Past one half nothing is guaranteed, but a result is never wrong data.
    c.inject_fault(2, FaultDescriptor::LieProbability { epsilon: 0.6 })
        .unwrap();
    for _ in 0..5 {
        match c.extract(2, 15) {
            Ok(x) => assert_eq!(x.blocks, stored),
            Err(e) => assert!(matches!(e, ClusterError::Extract(_))),
        }
    }
    c.inject_fault(2, FaultDescriptor::LieProbability { epsilon: 1.0 })
        .unwrap();
    assert!(matches!(c.extract(2, 15), Err(ClusterError::Extract(_))));
}
