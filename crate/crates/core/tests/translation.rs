//! Multi-node translation workload checked against an independent map
//! built from the GMM records.

use std::collections::{BTreeMap, BTreeSet};

use cxlnet::mn::gmm::Gmm;
use cxlnet::mn::translate::{TranslateError, Translator};
use cxlnet::sim::RngStream;
use cxlnet::wire::MacAddr;
use proptest::prelude::*;

const PAGE: u64 = 4096;

fn node(i: u64) -> MacAddr {
    MacAddr::from_u64(0x0200_0000_0000 | i)
}

fn reference(g: &Gmm) -> BTreeMap<(MacAddr, u64), u64> {
    g.mappings()
        .into_iter()
        .map(|(cn, c, m)| ((cn, c / PAGE), m / PAGE))
        .collect()
}

fn assert_no_double_allocation(g: &Gmm) {
    let mut seen = BTreeSet::new();
    for (cn, _, m) in g.mappings() {
        assert!(seen.insert(m), "pool page {m:#x} handed out twice");
        assert_eq!(g.owner_of(m / PAGE), Some(cn));
    }
    assert_eq!(seen.len() as u64 + g.free_pages(), g.pool_pages());
}

/// Returns (lookups, faults) after `ops` random translations interleaved
/// with allocations.
fn workload(seed: u64, ops: u64) -> (u64, u64) {
    let mut rng = RngStream::new(seed, "translation-test");
    let mut t = Translator::new(Gmm::new(4096 * PAGE, PAGE), 32);
    t.dual_path = true;
    let nodes: Vec<MacAddr> = (1..=6).map(node).collect();
    let mut span = BTreeMap::new();
    let mut faults = 0;
    for i in 0..ops {
        let cn = nodes[rng.below(nodes.len() as u64) as usize];
        if i % 997 == 0 {
            let bytes = (1 + rng.below(8)) * PAGE - rng.below(PAGE);
            let r = if span.contains_key(&cn) {
                t.expand(cn, bytes)
            } else {
                t.alloc(cn, bytes)
            };
            if let Ok(r) = r {
                span.insert(cn, r.cmem_base + r.length);
            }
            assert_no_double_allocation(t.gmm());
            continue;
        }
        let end = span.get(&cn).copied().unwrap_or(0);
        // A slice of lookups deliberately lands past the mapped end.
        let addr = rng.below(end + 2 * PAGE);
        let refmap = reference(t.gmm());
        match t.translate(cn, addr) {
            Ok(x) => {
                let want = refmap[&(cn, addr / PAGE)] * PAGE + addr % PAGE;
                assert_eq!(x.mpmem_addr, want);
                assert_eq!(t.walk(cn, addr), Some(want));
                assert!(addr < end);
            }
            Err(TranslateError::TranslationFault { cn: c, addr: a }) => {
                assert_eq!((c, a), (cn, addr));
                assert!(addr >= end);
                assert!(!refmap.contains_key(&(cn, addr / PAGE)));
                faults += 1;
            }
            Err(e) => panic!("unexpected {e}"),
        }
    }
    let s = t.stats();
    assert_eq!(s.dual_path_mismatches, 0);
    assert_eq!(s.tlb_hits + s.walks, s.lookups);
    assert_eq!(s.faults, faults);
    assert_no_double_allocation(t.gmm());
    (s.lookups, faults)
}

#[test]
fn hundred_thousand_op_dual_path() {
    let (lookups, faults) = workload(7, 100_000);
    assert!(lookups > 99_000);
    assert!(faults > 0);
}

#[test]
fn unmapped_node_faults() {
    let mut t = Translator::new(Gmm::new(64 * PAGE, PAGE), 8);
    t.alloc(node(1), PAGE).unwrap();
    assert!(matches!(
        t.translate(node(2), 0),
        Err(TranslateError::TranslationFault { .. })
    ));
    assert!(matches!(
        t.translate(node(1), PAGE),
        Err(TranslateError::TranslationFault { .. })
    ));
    assert!(t.translate(node(1), PAGE - 1).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn random_seeds_hold(seed in any::<u64>()) {
        workload(seed, 3_000);
    }
}
