mod common;

use common::{exchange_slices, scope_oracle};
use gir_fusion::gir::ParallelSpec;
use gir_fusion::profile::SyncScope;
use gir_fusion::rewrite::determine_sync_scope;
use std::collections::BTreeMap;

/// Compares every same-element-set (write, read) pair against the oracle and
/// returns how often each scope was expected.
fn check(units: u32) -> BTreeMap<SyncScope, usize> {
    let par = ParallelSpec::new(units, 4);
    let mut pairs = 0;
    let mut mismatches = vec![];
    let mut seen = BTreeMap::new();
    for group in exchange_slices(units) {
        for w in &group {
            for r in &group {
                pairs += 1;
                let want = scope_oracle(w, r, 64, &par).expect("same element set");
                let got = determine_sync_scope(w, r, &par).ok();
                *seen.entry(want).or_default() += 1;
                if got != Some(want) {
                    mismatches.push((*w, *r, want, got));
                }
            }
        }
    }
    assert!(
        mismatches.is_empty(),
        "{units} units: {} of {pairs} mismatched, first {:?}",
        mismatches.len(),
        &mismatches[..mismatches.len().min(3)]
    );
    seen
}

#[test]
fn sixteen_units_in_four_groups() {
    let seen = check(16);
    // An affine unit-to-data map always crosses a group edge when it moves
    // data between units, so no exchange here stays inside one group.
    assert_eq!(seen.keys().copied().collect::<Vec<_>>(), vec![SyncScope::Lane, SyncScope::Unit, SyncScope::Device]);
}

#[test]
fn smaller_grids_reach_group_scope() {
    assert!(check(4).contains_key(&SyncScope::Group));
    assert!(check(8).contains_key(&SyncScope::Device));
}

#[test]
fn differing_element_sets_are_rejected() {
    let par = ParallelSpec::new(16, 4);
    let groups = exchange_slices(16);
    for pair in groups.windows(2).step_by(7) {
        assert!(determine_sync_scope(&pair[0][0], &pair[1][0], &par).is_err());
    }
}
