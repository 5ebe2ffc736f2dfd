mod common;

use common::{random_buffers, random_gir};
use gir_fusion::costmodel::estimate;
use gir_fusion::gir::{pattern_equal, validate, Base, GirGraph, MemorySlice, ParallelSpec};
use gir_fusion::interp::{count_traffic, detect_races, execute, run_gir, ExecOptions};
use gir_fusion::profile::HardwareProfile;
use gir_fusion::rewrite::{insert_sync, optimize};
use proptest::prelude::*;

fn gpu() -> HardwareProfile {
    HardwareProfile::generic_gpu()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn optimize_preserves_semantics(seed in any::<u64>()) {
        let p = gpu();
        let g = random_gir(seed, &p);
        prop_assert!(g.nodes.len() <= 32);
        prop_assert_eq!(validate(&g, &p), vec![]);
        let inputs = random_buffers(&g, seed);
        let before = run_gir(&g, &p, &inputs).unwrap();
        let (opt, trace) = optimize(&g, &p).unwrap();
        prop_assert_eq!(validate(&opt, &p), vec![]);
        let after = run_gir(&opt, &p, &inputs).unwrap();
        for (name, v) in &before {
            let bits: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
            let obits: Vec<u64> = after[name].iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(bits, obits);
        }
        prop_assert!(trace.is_monotone());
        prop_assert!(trace.len() <= g.nodes.len() * g.nodes.len());
        prop_assert!(estimate(&opt, &p).device_traffic(&p) <= estimate(&g, &p).device_traffic(&p));
    }

    #[test]
    fn modeled_traffic_matches_counted(seed in any::<u64>()) {
        let p = gpu();
        let g = random_gir(seed, &p);
        let inputs = random_buffers(&g, seed);
        for h in [g.clone(), optimize(&g, &p).unwrap().0] {
            prop_assert_eq!(count_traffic(&h, &p, &inputs).unwrap(), estimate(&h, &p).traffic);
        }
    }

    #[test]
    fn synced_graphs_are_race_free(seed in any::<u64>()) {
        let p = gpu();
        let g = random_gir(seed, &p);
        prop_assert_eq!(detect_races(&insert_sync(&g, &p).unwrap(), &p).unwrap(), vec![]);
        prop_assert_eq!(detect_races(&optimize(&g, &p).unwrap().0, &p).unwrap(), vec![]);
    }

    #[test]
    fn unit_order_is_irrelevant(seed in any::<u64>(), rot in 0u32..8) {
        let p = gpu();
        let g = random_gir(seed, &p);
        let inputs = random_buffers(&g, seed);
        let n = g.parallel.unit_count;
        let mut order: Vec<u32> = (0..n).rev().collect();
        order.rotate_left((rot % n) as usize);
        let opts = ExecOptions { unit_order: Some(order) };
        prop_assert_eq!(execute(&g, &p, &inputs, &opts).unwrap().outputs, run_gir(&g, &p, &inputs).unwrap());
    }

    #[test]
    fn graph_json_round_trips(seed in any::<u64>()) {
        let p = gpu();
        let g = random_gir(seed, &p);
        prop_assert_eq!(GirGraph::from_json(&g.to_json()).unwrap(), g.clone());
        prop_assert_eq!(validate(&g, &p), validate(&g, &p));
    }

    #[test]
    fn slice_elements_are_exact(num in 1u64..6, width in 1u64..6, gap in 0u64..4, offset in 0u64..8, per in 0u64..40, unit in 0u32..4) {
        let stride = width + gap;
        let s = MemorySlice::new(0, num, width, stride, Base::new(offset, per));
        let size = s.last_address(3) + 1;
        let mut g = GirGraph::new("generic-gpu", ParallelSpec::new(4, 4));
        g.add_object("a", "device", size, gir_fusion::gir::ElementKind::I32);
        let e = g.slice_elements(&s, unit).unwrap();
        prop_assert_eq!(e.len() as u64, num * width);
        let mut d = e.clone();
        d.sort_unstable();
        d.dedup();
        prop_assert_eq!(d.len(), e.len());
        prop_assert!(e.iter().all(|&a| a < size));
    }

    #[test]
    fn pattern_equal_is_an_equivalence(a in (1u64..3, 1u64..3, 1u64..4, 0u64..2), b in (1u64..3, 1u64..3, 1u64..4, 0u64..2), c in (1u64..3, 1u64..3, 1u64..4, 0u64..2)) {
        let mk = |(n, w, s, o): (u64, u64, u64, u64)| MemorySlice::new(0, n, w, w + s - 1, Base::new(o, w));
        let (a, b, c) = (mk(a), mk(b), mk(c));
        prop_assert!(pattern_equal(&a, &a));
        prop_assert_eq!(pattern_equal(&a, &b), pattern_equal(&b, &a));
        if pattern_equal(&a, &b) && pattern_equal(&b, &c) {
            prop_assert!(pattern_equal(&a, &c));
        }
    }
}

#[test]
fn random_graphs_exercise_rewrites() {
    let p = gpu();
    let (mut nodes, mut rewritten, mut elements) = (0, 0, 0u64);
    for seed in 0..200 {
        let g = random_gir(seed, &p);
        nodes += g.nodes.len();
        elements = elements.max(g.objects.iter().map(|o| o.size).max().unwrap_or(0));
        rewritten += usize::from(!optimize(&g, &p).unwrap().1.is_empty());
    }
    assert!(nodes >= 200 * 8, "mean node count too small: {nodes}");
    assert!(rewritten >= 100, "only {rewritten} graphs rewritten");
    assert!(elements <= 4096);
}
