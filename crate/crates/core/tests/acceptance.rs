mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{exchange_slices, gir_corpus, model, random_buffers, random_gir, random_instance, scope_oracle, MODELS};
use gir_fusion::costmodel::estimate;
use gir_fusion::frontend::{Subgraph, TensorDesc};
use gir_fusion::fusion::{search_plan, SearchOptions};
use gir_fusion::gir::{GirGraph, ParallelSpec};
use gir_fusion::interp::{count_traffic, detect_races, run_gir, run_reference};
use gir_fusion::lowering::{enumerate_candidates, Candidate};
use gir_fusion::pipeline::{compare_outputs, compile, random_inputs, traces, Compiled, CompileOptions};
use gir_fusion::profile::HardwareProfile;
use gir_fusion::rewrite::{determine_sync_scope, insert_sync, optimize};
use sha2::{Digest, Sha256};

struct Ctx {
    p: HardwareProfile,
    compiled: Vec<(String, Compiled, Duration)>,
    girs: Vec<(String, GirGraph)>,
}

type Outcome = (bool, String);
type Criterion = (&'static str, fn(&Ctx) -> Outcome);

fn semantics(cx: &Ctx) -> Outcome {
    let t = Instant::now();
    let mut bad = vec![];
    for seed in 0..200 {
        let g = random_gir(seed, &cx.p);
        let inputs = random_buffers(&g, seed);
        let want = run_gir(&g, &cx.p, &inputs).unwrap();
        let got = run_gir(&optimize(&g, &cx.p).unwrap().0, &cx.p, &inputs).unwrap();
        let same = want.iter().all(|(k, v)| v.iter().map(|x| x.to_bits()).eq(got[k].iter().map(|x| x.to_bits())));
        if !same {
            bad.push(format!("random {seed}"));
        }
    }
    for (name, c, _) in &cx.compiled {
        for seed in 0..3 {
            let inputs = random_inputs(&c.model, seed).unwrap();
            let want = run_reference(&c.model, &inputs).unwrap();
            if let Some(m) = compare_outputs(&want, &c.execute(&cx.p, &inputs).unwrap()) {
                bad.push(format!("{name} seed {seed}: {m}"));
            }
        }
    }
    let t = t.elapsed();
    let ok = bad.is_empty() && t < Duration::from_secs(120);
    (ok, format!("200 random graphs + {} models x 3 seeds, {} mismatches, {t:.1?}", cx.compiled.len(), bad.len()))
}

fn sync_soundness(cx: &Ctx) -> Outcome {
    let (mut racy, mut mutants, mut killed, mut random_survivors) = (0, 0, 0, 0);
    for (name, g) in &cx.girs {
        let s = insert_sync(g, &cx.p).unwrap();
        racy += usize::from(!detect_races(&s, &cx.p).unwrap().is_empty());
        let model_graph = !name.starts_with("random/");
        for n in s.nodes.iter().filter(|n| n.op.is_sync()) {
            let mut m = s.clone();
            m.remove_node(n.id);
            let kill = !detect_races(&m, &cx.p).unwrap().is_empty();
            if model_graph {
                mutants += 1;
                killed += usize::from(kill);
            } else if !kill {
                random_survivors += 1;
            }
        }
    }
    (
        racy == 0 && killed == mutants,
        format!(
            "{racy} racy graphs of {}, corpus kill rate {killed}/{mutants}, random-program survivors {random_survivors} (address-identical streams)",
            cx.girs.len()
        ),
    )
}

fn scope_table(_: &Ctx) -> Outcome {
    let mut pairs = 0;
    let mut mismatches = 0;
    for units in [16, 8, 4] {
        let par = ParallelSpec::new(units, 4);
        for group in exchange_slices(units) {
            for w in &group {
                for r in &group {
                    pairs += 1;
                    mismatches += usize::from(determine_sync_scope(w, r, &par).ok() != scope_oracle(w, r, 64, &par));
                }
            }
        }
    }
    (mismatches == 0, format!("{mismatches} mismatches over {pairs} write/read pairs (16, 8 and 4 units, groups of 4)"))
}

fn traffic(cx: &Ctx) -> Outcome {
    let mut traces = 0;
    let mut non_monotone = 0;
    for (_, c, _) in &cx.compiled {
        for k in &c.kernels {
            traces += 1;
            non_monotone += usize::from(!k.trace.is_monotone());
        }
    }
    for seed in 0..200 {
        traces += 1;
        non_monotone += usize::from(!optimize(&random_gir(seed, &cx.p), &cx.p).unwrap().1.is_monotone());
    }
    let mut chains = vec![];
    let mut ok = non_monotone == 0;
    for k in [2u64, 4, 8] {
        let (_, c, _) = cx.compiled.iter().find(|(n, _, _)| n == &format!("chain_{k}")).unwrap();
        let n = 4096;
        ok &= c.summary.device_traffic == 2 * n && c.summary.device_traffic_unfused == 2 * k * n;
        chains.push(format!("k={k}: {}/{}", c.summary.device_traffic, c.summary.device_traffic_unfused));
    }
    (ok, format!("{non_monotone} non-monotone of {traces} traces; fused/unfused {}", chains.join(", ")))
}

fn shufflenet(cx: &Ctx) -> Outcome {
    let (_, c, _) = cx.compiled.iter().find(|(n, _, _)| n == "shufflenet_fragment").unwrap();
    let s = &c.summary;
    (
        s.fused_kernels == 1 && s.device_traffic == s.kernel_io_elements,
        format!("{} kernel(s), device traffic {}, inputs+outputs {}", s.fused_kernels, s.device_traffic, s.kernel_io_elements),
    )
}

fn cost_model(cx: &Ctx) -> Outcome {
    let mut off = 0;
    for (_, g) in &cx.girs {
        let counted = count_traffic(g, &cx.p, &random_buffers(g, 1)).unwrap();
        let modeled = estimate(g, &cx.p);
        off += usize::from(modeled.traffic != counted || modeled.device_traffic(&cx.p) != counted.get("device").copied().unwrap_or(0));
    }
    (off == 0, format!("{} of {} graphs agree", cx.girs.len() - off, cx.girs.len()))
}

fn search(cx: &Ctx) -> Outcome {
    let beam = SearchOptions { beam_width: 8, exhaustive_cap: 0 };
    let (mut compared, mut worse_than_exhaustive, mut worse_than_none, mut instances) = (0, 0, 0, 0);
    let mut run = |sub: &Subgraph, cands: &[Vec<Candidate>], t: &BTreeMap<String, TensorDesc>| {
        let (_, ex) = search_plan(sub, cands, t, &cx.p, SearchOptions::default()).unwrap();
        let (_, b) = search_plan(sub, cands, t, &cx.p, beam).unwrap();
        instances += 1;
        worse_than_none += usize::from(b.cost > b.no_fusion_cost * (1.0 + 1e-9));
        if ex.strategy == "exhaustive" {
            compared += 1;
            worse_than_exhaustive += usize::from(b.cost > ex.cost * (1.0 + 1e-9));
        }
    };
    for (_, c, _) in &cx.compiled {
        for sub in &c.partition.gir_subgraphs {
            let cands: Vec<Vec<Candidate>> =
                sub.ops.iter().map(|o| enumerate_candidates(o, &c.partition.tensors, &cx.p).unwrap()).collect();
            run(sub, &cands, &c.partition.tensors);
        }
    }
    for seed in 0..60 {
        let (sub, t) = random_instance(seed);
        let cands: Vec<Vec<Candidate>> = sub.ops.iter().map(|o| enumerate_candidates(o, &t, &cx.p).unwrap()).collect();
        run(&sub, &cands, &t);
    }
    (
        worse_than_exhaustive == 0 && worse_than_none == 0 && compared > 0,
        format!(
            "beam worse than exhaustive on {worse_than_exhaustive} of {compared} instances with <=4096 plans; worse than no fusion on {worse_than_none} of {instances}"
        ),
    )
}

fn termination(cx: &Ctx) -> Outcome {
    let mut over = 0;
    let mut graphs = 0;
    for (_, c, _) in &cx.compiled {
        for k in &c.kernels {
            graphs += 1;
            let n = k.group.merged.nodes.len();
            over += usize::from(k.trace.len() > n * n);
        }
    }
    for seed in 0..200 {
        let g = random_gir(seed, &cx.p);
        graphs += 1;
        over += usize::from(optimize(&g, &cx.p).unwrap().1.len() > g.nodes.len() * g.nodes.len());
    }
    let twenty = cx.compiled.iter().find(|(n, _, _)| n == "twenty_ops").unwrap().2;
    (
        over == 0 && twenty < Duration::from_secs(10),
        format!("{over} of {graphs} rewrites over the nodes^2 budget; twenty_ops compiled in {twenty:.2?}"),
    )
}

fn artifact_digest(c: &Compiled, p: &HardwareProfile) -> String {
    let mut h = Sha256::new();
    let mut files: BTreeMap<String, String> = BTreeMap::new();
    for k in &c.kernels {
        files.insert(format!("{}.kernel", k.kernel.name), k.kernel.source.clone());
        files.insert(format!("{}.gir.json", k.kernel.name), k.kernel.graph.to_json());
    }
    for (name, t) in traces(c) {
        files.insert(format!("traces/{name}.json"), t);
    }
    files.insert("manifest.json".into(), c.manifest_json(p));
    files.insert("plan.json".into(), c.plan_json());
    files.insert("summary.json".into(), c.summary_json());
    for (name, text) in &files {
        h.update(name.as_bytes());
        h.update([0]);
        h.update(text.as_bytes());
        h.update([0]);
    }
    format!("{:x}", h.finalize())
}

fn determinism(cx: &Ctx) -> Outcome {
    let mut differ = vec![];
    for (name, c, _) in &cx.compiled {
        let again = compile(&model(name), &cx.p, &CompileOptions::default()).unwrap();
        if artifact_digest(c, &cx.p) != artifact_digest(&again, &cx.p) {
            differ.push(name.clone());
        }
    }
    let note = if differ.is_empty() { String::new() } else { format!(", differing: {differ:?}") };
    let same = cx.compiled.len() - differ.len();
    (differ.is_empty(), format!("{same} of {} models hash identically across two compiles{note}", cx.compiled.len()))
}

fn main() -> ExitCode {
    let p = HardwareProfile::generic_gpu();
    let compiled = MODELS
        .iter()
        .map(|name| {
            let t = Instant::now();
            let c = compile(&model(name), &p, &CompileOptions::default()).unwrap();
            (name.to_string(), c, t.elapsed())
        })
        .collect();
    let girs = gir_corpus(&p);
    let cx = Ctx { p, compiled, girs };
    let criteria: [Criterion; 9] = [
        ("semantic preservation", semantics),
        ("sync soundness", sync_soundness),
        ("scope table", scope_table),
        ("traffic monotonicity and fusion payoff", traffic),
        ("shufflenet single kernel", shufflenet),
        ("cost model agrees with interpreter", cost_model),
        ("search quality", search),
        ("termination and speed", termination),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (ok, detail) = f(&cx);
        failed += usize::from(!ok);
        println!("criterion {} {} {name}: {detail}", i + 1, if ok { "PASS" } else { "FAIL" });
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
