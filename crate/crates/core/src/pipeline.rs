//! End-to-end driver: model in, kernels and reports out.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::codegen::{build_kernel, Kernel, KernelEntry, MANIFEST_SCHEMA};
use crate::costmodel::estimate;
use crate::error::{Error, Result};
use crate::frontend::{classify, insert_layout_transposes, CompGraph, Item, LibraryCall, Partition};
use crate::fusion::{search_plan, FusedGroup, PlanReport, SearchOptions};
use crate::gir::{validate, GirGraph};
use crate::interp::{count_traffic, detect_races, run_gir, run_reference, Buffers, Tensor, TensorMap};
use crate::lowering::enumerate_candidates;
use crate::profile::HardwareProfile;
use crate::rewrite::{optimize_with, OptimizeOptions, RewriteTrace};

#[derive(Debug, Clone, Copy, Default)]
pub struct CompileOptions {
    pub search: SearchOptions,
    /// FLOPs per element above which an operator goes to a library.
    pub balance_threshold: Option<f64>,
    /// Keep a graph snapshot after every rewrite in the traces.
    pub dump_rewrites: bool,
}

#[derive(Debug, Clone)]
pub struct CompiledKernel {
    pub subgraph: usize,
    pub group: FusedGroup,
    pub trace: RewriteTrace,
    pub kernel: Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Library(usize),
    Kernel(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub model: String,
    pub profile: String,
    pub operators: usize,
    pub library_calls: usize,
    pub basic_ops: usize,
    pub fused_kernels: usize,
    /// Device traffic of the chosen lowerings run one kernel per operator.
    pub device_traffic_unfused: u64,
    pub device_traffic: u64,
    /// Elements of every kernel's external inputs and outputs.
    pub kernel_io_elements: u64,
    pub modeled_time: f64,
}

#[derive(Debug, Clone)]
pub struct Compiled {
    pub model: CompGraph,
    pub partition: Partition,
    pub kernels: Vec<CompiledKernel>,
    pub steps: Vec<Step>,
    pub plans: Vec<PlanReport>,
    pub summary: Summary,
}

pub fn compile(model: &CompGraph, profile: &HardwareProfile, opts: &CompileOptions) -> Result<Compiled> {
    model.check()?;
    let partition = insert_layout_transposes(&classify(model, profile, opts.balance_threshold)?)?;
    let mut kernels = Vec::new();
    let mut steps = Vec::new();
    let mut plans = Vec::new();
    let mut unfused = 0;
    for item in partition.schedule()? {
        let si = match item {
            Item::Library(i) => {
                steps.push(Step::Library(i));
                continue;
            }
            Item::Subgraph(i) => i,
        };
        let sub = &partition.gir_subgraphs[si];
        let cands = sub
            .ops
            .iter()
            .map(|op| enumerate_candidates(op, &partition.tensors, profile))
            .collect::<Result<Vec<_>>>()?;
        let (groups, report) = search_plan(sub, &cands, &partition.tensors, profile, opts.search)?;
        plans.push(report);
        for group in groups {
            for (&op, id) in group.ops.iter().zip(&group.candidates) {
                let c = cands[op].iter().find(|c| &c.id == id).expect("chosen candidate exists");
                unfused += estimate(&c.graph, profile).device_traffic(profile);
            }
            let trace = if opts.dump_rewrites {
                optimize_with(&group.merged, profile, OptimizeOptions { dump_graphs: true })?.1
            } else {
                group.trace.clone()
            };
            let name = format!("k{}", kernels.len());
            let kernel = build_kernel(&name, &group.graph, profile)?;
            steps.push(Step::Kernel(kernels.len()));
            kernels.push(CompiledKernel {
                subgraph: si,
                group,
                trace,
                kernel,
            });
        }
    }
    let io = |g: &GirGraph| -> u64 { g.inputs.iter().chain(&g.outputs).map(|&o| g.object(o).size).sum() };
    let summary = Summary {
        model: model.name.clone(),
        profile: profile.name.clone(),
        operators: model.operators.len(),
        library_calls: partition.library_calls.len(),
        basic_ops: partition.basic_ops().count(),
        fused_kernels: kernels.len(),
        device_traffic_unfused: unfused,
        device_traffic: kernels.iter().map(|k| k.group.estimate.device_traffic(profile)).sum(),
        kernel_io_elements: kernels.iter().map(|k| io(&k.kernel.graph)).sum(),
        modeled_time: kernels.iter().map(|k| k.group.estimate.time).fold(0.0, |a, t| a + t),
    };
    Ok(Compiled {
        model: model.clone(),
        partition,
        kernels,
        steps,
        plans,
        summary,
    })
}

#[derive(Serialize)]
#[serde(rename_all = "snake_case")]
enum ManifestStep<'a> {
    Library(&'a LibraryCall),
    Kernel(&'a str),
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema: &'static str,
    model: &'a str,
    profile: &'a str,
    inputs: &'a [String],
    outputs: &'a [String],
    steps: Vec<ManifestStep<'a>>,
    kernels: Vec<KernelEntry>,
}

impl Compiled {
    pub fn manifest_json(&self, profile: &HardwareProfile) -> String {
        let m = Manifest {
            schema: MANIFEST_SCHEMA,
            model: &self.model.name,
            profile: &profile.name,
            inputs: &self.model.inputs,
            outputs: &self.model.outputs,
            steps: self
                .steps
                .iter()
                .map(|s| match *s {
                    Step::Library(i) => ManifestStep::Library(&self.partition.library_calls[i]),
                    Step::Kernel(k) => ManifestStep::Kernel(&self.kernels[k].kernel.name),
                })
                .collect(),
            kernels: self.kernels.iter().map(|k| KernelEntry::new(&k.kernel, profile)).collect(),
        };
        serde_json::to_string_pretty(&m).expect("manifest serializes")
    }

    pub fn plan_json(&self) -> String {
        serde_json::to_string_pretty(&self.plans).expect("plan serializes")
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }

    /// Runs library calls through the reference and kernels through the
    /// GIR interpreter, returning the model outputs.
    pub fn execute(&self, profile: &HardwareProfile, inputs: &TensorMap) -> Result<TensorMap> {
        let tensors = &self.partition.tensors;
        let mut env = inputs.clone();
        for step in &self.steps {
            match *step {
                Step::Library(i) => self.partition.library_calls[i].execute(&mut env, tensors)?,
                Step::Kernel(k) => {
                    let g = &self.kernels[k].kernel.graph;
                    let mut bufs = Buffers::new();
                    for &o in &g.inputs {
                        let name = &g.object(o).name;
                        let t = env
                            .get(name)
                            .ok_or_else(|| Error::Execution(format!("tensor `{name}` not computed")))?;
                        bufs.insert(name.clone(), t.data.clone());
                    }
                    for (name, data) in run_gir(g, profile, &bufs)? {
                        let d = tensors
                            .get(&name)
                            .ok_or_else(|| Error::Execution(format!("kernel output `{name}` has no description")))?;
                        env.insert(name, Tensor::new(d.shape.clone(), d.kind, data)?);
                    }
                }
            }
        }
        self.model
            .outputs
            .iter()
            .map(|t| {
                env.remove(t)
                    .map(|v| (t.clone(), v))
                    .ok_or_else(|| Error::Execution(format!("output `{t}` not computed")))
            })
            .collect()
    }
}

/// Seeded inputs: small integers for integer tensors, values in [-1, 1) otherwise.
pub fn random_inputs(model: &CompGraph, seed: u64) -> Result<TensorMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = TensorMap::new();
    for name in &model.inputs {
        let d = model.tensor(name)?;
        let data = (0..d.elements())
            .map(|_| {
                if d.kind.is_integer() {
                    rng.gen_range(-8i32..=8) as f64
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect();
        out.insert(name.clone(), Tensor::new(d.shape.clone(), d.kind, data)?);
    }
    Ok(out)
}

pub const REAL_TOLERANCE: f64 = 1e-5;

/// First mismatch between two output sets: exact for integer tensors,
/// relative tolerance for reals.
pub fn compare_outputs(expected: &TensorMap, actual: &TensorMap) -> Option<String> {
    for (name, e) in expected {
        let Some(a) = actual.get(name) else {
            return Some(format!("output `{name}` missing"));
        };
        if a.shape != e.shape {
            return Some(format!("output `{name}` has shape {:?}, expected {:?}", a.shape, e.shape));
        }
        for (i, (&x, &y)) in a.data.iter().zip(&e.data).enumerate() {
            let same = if e.kind.is_integer() {
                x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan())
            } else {
                (x - y).abs() <= REAL_TOLERANCE * y.abs().max(1.0) || (x.is_nan() && y.is_nan())
            };
            if !same {
                return Some(format!("output `{name}`[{i}] = {x}, expected {y}"));
            }
        }
    }
    None
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub model: String,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Differential execution, race detection, traffic reconciliation and
/// structural validation of a compiled model.
pub fn verify(c: &Compiled, profile: &HardwareProfile, seed: u64) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let mut check = |name: &str, failure: Option<String>| {
        checks.push(Check {
            name: name.to_string(),
            passed: failure.is_none(),
            detail: failure.unwrap_or_else(|| "ok".into()),
        })
    };

    let mut invalid = None;
    for k in &c.kernels {
        if let Some(d) = validate(&k.kernel.graph, profile).first() {
            invalid = Some(format!("{}: {} ({})", k.kernel.name, d.message, d.invariant));
            break;
        }
    }
    check("validate", invalid);

    let inputs = random_inputs(&c.model, seed)?;
    let expected = run_reference(&c.model, &inputs)?;
    let differential = match c.execute(profile, &inputs) {
        Ok(actual) => compare_outputs(&expected, &actual),
        Err(e) => Some(e.to_string()),
    };
    check("differential", differential);

    let mut races = None;
    for k in &c.kernels {
        let found = detect_races(&k.kernel.graph, profile)?;
        if let Some(r) = found.first() {
            races = Some(format!(
                "{}: {} race on {}[{}] between nodes {} and {} ({} found)",
                k.kernel.name,
                r.kind,
                r.object,
                r.address,
                r.nodes.0,
                r.nodes.1,
                found.len()
            ));
            break;
        }
    }
    check("races", races);

    let mut traffic = None;
    for k in &c.kernels {
        let g = &k.kernel.graph;
        let bufs: Buffers = g
            .inputs
            .iter()
            .map(|&o| (g.object(o).name.clone(), vec![1.0; g.object(o).size as usize]))
            .collect();
        let counted = count_traffic(g, profile, &bufs);
        let modeled = estimate(g, profile).traffic;
        let mismatch = match counted {
            Ok(t) if t == modeled => None,
            Ok(t) => Some(format!("{}: modeled {modeled:?}, counted {t:?}", k.kernel.name)),
            Err(e) => Some(format!("{}: {e}", k.kernel.name)),
        };
        if mismatch.is_some() {
            traffic = mismatch;
            break;
        }
    }
    check("traffic", traffic);

    Ok(VerifyReport {
        model: c.model.name.clone(),
        seed,
        checks,
    })
}

/// Per-kernel JSON dumps of the rewrite traces, keyed by kernel name.
pub fn traces(c: &Compiled) -> BTreeMap<String, String> {
    c.kernels.iter().map(|k| (k.kernel.name.clone(), k.trace.to_json())).collect()
}
