//! Choice of one lowering per operator and of the kernels they share.
//!
//! Operators are placed in topological order. Each placement picks a
//! candidate and either opens a new group or joins an existing one with the
//! same parallel structure that it touches. The frontier keeps the best
//! `beam_width` partial plans, ranked by the cost of their groups so far
//! plus a device-traffic bound on what is left; when the whole plan space
//! is at most `exhaustive_cap` it keeps everything.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::Serialize;

use crate::codegen::{allocate, reorder, Allocation};
use crate::costmodel::{estimate, lower_bound, traffic_bytes, CostEstimate};
use crate::error::{Error, Result};
use crate::frontend::{Subgraph, TensorDesc};
use crate::gir::{GirGraph, ParallelSpec};
use crate::lowering::Candidate;
use crate::profile::{HardwareProfile, SyncScope};
use crate::rewrite::{optimize, RewriteTrace};

use super::merge::{merge_graphs, OpDag};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    pub beam_width: usize,
    /// Largest plan space searched without pruning.
    pub exhaustive_cap: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            beam_width: 8,
            exhaustive_cap: 4096,
        }
    }
}

/// One kernel of the chosen plan.
#[derive(Debug, Clone)]
pub struct FusedGroup {
    /// Indices into the subgraph's op list, ascending.
    pub ops: Vec<usize>,
    pub candidates: Vec<String>,
    /// Merged graph before rewriting.
    pub merged: GirGraph,
    pub graph: GirGraph,
    pub trace: RewriteTrace,
    pub estimate: CostEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub ops: Vec<String>,
    pub candidates: Vec<String>,
    pub units: u32,
    pub traffic_elements: BTreeMap<String, u64>,
    pub traffic_bytes: BTreeMap<String, u64>,
    pub sync_count: BTreeMap<SyncScope, u64>,
    pub time: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanReport {
    pub strategy: &'static str,
    /// Size of the plan space, or `None` when it exceeds the exhaustive cap.
    pub plan_space: Option<u64>,
    pub cost: f64,
    pub no_fusion_cost: f64,
    pub groups: Vec<GroupReport>,
}

struct Evaluated {
    merged: GirGraph,
    graph: GirGraph,
    trace: RewriteTrace,
    estimate: CostEstimate,
}

type Key = Vec<(usize, usize)>;

struct Ctx<'a> {
    sub: &'a Subgraph,
    dag: OpDag,
    cands: &'a [Vec<Candidate>],
    profile: &'a HardwareProfile,
    tensors: &'a BTreeMap<String, TensorDesc>,
    /// Candidates that compile on their own, per op.
    viable: Vec<Vec<usize>>,
    memo: Mutex<HashMap<Key, Result<Arc<Evaluated>>>>,
}

#[derive(Debug, Clone)]
struct State {
    choice: Vec<usize>,
    group_of: Vec<usize>,
    groups: Vec<Vec<usize>>,
    cost: f64,
}

impl State {
    fn key(&self, g: usize) -> Key {
        self.groups[g].iter().map(|&o| (o, self.choice[o])).collect()
    }
}

impl<'a> Ctx<'a> {
    fn parallel(&self, op: usize, c: usize) -> ParallelSpec {
        self.cands[op][c].graph.parallel
    }

    /// Tensors produced inside `group` that something outside still reads.
    fn keep(&self, group: &[usize]) -> BTreeSet<String> {
        let mut keep: BTreeSet<String> = self.sub.outputs.iter().cloned().collect();
        for o in 0..self.dag.len() {
            if !group.contains(&o) {
                keep.extend(self.dag.inputs[o].iter().cloned());
            }
        }
        keep
    }

    fn evaluate(&self, key: &Key) -> Result<Arc<Evaluated>> {
        if let Some(r) = self.memo.lock().unwrap().get(key) {
            return r.clone();
        }
        let r = self.evaluate_uncached(key).map(Arc::new);
        self.memo.lock().unwrap().insert(key.clone(), r.clone());
        r
    }

    fn evaluate_uncached(&self, key: &Key) -> Result<Evaluated> {
        let ops: Vec<usize> = key.iter().map(|k| k.0).collect();
        let final_keep = self.keep(&ops);
        let mut g = self.cands[key[0].0][key[0].1].graph.clone();
        for (i, &(op, c)) in key.iter().enumerate().skip(1) {
            let mut keep = final_keep.clone();
            for &(later, _) in &key[i + 1..] {
                keep.extend(self.dag.inputs[later].iter().cloned());
            }
            g = merge_graphs(&g, &self.cands[op][c].graph, &keep)?;
        }
        let merged = g;
        let (graph, trace) = optimize(&merged, self.profile)?;
        let schedule = reorder(&graph, self.profile)?;
        if let Allocation::Exceeded { level, needed, capacity } = allocate(&graph, &schedule, self.profile)? {
            return Err(Error::Allocation {
                object: "<live set>".into(),
                level,
                needed,
                capacity,
            });
        }
        let estimate = estimate(&graph, self.profile);
        Ok(Evaluated {
            merged,
            graph,
            trace,
            estimate,
        })
    }

    /// Placements of op `i` into `s`: (candidate, group or new).
    fn moves(&self, s: &State, i: usize) -> Vec<(usize, Option<usize>)> {
        let mut out = Vec::new();
        for &c in &self.viable[i] {
            out.push((c, None));
            for (gi, members) in s.groups.iter().enumerate() {
                let p = self.parallel(i, c);
                if members.iter().all(|&m| self.parallel(m, s.choice[m]) == p)
                    && members.iter().any(|&m| self.dag.adjacent(m, i))
                    && self.acyclic(s, i, gi)
                {
                    out.push((c, Some(gi)));
                }
            }
        }
        out
    }

    /// Whether the group quotient stays acyclic when op `i` joins group `gi`.
    fn acyclic(&self, s: &State, i: usize, gi: usize) -> bool {
        let n = s.groups.len();
        let group = |o: usize| if o == i { gi } else { s.group_of[o] };
        let mut succ = vec![BTreeSet::new(); n];
        for b in 0..=i {
            for a in 0..b {
                if self.dag.edge(a, b) && group(a) != group(b) {
                    succ[group(a)].insert(group(b));
                }
            }
        }
        // Kahn's algorithm on the quotient.
        let mut indeg = vec![0; n];
        for s in &succ {
            for &t in s {
                indeg[t] += 1;
            }
        }
        let mut ready: Vec<usize> = (0..n).filter(|&g| indeg[g] == 0).collect();
        let mut seen = 0;
        while let Some(g) = ready.pop() {
            seen += 1;
            for &t in &succ[g] {
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    ready.push(t);
                }
            }
        }
        seen == n
    }

    /// What later steps can observe of a state: the grouping, each group's
    /// unit count and the candidates of ops that still touch unplaced ops.
    fn signature(&self, s: &State) -> (Vec<usize>, Vec<u32>, Vec<Option<usize>>) {
        let units = s.groups.iter().map(|g| self.cands[g[0]][s.choice[g[0]]].units).collect();
        let placed = s.choice.len();
        let open = (0..placed)
            .map(|o| (placed..self.dag.len()).any(|j| self.dag.adjacent(o, j)).then_some(s.choice[o]))
            .collect();
        (s.group_of.clone(), units, open)
    }

    /// Takes up to `width` of the sorted states. States that look the same
    /// to later steps are dropped, and among equal-cost states the one whose
    /// choices were picked least often so far goes first.
    fn select(&self, sorted: Vec<(f64, usize, State)>, width: usize) -> Vec<(f64, usize, State)> {
        let mut seen = HashSet::new();
        let mut rest: Vec<(f64, usize, State)> = sorted.into_iter().filter(|(_, _, s)| seen.insert(self.signature(s))).collect();
        let mut picked = Vec::new();
        let mut uses: HashMap<(usize, usize), usize> = HashMap::new();
        let mut start = 0;
        while picked.len() < width && start < rest.len() {
            let cost = rest[start].0;
            let tier = rest[start..].iter().take_while(|t| t.0 - cost <= 1e-9 * cost.abs().max(1.0)).count();
            let score = |s: &State| -> usize { s.choice.iter().enumerate().map(|(o, &c)| uses.get(&(o, c)).copied().unwrap_or(0)).sum() };
            let best = (start..start + tier).min_by_key(|&k| (score(&rest[k].2), k)).unwrap();
            rest.swap(start, best);
            rest[start + 1..start + tier].sort_by_key(|t| t.1);
            for (o, &c) in rest[start].2.choice.iter().enumerate() {
                *uses.entry((o, c)).or_default() += 1;
            }
            picked.push(rest[start].clone());
            start += 1;
        }
        picked
    }

    fn apply(&self, s: &State, i: usize, c: usize, target: Option<usize>) -> State {
        let mut t = s.clone();
        t.choice.push(c);
        match target {
            Some(gi) => {
                t.groups[gi].push(i);
                t.group_of.push(gi);
            }
            None => {
                t.group_of.push(t.groups.len());
                t.groups.push(vec![i]);
            }
        }
        t
    }

    /// Groups in an order that respects every data edge; lowest first op wins ties.
    fn kernel_order(&self, s: &State) -> Vec<usize> {
        let n = s.groups.len();
        let mut indeg = vec![0; n];
        let mut succ = vec![BTreeSet::new(); n];
        for b in 0..self.dag.len() {
            for a in 0..b {
                let (ga, gb) = (s.group_of[a], s.group_of[b]);
                if ga != gb && self.dag.edge(a, b) && succ[ga].insert(gb) {
                    indeg[gb] += 1;
                }
            }
        }
        let mut ready: BTreeSet<(usize, usize)> =
            (0..n).filter(|&g| indeg[g] == 0).map(|g| (s.groups[g][0], g)).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(first) = ready.pop_first() {
            order.push(first.1);
            for &t in &succ[first.1] {
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    ready.insert((s.groups[t][0], t));
                }
            }
        }
        order
    }

    /// Counts complete plans, stopping once the count passes `cap`.
    fn plan_space(&self, cap: u64) -> Option<u64> {
        fn walk(ctx: &Ctx, s: &State, i: usize, cap: u64, acc: &mut u64) -> bool {
            if i == ctx.dag.len() {
                *acc += 1;
                return *acc <= cap;
            }
            for (c, t) in ctx.moves(s, i) {
                if !walk(ctx, &ctx.apply(s, i, c, t), i + 1, cap, acc) {
                    return false;
                }
            }
            true
        }
        let mut acc = 0;
        walk(self, &State::empty(), 0, cap, &mut acc).then_some(acc)
    }

    /// Device-traffic bound for the boundary tensors only unplaced ops touch.
    fn remaining_bound(&self, placed: usize) -> f64 {
        let boundary: BTreeSet<&String> = self.sub.inputs.iter().chain(&self.sub.outputs).collect();
        let touched = |ops: std::ops::Range<usize>| -> BTreeSet<&String> {
            ops.flat_map(|o| self.dag.inputs[o].iter().chain(&self.dag.outputs[o]))
                .filter(|t| boundary.contains(t))
                .collect()
        };
        let before = touched(0..placed);
        let elements: u64 = touched(placed..self.dag.len())
            .difference(&before)
            .map(|t| self.tensors.get(*t).map_or(0, |d| d.elements() as u64))
            .sum();
        lower_bound(elements, self.profile)
    }
}

impl State {
    fn empty() -> Self {
        State {
            choice: Vec::new(),
            group_of: Vec::new(),
            groups: Vec::new(),
            cost: 0.0,
        }
    }
}

/// Picks candidates and fusion groups for one partition subgraph.
pub fn search_plan(
    sub: &Subgraph,
    cands: &[Vec<Candidate>],
    tensors: &BTreeMap<String, TensorDesc>,
    profile: &HardwareProfile,
    opts: SearchOptions,
) -> Result<(Vec<FusedGroup>, PlanReport)> {
    if cands.len() != sub.ops.len() || cands.iter().any(|c| c.is_empty()) {
        return Err(Error::Lowering("every operator needs at least one candidate".into()));
    }
    let dag = OpDag::new(sub.ops.iter().map(|o| (o.inputs.clone(), o.outputs.clone())).collect());
    let ctx = Ctx {
        sub,
        dag,
        cands,
        profile,
        tensors,
        viable: Vec::new(),
        memo: Mutex::new(HashMap::new()),
    };
    // Fallback plan: every op alone with its cheapest feasible candidate.
    // Candidates that fail alone are dropped from the search.
    let mut ctx = ctx;
    let mut alone = State::empty();
    for (i, op_cands) in cands.iter().enumerate() {
        let costs: Vec<Result<f64>> = (0..op_cands.len())
            .into_par_iter()
            .map(|c| ctx.evaluate(&vec![(i, c)]).map(|e| e.estimate.time))
            .collect();
        let mut best: Option<(f64, usize)> = None;
        let mut first_err = None;
        let mut viable = Vec::new();
        for (c, r) in costs.into_iter().enumerate() {
            match r {
                Ok(t) => {
                    viable.push(c);
                    if best.is_none_or(|(b, _)| t < b) {
                        best = Some((t, c));
                    }
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        let Some((t, c)) = best else {
            return Err(first_err.unwrap());
        };
        ctx.viable.push(viable);
        alone = ctx.apply(&alone, i, c, None);
        alone.cost += t;
    }
    let space = ctx.plan_space(opts.exhaustive_cap);
    let width = if space.is_some() { usize::MAX } else { opts.beam_width.max(1) };

    let mut frontier = vec![State::empty()];
    for i in 0..sub.ops.len() {
        let expansions: Vec<State> = frontier
            .iter()
            .flat_map(|s| {
                let ctx = &ctx;
                ctx.moves(s, i).into_iter().map(move |(c, t)| ctx.apply(s, i, c, t))
            })
            .collect();
        let scored: Vec<Option<State>> = expansions
            .into_par_iter()
            .map(|mut s| {
                let gi = s.group_of[i];
                let before = if s.groups[gi].len() > 1 {
                    let mut prev = s.clone();
                    prev.groups[gi].pop();
                    ctx.evaluate(&prev.key(gi)).ok()?.estimate.time
                } else {
                    0.0
                };
                let after = ctx.evaluate(&s.key(gi)).ok()?.estimate.time;
                s.cost += after - before;
                Some(s)
            })
            .collect();
        let bound = ctx.remaining_bound(i + 1);
        let mut next: Vec<(f64, usize, State)> = scored
            .into_iter()
            .flatten()
            .enumerate()
            .map(|(k, s)| (s.cost + bound, k, s))
            .collect();
        next.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let next = if width == usize::MAX { next } else { ctx.select(next, width) };
        frontier = next.into_iter().map(|(_, _, s)| s).collect();
        if frontier.is_empty() {
            break;
        }
    }
    let total = |s: &State| -> Result<f64> {
        (0..s.groups.len()).map(|gi| Ok(ctx.evaluate(&s.key(gi))?.estimate.time)).sum()
    };
    alone.cost = total(&alone)?;
    let best = match frontier.into_iter().next() {
        Some(mut s) => {
            s.cost = total(&s)?;
            if s.cost <= alone.cost {
                s
            } else {
                alone.clone()
            }
        }
        None => alone.clone(),
    };

    let mut groups = Vec::new();
    let mut reports = Vec::new();
    for gi in ctx.kernel_order(&best) {
        let key = best.key(gi);
        let e = ctx.evaluate(&key)?;
        let ops: Vec<usize> = key.iter().map(|k| k.0).collect();
        let ids: Vec<String> = key.iter().map(|&(o, c)| cands[o][c].id.clone()).collect();
        reports.push(GroupReport {
            ops: ops.iter().map(|&o| format!("{} ({})", sub.ops[o].origin, sub.ops[o].kind.label())).collect(),
            candidates: ids.clone(),
            units: e.graph.parallel.unit_count,
            traffic_elements: e.estimate.traffic.clone(),
            traffic_bytes: traffic_bytes(&e.graph),
            sync_count: e.estimate.sync_count.clone(),
            time: e.estimate.time,
        });
        groups.push(FusedGroup {
            ops,
            candidates: ids,
            merged: e.merged.clone(),
            graph: e.graph.clone(),
            trace: e.trace.clone(),
            estimate: e.estimate.clone(),
        });
    }
    let report = PlanReport {
        strategy: if space.is_some() { "exhaustive" } else { "beam" },
        plan_space: space,
        cost: best.cost,
        no_fusion_cost: alone.cost,
        groups: reports,
    };
    Ok((groups, report))
}
