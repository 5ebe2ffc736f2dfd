//! Textual kernels for the abstract machine (grammar in docs/kernel-language.md).

use std::fmt::Write;

use crate::gir::{BroadcastMode, GOperator, GirGraph, MemorySlice, NodeId, OpKind, ScalarOp};
use crate::profile::HardwareProfile;

use super::alloc::BufferPlan;

fn affine(offset: u64, per_unit: u64) -> String {
    match (offset, per_unit) {
        (o, 0) => o.to_string(),
        (0, p) => format!("{p}*u"),
        (o, p) => format!("{p}*u + {o}"),
    }
}

/// Address of element `var` of `s` for the current unit.
fn address(g: &GirGraph, s: &MemorySlice, var: &str) -> String {
    let base = affine(s.base.offset, s.base.per_unit);
    let base = if base == "0" { String::new() } else { format!("{base} + ") };
    let index = if s.num == 1 || s.width == s.stride {
        var.to_string()
    } else {
        format!("{}*({var} / {}) + {var} % {}", s.stride, s.width, s.width)
    };
    format!("{}[{base}{index}]", g.object(s.object).name)
}

fn scalar(op: ScalarOp, args: &[String]) -> String {
    match op {
        ScalarOp::Add => format!("{} + {}", args[0], args[1]),
        ScalarOp::Sub => format!("{} - {}", args[0], args[1]),
        ScalarOp::Mul => format!("{} * {}", args[0], args[1]),
        ScalarOp::Div => format!("{} / {}", args[0], args[1]),
        ScalarOp::Max => format!("max({}, {})", args[0], args[1]),
        ScalarOp::Min => format!("min({}, {})", args[0], args[1]),
        ScalarOp::Relu => format!("max({}, 0)", args[0]),
        ScalarOp::Neg => format!("-{}", args[0]),
        ScalarOp::Exp => format!("exp({})", args[0]),
        ScalarOp::Sigmoid => format!("sigmoid({})", args[0]),
        ScalarOp::Tanh => format!("tanh({})", args[0]),
        ScalarOp::Copy => args[0].clone(),
        ScalarOp::Scale { factor } => format!("{} * {factor:?}", args[0]),
    }
}

struct Out<'a> {
    text: String,
    lanes: u32,
    g: &'a GirGraph,
}

impl Out<'_> {
    fn line(&mut self, depth: usize, s: &str) {
        let _ = writeln!(self.text, "{}{s}", "  ".repeat(depth));
    }

    /// Opens the per-lane loop over `count` elements; returns body depth.
    fn lane_loop(&mut self, count: u64, note: Option<String>) -> usize {
        let lw = self.lanes as u64;
        let iters = count.div_ceil(lw);
        self.line(1, &format!("for lane l in 0..{lw}"));
        let note = note.map(|n| format!("  # {n}")).unwrap_or_default();
        self.line(2, &format!("for i in 0..{iters}{note}"));
        self.line(3, &format!("k = l + {lw}*i"));
        if !count.is_multiple_of(lw) {
            self.line(3, &format!("if k >= {count}: skip"));
        }
        3
    }

    fn node(&mut self, n: &GOperator) {
        let g = self.g;
        let units = n.active_units(&g.parallel);
        let guard = if units < g.parallel.unit_count {
            format!(" where u < {units}")
        } else {
            String::new()
        };
        match n.op {
            OpKind::Sync { scope } => {
                let objs: Vec<_> = n.outputs.iter().map(|s| g.object(s.object).name.as_str()).collect();
                self.line(1, &format!("barrier({scope}) {}", objs.join(", ")));
            }
            OpKind::Move => {
                let (src, dst) = (&n.inputs[0], &n.outputs[0]);
                self.line(1, &format!("# {} move{guard}", n.id));
                let total = src.total();
                let note = (src.num == 1 || src.width == src.stride)
                    .then(|| format!("read {} elements at stride {}", total.div_ceil(self.lanes as u64), self.lanes));
                let d = self.lane_loop(total, note);
                let stmt = format!("{} = {}", address(g, dst, "k"), address(g, src, "k"));
                self.line(d, &stmt);
            }
            OpKind::ElementWise { op } => {
                self.line(1, &format!("# {} {}{guard}", n.id, op.name()));
                let d = self.lane_loop(n.outputs[0].total(), None);
                let args: Vec<_> = n.inputs.iter().map(|s| address(g, s, "k")).collect();
                let stmt = format!("{} = {}", address(g, &n.outputs[0], "k"), scalar(op, &args));
                self.line(d, &stmt);
            }
            OpKind::Reduce { reduce, extent } => {
                self.line(1, &format!("# {} reduce_{}{guard}", n.id, reduce.name()));
                let d = self.lane_loop(n.outputs[0].total(), None);
                self.line(d, &format!("acc = {:?}", reduce.identity()));
                self.line(d, &format!("for e in 0..{extent}"));
                let x = address(g, &n.inputs[0], "j");
                self.line(d + 1, &format!("j = {extent}*k + e"));
                let combined = scalar(reduce.combiner(), &["acc".into(), x]);
                self.line(d + 1, &format!("acc = {combined}"));
                self.line(d, &format!("{} = acc", address(g, &n.outputs[0], "k")));
            }
            OpKind::Broadcast { factor, mode } => {
                self.line(1, &format!("# {} broadcast_{mode:?}{guard}", n.id).to_lowercase());
                let d = self.lane_loop(n.outputs[0].total(), None);
                let j = match mode {
                    BroadcastMode::Repeat => format!("k / {factor}"),
                    BroadcastMode::Tile => format!("k % {}", n.inputs[0].total()),
                };
                self.line(d, &format!("j = {j}"));
                let stmt = format!("{} = {}", address(g, &n.outputs[0], "k"), address(g, &n.inputs[0], "j"));
                self.line(d, &stmt);
            }
        }
    }
}

/// Kernel source for one graph. Output depends only on the arguments.
pub fn emit_portable(
    name: &str,
    g: &GirGraph,
    schedule: &[NodeId],
    plan: &BufferPlan,
    profile: &HardwareProfile,
) -> String {
    let mut out = Out {
        text: String::new(),
        lanes: profile.lane_width.max(1),
        g,
    };
    let p = g.parallel;
    out.line(0, &format!("kernel {name} units={} group={} lanes={}", p.unit_count, p.group_size, out.lanes));
    out.line(1, &format!("unit_id u in 0..{}", p.unit_count));
    out.line(1, &format!("group_id gid = u / {}", p.group_size));
    out.line(1, &format!("lane_id l in 0..{}", out.lanes));
    for o in &g.objects {
        let role = if g.inputs.contains(&o.id) {
            " input"
        } else if g.outputs.contains(&o.id) {
            " output"
        } else {
            ""
        };
        let placed = plan
            .buffers
            .iter()
            .find(|b| b.object == o.name)
            .map(|b| format!(" @{} x{}", b.offset, b.footprint))
            .unwrap_or_default();
        let kind = format!("{:?}", o.kind).to_lowercase();
        out.line(1, &format!("buffer {} {}[{}] {kind}{placed}{role}", o.name, o.level, o.size));
    }
    for &id in schedule {
        out.node(g.node(id).expect("schedule lists graph nodes"));
    }
    out.line(0, "end");
    out.text
}
