//! Registry of scalar operations available to element-wise gOperators.
//!
//! The registry is closed: adding an operation means adding a variant here
//! and filling in its row in [`ScalarOp::info`]. Everything else (the
//! interpreter, swap legality, codegen) reads from that row.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
    Relu,
    Neg,
    Exp,
    Sigmoid,
    Tanh,
    Copy,
    Scale { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReduceKind {
    Sum,
    Max,
}

impl ReduceKind {
    pub fn identity(self) -> f64 {
        match self {
            ReduceKind::Sum => 0.0,
            ReduceKind::Max => f64::NEG_INFINITY,
        }
    }

    pub fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            ReduceKind::Sum => a + b,
            ReduceKind::Max => a.max(b),
        }
    }

    /// The binary element-wise op that combines two partial results.
    pub fn combiner(self) -> ScalarOp {
        match self {
            ReduceKind::Sum => ScalarOp::Add,
            ReduceKind::Max => ScalarOp::Max,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ReduceKind::Sum => "sum",
            ReduceKind::Max => "max",
        }
    }
}

/// Static facts about a scalar op.
#[derive(Debug, Clone, Copy)]
pub struct ScalarOpInfo {
    pub name: &'static str,
    pub arity: usize,
    /// Commutes with a sum reduction: f(Σx) = Σf(x).
    pub distributes_over_sum: bool,
    /// Monotone non-decreasing, so f(max x) = max f(x).
    pub monotone: bool,
}

impl ScalarOp {
    pub fn info(&self) -> ScalarOpInfo {
        let row = |name, arity, distributes_over_sum, monotone| ScalarOpInfo {
            name,
            arity,
            distributes_over_sum,
            monotone,
        };
        match *self {
            ScalarOp::Add => row("add", 2, false, false),
            ScalarOp::Sub => row("sub", 2, false, false),
            ScalarOp::Mul => row("mul", 2, false, false),
            ScalarOp::Div => row("div", 2, false, false),
            ScalarOp::Max => row("max", 2, false, false),
            ScalarOp::Min => row("min", 2, false, false),
            ScalarOp::Relu => row("relu", 1, false, true),
            ScalarOp::Neg => row("neg", 1, true, false),
            ScalarOp::Exp => row("exp", 1, false, true),
            ScalarOp::Sigmoid => row("sigmoid", 1, false, true),
            ScalarOp::Tanh => row("tanh", 1, false, true),
            ScalarOp::Copy => row("copy", 1, true, true),
            ScalarOp::Scale { factor } => row("scale", 1, true, factor >= 0.0),
        }
    }

    pub fn arity(&self) -> usize {
        self.info().arity
    }

    pub fn is_unary(&self) -> bool {
        self.arity() == 1
    }

    pub fn name(&self) -> &'static str {
        self.info().name
    }

    /// Whether applying this op before or after a `kind` reduction gives the
    /// same result.
    pub fn commutes_with(&self, kind: ReduceKind) -> bool {
        let info = self.info();
        info.arity == 1
            && match kind {
                ReduceKind::Sum => info.distributes_over_sum,
                ReduceKind::Max => info.monotone,
            }
    }

    pub fn eval(&self, args: &[f64]) -> f64 {
        match *self {
            ScalarOp::Add => args[0] + args[1],
            ScalarOp::Sub => args[0] - args[1],
            ScalarOp::Mul => args[0] * args[1],
            ScalarOp::Div => args[0] / args[1],
            ScalarOp::Max => args[0].max(args[1]),
            ScalarOp::Min => args[0].min(args[1]),
            ScalarOp::Relu => args[0].max(0.0),
            ScalarOp::Neg => -args[0],
            ScalarOp::Exp => args[0].exp(),
            ScalarOp::Sigmoid => 1.0 / (1.0 + (-args[0]).exp()),
            ScalarOp::Tanh => args[0].tanh(),
            ScalarOp::Copy => args[0],
            ScalarOp::Scale { factor } => args[0] * factor,
        }
    }

    /// Looks up an op by its registry name. `scale` takes its factor separately.
    pub fn from_name(name: &str, factor: Option<f64>) -> Option<ScalarOp> {
        Some(match name {
            "add" => ScalarOp::Add,
            "sub" => ScalarOp::Sub,
            "mul" => ScalarOp::Mul,
            "div" => ScalarOp::Div,
            "max" => ScalarOp::Max,
            "min" => ScalarOp::Min,
            "relu" => ScalarOp::Relu,
            "neg" => ScalarOp::Neg,
            "exp" => ScalarOp::Exp,
            "sigmoid" => ScalarOp::Sigmoid,
            "tanh" => ScalarOp::Tanh,
            "copy" => ScalarOp::Copy,
            "scale" => ScalarOp::Scale {
                factor: factor.unwrap_or(1.0),
            },
            _ => return None,
        })
    }
}
