//! Operator-level models: import, classification and splitting into basic ops.

mod basic;
mod graph;
mod partition;

pub use basic::{eval_basic, split_composite, BasicKind, BasicOp, DataMove};
pub use graph::{
    infer_shapes, invert_perm, permute_shape, Attrs, CompGraph, OpType, Operator, TensorDesc,
    MODEL_SCHEMA, OPERATORS,
};
pub use partition::{
    classify, insert_layout_transposes, op_cost, Item, LibraryCall, OpClass, Partition, Subgraph,
};
