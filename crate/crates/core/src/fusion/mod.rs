//! Kernel formation: merging lowered graphs and searching fusion plans.

mod merge;
mod search;

pub use merge::{can_merge, merge_graphs, OpDag};
pub use search::{search_plan, FusedGroup, GroupReport, PlanReport, SearchOptions};
