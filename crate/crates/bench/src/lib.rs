//! Fixtures shared by the solver benchmarks.

use micropolar::verify::{build_mms_case, StudyOptions};
use micropolar::momentum::IterationData;

/// Iteration data of the manufactured duct flow on an `n × n` grid.
pub fn duct_data(n: usize) -> IterationData {
    let case = build_mms_case("duct").expect("shipped case");
    let grid = case.grid(n).expect("valid grid");
    let spec = case.problem(grid, StudyOptions::standard().params).expect("valid problem");
    IterationData::new(spec).expect("consistent data")
}
