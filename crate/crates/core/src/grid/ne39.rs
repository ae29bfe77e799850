//! Embedded New England 39-bus dataset and the line-outage scenario table.
//!
//! The dataset is the standard 39-bus series data adapted to this model:
//! line charging and transformer taps are dropped (the series-susceptance
//! graph is all the stress math needs), and the two demands that sit on
//! generator buses in the classic tables are folded into their adjacent
//! load buses so the generator/load partition is strict.

use super::GridModel;

const NE39_JSON: &str = include_str!("../../data/ne39.json");

/// The embedded 39-bus model (10 generators on buses 30-39, 29 load-kind
/// buses, 19 demand records).
pub fn ne39() -> GridModel {
    GridModel::from_json_str(NE39_JSON).expect("embedded ne39 dataset is valid")
}

/// Line-outage scenarios G1..G12: single outages (scenario A) then double
/// outages (scenario B).
const SCENARIOS: [&[(usize, usize)]; 12] = [
    &[(2, 3)],
    &[(5, 8)],
    &[(14, 15)],
    &[(4, 14)],
    &[(16, 24)],
    &[(17, 18)],
    &[(2, 3), (5, 8)],
    &[(4, 14), (14, 15)],
    &[(16, 24), (17, 18)],
    &[(14, 15), (16, 24)],
    &[(4, 14), (17, 18)],
    &[(14, 15), (17, 18)],
];

pub const SCENARIO_COUNT: usize = SCENARIOS.len();

/// Lines disconnected by scenario `index` (0-based; 0..=5 single-line,
/// 6..=11 double-line).
pub fn scenario_lines(index: usize) -> &'static [(usize, usize)] {
    SCENARIOS[index]
}
