//! Fixtures shared by the benchmarks.

use sobolev_lab::dualnorm::Residual;
use sobolev_lab::experiment::{make_direction, Direction, PerturbedBubble};
use sobolev_lab::{Params, RadialGrid};

/// Calibrated parameters and a grid around the unit-scale bubble.
pub fn fixture(n: usize, p: f64, nodes: usize) -> (Params, RadialGrid) {
    let params = Params::new(n, p).expect("valid benchmark parameters");
    let grid = RadialGrid::for_bubble(&params.exponents(), nodes, 1.0).expect("grid");
    (params, grid)
}

/// Bubble plus `eps` times the branch's default direction.
pub fn perturbed(params: &Params, grid: &RadialGrid, eps: f64) -> PerturbedBubble {
    let b = params.bubble(1.0);
    let dir = make_direction(params, &b, grid, Direction::default_for(params.branch())).expect("direction");
    PerturbedBubble::new(b, &dir, eps)
}

pub fn perturbed_residual(params: &Params, grid: &RadialGrid, eps: f64) -> Residual {
    perturbed(params, grid, eps).residual(params, grid)
}
