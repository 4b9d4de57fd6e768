//! Shared inputs for the benches.

use netimpute::geomatch::{directionalize_and_halve, DirectedSegment};
use netimpute::synth::{make_random_fixture, RandomFixture};

/// Edge counts the size sweeps run over.
pub const SIZES: [usize; 4] = [250, 500, 1000, 2000];

pub fn fixture(n_edges: usize) -> RandomFixture {
    make_random_fixture(n_edges, 0.1, 42).expect("fixture")
}

/// The fixture plus its dense inventory, already directionalized.
pub fn matching_inputs(n_edges: usize) -> (RandomFixture, Vec<DirectedSegment>) {
    let f = fixture(n_edges);
    let dense = directionalize_and_halve(&f.synthetic_inputs().dense).expect("dense");
    (f, dense)
}
