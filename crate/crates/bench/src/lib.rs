//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use mrlod_core::corrector::{FactorCache, Oversampling};
use mrlod_core::fem::{CoefficientField, Discretization, FineSpace, Source};
use mrlod_core::mesh::{BoundaryLayout, Geometry, MeshHierarchy};
use mrlod_core::multires::{assemble_blocks, build_bases, BasisVariant, LevelBlock};
use mrlod_core::transfer::TransferSet;

/// Unit square, all-Robin, unit coefficient.
pub fn fixture(h1: f64, levels: usize, h: f64, kappa: f64) -> (Discretization, TransferSet) {
    let mesh = MeshHierarchy::build(h1, levels, h, Geometry::UnitSquare, BoundaryLayout::all_robin())
        .expect("benchmark hierarchy");
    let space = Arc::new(FineSpace::new(Arc::new(mesh)));
    let coef = CoefficientField::constant(space.cells_per_side(), 1.0).expect("coefficient");
    let transfers = TransferSet::new(&space).expect("transfers");
    (Discretization::new(space, kappa, coef).expect("discretization"), transfers)
}

/// Stabilized level blocks of a small Helmholtz problem.
pub fn level_blocks(h1: f64, levels: usize, h: f64, kappa: f64, m: usize) -> Vec<LevelBlock> {
    let (disc, transfers) = fixture(h1, levels, h, kappa);
    let bases = build_bases(&disc, &transfers, BasisVariant::Stabilized, &[Oversampling::Finite(m)], levels)
        .expect("bases");
    let f = disc.load_vector(&Source::SinCos).expect("load");
    assemble_blocks(&disc, &bases, &f).expect("blocks").blocks
}

/// A fresh cache, so every iteration pays for its factorizations.
pub fn cold_cache() -> FactorCache {
    FactorCache::new()
}
