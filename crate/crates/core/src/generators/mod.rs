//! Instance generators: spatial profiles, finite grids, distribution
//! problems, tournament realizations and random generic problems.

mod distribution;
mod grid;
mod mcgarvey;
mod random;
mod spatial;

pub use distribution::{
    audit_dp_axioms, dtd_problem, gen_distribution, simplex_compositions, AxiomAudit,
    AxiomViolation, DistributionKind, Project, MAX_DISTRIBUTION_POLICIES,
};
pub use grid::{build_grid, Grid, GridSpace};
pub use mcgarvey::{mcgarvey_realize, MCGARVEY_MAX_POLICIES};
pub use random::{random_generic_problem, random_tournament};
pub use spatial::{
    check_noncoplanarity, gen_spatial, sample_point, spatial_problem, spatial_witness,
    CoplanarityReport, CoplanarityViolation, SpatialProfile, WitnessTrace,
};
