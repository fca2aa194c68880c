//! Numerical experiments around the testing characteristics.

pub mod aligned;

pub use aligned::{
    accept_delta, accept_delta_in, build_aligned_triple, build_aligned_triple_in, cube_in_sector, in_sector, kernel_difference_report,
    kernel_difference_terms, phi_test_function, AlignedTriple, DifferenceTerms, KernelDifferenceReport, PhiReport,
    SectorConfig,
};
pub mod lower_bound;

pub use lower_bound::{
    a2_lower_bound_experiment, key_identity, triple_absorption_experiment, AbsorptionReport, KeyIdentity, LowerBoundConfig,
    LowerBoundReport, TrialRecord,
};
pub mod halo;
pub mod matrix;
pub mod quadratic;
pub mod search;

pub use halo::{halo_cover, HaloCover};
pub use matrix::{matrix_counterexample, zeta, GrowthRow, MatrixCounterexampleConfig, MatrixReport};
pub use quadratic::{quadratic_ap_experiment, FamilyRecord, QuadraticConfig, QuadraticReport, TermRecord};
pub use search::{counterexample_search, LeaderboardEntry, SearchConfig, SearchReport};
