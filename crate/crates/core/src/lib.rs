//! Projective averages and contrasts of district-level statistics over
//! redistricting ensembles, with pFDR-controlled selection of the precincts
//! where a plan departs from its ensemble.
//!
//! The pipeline is: load a [`PrecinctMap`] and an [`Ensemble`], compile a
//! [`Statistic`], then project with [`projection`] or test with
//! [`inference`]. [`fixtures`] builds synthetic grids and ensembles with known
//! answers.

pub mod error;
pub mod fixtures;
pub mod inference;
pub mod io;
pub mod model;
pub mod projection;
pub mod render;
pub mod stats;

pub use error::{Error, Result};
pub use inference::{
    fwer_validation, lineup, null_pvalue_matrix, precinct_pvalues, st_procedure, GammaGrid, ProjectiveDistribution,
    SelectionResult, Sidedness, StAnalysis,
};
pub use io::{load_ensemble, load_map};
pub use model::{validate_plan, Ensemble, Label, Plan, PlanRef, PrecinctField, PrecinctMap};
pub use projection::{
    aggregate_field, normalized_contrast, project, projective_average, projective_contrast, ProjectionSummary,
};
pub use stats::{district_summary, order_statistics, DistrictValues, Statistic, StatisticSpec};
