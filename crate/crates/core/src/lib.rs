//! Model-based clustering of multivariate binary data with mixtures of
//! latent trait analyzers.
//!
//! Each observation belongs to one of `G` groups; within a group the
//! responses are conditionally independent logistic functions of a
//! `D`-dimensional Gaussian trait. `D = 0` is latent class analysis. Fitting
//! maximizes a variational lower bound; final log-likelihoods, expected
//! frequencies and lifts are computed by Gauss–Hermite quadrature.
//!
//! ```
//! use mlta::{fit_mlta, BinaryDataMatrix, FitControl, ModelSpec};
//!
//! let rows: Vec<Vec<u8>> = (0..40u8).map(|i| vec![i % 2, i % 2, (i / 2) % 2]).collect();
//! let data = BinaryDataMatrix::from_rows(rows).unwrap();
//! let fit = fit_mlta(&data, &ModelSpec::free(2, 1), &FitControl::default()).unwrap();
//! assert!(fit.report.loglik_gh <= 0.0);
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod inference;
pub mod lca;
pub mod math;
pub mod model;
pub mod quadrature;

pub use data::{
    encode_categorical, load_matrix, pattern_table, AbCoding, BinaryDataMatrix, CategoricalTable, DataFormat, Pattern,
};
pub use diagnostics::{
    chi_square_test, expected_frequencies, information_criteria, lift_matrix, median_probabilities, standardize_slopes,
    truncated_sspr, ChiSquareTest, FitDiagnostics,
};
pub use error::{MltaError, Result};
pub use inference::{
    aitken_stop, classify_map, grid_search, identifiability_report, jackknife_se, multi_start_fit, simulate,
    GridResult, IdentifiabilityReport, JackknifeOptions, JackknifeReport, MultiStartResult, Simulation,
};
pub use lca::{fit_lca, InitPolicy, LcaFit, LcaParameters};
pub use model::{
    count_params, fit_mlta, fit_mlta_from, FitControl, FitReport, Initialization, MltaFit, MltaParameters, ModelSpec,
    ParametersJson, SlopeMatrix, SlopeMode, Slopes, VariationalState,
};
pub use quadrature::{gauss_hermite, gh_loglik, hermite_rule, mc_loglik, oracle_loglik, tensor_grid, QuadratureRule};
