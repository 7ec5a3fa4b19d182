//! Fit orchestration: stopping rule, restarts, standard errors, labels,
//! simulation, model-selection grids and identifiability checks.

mod aitken;
mod align;
mod classify;
mod grid;
mod identifiability;
mod jackknife;
mod multistart;
mod simulate;

pub use aitken::{aitken_limit, aitken_stop};
pub use align::{align_groups, max_overlap_assignment};
pub use classify::{classify_map, rand_index};
pub use grid::{grid_search, Criterion, GridResult, GridRow};
pub use identifiability::{identifiability_report, IdentifiabilityOptions, IdentifiabilityReport};
pub use jackknife::{jackknife_se, JackknifeOptions, JackknifeReport};
pub use multistart::{multi_start_fit, MultiStartResult, StartOutcome};
pub use simulate::{simulate, Simulation};

pub(crate) use multistart::run_starts;
