//! Executable versions of the analytic tools behind the estimates.

pub mod extrapolation;
pub mod fit;
pub mod gronwall;
pub mod phi;
pub mod taylor;

pub use extrapolation::{lp_to_linf, LinfEstimate};
pub use fit::{fit_line, fitted_order, LineFit};
pub use gronwall::{backward_gronwall, GronwallReport};
pub use phi::{check_phi_properties, phi, InequalityCheck, PhiReport, Potential, PowerPotential, TruncationFamily};
pub use taylor::{check_g_bounds, GBoundsReport, NonlinearitySpec, ScalarFn};
