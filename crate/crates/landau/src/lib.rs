//! Numerical laboratory for the radially symmetric Landau equation with
//! Coulomb-type interaction, written in self-similar (dynamically rescaled)
//! variables.
//!
//! The crate provides, as composable library pieces:
//!
//! * radial grids with cubic-exact quadrature and parity-aware derivatives
//!   ([`grid`]);
//! * the fourth-antiderivative chain of a radial density via cumulative
//!   moments, i.e. the derivatives of the solution of Delta^2 g = f
//!   ([`biharmonic`]);
//! * collision coefficients for interaction exponents gamma in (-3, -2] and
//!   the quadratic collision operator built from them ([`potentials`],
//!   [`collision`]);
//! * the monotone coercivity weight family rho and the full weight W,
//!   together with a nodewise certificate of the properties the coercivity
//!   argument needs ([`weights`]);
//! * quadratic forms and Rayleigh-quotient experiments for the linearized
//!   operator around the Gaussian steady state, including localized
//!   spectral-gap surrogates ([`spectral`]);
//! * a dynamic-rescaling evolution loop with blowup and relaxation
//!   diagnostics ([`rescaler`]);
//! * a small command-line front end (`landau` binary) plus CSV/JSON writers
//!   for the artifacts the examples produce ([`cli`], [`output`]).
//!
//! The `examples/` directory is the guided tour: each example is a runnable
//! experiment exercising one capability end to end.

pub mod biharmonic;
pub mod cli;
pub mod collision;
pub mod error;
pub mod grid;
pub mod output;
pub mod potentials;
pub mod rescaler;
pub mod spectral;
pub mod weights;

pub use collision::{
    collision_q, l_alpha, linearized_l1, nonlinear_terms, steady_rates, LinearizedPieces,
    MaxwellianCache,
};
pub use error::{Error, Result};
pub use grid::{
    differentiate, differentiate_ho, integrate, moments, GridScheme, MomentTable, Parity,
    RadialField, RadialGrid,
};
pub use spectral::{
    coercivity_form, constrained_gap, energy_functionals, form_jrho, form_jrho2, form_jrho_tilde,
    local_gap_surrogate, CoercivityReport, FormReport, GapDenominator, GapEstimate, Jrho2Report,
    K1_GAP,
};
pub use weights::{
    build_weight_family, energy_e2, gaussian_surrogate, weight_certificate, K1Policy,
    WeightCertificate, WeightFamily, WeightParams,
};
