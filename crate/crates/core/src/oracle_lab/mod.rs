//! Exact computations on small finite-support laws of `(X, Z, R, Y)`.

mod empirical;
mod identities;
mod law;

pub use empirical::{empirical_process_check, EmpiricalConfig, EmpiricalRow};
pub use identities::{
    double_robustness_check, eif_mean, eif_mean_residual, eif_mean_zero_check, phi_at_cell,
    psi_direct, psi_of, psi_true, remainder, vonmises_identity_check, LawPerturbation,
    NuisanceMask, Perturbation, PerturbedLaw, VonMisesCheck,
};
pub use law::{
    derive_nuisances, random_law, sample_from, Cell, DiscreteLaw, LawOracle, LawShape,
    NuisanceTables,
};
