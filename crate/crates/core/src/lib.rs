//! Chance-constrained AC optimal power flow over a scenario cloud.
//!
//! [`cloud::solve_cloud_opf`] solves one AC-OPF at the cloud mean with
//! analytic uncertainty margins and an affine generator response;
//! [`ms::solve_ms_opf`] is the per-sample ground truth it is measured
//! against, and [`eval`] holds the comparison and out-of-sample harness.

pub mod cloud;
pub mod eval;
pub mod ms;
pub mod net;
pub mod opf;
pub mod powerflow;
pub mod report;
pub mod uncertainty;

pub use net::{parse_matpower_case, write_matpower_case, Branch, Bus, BusKind, CaseError, Generator, NetworkCase};
pub use powerflow::{ac_power_flow, mismatch, sensitivity_matrices, Demand, OperatingPoint, PfControls, PfError, PfOptions};
pub use opf::{solve_ac_opf, Margins, OpfError, OpfOptions, OpfSolution};
pub use uncertainty::{apply_response, cloud_from_samples, gaussian_cloud, sample_cloud, PolicyKind, ResponsePolicy, ScenarioCloud, UncertaintyError};
pub use cloud::{affine_dispatch, solve_cloud_opf, ChanceSpec, CloudError, CloudOptions, CloudSolution};
pub use ms::{solve_ms_opf, MsError, MsOptions, MsSolution};
