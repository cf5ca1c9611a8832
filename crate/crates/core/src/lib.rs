//! Outer and inner approximations of the renewable-generation dispatchable
//! region of an unbalanced three-phase radial distribution network.
//!
//! The toolkit models the network with the three-phase bus injection model,
//! relaxes the dispatch feasibility problem to a semidefinite program, and
//! provides:
//!
//! * [`formulations`] — the feasibility SDP `FP'(u)`, its dual `DP'(u)`, the
//!   loss-penalized SDP `PE(u)` and its dual `DE(u)`, plus membership tests
//!   backed by rank-1 recovery;
//! * [`region`] — a cutting-plane algorithm that shrinks a bounding box onto a
//!   polytopic outer approximation of the relaxed region, and a ray-tracing
//!   routine for the certified inner region;
//! * [`oracle`] — a brute-force ground truth (fixed-point power flow plus grid
//!   search over controllable injections) used to validate everything else on
//!   small networks;
//! * [`sdpcore`] — a self-contained dense primal-dual interior-point solver so
//!   the crate has no external solver dependency.
//!
//! All quantities are per-unit. Networks are radial with Y-connected sources
//! and loads; series line admittances only (no shunts).

pub mod fixtures;
pub mod formulations;
pub mod hermitian;
pub mod netmodel;
pub mod oracle;
pub mod region;
pub mod sdpcore;

pub use formulations::{DualCertificate, MembershipVerdict, RenewableVector, Verdict};
pub use hermitian::{HermitianMatrix, RankCertificate};
pub use netmodel::{CoefficientBundle, ThreePhaseNetwork};
pub use region::{HalfSpace, Polytope, RegionReport};
pub use sdpcore::{ConicProgram, PrimalDualSolution, SolveSettings, SolveStatus};
