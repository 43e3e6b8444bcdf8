//! Control laws: sign-based formation control, internal models, the observer
//! compensator and the assembled closed loop.

pub mod closed_loop;
pub mod internal_model;
pub mod observer;
pub mod sign;

pub use closed_loop::{
    ClosedLoop, ClosedLoopConfig, ControllerMode, ErrorCoordinates, InitialConditions, LoopSignals,
    ObserverGains, StateLayout,
};
pub use internal_model::{disturbance_im_rhs, velocity_im_rhs};
pub use observer::{
    error_matrix, observer_rhs, shared_gamma, solve_observer_certificate,
    solve_observer_certificate_with_gamma, ObserverCertificate,
};
pub use sign::{formation_control, sign_vec, strict_sign, SignMode, SignSelector};
