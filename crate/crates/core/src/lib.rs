pub mod error;
pub mod gp;
pub mod kernels;
pub mod linalg;
pub mod posterior;
pub mod kriging;
pub mod diagnostics;
pub mod experiments;
