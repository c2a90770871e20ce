//! Hybrid-degree dual cubature filtering with a gas-turbine fault-diagnosis
//! harness.

pub mod cubature;
pub mod filter;
pub mod dual;
pub mod fdii;
pub mod gte;
pub mod scenario;

/// Format with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
