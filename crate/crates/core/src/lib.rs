//! Higher-order quantum reservoir computing (HQRC) for autoregressive
//! forecasting of POD-compressed fields, with an echo-state-network baseline.
//!
//! The crate is organized bottom-up:
//!
//! * [`quantum`]: dense density-matrix primitives (Pauli embedding, Ising
//!   Hamiltonian, propagators, input injection, partial trace, readout).
//! * [`reservoir`]: temporally multiplexed reservoirs and the higher-order
//!   ensemble with classical feedback.
//! * [`readout`]: ridge training, weight replication, clipped prediction.
//! * [`pod`]: snapshot POD, projection, reconstruction, min-max scaling.
//! * [`data`]: the GSF gridded-series container, masks, splits, regions and
//!   synthetic fields.
//! * [`esn`]: echo-state-network baseline.
//! * [`forecast`]: the washout / teacher-forced fit / closed-loop rollout
//!   harness shared by both model families.
//! * [`metrics`]: RMSE, RMNSE, reconstruction floor, ensemble statistics.
//! * [`experiment`]: configuration, training and forecasting runs, sweeps and
//!   ablations.
//!
//! With the default `parallel` feature, independent work (reservoirs within
//! a step, sweep points, perturbation draws) runs on the rayon pool; see
//! [`par::Execution`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod esn;
pub mod experiment;
pub mod forecast;
pub mod metrics;
pub mod par;
pub mod pod;
pub mod quantum;
pub mod readout;
pub mod reservoir;
pub mod rng;

mod binio;

pub use error::{Error, Result};
pub use nalgebra;

/// Shortest round-trip decimal, switching to a two-digit-exponent scientific
/// form below `1e-4` (`1e-07`, `0.001`, `2.5`).
pub fn fmt_param(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        let s = format!("{x:e}");
        let (mant, exp) = s.split_once('e').expect("scientific form");
        let (sign, digits) = match exp.strip_prefix('-') {
            Some(d) => ("-", d),
            None => ("+", exp),
        };
        format!("{mant}e{sign}{digits:0>2}")
    } else {
        format!("{x}")
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn param_formatting() {
        assert_eq!(super::fmt_param(1e-7), "1e-07");
        assert_eq!(super::fmt_param(1e-5), "1e-05");
        assert_eq!(super::fmt_param(1e-4), "0.0001");
        assert_eq!(super::fmt_param(0.001), "0.001");
        assert_eq!(super::fmt_param(0.5), "0.5");
        assert_eq!(super::fmt_param(2.0), "2");
        assert_eq!(super::fmt_param(2.5e-12), "2.5e-12");
    }
}
