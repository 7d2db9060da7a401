//! Exact periodic-steady-state freshness analysis for time-varying
//! multi-priority latest-only status-update queues.
//!
//! The model: `N` priority classes feed a single non-preemptive server
//! through size-one latest-only buffers, with T-periodic Poisson arrivals,
//! T-periodic exponential service, and intermittent link availability. A
//! closed linear time-periodic ODE system over state-conditioned first
//! moments yields the exact mean Age of Information and mean Peak Age of
//! Information trajectory of every class; the periodic steady state is the
//! fixed point of the one-period map and is computed by a relaxed
//! fixed-point iteration. An embedded discrete-event Monte Carlo simulator
//! cross-validates the analytical curves.
//!
//! Module map:
//! - [`state_space`]: CTMC states of the priority queue and their indexing.
//! - [`rates`]: periodic rate profiles and scenarios.
//! - [`generator`]: generator matrix, completion maps, reduced generator.
//! - [`ode`]: the moment ODE system and its fixed-step integrator.
//! - [`pss`]: fixed-point solver and Floquet/monodromy diagnostic.
//! - [`metrics`]: per-class freshness metrics recovered from trajectories.
//! - [`montecarlo`]: validation simulator and error reporting.
//! - [`config`]: the TOML scenario file format used by the CLI.
//!
//! ```no_run
//! use aoiq::{pss, rates::Scenario, state_space::StateSpace};
//!
//! # fn main() -> aoiq::Result<()> {
//! let scenario = Scenario::windowed(
//!     10.0,
//!     5.0,
//!     &[(1.0, 0.05, 0.10), (1.5, 0.10, 0.30), (3.0, 0.20, 0.80)],
//! )?;
//! let space = StateSpace::enumerate(3)?;
//! let solution = pss::solve(&space, &scenario, &pss::PssConfig::default())?;
//! let report = pss::monodromy(&space, &scenario, &Default::default())?;
//! assert!(solution.converged && report.stable);
//! # Ok(())
//! # }
//! ```

pub mod config;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod montecarlo;
pub mod ode;
pub mod pss;
pub mod rates;
pub mod state_space;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod test_support {
    use crate::rates::Scenario;

    /// Three-class windowed-sinusoid scenario: period 10, availability
    /// window [0, 5], per-class (mu_peak, lambda_base, lambda_peak).
    pub fn three_class_pass() -> Scenario {
        Scenario::windowed(
            10.0,
            5.0,
            &[(1.0, 0.05, 0.10), (1.5, 0.10, 0.30), (3.0, 0.20, 0.80)],
        )
        .unwrap()
    }

    /// Single class, constant rates lambda = 1, mu = 2.
    pub fn single_class_constant() -> Scenario {
        Scenario::constant(10.0, &[(2.0, 1.0)]).unwrap()
    }
}
