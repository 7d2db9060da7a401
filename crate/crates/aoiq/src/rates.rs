//! T-periodic arrival and service rate profiles.
//!
//! Intermittent link availability is not modeled as a separate object:
//! an outage is simply a stretch of time where the service profiles
//! evaluate to zero. All profiles share one common period per scenario;
//! inputs with rationally related periods must be pre-folded by the caller.

use crate::error::{Error, Result};
use crate::state_space::MAX_CLASSES;

/// A nonnegative T-periodic rate function.
#[derive(Clone, Debug, PartialEq)]
pub enum RateProfile {
    /// Service rate that follows a half-cosine bump over the availability
    /// window `[0, t_pass]` and is zero for the rest of the period:
    /// `mu_peak * max(0, cos(pi/t_pass * (t - t_pass/2)))` inside the window.
    WindowedSinusoidService {
        mu_peak: f64,
        t_pass: f64,
        period: f64,
    },
    /// Arrival rate with a constant baseline plus the same half-cosine bump:
    /// `lambda_base + lambda_peak * max(0, cos(pi/t_pass * (t - t_pass/2)))`
    /// inside the window, `lambda_base` outside.
    WindowedSinusoidArrival {
        lambda_base: f64,
        lambda_peak: f64,
        t_pass: f64,
        period: f64,
    },
    /// Right-continuous step function. `breakpoints[k]` is the start of piece
    /// `k` (the first must be 0); piece `k` holds `values[k]` until the next
    /// breakpoint, the last piece until the end of the period.
    PiecewiseConstant {
        period: f64,
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    /// Samples on the uniform grid `k * period / len` for `k = 0..len`,
    /// linearly interpolated and wrapping periodically.
    SampledTable { period: f64, samples: Vec<f64> },
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::config(format!(
            "{name} must be finite and nonnegative, got {v}"
        )));
    }
    Ok(())
}

/// Half-cosine bump supported on `[0, t_pass]`, evaluated at a phase.
fn window_bump(phase: f64, t_pass: f64) -> f64 {
    if phase <= t_pass {
        (std::f64::consts::PI / t_pass * (phase - t_pass / 2.0))
            .cos()
            .max(0.0)
    } else {
        0.0
    }
}

impl RateProfile {
    pub fn period(&self) -> f64 {
        match self {
            RateProfile::WindowedSinusoidService { period, .. }
            | RateProfile::WindowedSinusoidArrival { period, .. }
            | RateProfile::PiecewiseConstant { period, .. }
            | RateProfile::SampledTable { period, .. } => *period,
        }
    }

    /// Checks the structural invariants of a profile. Construction sites
    /// (configuration parsing, scenario assembly) call this once.
    pub fn validate(&self) -> Result<()> {
        let period = self.period();
        if !period.is_finite() || period <= 0.0 {
            return Err(Error::config(format!(
                "period must be finite and positive, got {period}"
            )));
        }
        match self {
            RateProfile::WindowedSinusoidService {
                mu_peak, t_pass, ..
            } => {
                check_rate("mu_peak", *mu_peak)?;
                check_window(*t_pass, period)?;
            }
            RateProfile::WindowedSinusoidArrival {
                lambda_base,
                lambda_peak,
                t_pass,
                ..
            } => {
                check_rate("lambda_base", *lambda_base)?;
                check_rate("lambda_peak", *lambda_peak)?;
                check_window(*t_pass, period)?;
            }
            RateProfile::PiecewiseConstant {
                breakpoints,
                values,
                ..
            } => {
                if breakpoints.is_empty() || breakpoints.len() != values.len() {
                    return Err(Error::config(
                        "piecewise profile needs equally many breakpoints and values, at least one",
                    ));
                }
                if breakpoints[0] != 0.0 {
                    return Err(Error::config("first breakpoint must be 0"));
                }
                for w in breakpoints.windows(2) {
                    if !w[1].is_finite() || w[1] <= w[0] {
                        return Err(Error::config("breakpoints must be strictly increasing"));
                    }
                }
                let last = *breakpoints.last().unwrap();
                if !last.is_finite() || last >= period {
                    return Err(Error::config("breakpoints must lie in [0, period)"));
                }
                for v in values {
                    check_rate("piecewise value", *v)?;
                }
            }
            RateProfile::SampledTable { samples, .. } => {
                if samples.is_empty() {
                    return Err(Error::config("sampled table needs at least one sample"));
                }
                for v in samples {
                    check_rate("sample", *v)?;
                }
            }
        }
        Ok(())
    }

    fn phase(&self, t: f64) -> f64 {
        let p = t.rem_euclid(self.period());
        // rem_euclid can return the period itself for tiny negative inputs
        if p >= self.period() {
            0.0
        } else {
            p
        }
    }

    /// Rate at time `t`, periodic in the profile period. Right-continuous at
    /// jump points of piecewise-constant profiles.
    pub fn value(&self, t: f64) -> f64 {
        let phase = self.phase(t);
        match self {
            RateProfile::WindowedSinusoidService {
                mu_peak, t_pass, ..
            } => mu_peak * window_bump(phase, *t_pass),
            RateProfile::WindowedSinusoidArrival {
                lambda_base,
                lambda_peak,
                t_pass,
                ..
            } => lambda_base + lambda_peak * window_bump(phase, *t_pass),
            RateProfile::PiecewiseConstant {
                breakpoints,
                values,
                ..
            } => {
                let k = breakpoints.partition_point(|b| *b <= phase);
                values[k - 1]
            }
            RateProfile::SampledTable { period, samples } => {
                let m = samples.len();
                let u = phase / period * m as f64;
                let k = (u.floor() as usize).min(m - 1);
                let frac = u - k as f64;
                samples[k] * (1.0 - frac) + samples[(k + 1) % m] * frac
            }
        }
    }

    /// Left limit of the rate at time `t`. Differs from `value` only at jump
    /// points of piecewise-constant profiles; the integrator uses it when a
    /// step ends exactly on a breakpoint so the closing stage still sees the
    /// piece being integrated.
    pub fn value_left(&self, t: f64) -> f64 {
        match self {
            RateProfile::PiecewiseConstant {
                breakpoints,
                values,
                ..
            } => {
                let phase = self.phase(t);
                if phase == 0.0 {
                    return *values.last().unwrap();
                }
                let k = breakpoints.partition_point(|b| *b < phase);
                values[k - 1]
            }
            _ => self.value(t),
        }
    }

    /// Upper bound on `value` over one period; exact for every supported
    /// kind. Used as the thinning bound in the Monte Carlo sampler.
    pub fn max_rate(&self) -> f64 {
        match self {
            RateProfile::WindowedSinusoidService { mu_peak, .. } => *mu_peak,
            RateProfile::WindowedSinusoidArrival {
                lambda_base,
                lambda_peak,
                ..
            } => lambda_base + lambda_peak,
            RateProfile::PiecewiseConstant { values, .. } => {
                values.iter().copied().fold(0.0, f64::max)
            }
            RateProfile::SampledTable { samples, .. } => {
                samples.iter().copied().fold(0.0, f64::max)
            }
        }
    }

    /// Phases in `[0, period)` where the profile has a kink or jump. The
    /// integrator forces these onto its time grid.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            RateProfile::WindowedSinusoidService { t_pass, period, .. }
            | RateProfile::WindowedSinusoidArrival { t_pass, period, .. } => {
                if *t_pass < *period {
                    vec![0.0, *t_pass]
                } else {
                    vec![0.0]
                }
            }
            RateProfile::PiecewiseConstant { breakpoints, .. } => breakpoints.clone(),
            RateProfile::SampledTable { period, samples } => (0..samples.len())
                .map(|k| k as f64 * period / samples.len() as f64)
                .collect(),
        }
    }
}

fn check_window(t_pass: f64, period: f64) -> Result<()> {
    if !t_pass.is_finite() || t_pass <= 0.0 || t_pass > period {
        return Err(Error::config(format!(
            "t_pass must satisfy 0 < t_pass <= period, got t_pass={t_pass}, period={period}"
        )));
    }
    Ok(())
}

/// A complete model instance: per-class arrival and service profiles sharing
/// a common period.
#[derive(Clone, Debug)]
pub struct Scenario {
    period: f64,
    arrival: Vec<RateProfile>,
    service: Vec<RateProfile>,
}

impl Scenario {
    pub fn new(arrival: Vec<RateProfile>, service: Vec<RateProfile>) -> Result<Self> {
        if arrival.is_empty() || arrival.len() != service.len() {
            return Err(Error::config(
                "need one arrival and one service profile per class",
            ));
        }
        if arrival.len() > MAX_CLASSES {
            return Err(Error::config(format!(
                "at most {MAX_CLASSES} classes supported, got {}",
                arrival.len()
            )));
        }
        let period = arrival[0].period();
        for p in arrival.iter().chain(service.iter()) {
            p.validate()?;
            if p.period() != period {
                return Err(Error::config(
                    "all profiles must share the same period; fold rationally related periods \
                     into a common one before constructing the scenario",
                ));
            }
        }
        Ok(Scenario {
            period,
            arrival,
            service,
        })
    }

    /// Windowed-sinusoid scenario: per class `(mu_peak, lambda_base,
    /// lambda_peak)` with a shared availability window `[0, t_pass]`.
    pub fn windowed(period: f64, t_pass: f64, classes: &[(f64, f64, f64)]) -> Result<Self> {
        let arrival = classes
            .iter()
            .map(|&(_, base, peak)| RateProfile::WindowedSinusoidArrival {
                lambda_base: base,
                lambda_peak: peak,
                t_pass,
                period,
            })
            .collect();
        let service = classes
            .iter()
            .map(|&(mu, _, _)| RateProfile::WindowedSinusoidService {
                mu_peak: mu,
                t_pass,
                period,
            })
            .collect();
        Scenario::new(arrival, service)
    }

    /// Time-invariant scenario with constant per-class `(mu, lambda)`.
    /// `period` only sets the length of the nominal cycle.
    pub fn constant(period: f64, classes: &[(f64, f64)]) -> Result<Self> {
        let piece = |v: f64| RateProfile::PiecewiseConstant {
            period,
            breakpoints: vec![0.0],
            values: vec![v],
        };
        Scenario::new(
            classes.iter().map(|&(_, l)| piece(l)).collect(),
            classes.iter().map(|&(m, _)| piece(m)).collect(),
        )
    }

    pub fn n_classes(&self) -> usize {
        self.arrival.len()
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn arrival_profile(&self, class_index: usize) -> &RateProfile {
        &self.arrival[class_index]
    }

    pub fn service_profile(&self, class_index: usize) -> &RateProfile {
        &self.service[class_index]
    }

    /// Arrival rate of class `class_index` (0-based) at time `t`.
    pub fn arrival_rate(&self, class_index: usize, t: f64) -> f64 {
        self.arrival[class_index].value(t)
    }

    /// Service rate of class `class_index` (0-based) at time `t`.
    pub fn service_rate(&self, class_index: usize, t: f64) -> f64 {
        self.service[class_index].value(t)
    }

    /// True when every class has zero service rate at `t` (link outage).
    pub fn in_outage(&self, t: f64) -> bool {
        (0..self.n_classes()).all(|i| self.service_rate(i, t) == 0.0)
    }

    /// Union of all profile breakpoints, sorted and deduplicated.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self
            .arrival
            .iter()
            .chain(self.service.iter())
            .flat_map(|p| p.breakpoints())
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}
