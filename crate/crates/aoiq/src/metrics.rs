//! Per-class freshness metrics recovered from a moment trajectory.
//!
//! Mean AoI is the total mass of the class AoI vector. Peak AoI is the
//! ratio of in-service age mass to in-service probability mass, which equals
//! the completion-conditioned mean peak age whenever a completion can occur;
//! it is reported as undefined once the probability denominator falls under
//! [`DEFINED_THRESHOLD`] rather than extrapolated from vanishing mass.

use crate::generator::IndicatorVectors;
use crate::ode::Trajectory;
use crate::state_space::StateSpace;

/// Probability-mass threshold below which conditional metrics are reported
/// as undefined.
pub const DEFINED_THRESHOLD: f64 = 1e-9;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean AoI of a class: the sum of its state-conditioned age masses.
pub fn mean_aoi(aoi_mass: &[f64]) -> f64 {
    aoi_mass.iter().sum()
}

/// Mean peak AoI: age mass on the in-service states of the class divided by
/// their probability mass. `None` when the class is (numerically) never in
/// service, which leaves the conditional meaningless.
pub fn peak_aoi(aoi_mass: &[f64], probabilities: &[f64], in_service_mask: &[f64]) -> Option<f64> {
    let den = dot(probabilities, in_service_mask);
    (den >= DEFINED_THRESHOLD).then(|| dot(aoi_mass, in_service_mask) / den)
}

/// Probability that the class is currently in service.
pub fn service_prob(probabilities: &[f64], in_service_mask: &[f64]) -> f64 {
    dot(probabilities, in_service_mask)
}

/// Mean AoI conditioned on the class not being in service. `None` when the
/// class occupies the server with probability (numerically) one.
pub fn unserved_age(
    aoi_mass: &[f64],
    probabilities: &[f64],
    in_service_mask: &[f64],
) -> Option<f64> {
    let den = probabilities.iter().sum::<f64>() - dot(probabilities, in_service_mask);
    (den >= DEFINED_THRESHOLD)
        .then(|| (aoi_mass.iter().sum::<f64>() - dot(aoi_mass, in_service_mask)) / den)
}

/// Both sides of the peak/mean gap identity
/// `peak - mean = (1 - pi) (peak - unserved)`; `None` when either
/// conditional metric is undefined.
pub fn gap(
    mean: f64,
    peak: Option<f64>,
    unserved: Option<f64>,
    service_prob: f64,
) -> Option<(f64, f64)> {
    match (peak, unserved) {
        (Some(peak), Some(unserved)) => {
            Some((peak - mean, (1.0 - service_prob) * (peak - unserved)))
        }
        _ => None,
    }
}

/// Metric time series of one class along a trajectory.
#[derive(Clone, Debug)]
pub struct ClassMetrics {
    pub mean_aoi: Vec<f64>,
    pub peak_aoi: Vec<Option<f64>>,
    pub service_prob: Vec<f64>,
    pub unserved_age: Vec<Option<f64>>,
    pub gap_lhs: Vec<Option<f64>>,
    pub gap_rhs: Vec<Option<f64>>,
}

/// Per-class metrics evaluated at every grid node of a trajectory.
#[derive(Clone, Debug)]
pub struct MetricsTable {
    pub times: Vec<f64>,
    pub classes: Vec<ClassMetrics>,
}

impl MetricsTable {
    pub fn from_trajectory(trajectory: &Trajectory, space: &StateSpace) -> Self {
        let ind = IndicatorVectors::new(space);
        let n = space.n_classes();
        let len = trajectory.times.len();
        let mut classes: Vec<ClassMetrics> = (0..n)
            .map(|_| ClassMetrics {
                mean_aoi: Vec::with_capacity(len),
                peak_aoi: Vec::with_capacity(len),
                service_prob: Vec::with_capacity(len),
                unserved_age: Vec::with_capacity(len),
                gap_lhs: Vec::with_capacity(len),
                gap_rhs: Vec::with_capacity(len),
            })
            .collect();
        for x in &trajectory.states {
            let p = x.probabilities();
            for (i, cm) in classes.iter_mut().enumerate() {
                let a = x.aoi(i);
                let mask = ind.j_eq[i].as_slice();
                let mean = mean_aoi(a.as_slice());
                let peak = peak_aoi(a.as_slice(), p.as_slice(), mask);
                let pi = service_prob(p.as_slice(), mask);
                let unserved = unserved_age(a.as_slice(), p.as_slice(), mask);
                let g = gap(mean, peak, unserved, pi);
                cm.mean_aoi.push(mean);
                cm.peak_aoi.push(peak);
                cm.service_prob.push(pi);
                cm.unserved_age.push(unserved);
                cm.gap_lhs.push(g.map(|(l, _)| l));
                cm.gap_rhs.push(g.map(|(_, r)| r));
            }
        }
        MetricsTable {
            times: trajectory.times.clone(),
            classes,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }
}
