//! The closed linear time-periodic moment ODE system and its fixed-step
//! integrator.
//!
//! The stacked state gathers, per class, the state-conditioned age mass
//! `a_i`, the in-service packet age mass `y`, the waiting packet age mass
//! `z_i`, and the state probabilities `p`:
//!
//! ```text
//! a_i' = p + a_i Q + (y - a_i) M_class[i]
//! y'   = p . d[J!=0] + y Q + (z_next - y) M_comp
//! z_i' = p . d[B_i=1] + z_i Q - lambda_i (z_i . d[B_i=1]) - z_i M_next[i]
//! p'   = p Q
//! ```
//!
//! with `z_next = sum_k z_k . d[next=k]` and `.` the elementwise product.
//! All vectors are row vectors over the state space; the code stores them as
//! columns and multiplies with transposed matrices.
//!
//! Integration uses the classical 4-stage Runge-Kutta scheme on a fixed grid
//! whose nodes include every rate-profile breakpoint, so each step integrates
//! a smooth piece and the scheme keeps its order despite window-edge kinks.
//! There is no adaptivity: the one-period map must be a deterministic
//! function of the initial condition for the fixed-point iteration.

use nalgebra::{DVector, DVectorView, DVectorViewMut};

use crate::error::{Error, Result};
use crate::generator::{GeneratorSet, IndicatorVectors, RateLimit};
use crate::rates::Scenario;
use crate::state_space::StateSpace;

/// Stacked moment state `[a_1 .. a_N | y | z_1 .. z_N | p]`, each block of
/// length `|Q|`, total dimension `(2N + 2) |Q|`.
///
/// The dynamics keep `y` zero at the idle state and `z_i` zero wherever the
/// class-`i` buffer is empty; those structural zeros are monitored by tests
/// rather than enforced, so integrator bugs cannot hide behind a projection.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentStack {
    n_classes: usize,
    n_states: usize,
    data: DVector<f64>,
}

impl MomentStack {
    pub fn zeros(n_classes: usize, n_states: usize) -> Self {
        MomentStack {
            n_classes,
            n_states,
            data: DVector::zeros((2 * n_classes + 2) * n_states),
        }
    }

    /// The solver's canonical starting point: idle-state probability 1 and
    /// all moments 0.
    pub fn idle_start(space: &StateSpace) -> Self {
        let mut x = Self::zeros(space.n_classes(), space.len());
        x.probabilities_mut()[0] = 1.0;
        x
    }

    /// Alternative admissible start: uniform probabilities, zero moments.
    pub fn uniform_start(space: &StateSpace) -> Self {
        let mut x = Self::zeros(space.n_classes(), space.len());
        x.probabilities_mut().fill(1.0 / space.len() as f64);
        x
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    fn block(&self, b: usize) -> DVectorView<'_, f64> {
        self.data.rows(b * self.n_states, self.n_states)
    }

    fn block_mut(&mut self, b: usize) -> DVectorViewMut<'_, f64> {
        self.data.rows_mut(b * self.n_states, self.n_states)
    }

    /// AoI mass of class `i` (0-based).
    pub fn aoi(&self, i: usize) -> DVectorView<'_, f64> {
        debug_assert!(i < self.n_classes);
        self.block(i)
    }

    pub fn aoi_mut(&mut self, i: usize) -> DVectorViewMut<'_, f64> {
        debug_assert!(i < self.n_classes);
        self.block_mut(i)
    }

    /// In-service packet age mass.
    pub fn in_service_age(&self) -> DVectorView<'_, f64> {
        self.block(self.n_classes)
    }

    pub fn in_service_age_mut(&mut self) -> DVectorViewMut<'_, f64> {
        self.block_mut(self.n_classes)
    }

    /// Waiting packet age mass of class `i` (0-based).
    pub fn waiting_age(&self, i: usize) -> DVectorView<'_, f64> {
        debug_assert!(i < self.n_classes);
        self.block(self.n_classes + 1 + i)
    }

    pub fn waiting_age_mut(&mut self, i: usize) -> DVectorViewMut<'_, f64> {
        debug_assert!(i < self.n_classes);
        self.block_mut(self.n_classes + 1 + i)
    }

    /// State probability block.
    pub fn probabilities(&self) -> DVectorView<'_, f64> {
        self.block(2 * self.n_classes + 1)
    }

    pub fn probabilities_mut(&mut self) -> DVectorViewMut<'_, f64> {
        self.block_mut(2 * self.n_classes + 1)
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn as_vector_mut(&mut self) -> &mut DVector<f64> {
        &mut self.data
    }

    pub fn from_vector(n_classes: usize, n_states: usize, data: DVector<f64>) -> Self {
        assert_eq!(data.len(), (2 * n_classes + 2) * n_states);
        MomentStack {
            n_classes,
            n_states,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Fixed-step integration settings. The scheme itself is pinned to classical
/// order-4 Runge-Kutta.
#[derive(Clone, Copy, Debug)]
pub struct IntegrationConfig {
    pub steps_per_period: usize,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig {
            steps_per_period: 2000,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_period < 100 {
            return Err(Error::config(format!(
                "steps_per_period must be at least 100, got {}",
                self.steps_per_period
            )));
        }
        Ok(())
    }
}

/// Grid samples of an integration run; `states.last()` is the final state.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<MomentStack>,
}

impl Trajectory {
    /// Index of the grid node at time `t`, matched within `tol`.
    pub fn index_at_time(&self, t: f64, tol: f64) -> Option<usize> {
        let k = self.times.partition_point(|&u| u < t - tol);
        (k < self.times.len() && (self.times[k] - t).abs() <= tol).then_some(k)
    }
}

/// Right-hand side of the moment system at the time baked into `gen`.
pub fn rhs(
    gen: &GeneratorSet,
    ind: &IndicatorVectors,
    space: &StateSpace,
    x: &MomentStack,
) -> MomentStack {
    let mut out = MomentStack::zeros(x.n_classes(), x.n_states());
    rhs_into(gen, ind, space, x, &mut out);
    out
}

/// In-place variant of [`rhs`] used by the integrator.
pub fn rhs_into(
    gen: &GeneratorSet,
    ind: &IndicatorVectors,
    space: &StateSpace,
    x: &MomentStack,
    out: &mut MomentStack,
) {
    let n = x.n_classes();
    let nq = x.n_states();
    assert_eq!(nq, space.len(), "moment stack does not match state space");
    assert_eq!(
        n,
        space.n_classes(),
        "moment stack does not match class count"
    );

    let p = x.probabilities();
    let y = x.in_service_age();

    // p' = p Q  (row form), computed as Q^T p
    out.probabilities_mut().gemv_tr(1.0, &gen.q, &p, 0.0);

    // a_i' = p + a_i Q + (y - a_i) M_class[i]
    for i in 0..n {
        let a = x.aoi(i);
        let reset = y - a;
        let mut da = out.aoi_mut(i);
        da.gemv_tr(1.0, &gen.q, &a, 0.0);
        da.gemv_tr(1.0, &gen.m_class[i], &reset, 1.0);
        da += p;
    }

    // y' = p . d[J!=0] + y Q + (z_next - y) M_comp
    let mut handoff = DVector::zeros(nq);
    for s in 0..nq {
        let next = space.next_of(s);
        if next != 0 {
            handoff[s] = x.waiting_age(next - 1)[s];
        }
    }
    handoff -= &y;
    {
        let mut dy = out.in_service_age_mut();
        dy.gemv_tr(1.0, &gen.q, &y, 0.0);
        dy.gemv_tr(1.0, &gen.m_comp, &handoff, 1.0);
        dy += p.component_mul(&ind.j_neq_0);
    }

    // z_i' = p . d[B_i=1] + z_i Q - lambda_i (z_i . d[B_i=1]) - z_i M_next[i]
    for i in 0..n {
        let z = x.waiting_age(i);
        let masked = z.component_mul(&ind.b_eq_1[i]);
        let mut dz = out.waiting_age_mut(i);
        dz.gemv_tr(1.0, &gen.q, &z, 0.0);
        dz.gemv_tr(-1.0, &gen.m_next[i], &z, 1.0);
        dz.axpy(-gen.lambda[i], &masked, 1.0);
        dz += p.component_mul(&ind.b_eq_1[i]);
    }
}

/// Time grid over `[t0, t1]`: uniform nodes at the per-period density plus
/// every periodic image of a rate-profile breakpoint, merged within a small
/// tolerance so aligned breakpoints do not create degenerate steps.
pub(crate) fn time_nodes(
    t0: f64,
    t1: f64,
    scenario: &Scenario,
    cfg: &IntegrationConfig,
) -> Vec<f64> {
    let span = t1 - t0;
    let period = scenario.period();
    let n_steps = ((span / period * cfg.steps_per_period as f64).ceil() as usize).max(1);
    let mut nodes: Vec<f64> = (0..=n_steps)
        .map(|k| t0 + span * k as f64 / n_steps as f64)
        .collect();

    let tol = period * 1e-9;
    let mut extra = Vec::new();
    for b in scenario.breakpoints() {
        let mut m = ((t0 - b) / period).floor();
        loop {
            let c = b + m * period;
            if c >= t1 - tol {
                break;
            }
            if c > t0 + tol {
                extra.push(c);
            }
            m += 1.0;
        }
    }
    nodes.extend(extra);
    nodes.sort_by(f64::total_cmp);
    let mut merged: Vec<f64> = Vec::with_capacity(nodes.len());
    for t in nodes {
        match merged.last() {
            Some(&last) if t - last <= tol => {}
            _ => merged.push(t),
        }
    }
    // endpoints are exact by construction
    *merged.last_mut().unwrap() = t1;
    merged
}

struct Rk4Scratch {
    k1: MomentStack,
    k2: MomentStack,
    k3: MomentStack,
    k4: MomentStack,
    probe: MomentStack,
}

impl Rk4Scratch {
    fn new(n_classes: usize, n_states: usize) -> Self {
        let z = MomentStack::zeros(n_classes, n_states);
        Rk4Scratch {
            k1: z.clone(),
            k2: z.clone(),
            k3: z.clone(),
            k4: z.clone(),
            probe: z,
        }
    }
}

fn rk4_step(
    space: &StateSpace,
    scenario: &Scenario,
    ind: &IndicatorVectors,
    x: &mut MomentStack,
    ta: f64,
    tb: f64,
    scratch: &mut Rk4Scratch,
) {
    let h = tb - ta;
    // Stage generators: the opening stage uses the right limit, the closing
    // stage the left limit, so steps that end on a rate jump integrate the
    // piece they actually cover.
    let gen_a = GeneratorSet::build_with_limit(space, scenario, ta, RateLimit::Right);
    let gen_m = GeneratorSet::build(space, scenario, ta + h / 2.0);
    let gen_b = GeneratorSet::build_with_limit(space, scenario, tb, RateLimit::Left);

    rhs_into(&gen_a, ind, space, x, &mut scratch.k1);

    scratch.probe.as_vector_mut().copy_from(x.as_vector());
    scratch
        .probe
        .as_vector_mut()
        .axpy(h / 2.0, scratch.k1.as_vector(), 1.0);
    rhs_into(&gen_m, ind, space, &scratch.probe, &mut scratch.k2);

    scratch.probe.as_vector_mut().copy_from(x.as_vector());
    scratch
        .probe
        .as_vector_mut()
        .axpy(h / 2.0, scratch.k2.as_vector(), 1.0);
    rhs_into(&gen_m, ind, space, &scratch.probe, &mut scratch.k3);

    scratch.probe.as_vector_mut().copy_from(x.as_vector());
    scratch
        .probe
        .as_vector_mut()
        .axpy(h, scratch.k3.as_vector(), 1.0);
    rhs_into(&gen_b, ind, space, &scratch.probe, &mut scratch.k4);

    let v = x.as_vector_mut();
    v.axpy(h / 6.0, scratch.k1.as_vector(), 1.0);
    v.axpy(h / 3.0, scratch.k2.as_vector(), 1.0);
    v.axpy(h / 3.0, scratch.k3.as_vector(), 1.0);
    v.axpy(h / 6.0, scratch.k4.as_vector(), 1.0);
}

fn integrate_impl(
    x0: &MomentStack,
    t0: f64,
    t1: f64,
    space: &StateSpace,
    scenario: &Scenario,
    cfg: &IntegrationConfig,
    record: bool,
) -> Result<(MomentStack, Option<Trajectory>)> {
    assert!(t1 > t0, "integration span must be positive");
    let ind = IndicatorVectors::new(space);
    let nodes = time_nodes(t0, t1, scenario, cfg);
    let mut x = x0.clone();
    let mut scratch = Rk4Scratch::new(x.n_classes(), x.n_states());
    let mut states = if record {
        let mut v = Vec::with_capacity(nodes.len());
        v.push(x.clone());
        v
    } else {
        Vec::new()
    };

    for w in nodes.windows(2) {
        rk4_step(space, scenario, &ind, &mut x, w[0], w[1], &mut scratch);
        if !x.is_finite() {
            return Err(Error::Numerical {
                t: w[1],
                message: "integration produced a non-finite value".into(),
            });
        }
        if record {
            states.push(x.clone());
        }
    }

    let trajectory = record.then_some(Trajectory {
        times: nodes,
        states,
    });
    Ok((x, trajectory))
}

/// Integrates the moment system from `t0` to `t1` and returns the final
/// state. Deterministic for a fixed configuration.
pub fn integrate(
    x0: &MomentStack,
    t0: f64,
    t1: f64,
    space: &StateSpace,
    scenario: &Scenario,
    cfg: &IntegrationConfig,
) -> Result<MomentStack> {
    integrate_impl(x0, t0, t1, space, scenario, cfg, false).map(|(x, _)| x)
}

/// Like [`integrate`] but also returns the state at every grid node.
pub fn integrate_trajectory(
    x0: &MomentStack,
    t0: f64,
    t1: f64,
    space: &StateSpace,
    scenario: &Scenario,
    cfg: &IntegrationConfig,
) -> Result<Trajectory> {
    integrate_impl(x0, t0, t1, space, scenario, cfg, true)
        .map(|(_, traj)| traj.expect("trajectory recorded"))
}
