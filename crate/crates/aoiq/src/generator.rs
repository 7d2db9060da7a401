//! Time-dependent generator matrix of the queue CTMC, the completion-rate
//! submatrices that drive the age-moment dynamics, and the reduced generator
//! obtained by eliminating the last state through the unit-sum constraint.
//!
//! Row index = origin state, column = target state, all in `sigma - 1`
//! (0-based) order. Matrices are dense: with the supported class counts the
//! dimension stays small enough that dense products beat sparse bookkeeping.

use nalgebra::{DMatrix, DVector};

use crate::rates::{RateProfile, Scenario};
use crate::state_space::StateSpace;

/// Which one-sided limit of the rate profiles to use when evaluating at a
/// breakpoint. Profiles are right-continuous; the integrator asks for the
/// left limit when a step ends exactly on a jump so the closing stage still
/// sees the piece it integrated over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateLimit {
    Right,
    Left,
}

/// All rate matrices of the model frozen at one evaluation time.
///
/// `q` is the CTMC generator: arrival transitions at the class arrival rate
/// wherever the arrival changes the state (replacements are self-transitions
/// and contribute nothing), completion transitions at the in-service class
/// rate, diagonal = negative row sum. The `m_*` matrices carry the completion
/// rate of a state at entry `(s, dest(s))`; `m_class[i]` keeps only rows with
/// class `i + 1` in service, `m_next[i]` only rows whose completion puts
/// class `i + 1` into service next.
#[derive(Clone, Debug)]
pub struct GeneratorSet {
    pub t: f64,
    pub q: DMatrix<f64>,
    pub m_comp: DMatrix<f64>,
    pub m_class: Vec<DMatrix<f64>>,
    pub m_next: Vec<DMatrix<f64>>,
    /// Per-class arrival rates at `t` (0-based class index).
    pub lambda: Vec<f64>,
    /// Per-class service rates at `t`.
    pub mu: Vec<f64>,
}

impl GeneratorSet {
    pub fn build(space: &StateSpace, scenario: &Scenario, t: f64) -> Self {
        Self::build_with_limit(space, scenario, t, RateLimit::Right)
    }

    pub fn build_with_limit(
        space: &StateSpace,
        scenario: &Scenario,
        t: f64,
        limit: RateLimit,
    ) -> Self {
        let eval = |p: &RateProfile| match limit {
            RateLimit::Right => p.value(t),
            RateLimit::Left => p.value_left(t),
        };
        let n = scenario.n_classes();
        let nq = space.len();
        let lambda: Vec<f64> = (0..n).map(|i| eval(scenario.arrival_profile(i))).collect();
        let mu: Vec<f64> = (0..n).map(|i| eval(scenario.service_profile(i))).collect();

        let mut q = DMatrix::zeros(nq, nq);
        let mut m_comp = DMatrix::zeros(nq, nq);
        let mut m_class = vec![DMatrix::zeros(nq, nq); n];
        let mut m_next = vec![DMatrix::zeros(nq, nq); n];

        for (idx, s) in space.states().iter().enumerate() {
            if !s.is_idle() {
                let j = s.class_in_service();
                let rate = mu[j - 1];
                let dest = space.dest_index(idx).expect("busy state has a dest");
                q[(idx, dest)] += rate;
                m_comp[(idx, dest)] = rate;
                m_class[j - 1][(idx, dest)] = rate;
                let next = space.next_of(idx);
                if next != 0 {
                    m_next[next - 1][(idx, dest)] = rate;
                }
            }
            for k in 1..=n {
                let target = s.after_arrival(k);
                if target != *s {
                    q[(idx, space.index_of(&target))] += lambda[k - 1];
                }
            }
            let row_sum: f64 = q.row(idx).sum();
            q[(idx, idx)] = -row_sum;
        }

        GeneratorSet {
            t,
            q,
            m_comp,
            m_class,
            m_next,
            lambda,
            mu,
        }
    }
}

/// 0/1 row-indicator vectors over the state space for the predicates the
/// moment dynamics condition on. Time-independent.
#[derive(Clone, Debug)]
pub struct IndicatorVectors {
    /// 1 where some class is in service.
    pub j_neq_0: DVector<f64>,
    /// `j_eq[i]`: 1 where class `i + 1` is in service.
    pub j_eq: Vec<DVector<f64>>,
    /// `b_eq_1[i]`: 1 where the class `i + 1` buffer is occupied.
    pub b_eq_1: Vec<DVector<f64>>,
    /// `next_eq[i]`: 1 where class `i + 1` would be selected after a
    /// completion.
    pub next_eq: Vec<DVector<f64>>,
}

impl IndicatorVectors {
    pub fn new(space: &StateSpace) -> Self {
        let n = space.n_classes();
        let nq = space.len();
        let build = |pred: &dyn Fn(usize) -> bool| {
            DVector::from_fn(nq, |s, _| if pred(s) { 1.0 } else { 0.0 })
        };
        IndicatorVectors {
            j_neq_0: build(&|s| !space.state(s).is_idle()),
            j_eq: (1..=n)
                .map(|i| build(&|s| space.state(s).class_in_service() == i))
                .collect(),
            b_eq_1: (1..=n)
                .map(|i| build(&|s| space.state(s).buffer_occupied(i)))
                .collect(),
            next_eq: (1..=n).map(|i| build(&|s| space.next_of(s) == i)).collect(),
        }
    }
}

/// Generator with the last state eliminated through `sum(p) = 1`:
/// `p_red' = p_red * q_red + beta` reproduces the full forward equation.
///
/// With `T = [I | -1]`, `E = [I; 0]` and `b` the last unit row vector, this
/// is `q_red = T Q E` and `beta = b Q E`, which collapse to the closed forms
/// used here.
#[derive(Clone, Debug)]
pub struct ReducedGenerator {
    pub q_red: DMatrix<f64>,
    pub beta: DVector<f64>,
}

pub fn reduce(gen: &GeneratorSet) -> ReducedGenerator {
    let nq = gen.q.nrows();
    let m = nq - 1;
    // T Q E: subtract the last row from every leading row, drop last column.
    let q_red = DMatrix::from_fn(m, m, |r, c| gen.q[(r, c)] - gen.q[(m, c)]);
    // b Q E: the last row of Q restricted to the leading columns.
    let beta = DVector::from_fn(m, |c, _| gen.q[(m, c)]);
    ReducedGenerator { q_red, beta }
}
