//! Periodic steady state as a fixed point of the one-period map, plus the
//! Floquet/monodromy stability diagnostic.
//!
//! The solver integrates the full stacked system (probabilities included)
//! over one period, rescales the probability block to unit sum to absorb
//! floating-point drift, and applies a relaxed update
//! `x <- (1 - alpha) x + alpha F(x)` until the relative residual falls under
//! the tolerance. Non-convergence is a reportable outcome, not an error:
//! near-degenerate scenarios legitimately stall and the caller gets the
//! residual history either way.
//!
//! The monodromy diagnostic integrates the homogeneous compact system, whose
//! block upper-triangular coefficient pairs each moment block with its own
//! completion map and replaces the probability block by the reduced
//! generator. Only the reduced system has all multipliers strictly inside
//! the unit circle; the full probability block always carries a multiplier
//! at exactly 1 from probability conservation.

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::generator::{reduce, GeneratorSet, IndicatorVectors, RateLimit};
use crate::ode::{integrate, integrate_trajectory, IntegrationConfig, MomentStack, Trajectory};
use crate::rates::Scenario;
use crate::state_space::StateSpace;

/// Settings of the relaxed fixed-point iteration.
#[derive(Clone, Copy, Debug)]
pub struct PssConfig {
    /// Relative-residual stopping tolerance.
    pub epsilon: f64,
    /// Iteration cap.
    pub max_iters: usize,
    /// Relaxation factor in (0, 1].
    pub alpha: f64,
    pub integration: IntegrationConfig,
}

impl Default for PssConfig {
    fn default() -> Self {
        PssConfig {
            epsilon: 1e-10,
            max_iters: 500,
            alpha: 1.0,
            integration: IntegrationConfig::default(),
        }
    }
}

impl PssConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha <= 0.0 || self.alpha > 1.0 {
            return Err(Error::config(format!(
                "relaxation alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::config("epsilon must be positive".to_string()));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be at least 1".to_string()));
        }
        self.integration.validate()
    }
}

/// Converged (or stalled) periodic trajectory with solver bookkeeping.
#[derive(Clone, Debug)]
pub struct PssSolution {
    /// Fixed-point initial condition at phase 0.
    pub initial: MomentStack,
    /// One period of the final iterate, sampled on the integration grid.
    pub trajectory: Trajectory,
    /// Relative residual of every iteration performed.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// One-period map `F`: integrate the moment system over `[0, T]`.
pub fn one_period_map(
    x0: &MomentStack,
    space: &StateSpace,
    scenario: &Scenario,
    cfg: &IntegrationConfig,
) -> Result<MomentStack> {
    integrate(x0, 0.0, scenario.period(), space, scenario, cfg)
}

/// Rescales the probability block to unit sum; all other blocks untouched.
pub fn renormalize(x: &MomentStack) -> Result<MomentStack> {
    let total = x.probabilities().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::Numerical {
            t: f64::NAN,
            message: format!("probability mass {total} is not positive; cannot renormalize"),
        });
    }
    let mut out = x.clone();
    let mut p = out.probabilities_mut();
    p /= total;
    Ok(out)
}

fn relative_residual(next: &MomentStack, prev: &MomentStack) -> f64 {
    let diff = next.as_vector() - prev.as_vector();
    diff.norm() / (1.0 + prev.as_vector().norm())
}

/// Runs the relaxed fixed-point iteration from the canonical idle start.
pub fn solve(space: &StateSpace, scenario: &Scenario, cfg: &PssConfig) -> Result<PssSolution> {
    solve_from(MomentStack::idle_start(space), space, scenario, cfg)
}

/// Runs the relaxed fixed-point iteration from a caller-chosen start.
pub fn solve_from(
    x0: MomentStack,
    space: &StateSpace,
    scenario: &Scenario,
    cfg: &PssConfig,
) -> Result<PssSolution> {
    cfg.validate()?;
    let mut x = x0;
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let x_period = renormalize(&one_period_map(&x, space, scenario, &cfg.integration)?)?;
        let mut x_next = x.clone();
        {
            let v = x_next.as_vector_mut();
            *v *= 1.0 - cfg.alpha;
            v.axpy(cfg.alpha, x_period.as_vector(), 1.0);
        }
        let residual = relative_residual(&x_next, &x);
        residuals.push(residual);
        x = x_next;
        if residual <= cfg.epsilon {
            converged = true;
            break;
        }
    }
    let trajectory = integrate_trajectory(
        &x,
        0.0,
        scenario.period(),
        space,
        scenario,
        &cfg.integration,
    )?;
    Ok(PssSolution {
        initial: x,
        trajectory,
        residual_history: residuals.clone(),
        converged,
        iterations: residuals.len(),
    })
}

/// Geometric decay ratio of a residual sequence: the exponential of the
/// least-squares slope of the log-residuals.
pub fn contraction_rate(residuals: &[f64]) -> Result<f64> {
    if residuals.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "contraction-rate fit needs at least 5 residuals, got {}",
            residuals.len()
        )));
    }
    let logs: Vec<f64> = residuals.iter().map(|r| r.max(1e-300).ln()).collect();
    let n = logs.len() as f64;
    let k_mean = (n - 1.0) / 2.0;
    let y_mean = logs.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, y) in logs.iter().enumerate() {
        let dk = k as f64 - k_mean;
        num += dk * (y - y_mean);
        den += dk * dk;
    }
    Ok((num / den).exp())
}

/// Floquet multipliers of the reduced one-period system.
#[derive(Clone, Debug)]
pub struct FloquetReport {
    /// Eigenvalues of the monodromy matrix, grouped by diagonal block.
    pub multipliers: Vec<Complex<f64>>,
    pub spectral_radius: f64,
    /// `spectral_radius < 1`.
    pub stable: bool,
    /// Largest magnitude found strictly below the block diagonal of the
    /// monodromy matrix; the exact dynamics keep these blocks at zero.
    pub lower_block_residual: f64,
}

/// Coefficient assembly for the homogeneous compact system with state
/// `[a_1 .. a_N | y | z_1 .. z_N | p_red]` (column convention).
struct CompactSystem<'a> {
    space: &'a StateSpace,
    scenario: &'a Scenario,
    ind: IndicatorVectors,
    nq: usize,
    n: usize,
}

impl<'a> CompactSystem<'a> {
    fn new(space: &'a StateSpace, scenario: &'a Scenario) -> Self {
        CompactSystem {
            space,
            scenario,
            ind: IndicatorVectors::new(space),
            nq: space.len(),
            n: space.n_classes(),
        }
    }

    fn dim(&self) -> usize {
        (2 * self.n + 1) * self.nq + self.nq - 1
    }

    /// Block start offsets, final entry = dim.
    fn block_offsets(&self) -> Vec<usize> {
        let mut offs: Vec<usize> = (0..=2 * self.n + 1).map(|b| b * self.nq).collect();
        offs.push(self.dim());
        offs
    }

    /// Assembles `A(t)`: diagonal blocks `Q^T - M_class[i]^T`,
    /// `Q^T - M_comp^T`, `Q^T - M_next[i]^T - lambda_i diag(d[B_i=1])` and
    /// `Q_red^T`, with the couplings the transposed row-form equations
    /// induce (all strictly above the block diagonal).
    fn coefficient(&self, t: f64, limit: RateLimit) -> DMatrix<f64> {
        let gen = GeneratorSet::build_with_limit(self.space, self.scenario, t, limit);
        let red = reduce(&gen);
        let (nq, n) = (self.nq, self.n);
        let m = nq - 1;
        let off_a = |i: usize| i * nq;
        let off_y = n * nq;
        let off_z = |i: usize| (n + 1 + i) * nq;
        let off_p = (2 * n + 1) * nq;

        let mut a = DMatrix::zeros(self.dim(), self.dim());
        // p = p_red T + b, so the p coupling of a moment block is (the
        // block's probability mask times) T^T: identity on the leading
        // states, -1 across the last row.
        let mut couple_p = |row_off: usize, mask: Option<&nalgebra::DVector<f64>>| {
            let weight = |r: usize| mask.map_or(1.0, |v| v[r]);
            for r in 0..m {
                a[(row_off + r, off_p + r)] += weight(r);
            }
            let w_last = weight(nq - 1);
            for c in 0..m {
                a[(row_off + nq - 1, off_p + c)] -= w_last;
            }
        };
        for i in 0..n {
            couple_p(off_a(i), None);
        }
        couple_p(off_y, Some(&self.ind.j_neq_0));
        for i in 0..n {
            couple_p(off_z(i), Some(&self.ind.b_eq_1[i]));
        }

        for r in 0..nq {
            for c in 0..nq {
                let qt = gen.q[(c, r)];
                for i in 0..n {
                    a[(off_a(i) + r, off_a(i) + c)] = qt - gen.m_class[i][(c, r)];
                    a[(off_a(i) + r, off_y + c)] = gen.m_class[i][(c, r)];
                    a[(off_z(i) + r, off_z(i) + c)] = qt - gen.m_next[i][(c, r)];
                    a[(off_y + r, off_z(i) + c)] = gen.m_comp[(c, r)] * self.ind.next_eq[i][c];
                }
                a[(off_y + r, off_y + c)] = qt - gen.m_comp[(c, r)];
            }
        }
        for i in 0..n {
            for r in 0..nq {
                a[(off_z(i) + r, off_z(i) + r)] -= gen.lambda[i] * self.ind.b_eq_1[i][r];
            }
        }
        for r in 0..m {
            for c in 0..m {
                a[(off_p + r, off_p + c)] = red.q_red[(c, r)];
            }
        }
        a
    }
}

fn mat_axpy(y: &mut DMatrix<f64>, alpha: f64, x: &DMatrix<f64>) {
    for (yv, xv) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *yv += alpha * xv;
    }
}

/// Integrates the monodromy matrix of the reduced homogeneous system over
/// one period and reports its Floquet multipliers. Column blocks of the
/// fundamental matrix propagate in parallel; the coefficient at each stage
/// time is assembled once per step and shared.
pub fn monodromy(
    space: &StateSpace,
    scenario: &Scenario,
    cfg: &IntegrationConfig,
) -> Result<FloquetReport> {
    cfg.validate()?;
    let system = CompactSystem::new(space, scenario);
    let dim = system.dim();
    let period = scenario.period();

    // Same grid machinery as the solver: uniform nodes plus breakpoints.
    let nodes = crate::ode::time_nodes(0.0, period, scenario, cfg);

    let chunk_cols = 32.min(dim);
    let mut blocks: Vec<(usize, DMatrix<f64>)> = (0..dim)
        .step_by(chunk_cols)
        .map(|start| {
            let k = chunk_cols.min(dim - start);
            let mut block = DMatrix::zeros(dim, k);
            for c in 0..k {
                block[(start + c, c)] = 1.0;
            }
            (start, block)
        })
        .collect();

    for w in nodes.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let h = tb - ta;
        let a_open = system.coefficient(ta, RateLimit::Right);
        let a_mid = system.coefficient(ta + h / 2.0, RateLimit::Right);
        let a_close = system.coefficient(tb, RateLimit::Left);
        blocks.par_iter_mut().for_each(|(_, block)| {
            let k = block.ncols();
            let mut k1 = DMatrix::zeros(dim, k);
            let mut k2 = DMatrix::zeros(dim, k);
            let mut k3 = DMatrix::zeros(dim, k);
            let mut k4 = DMatrix::zeros(dim, k);
            let mut stage = DMatrix::zeros(dim, k);

            k1.gemm(1.0, &a_open, block, 0.0);
            stage.copy_from(block);
            mat_axpy(&mut stage, h / 2.0, &k1);
            k2.gemm(1.0, &a_mid, &stage, 0.0);
            stage.copy_from(block);
            mat_axpy(&mut stage, h / 2.0, &k2);
            k3.gemm(1.0, &a_mid, &stage, 0.0);
            stage.copy_from(block);
            mat_axpy(&mut stage, h, &k3);
            k4.gemm(1.0, &a_close, &stage, 0.0);

            mat_axpy(block, h / 6.0, &k1);
            mat_axpy(block, h / 3.0, &k2);
            mat_axpy(block, h / 3.0, &k3);
            mat_axpy(block, h / 6.0, &k4);
        });
        if !blocks.iter().all(|(_, b)| b.iter().all(|v| v.is_finite())) {
            return Err(Error::Numerical {
                t: tb,
                message: "monodromy integration produced a non-finite value".into(),
            });
        }
    }

    let mut phi = DMatrix::<f64>::zeros(dim, dim);
    for (start, block) in &blocks {
        phi.view_mut((0, *start), (dim, block.ncols()))
            .copy_from(block);
    }

    let offsets = system.block_offsets();
    let mut multipliers = Vec::with_capacity(dim);
    for b in 0..offsets.len() - 1 {
        let (start, end) = (offsets[b], offsets[b + 1]);
        let block = phi
            .view((start, start), (end - start, end - start))
            .into_owned();
        multipliers.extend(block.complex_eigenvalues().iter().copied());
    }
    let spectral_radius = multipliers.iter().map(|m| m.norm()).fold(0.0, f64::max);

    let mut lower_block_residual: f64 = 0.0;
    for br in 0..offsets.len() - 1 {
        for bc in 0..br {
            for r in offsets[br]..offsets[br + 1] {
                for c in offsets[bc]..offsets[bc + 1] {
                    lower_block_residual = lower_block_residual.max(phi[(r, c)].abs());
                }
            }
        }
    }

    Ok(FloquetReport {
        multipliers,
        spectral_radius,
        stable: spectral_radius < 1.0,
        lower_block_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::single_class_constant;
    use approx::assert_relative_eq;

    fn small_cfg() -> PssConfig {
        PssConfig {
            integration: IntegrationConfig {
                steps_per_period: 400,
            },
            ..PssConfig::default()
        }
    }

    #[test]
    fn renormalize_examples() {
        let space = StateSpace::enumerate(1).unwrap();
        let mut x = MomentStack::zeros(1, 3);
        x.probabilities_mut().copy_from_slice(&[0.5, 0.5, 0.1]);
        x.aoi_mut(0).fill(0.7);
        let out = renormalize(&x).unwrap();
        let expect = [0.5 / 1.1, 0.5 / 1.1, 0.1 / 1.1];
        for (got, want) in out.probabilities().iter().zip(&expect) {
            assert_relative_eq!(got, want, epsilon = 1e-15);
        }
        // moment blocks untouched
        assert_eq!(out.aoi(0), x.aoi(0));
        // already normalized: unchanged
        let y = MomentStack::idle_start(&space);
        assert_eq!(renormalize(&y).unwrap(), y);
        // nonpositive mass is a numerical failure
        let z = MomentStack::zeros(1, 3);
        assert!(renormalize(&z).is_err());
    }

    #[test]
    fn all_zero_rates_make_the_map_affine_growth() {
        let space = StateSpace::enumerate(1).unwrap();
        let scenario = Scenario::constant(10.0, &[(0.0, 0.0)]).unwrap();
        let cfg = IntegrationConfig {
            steps_per_period: 200,
        };
        let mut x0 = MomentStack::idle_start(&space);
        x0.aoi_mut(0)[0] = 0.4;
        let fx = one_period_map(&x0, &space, &scenario, &cfg).unwrap();
        assert_eq!(fx.probabilities(), x0.probabilities());
        assert_relative_eq!(fx.aoi(0)[0], 0.4 + 10.0, epsilon = 1e-10);
    }

    #[test]
    fn time_invariant_map_has_the_semigroup_property() {
        let space = StateSpace::enumerate(1).unwrap();
        let scenario = single_class_constant();
        let cfg = IntegrationConfig {
            steps_per_period: 500,
        };
        let x0 = MomentStack::idle_start(&space);
        let once = one_period_map(&x0, &space, &scenario, &cfg).unwrap();
        let twice = one_period_map(&once, &space, &scenario, &cfg).unwrap();
        let direct = integrate(&x0, 0.0, 2.0 * scenario.period(), &space, &scenario, &cfg).unwrap();
        assert_relative_eq!(
            twice.as_vector(),
            direct.as_vector(),
            epsilon = 1e-10,
            max_relative = 1e-10
        );
    }

    #[test]
    fn relaxation_does_not_move_the_fixed_point() {
        let space = StateSpace::enumerate(1).unwrap();
        let scenario = single_class_constant();
        let full = solve(&space, &scenario, &small_cfg()).unwrap();
        assert!(full.converged);
        for alpha in [0.25, 0.5] {
            let relaxed = solve(
                &space,
                &scenario,
                &PssConfig {
                    alpha,
                    ..small_cfg()
                },
            )
            .unwrap();
            assert!(relaxed.converged);
            assert!(relaxed.iterations >= full.iterations);
            let diff = relative_residual(&relaxed.initial, &full.initial);
            assert!(
                diff <= 100.0 * small_cfg().epsilon,
                "alpha {alpha}: diff = {diff}"
            );
        }
    }

    #[test]
    fn damping_slows_the_contraction() {
        // the iteration multiplier grows as alpha shrinks, so the fitted
        // geometric ratio must not improve under damping
        let space = StateSpace::enumerate(3).unwrap();
        let scenario = crate::test_support::three_class_pass();
        let cfg = PssConfig {
            integration: IntegrationConfig {
                steps_per_period: 400,
            },
            ..PssConfig::default()
        };
        let full = solve(&space, &scenario, &cfg).unwrap();
        let damped = solve(&space, &scenario, &PssConfig { alpha: 0.5, ..cfg }).unwrap();
        assert!(full.converged && damped.converged);
        assert!(damped.iterations > full.iterations);
        let rate_full = contraction_rate(&full.residual_history).unwrap();
        let rate_damped = contraction_rate(&damped.residual_history).unwrap();
        assert!(
            rate_damped >= rate_full,
            "damped ratio {rate_damped} beat undamped {rate_full}"
        );
        assert!(rate_damped < 1.0);
    }

    #[test]
    fn contraction_rate_of_exact_geometric_sequence() {
        let r = [1.0, 0.1, 0.01, 0.001, 1e-4];
        assert_relative_eq!(contraction_rate(&r).unwrap(), 0.1, epsilon = 1e-12);
        assert!(contraction_rate(&r[..4]).is_err());
    }

    #[test]
    fn all_zero_rates_are_flagged_unstable() {
        let space = StateSpace::enumerate(1).unwrap();
        let scenario = Scenario::constant(10.0, &[(0.0, 0.0)]).unwrap();
        let cfg = IntegrationConfig {
            steps_per_period: 100,
        };
        let report = monodromy(&space, &scenario, &cfg).unwrap();
        // A = 0 gives the identity monodromy: every multiplier exactly 1
        assert!(!report.stable);
        assert_relative_eq!(report.spectral_radius, 1.0, epsilon = 1e-12);
        assert_eq!(report.multipliers.len(), 3 * 3 + 2);
        for m in &report.multipliers {
            assert_relative_eq!(m.re, 1.0, epsilon = 1e-12);
            assert_relative_eq!(m.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_class_monodromy_is_stable() {
        let space = StateSpace::enumerate(1).unwrap();
        let scenario = single_class_constant();
        let cfg = IntegrationConfig {
            steps_per_period: 400,
        };
        let report = monodromy(&space, &scenario, &cfg).unwrap();
        assert!(report.stable, "radius = {}", report.spectral_radius);
        assert!(report.lower_block_residual <= 1e-12);
        assert_eq!(report.multipliers.len(), 3 * 3 + 2);
    }

    #[test]
    fn four_class_scenario_solves_end_to_end() {
        // wider state space (65 states, stack dimension 650): exercises the
        // block offsets and occupancy masks beyond the small reference cases
        let space = StateSpace::enumerate(4).unwrap();
        let scenario = Scenario::windowed(
            10.0,
            5.0,
            &[
                (1.0, 0.05, 0.10),
                (1.5, 0.10, 0.30),
                (3.0, 0.20, 0.80),
                (2.0, 0.15, 0.40),
            ],
        )
        .unwrap();
        let cfg = PssConfig {
            epsilon: 1e-9,
            integration: IntegrationConfig {
                steps_per_period: 250,
            },
            ..PssConfig::default()
        };
        let solution = solve(&space, &scenario, &cfg).unwrap();
        assert!(solution.converged);
        for x in &solution.trajectory.states {
            assert!((x.probabilities().sum() - 1.0).abs() <= 1e-8);
            assert!(x.as_vector().min() >= -1e-10);
        }
        let table = crate::metrics::MetricsTable::from_trajectory(&solution.trajectory, &space);
        for cm in &table.classes {
            for k in 0..table.times.len() {
                if let (Some(lhs), Some(rhs)) = (cm.gap_lhs[k], cm.gap_rhs[k]) {
                    assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + lhs.abs()));
                }
            }
        }
    }

    #[test]
    fn zero_arrival_class_still_gets_a_report() {
        // a class that never generates traffic leaves parts of the state
        // space unreachable; the diagnostic must report, not reject
        let space = StateSpace::enumerate(2).unwrap();
        let scenario = Scenario::constant(10.0, &[(1.0, 0.5), (1.0, 0.0)]).unwrap();
        let cfg = IntegrationConfig {
            steps_per_period: 200,
        };
        let report = monodromy(&space, &scenario, &cfg).unwrap();
        assert_eq!(report.multipliers.len(), 5 * 9 + 8);
        assert!(report.spectral_radius.is_finite());
        assert!(report.lower_block_residual <= 1e-12);
    }

    #[test]
    fn monodromy_matches_matrix_exponential_for_constant_rates() {
        // with a time-invariant coefficient the monodromy is exactly
        // exp(A T); the multiplier multiset must match its eigenvalues
        let space = StateSpace::enumerate(1).unwrap();
        let scenario = single_class_constant();
        let cfg = IntegrationConfig {
            steps_per_period: 2000,
        };
        let report = monodromy(&space, &scenario, &cfg).unwrap();

        let system = CompactSystem::new(&space, &scenario);
        let a = system.coefficient(0.3, RateLimit::Right);
        let oracle_phi = (a * scenario.period()).exp();
        let mut oracle: Vec<Complex<f64>> =
            oracle_phi.complex_eigenvalues().iter().copied().collect();
        assert_eq!(oracle.len(), report.multipliers.len());
        for m in &report.multipliers {
            let (k, dist) = oracle
                .iter()
                .enumerate()
                .map(|(k, o)| (k, (o - m).norm()))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .unwrap();
            assert!(
                dist <= 1e-6,
                "multiplier {m} has no exponential-oracle partner (nearest {dist:e})"
            );
            oracle.swap_remove(k);
        }
    }
}
