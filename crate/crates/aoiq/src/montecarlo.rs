//! Discrete-event simulation of the physical queue, used to cross-validate
//! the moment ODE solution.
//!
//! Arrivals and completions are sampled exactly by thinning: candidate
//! events of a constant majorizing rate are accepted with probability
//! `rate(t) / max_rate`. Paths are independent, seeded from the root seed by
//! a documented splitting rule, and reduced in path order, so every estimate
//! is reproducible regardless of thread scheduling.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::MetricsTable;
use crate::pss::PssSolution;
use crate::rates::Scenario;
use crate::state_space::{StateSpace, SystemState};

/// Simulation settings.
#[derive(Clone, Copy, Debug)]
pub struct McConfig {
    pub n_paths: usize,
    /// Independent repetitions of the whole estimate; trial `k` shifts the
    /// root seed by `k`.
    pub n_trials: usize,
    /// Periods discarded before sampling starts.
    pub warmup_periods: usize,
    /// Periods sampled after warmup.
    pub sample_periods: usize,
    /// Phase bins per period for AoI samples and completion records.
    pub bins_per_period: usize,
    pub root_seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_paths: 1000,
            n_trials: 1,
            warmup_periods: 20,
            sample_periods: 20,
            bins_per_period: 200,
            root_seed: 1,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || self.n_trials == 0 {
            return Err(Error::config("n_paths and n_trials must be at least 1"));
        }
        if self.sample_periods == 0 || self.bins_per_period == 0 {
            return Err(Error::config(
                "sample_periods and bins_per_period must be at least 1",
            ));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Splitting rule for per-path seeds: one splitmix64 step of the root seed
/// xor the golden-ratio multiple of the path index.
pub fn path_seed(root_seed: u64, path_index: u64) -> u64 {
    splitmix64(root_seed ^ path_index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Live state of one simulated path.
#[derive(Clone, Debug)]
pub struct PathState {
    pub t: f64,
    pub state: SystemState,
    /// Generation timestamp of the in-service packet; present iff busy.
    pub service_gen_time: Option<f64>,
    /// Generation timestamp of the waiting packet per class; present iff
    /// the buffer is occupied.
    pub buffer_gen_time: Vec<Option<f64>>,
    /// Generation timestamp of the freshest delivered packet per class.
    pub monitor_origin: Vec<f64>,
}

/// Optional event log entry for debugging and engine-invariant tests.
#[derive(Clone, Debug)]
pub enum PathEvent {
    Arrival {
        t: f64,
        class: usize,
        replaced: bool,
        started_service: bool,
    },
    Completion {
        t: f64,
        class: usize,
        pre_age: f64,
        served_gen_time: f64,
        prev_state: SystemState,
        entering: usize,
    },
}

/// Per-path accumulators: phase-binned AoI means, completion records, state
/// visits at sampling instants, and accepted-arrival counts.
#[derive(Clone, Debug)]
pub struct PathStats {
    pub bins: usize,
    pub sample_periods: usize,
    /// Per-class per-bin mean AoI over the sampled periods.
    pub aoi_mean: Vec<Vec<f64>>,
    pub peak_sum: Vec<Vec<f64>>,
    pub peak_sq: Vec<Vec<f64>>,
    pub peak_count: Vec<Vec<u64>>,
    /// Accepted arrivals per class per bin within the sampling window.
    pub arrivals: Vec<Vec<u64>>,
    /// State occupancy counts at sampling instants.
    pub state_visits: Vec<u64>,
    pub events: Option<Vec<PathEvent>>,
}

fn exp_after(rng: &mut ChaCha8Rng, t: f64, rate: f64) -> f64 {
    if rate > 0.0 {
        t + Exp::new(rate).expect("positive rate").sample(rng)
    } else {
        f64::INFINITY
    }
}

/// Simulates one path and returns its accumulators.
///
/// The system starts empty and idle with all monitor ages zero. AoI is
/// sampled at every phase-bin edge of every period after warmup; each
/// completion after warmup contributes its pre-completion age to the bin
/// containing its phase.
pub fn simulate_path(
    space: &StateSpace,
    scenario: &Scenario,
    cfg: &McConfig,
    seed: u64,
    log_events: bool,
) -> PathStats {
    let n = scenario.n_classes();
    let period = scenario.period();
    let bins = cfg.bins_per_period;
    let bin_width = period / bins as f64;
    let warmup = cfg.warmup_periods as f64 * period;
    let horizon = warmup + cfg.sample_periods as f64 * period;

    let lambda_max: Vec<f64> = (0..n)
        .map(|i| scenario.arrival_profile(i).max_rate())
        .collect();
    let mu_max: Vec<f64> = (0..n)
        .map(|i| scenario.service_profile(i).max_rate())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut path = PathState {
        t: 0.0,
        state: SystemState::IDLE,
        service_gen_time: None,
        buffer_gen_time: vec![None; n],
        monitor_origin: vec![0.0; n],
    };

    let mut next_arrival: Vec<f64> = lambda_max
        .iter()
        .map(|&lm| exp_after(&mut rng, 0.0, lm))
        .collect();
    let mut next_service = f64::INFINITY;

    let mut stats = PathStats {
        bins,
        sample_periods: cfg.sample_periods,
        aoi_mean: vec![vec![0.0; bins]; n],
        peak_sum: vec![vec![0.0; bins]; n],
        peak_sq: vec![vec![0.0; bins]; n],
        peak_count: vec![vec![0; bins]; n],
        arrivals: vec![vec![0; bins]; n],
        state_visits: vec![0; space.len()],
        events: log_events.then(Vec::new),
    };

    let total_samples = (cfg.sample_periods * bins) as u64;
    let mut sample_idx: u64 = 0;
    let sample_time = |idx: u64| {
        warmup + (idx / bins as u64) as f64 * period + (idx % bins as u64) as f64 * bin_width
    };
    let bin_of = |t: f64| (((t.rem_euclid(period)) / bin_width) as usize).min(bins - 1);

    loop {
        let arrival_class = (0..n).fold(None::<usize>, |best, k| match best {
            Some(b) if next_arrival[b] <= next_arrival[k] => Some(b),
            _ => Some(k),
        });
        let t_arrival = arrival_class.map_or(f64::INFINITY, |k| next_arrival[k]);
        let t_event = t_arrival.min(next_service);

        // drain sampling instants up to the next event
        while sample_idx < total_samples {
            let ts = sample_time(sample_idx);
            if ts > t_event || ts > horizon {
                break;
            }
            let bin = (sample_idx % bins as u64) as usize;
            for i in 0..n {
                stats.aoi_mean[i][bin] += ts - path.monitor_origin[i];
            }
            stats.state_visits[space.index_of(&path.state)] += 1;
            sample_idx += 1;
        }
        if t_event > horizon || !t_event.is_finite() {
            break;
        }

        if t_arrival <= next_service {
            let k = arrival_class.expect("finite arrival time implies a class");
            let t = t_arrival;
            if rng.random::<f64>() * lambda_max[k] < scenario.arrival_rate(k, t) {
                let replaced = !path.state.is_idle() && path.state.buffer_occupied(k + 1);
                let started_service = path.state.is_idle();
                if started_service {
                    path.state = path.state.after_arrival(k + 1);
                    path.service_gen_time = Some(t);
                    next_service = exp_after(&mut rng, t, mu_max[k]);
                } else {
                    path.state = path.state.after_arrival(k + 1);
                    path.buffer_gen_time[k] = Some(t); // latest-only overwrite
                }
                if t >= warmup {
                    stats.arrivals[k][bin_of(t)] += 1;
                }
                if let Some(events) = stats.events.as_mut() {
                    events.push(PathEvent::Arrival {
                        t,
                        class: k + 1,
                        replaced,
                        started_service,
                    });
                }
            }
            next_arrival[k] = exp_after(&mut rng, t, lambda_max[k]);
        } else {
            let t = next_service;
            let j = path.state.class_in_service();
            debug_assert!(j > 0, "service candidate while idle");
            if rng.random::<f64>() * mu_max[j - 1] < scenario.service_rate(j - 1, t) {
                let pre_age = t - path.monitor_origin[j - 1];
                if t >= warmup {
                    let bin = bin_of(t);
                    stats.peak_sum[j - 1][bin] += pre_age;
                    stats.peak_sq[j - 1][bin] += pre_age * pre_age;
                    stats.peak_count[j - 1][bin] += 1;
                }
                let served_gen = path
                    .service_gen_time
                    .take()
                    .expect("busy state carries a service generation time");
                path.monitor_origin[j - 1] = served_gen;
                let prev_state = path.state;
                let entering = path.state.next_class();
                path.state = path.state.after_completion();
                if entering != 0 {
                    path.service_gen_time = Some(
                        path.buffer_gen_time[entering - 1]
                            .take()
                            .expect("selected buffer holds a packet"),
                    );
                    next_service = exp_after(&mut rng, t, mu_max[entering - 1]);
                } else {
                    next_service = f64::INFINITY;
                }
                if let Some(events) = stats.events.as_mut() {
                    events.push(PathEvent::Completion {
                        t,
                        class: j,
                        pre_age,
                        served_gen_time: served_gen,
                        prev_state,
                        entering,
                    });
                }
            } else {
                next_service = exp_after(&mut rng, t, mu_max[j - 1]);
            }
        }
        path.t = t_event;
    }

    for i in 0..n {
        for b in 0..bins {
            stats.aoi_mean[i][b] /= cfg.sample_periods as f64;
        }
    }
    stats
}

/// Runs `cfg.n_paths` independent paths in parallel. Path `k` uses seed
/// `path_seed(root_seed, k)`; the returned vector is ordered by path index.
pub fn run_paths(
    space: &StateSpace,
    scenario: &Scenario,
    cfg: &McConfig,
    log_events: bool,
) -> Vec<PathStats> {
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            simulate_path(
                space,
                scenario,
                cfg,
                path_seed(cfg.root_seed, p as u64),
                log_events,
            )
        })
        .collect()
}

/// One estimated quantity in one phase bin.
#[derive(Clone, Copy, Debug)]
pub struct BinStat {
    pub mean: Option<f64>,
    pub se: Option<f64>,
    pub count: u64,
}

/// Binned empirical mean AoI and peak AoI with standard errors.
#[derive(Clone, Debug)]
pub struct McEstimate {
    pub period: f64,
    /// Left edge phase of each bin.
    pub bin_edges: Vec<f64>,
    pub mean_aoi: Vec<Vec<BinStat>>,
    pub peak_aoi: Vec<Vec<BinStat>>,
    pub n_paths: usize,
    pub n_trials: usize,
}

/// Aggregates per-path statistics into binned estimates.
///
/// Mean-AoI bins average the per-path means; their standard error is the
/// across-path deviation over `sqrt(n_paths)`. Peak-AoI bins pool the
/// completion records of all paths; bins with no completions are undefined.
pub fn estimate(paths: &[PathStats], period: f64) -> Result<McEstimate> {
    let first = paths
        .first()
        .ok_or_else(|| Error::InsufficientData("estimate needs at least one path".into()))?;
    let bins = first.bins;
    let n = first.aoi_mean.len();
    let n_paths = paths.len();
    if paths
        .iter()
        .any(|p| p.bins != bins || p.aoi_mean.len() != n)
    {
        return Err(Error::config(
            "paths disagree on bin count or class count; estimate them separately",
        ));
    }

    let bin_edges = (0..bins).map(|b| b as f64 * period / bins as f64).collect();
    let mut mean_aoi = vec![Vec::with_capacity(bins); n];
    let mut peak_aoi = vec![Vec::with_capacity(bins); n];

    for i in 0..n {
        for b in 0..bins {
            let mean = paths.iter().map(|p| p.aoi_mean[i][b]).sum::<f64>() / n_paths as f64;
            let se = (n_paths >= 2).then(|| {
                let var = paths
                    .iter()
                    .map(|p| (p.aoi_mean[i][b] - mean).powi(2))
                    .sum::<f64>()
                    / (n_paths - 1) as f64;
                (var / n_paths as f64).sqrt()
            });
            mean_aoi[i].push(BinStat {
                mean: Some(mean),
                se,
                count: n_paths as u64,
            });

            let count: u64 = paths.iter().map(|p| p.peak_count[i][b]).sum();
            let sum: f64 = paths.iter().map(|p| p.peak_sum[i][b]).sum();
            let sq: f64 = paths.iter().map(|p| p.peak_sq[i][b]).sum();
            let mean_peak = (count > 0).then(|| sum / count as f64);
            let se_peak = (count >= 2).then(|| {
                let var = ((sq - sum * sum / count as f64) / (count - 1) as f64).max(0.0);
                (var / count as f64).sqrt()
            });
            peak_aoi[i].push(BinStat {
                mean: mean_peak,
                se: se_peak,
                count,
            });
        }
    }

    Ok(McEstimate {
        period,
        bin_edges,
        mean_aoi,
        peak_aoi,
        n_paths,
        n_trials: 1,
    })
}

/// Mean absolute error of an estimate against the solver trajectory.
#[derive(Clone, Debug)]
pub struct MaeReport {
    pub n_paths: usize,
    /// Per-class mean-AoI MAE over all bins.
    pub mean_aoi_mae: Vec<f64>,
    /// Per-class peak-AoI MAE over bins where both sides are defined.
    pub peak_aoi_mae: Vec<Option<f64>>,
    pub mean_aoi_mae_aggregate: f64,
    pub peak_aoi_mae_aggregate: Option<f64>,
    /// Average solver mean-AoI level, the scale reference for
    /// `relative_mean_aoi_mae`.
    pub ode_mean_level: f64,
    pub relative_mean_aoi_mae: f64,
    /// Bins excluded from the peak-AoI MAE because either side was
    /// undefined there.
    pub undefined_peak_bins: usize,
}

/// Compares an estimate with a solved periodic trajectory bin by bin.
///
/// Mean AoI is compared at bin left edges, peak AoI at bin centers (the
/// representative phase of the completions pooled into the bin). Both
/// phases must land exactly on solver grid nodes; mismatched grids are a
/// configuration error.
pub fn validate(space: &StateSpace, pss: &PssSolution, est: &McEstimate) -> Result<MaeReport> {
    let table = MetricsTable::from_trajectory(&pss.trajectory, space);
    let n = space.n_classes();
    let bins = est.bin_edges.len();
    let period = est.period;
    let tol = period * 1e-9;

    let node = |phase: f64| -> Result<usize> {
        pss.trajectory.index_at_time(phase, tol).ok_or_else(|| {
            Error::config(format!(
                "estimate phase {phase} does not land on the solver grid; \
                 choose bins_per_period dividing steps_per_period with an even ratio"
            ))
        })
    };

    let mut mean_aoi_mae = Vec::with_capacity(n);
    let mut peak_aoi_mae = Vec::with_capacity(n);
    let mut undefined_peak_bins = 0usize;
    let mut level_sum = 0.0;
    let mut mean_abs_sum = 0.0;
    let mut mean_count = 0usize;
    let mut peak_abs_sum = 0.0;
    let mut peak_count = 0usize;

    for i in 0..n {
        let mut abs_sum = 0.0;
        for b in 0..bins {
            let idx = node(est.bin_edges[b])?;
            let ode = table.classes[i].mean_aoi[idx];
            let mc = est.mean_aoi[i][b].mean.expect("mean AoI bins are defined");
            abs_sum += (ode - mc).abs();
            level_sum += ode;
        }
        mean_aoi_mae.push(abs_sum / bins as f64);
        mean_abs_sum += abs_sum;
        mean_count += bins;

        let mut peak_sum = 0.0;
        let mut defined = 0usize;
        for b in 0..bins {
            let center = (b as f64 + 0.5) * period / bins as f64;
            let idx = node(center)?;
            match (table.classes[i].peak_aoi[idx], est.peak_aoi[i][b].mean) {
                (Some(ode), Some(mc)) => {
                    peak_sum += (ode - mc).abs();
                    defined += 1;
                }
                _ => undefined_peak_bins += 1,
            }
        }
        peak_aoi_mae.push((defined > 0).then(|| peak_sum / defined as f64));
        peak_abs_sum += peak_sum;
        peak_count += defined;
    }

    let mean_aoi_mae_aggregate = mean_abs_sum / mean_count as f64;
    let ode_mean_level = level_sum / mean_count as f64;
    Ok(MaeReport {
        n_paths: est.n_paths,
        mean_aoi_mae,
        peak_aoi_mae,
        mean_aoi_mae_aggregate,
        peak_aoi_mae_aggregate: (peak_count > 0).then(|| peak_abs_sum / peak_count as f64),
        ode_mean_level,
        relative_mean_aoi_mae: mean_aoi_mae_aggregate / ode_mean_level,
        undefined_peak_bins,
    })
}

/// MAE reports for estimates built from growing path-count prefixes of one
/// path ensemble.
pub fn progressive_mae(
    space: &StateSpace,
    pss: &PssSolution,
    paths: &[PathStats],
    counts: &[usize],
    period: f64,
) -> Result<Vec<MaeReport>> {
    let mut reports = Vec::with_capacity(counts.len());
    for &c in counts {
        if c == 0 || c > paths.len() {
            return Err(Error::config(format!(
                "progressive path count {c} outside the simulated ensemble of {}",
                paths.len()
            )));
        }
        reports.push(validate(space, pss, &estimate(&paths[..c], period)?)?);
    }
    Ok(reports)
}
