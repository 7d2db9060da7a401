//! Fuzz the scenario-file parser and validation.
//!
//! Properties:
//! 1. `ScenarioConfig::parse` never panics on arbitrary input.
//! 2. Anything it accepts builds a scenario whose rate evaluations are
//!    finite, nonnegative, and bounded by `max_rate`.
//! 3. Accepted documents also yield valid solver and simulation configs.
#![no_main]

use libfuzzer_sys::fuzz_target;

use aoiq::config::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = ScenarioConfig::parse(text) else {
        return;
    };
    let scenario = cfg.scenario().expect("parse validated the scenario");
    let period = scenario.period();
    for k in 0..16 {
        let t = period * k as f64 / 8.0;
        for i in 0..scenario.n_classes() {
            for (rate, bound) in [
                (
                    scenario.arrival_rate(i, t),
                    scenario.arrival_profile(i).max_rate(),
                ),
                (
                    scenario.service_rate(i, t),
                    scenario.service_profile(i).max_rate(),
                ),
            ] {
                assert!(rate.is_finite() && rate >= 0.0);
                assert!(rate <= bound * (1.0 + 1e-12) + 1e-12);
            }
        }
    }
    let _ = cfg.solver_config().expect("parse validated the solver");
    let _ = cfg.mc_config().expect("parse validated the mc section");
});
