//! Fuzz rate-profile construction and evaluation.
//!
//! Raw bytes are decoded into profile parameters and probe times. Profiles
//! that pass validation must evaluate without panics to finite nonnegative
//! values dominated by `max_rate`, with `value_left` agreeing except at
//! piecewise jumps.
#![no_main]

use libfuzzer_sys::fuzz_target;

use aoiq::rates::RateProfile;

struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn f64(&mut self, lo: f64, hi: f64) -> f64 {
        let mut bytes = [0u8; 2];
        for b in &mut bytes {
            *b = *self.data.get(self.pos).unwrap_or(&0);
            self.pos += 1;
        }
        lo + (hi - lo) * (u16::from_le_bytes(bytes) as f64 / u16::MAX as f64)
    }

    fn usize(&mut self, max: usize) -> usize {
        let b = *self.data.get(self.pos).unwrap_or(&0);
        self.pos += 1;
        b as usize % max
    }
}

fuzz_target!(|data: &[u8]| {
    let mut d = Decoder { data, pos: 0 };
    let period = d.f64(0.5, 50.0);
    let profile = match d.usize(4) {
        0 => RateProfile::WindowedSinusoidService {
            mu_peak: d.f64(0.0, 10.0),
            t_pass: d.f64(0.0, 60.0),
            period,
        },
        1 => RateProfile::WindowedSinusoidArrival {
            lambda_base: d.f64(0.0, 5.0),
            lambda_peak: d.f64(0.0, 5.0),
            t_pass: d.f64(0.0, 60.0),
            period,
        },
        2 => {
            let pieces = 1 + d.usize(6);
            let mut breakpoints = vec![0.0];
            for _ in 1..pieces {
                let last = *breakpoints.last().unwrap();
                breakpoints.push(last + d.f64(0.0, period / pieces as f64));
            }
            RateProfile::PiecewiseConstant {
                period,
                values: (0..pieces).map(|_| d.f64(0.0, 10.0)).collect(),
                breakpoints,
            }
        }
        _ => RateProfile::SampledTable {
            period,
            samples: (0..1 + d.usize(8)).map(|_| d.f64(0.0, 10.0)).collect(),
        },
    };

    if profile.validate().is_err() {
        return;
    }
    let bound = profile.max_rate();
    // A phase one ulp across a jump legitimately changes a discontinuous
    // profile by the full jump height, so the periodicity probe only makes
    // sense for the continuous kinds.
    let continuous = !matches!(profile, RateProfile::PiecewiseConstant { .. });
    for _ in 0..32 {
        let t = d.f64(0.0, 4.0 * period);
        for v in [profile.value(t), profile.value_left(t)] {
            assert!(v.is_finite() && v >= 0.0);
            assert!(v <= bound * (1.0 + 1e-12) + 1e-12);
        }
        if continuous {
            let shifted = profile.value(t + period);
            assert!((shifted - profile.value(t)).abs() <= 1e-8 * (1.0 + bound));
        }
    }
    for b in profile.breakpoints() {
        assert!(b.is_finite() && (0.0..profile.period()).contains(&b));
    }
});
