use rayon::prelude::*;

use super::{ScenarioConfig, SimError, World};

const PROBE_RUNS: u64 = 20;
const MAX_STEPS: u32 = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub p_transmit: f64,
    pub r0: f64,
    /// Every `(p, R0)` pair tried, in order.
    pub probes: Vec<(f64, f64)>,
}

/// Seeds for the probe runs, shared by every probe so that estimates at
/// different `p` use common random numbers.
pub fn probe_seeds(base: u64, count: u64) -> Vec<u64> {
    (0..count)
        .map(|k| {
            base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(k.wrapping_mul(0xD1B5_4A32_D192_ED03))
        })
        .collect()
}

/// Mean secondary infections per index case, pooled over one run per seed.
///
/// Tracing is off and each run lasts exactly one course of infection, so
/// every index case has finished transmitting.
pub fn estimate_r0(config: &ScenarioConfig, p_transmit: f64, seeds: &[u64]) -> Result<f64, SimError> {
    let mut cfg = config.clone();
    cfg.tracing = false;
    cfg.p_transmit = Some(p_transmit);
    cfg.days = cfg.course_days + 1;
    cfg.validate()?;
    let (secondary, index) = seeds
        .par_iter()
        .map(|&seed| {
            let mut world = World::new(&cfg, seed).expect("validated");
            for _ in 0..cfg.days {
                world.step_day();
            }
            world
                .agents()
                .iter()
                .filter(|a| a.index_case)
                .fold((0u64, 0u64), |(s, n), a| (s + u64::from(a.secondary), n + 1))
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(if index == 0 {
        0.0
    } else {
        secondary as f64 / index as f64
    })
}

/// Bisection on the per-tick transmission probability until the estimated
/// R0 is within `tolerance` of `target`.
pub fn calibrate_p_transmit(config: &ScenarioConfig, target: f64, tolerance: f64) -> Result<Calibration, SimError> {
    config.validate()?;
    if target <= 0.0 {
        return Ok(Calibration {
            p_transmit: 0.0,
            r0: 0.0,
            probes: vec![(0.0, 0.0)],
        });
    }
    let seeds = probe_seeds(config.seed, PROBE_RUNS);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut probes = Vec::new();
    let mut best = (0.0, 0.0);
    for _ in 0..MAX_STEPS {
        let p = 0.5 * (lo + hi);
        let r0 = estimate_r0(config, p, &seeds)?;
        probes.push((p, r0));
        if (r0 - target).abs() < (best.1 - target).abs() {
            best = (p, r0);
        }
        if (r0 - target).abs() <= tolerance {
            return Ok(Calibration {
                p_transmit: p,
                r0,
                probes,
            });
        }
        if r0 < target {
            lo = p;
        } else {
            hi = p;
        }
    }
    Err(SimError::NoConvergence {
        target,
        best_p: best.0,
        best_r0: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            population: 400,
            index_cases: 10,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn r0_grows_with_p() {
        let seeds = probe_seeds(3, 4);
        let cfg = small();
        let a = estimate_r0(&cfg, 0.001, &seeds).unwrap();
        let b = estimate_r0(&cfg, 0.01, &seeds).unwrap();
        assert!(a < b, "{a} {b}");
        assert_eq!(estimate_r0(&cfg, 0.0, &seeds).unwrap(), 0.0);
    }

    #[test]
    fn doubling_contacts_doubles_r0() {
        let seeds = probe_seeds(4, 20);
        let cfg = small();
        let once = estimate_r0(&cfg, 0.002, &seeds).unwrap();
        let twice = estimate_r0(
            &ScenarioConfig {
                mean_daily_contacts: 2.0 * cfg.mean_daily_contacts,
                ..cfg
            },
            0.002,
            &seeds,
        )
        .unwrap();
        let ratio = twice / once;
        assert!((1.7..=2.3).contains(&ratio), "{once} -> {twice}");
    }

    #[test]
    fn calibrated_p_holds_out_of_sample() {
        let cfg = ScenarioConfig {
            population: 2000,
            index_cases: 20,
            ..ScenarioConfig::default()
        };
        let c = calibrate_p_transmit(&cfg, 2.15, 0.1).unwrap();
        let fresh = probe_seeds(cfg.seed + 500, 20);
        let r0 = estimate_r0(&cfg, c.p_transmit, &fresh).unwrap();
        assert!((r0 - 2.15).abs() <= 0.3, "{r0}");
    }

    #[test]
    fn calibration_hits_target() {
        let c = calibrate_p_transmit(&small(), 2.0, 0.1).unwrap();
        assert!((c.r0 - 2.0).abs() <= 0.1);
        assert!(c.p_transmit > 0.0 && c.p_transmit < 1.0);
        assert_eq!(calibrate_p_transmit(&small(), 0.0, 0.1).unwrap().p_transmit, 0.0);
    }

    #[test]
    fn unreachable_target_fails() {
        let cfg = ScenarioConfig {
            mean_daily_contacts: 0.0,
            ..small()
        };
        assert!(matches!(
            calibrate_p_transmit(&cfg, 2.0, 0.05),
            Err(SimError::NoConvergence { .. })
        ));
    }
}
