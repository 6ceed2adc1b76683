use std::collections::{BTreeSet, HashSet};

use tracenet::casework::{decode_trace, CaseState, MessageKind};
use tracenet::simnet::{
    calibrate_p_transmit, estimate_r_effective_report, probe_seeds, run, run_traced, HealthState, MetricsReport,
    ScenarioConfig, ScriptedContact, SimError, TracedCategories, World,
};

fn base(population: usize) -> ScenarioConfig {
    ScenarioConfig {
        population,
        days: 30,
        seed: 11,
        p_transmit: Some(0.01),
        index_cases: population.min(5),
        ..ScenarioConfig::default()
    }
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

fn windows<const K: usize>(blobs: &[&[u8]]) -> HashSet<[u8; K]> {
    blobs
        .iter()
        .flat_map(|b| b.windows(K))
        .map(|w| w.try_into().unwrap())
        .collect()
}

#[test]
fn empty_world_runs() {
    let cfg = ScenarioConfig {
        population: 0,
        index_cases: 0,
        ..base(0)
    };
    let (report, trace) = run_traced(&cfg).unwrap();
    assert_eq!(report.days.len(), 30);
    assert!(report.days.iter().all(|d| d.new_infections == 0 && d.active_cases == 0));
    assert_eq!(report.final_attack_rate, 0.0);
    assert!(trace.events.lines().all(|l| l.contains(",publish,")));
}

#[test]
fn zero_days_gives_empty_series() {
    let report = run(&ScenarioConfig { days: 0, ..base(50) }).unwrap();
    assert!(report.days.is_empty());
}

#[test]
fn invalid_config_is_reported() {
    let cfg = ScenarioConfig {
        adoption_fraction: 1.5,
        ..base(10)
    };
    let Err(SimError::InvalidConfig(fields)) = run(&cfg) else {
        panic!("expected InvalidConfig")
    };
    assert_eq!(fields[0].field, "adoption_fraction");
    assert!(run(&ScenarioConfig {
        p_transmit: None,
        ..base(10)
    })
    .is_err());
}

#[test]
fn full_adoption_equips_everyone() {
    let cfg = ScenarioConfig {
        adoption_fraction: 1.0,
        ..base(200)
    };
    let world = World::new(&cfg, 1).unwrap();
    assert!(world.agents().iter().all(|a| a.is_adopter()));
    let off = ScenarioConfig { tracing: false, ..cfg };
    assert!(World::new(&off, 1).unwrap().agents().iter().all(|a| !a.is_adopter()));
}

#[test]
fn no_infection_means_no_transmission_or_publication() {
    let cfg = ScenarioConfig {
        index_cases: 0,
        adoption_fraction: 1.0,
        ..base(300)
    };
    let (report, trace) = run_traced(&cfg).unwrap();
    assert!(report
        .days
        .iter()
        .all(|d| d.new_infections == 0 && d.published_list_size == 0));
    assert!(trace.mailbox.is_empty());
    assert!(!trace.events.contains(",infect,"));
}

#[test]
fn deterministic_under_seed() {
    let cfg = ScenarioConfig {
        adoption_fraction: 0.6,
        ..base(400)
    };
    let (a, ta) = run_traced(&cfg).unwrap();
    let (b, tb) = run_traced(&cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(ta, tb);
    let (c, _) = run_traced(&ScenarioConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.to_csv(), c.to_csv());
}

#[test]
fn conservation_and_monotone_health() {
    let cfg = ScenarioConfig {
        adoption_fraction: 0.5,
        p_transmit: Some(0.02),
        days: 60,
        ..base(500)
    };
    let mut world = World::new(&cfg, 5).unwrap();
    let mut ever_infected = BTreeSet::new();
    for _ in 0..cfg.days {
        world.step_day();
        let m = world.series().last().unwrap();
        assert_eq!(
            m.susceptible + m.exposed + m.infectious + m.symptomatic + m.removed,
            500
        );
        for a in world.agents() {
            if a.health != HealthState::Susceptible {
                ever_infected.insert(a.id);
            } else {
                assert!(!ever_infected.contains(&a.id), "agent returned to susceptible");
            }
        }
    }
    let report = world.report();
    assert!((0.0..=1.0).contains(&report.final_attack_rate));
    assert!(report.final_attack_rate > 0.01);
}

#[test]
fn health_timeline() {
    let cfg = ScenarioConfig {
        mean_daily_contacts: 0.0,
        index_cases: 0,
        ..base(2)
    };
    let mut world = World::new(&cfg, 1).unwrap();
    world.infect(0, 0);
    world.set_asymptomatic(0, false);
    world.infect(1, 0);
    world.set_asymptomatic(1, true);
    let mut states = Vec::new();
    for _ in 0..23 {
        world.step_day();
        states.push((world.agents()[0].health, world.agents()[1].health));
    }
    assert_eq!(states[2].0, HealthState::Exposed(0));
    assert_eq!(states[3].0, HealthState::Infectious(3));
    assert_eq!(states[5].0, HealthState::Symptomatic(5));
    assert_eq!(states[5].1, HealthState::Infectious(3));
    assert_eq!(states[20].1, HealthState::Infectious(3));
    assert_eq!(states[21], (HealthState::Removed(21), HealthState::Removed(21)));
}

#[test]
fn quarantine_scales_contacts_by_leak() {
    let cfg = ScenarioConfig {
        index_cases: 0,
        adoption_fraction: 1.0,
        days: 1,
        ..base(6000)
    };
    let mut world = World::new(&cfg, 2).unwrap();
    for i in 0..3000 {
        world.set_quarantined(i, true);
    }
    world.step_day();
    let contacts = |range: std::ops::Range<usize>| -> usize {
        world.agents()[range]
            .iter()
            .map(|a| a.device.as_ref().unwrap().log.len())
            .sum()
    };
    let ratio = contacts(0..3000) as f64 / contacts(3000..6000) as f64;
    assert!((ratio - cfg.quarantine_leak).abs() < 0.01, "ratio {ratio}");
}

/// Agent 0 is an infectious non-adopter. It infects adopter 1, who is
/// diagnosed on symptom onset. Adopters 2, 3 and 4 met agent 1 near, far
/// and mid; only the near and mid contacts are traced, agent 2 through its
/// own listed identifiers as well as through their logs. Those three show
/// no symptoms, so tracing is the only way they are found.
#[test]
fn trace_through_five_agents() {
    let cfg = ScenarioConfig {
        population: 5,
        index_cases: 0,
        mean_daily_contacts: 0.0,
        adoption_fraction: 1.0,
        p_transmit: Some(1.0),
        test_delay_days: 0,
        categories_traced: TracedCategories::Cat1AndCat2,
        days: 16,
        ..ScenarioConfig::default()
    };
    let mut world = World::new(&cfg, 3).unwrap().with_trace();
    world.set_adopter(0, false);
    for i in 0..5 {
        world.set_asymptomatic(i, i >= 2);
    }
    world.infect(0, 0);
    let meet = |a, b, ticks, distance_m| ScriptedContact {
        a,
        b,
        start: 600,
        ticks,
        distance_m,
    };
    world.schedule_contact(3, meet(0, 1, 10, 1.0));
    world.schedule_contact(6, meet(1, 2, 40, 1.0));
    world.schedule_contact(6, meet(1, 3, 120, 8.0));
    world.schedule_contact(6, meet(1, 4, 10, 3.0));

    for _ in 0..=8 {
        world.step_day();
    }
    let agents = world.agents();
    assert_eq!(agents[1].infected_by, Some(0));
    assert_eq!(agents[1].carrier_since, Some(8));
    assert!(!agents[0].quarantined && agents[0].carrier_since.is_none());

    // Day 8: carrier 1 registered; 2 and 4 are in test-pending cases, 3 was dropped.
    let list = world.authority().unwrap().publish(8);
    let rdi_on = |agent: usize, day| {
        world.agents()[agent]
            .device
            .as_ref()
            .unwrap()
            .own_history
            .iter()
            .find(|i| i.date == day)
            .unwrap()
            .rdi
    };
    let own1: Vec<_> = (3..=8).map(|d| (d, rdi_on(1, d))).collect();
    for e in &own1 {
        assert!(list.entries.contains(e));
    }
    assert!(list.entries.contains(&(6, rdi_on(2, 6))));
    assert!(list.entries.contains(&(6, rdi_on(4, 6))));
    assert!(!list.entries.contains(&(6, rdi_on(3, 6))));
    assert_eq!(list.entries.len(), own1.len() + 2);

    let states = |agent: usize| -> Vec<CaseState> {
        world.agents()[agent]
            .device
            .as_ref()
            .unwrap()
            .cases
            .values()
            .map(|c| c.record.state)
            .collect()
    };
    // Agent 2 hit both the carrier's identifier and its own listed identifier.
    assert_eq!(states(2), vec![CaseState::AwaitingTest2; 2]);
    assert_eq!(states(4), vec![CaseState::AwaitingTest2; 2]);
    assert!(states(3).is_empty());
    assert!(world.agents()[2].quarantined && world.agents()[4].quarantined);
    assert!(!world.agents()[3].quarantined);

    // Day 13: the retest after the incubation period finds 2 and 4 infectious.
    for _ in 9..=13 {
        world.step_day();
    }
    assert_eq!(world.agents()[2].carrier_since, Some(13));
    assert_eq!(world.agents()[4].carrier_since, Some(13));

    let trace = world.trace().unwrap();
    let msgs = decode_trace(&trace.mailbox).unwrap();
    let kinds: Vec<&str> = msgs.iter().map(|m| m.kind.name()).collect();
    assert!(kinds.contains(&"drop"));
    assert_eq!(kinds.iter().filter(|k| **k == "test_order").count(), 4);
    assert!(msgs
        .iter()
        .any(|m| matches!(m.kind, MessageKind::HistoryRequest { from: 8 })));
    assert!(!trace.events.contains("register,0"));

    for a in world.agents() {
        let tag = a.identity_tag.to_be_bytes();
        assert!(!contains(&trace.mailbox, &tag));
        for snap in &trace.authority_snapshots {
            assert!(!contains(snap, &tag));
        }
    }
}

#[test]
fn privacy_scan_of_authority_data() {
    let cfg = ScenarioConfig {
        adoption_fraction: 1.0,
        p_transmit: Some(0.02),
        days: 40,
        ..base(300)
    };
    let world = {
        let mut w = World::new(&cfg, 9).unwrap().with_trace();
        for _ in 0..cfg.days {
            w.step_day();
        }
        w
    };
    let trace = world.trace().unwrap();
    assert!(
        trace.published.iter().any(|l| l.len() > 100),
        "nothing was ever published"
    );
    let mut stored: Vec<&[u8]> = trace.authority_snapshots.iter().map(Vec::as_slice).collect();
    stored.extend(trace.published.iter().map(Vec::as_slice));
    stored.push(&trace.mailbox);
    let w8 = windows::<8>(&stored);
    let w16 = windows::<16>(&stored);
    let mut locations = 0;
    for a in world.agents() {
        for needle in [a.identity_tag.to_be_bytes(), a.identity_tag.to_le_bytes()] {
            assert!(!w8.contains(&needle), "agent {} leaked", a.id);
        }
        if let Some(d) = a.device.as_ref() {
            for day in 0..cfg.days {
                for entry in d.locations.day(day) {
                    locations += 1;
                    assert!(!w16.contains(&<[u8; 16]>::try_from(&entry.location[..]).unwrap()));
                }
            }
        }
    }
    assert!(locations > 0);
}

/// Daily growth factor of an epidemic whose cases infect `r0` others spread
/// evenly over infection ages `latency..course`: the root of
/// `1 = r0 / n * sum(lambda^-k)`.
fn growth_factor(r0: f64, latency: u32, course: u32) -> f64 {
    let n = f64::from(course - latency);
    let f = |l: f64| r0 / n * (latency..course).map(|k| l.powi(-(k as i32))).sum::<f64>() - 1.0;
    let (mut lo, mut hi) = (1.0, 2.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Uncontained runs calibrated to R0 2.15, pooled over five seeds.
fn uncontained_runs() -> (f64, Vec<MetricsReport>, ScenarioConfig) {
    let base = ScenarioConfig {
        population: 2000,
        tracing: false,
        index_cases: 20,
        seed: 4,
        ..ScenarioConfig::default()
    };
    let cal = calibrate_p_transmit(&base, 2.15, 0.1).unwrap();
    let cfg = ScenarioConfig {
        population: 10_000,
        days: 45,
        index_cases: 50,
        p_transmit: Some(cal.p_transmit),
        ..base
    };
    let reports = probe_seeds(5, 5)
        .into_iter()
        .map(|seed| run(&ScenarioConfig { seed, ..cfg.clone() }).unwrap())
        .collect();
    (cal.r0, reports, cfg)
}

fn pooled_ratio(reports: &[MetricsReport], g: usize, days: std::ops::RangeInclusive<usize>) -> f64 {
    let (mut after, mut before) = (0u64, 0u64);
    for r in reports {
        let new = r.new_infections();
        for t in days.clone() {
            after += new[t..t + g].iter().sum::<u64>();
            before += new[t - g..t].iter().sum::<u64>();
        }
    }
    after as f64 / before as f64
}

#[test]
fn ratio_estimator_follows_growth_rate() {
    let (r0, reports, cfg) = uncontained_runs();
    let g = cfg.generation_days() as usize;
    let predicted = growth_factor(r0, cfg.latency_days, cfg.course_days).powi(g as i32);
    let observed = pooled_ratio(&reports, g, 20..=35);
    assert!(
        (observed - predicted).abs() < 0.15,
        "observed {observed:.3}, predicted {predicted:.3}"
    );
    assert!(estimate_r_effective_report(&reports[0], 7).unwrap().len() > 30);
}

#[test]
#[ignore = "unattainable with a latency+2 generation interval; see ratio_estimator_follows_growth_rate"]
fn early_r_effective_near_calibrated_r0() {
    let (_, reports, cfg) = uncontained_runs();
    let observed = pooled_ratio(&reports, cfg.generation_days() as usize, 10..=30);
    assert!((1.8..=2.6).contains(&observed), "early R(t) {observed:.3}");
}
