use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use ed25519_dalek::SigningKey;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson};

use crate::authority::{serialize_list, verify_list_bytes, Authority};
use crate::casework::{
    self, encode_message, CarrierUpload, CaseConfig, CaseRecord, CaseState, HitSummary, InquiryToken, MailboxMessage,
    MessageKind, Preference, TestOutcome,
};
use crate::contact_log::{ContactLog, LocationEntry, LocationLog, Tick, TICKS_PER_DAY};
use crate::ident::{
    decode_beacon, encode_beacon, generate_daily_identifier, rotate_if_needed, DailyIdentifier, Day, DistanceClass,
    PathLoss, Rdi,
};
use crate::matching::{match_contacts, match_own_identifiers, CarrierIndex};

use super::metrics::{DayMetrics, MetricsReport};
use super::{transmit, ContactEvent, ScenarioConfig, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HealthState {
    Susceptible,
    Exposed(Day),
    Infectious(Day),
    Symptomatic(Day),
    Removed(Day),
}

impl HealthState {
    pub fn is_infectious(self) -> bool {
        matches!(self, HealthState::Infectious(_) | HealthState::Symptomatic(_))
    }

    pub fn is_active(self) -> bool {
        matches!(
            self,
            HealthState::Exposed(_) | HealthState::Infectious(_) | HealthState::Symptomatic(_)
        )
    }
}

/// A device-side mirror of one inquiry.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceCase {
    pub record: CaseRecord,
    pub test_due: Option<Day>,
}

#[derive(Debug, Clone)]
pub struct Device {
    pub current: DailyIdentifier,
    pub own_history: Vec<DailyIdentifier>,
    pub log: ContactLog,
    pub locations: LocationLog,
    pub cases: BTreeMap<InquiryToken, DeviceCase>,
    pub preference: Preference,
    pub self_quarantine_until: Option<Day>,
    inquired: BTreeSet<(Day, Rdi)>,
}

impl Device {
    fn new<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R, today: Day) -> Self {
        let current = generate_daily_identifier(rng, today);
        let preference = if rng.random_bool(config.silent_quarantine_fraction) {
            Preference::QuarantineSilently
        } else {
            Preference::Negotiate
        };
        Device {
            current,
            own_history: vec![current],
            log: ContactLog::new(config.retention_days),
            locations: LocationLog::default(),
            cases: BTreeMap::new(),
            preference,
            self_quarantine_until: None,
            inquired: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    /// Simulation-internal index; never leaves the simulator.
    pub id: u32,
    /// Stands in for the person's real identity in privacy scans.
    pub identity_tag: u64,
    pub health: HealthState,
    pub infected_day: Option<Day>,
    pub infected_by: Option<u32>,
    pub asymptomatic: bool,
    pub index_case: bool,
    pub secondary: u32,
    pub quarantined: bool,
    pub carrier_since: Option<Day>,
    pub device: Option<Device>,
    symptom_tested: bool,
}

impl Agent {
    pub fn is_adopter(&self) -> bool {
        self.device.is_some()
    }
}

/// A contact injected on a given day, in addition to the random ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedContact {
    pub a: usize,
    pub b: usize,
    pub start: Tick,
    pub ticks: u16,
    pub distance_m: f64,
}

/// Side outputs recorded when a world runs with tracing enabled.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    /// `day,tick,event_kind,subject,object,detail` lines. Uses simulation
    /// ids, so it is a debugging artifact outside the protocol.
    pub events: String,
    /// Every mailbox message, encoded and concatenated.
    pub mailbox: Vec<u8>,
    /// Serialized signed list of each day.
    pub published: Vec<Vec<u8>>,
    /// Authority state snapshot at the end of each day.
    pub authority_snapshots: Vec<Vec<u8>>,
}

pub struct World {
    pub config: ScenarioConfig,
    p_transmit: f64,
    path_loss: PathLoss,
    case_config: CaseConfig,
    day: Day,
    rng: ChaCha8Rng,
    agents: Vec<Agent>,
    authority: Option<Authority>,
    series: Vec<DayMetrics>,
    tests_today: u64,
    new_today: u64,
    published_today: u64,
    trace: Option<Trace>,
    scripted: BTreeMap<Day, Vec<ScriptedContact>>,
}

const CLASS_RANGES_M: [(f64, f64); 3] = [(0.3, 2.0), (2.0, 5.0), (5.0, 12.0)];

impl World {
    pub fn new(config: &ScenarioConfig, seed: u64) -> Result<Self, SimError> {
        config.validate()?;
        let p_transmit = config.p_transmit.ok_or_else(|| {
            SimError::InvalidConfig(vec![super::FieldError {
                field: "p_transmit".into(),
                message: "unset; calibrate before running".into(),
            }])
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.population;
        let case_config = config.case_config();

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let index: BTreeSet<usize> = order[..config.index_cases].iter().copied().collect();
        order.shuffle(&mut rng);
        let n_adopters = if config.tracing {
            (config.adoption_fraction * n as f64).round() as usize
        } else {
            0
        };
        let adopters: BTreeSet<usize> = order[..n_adopters.min(n)].iter().copied().collect();

        let mut agents = Vec::with_capacity(n);
        for i in 0..n {
            let asymptomatic = rng.random_bool(config.asymptomatic_fraction);
            let device = adopters.contains(&i).then(|| Device::new(config, &mut rng, 0));
            let is_index = index.contains(&i);
            agents.push(Agent {
                id: i as u32,
                identity_tag: rng.random(),
                health: if is_index {
                    HealthState::Exposed(0)
                } else {
                    HealthState::Susceptible
                },
                infected_day: is_index.then_some(0),
                infected_by: None,
                asymptomatic,
                index_case: is_index,
                secondary: 0,
                quarantined: false,
                carrier_since: None,
                device,
                symptom_tested: false,
            });
        }
        let authority = config.tracing.then(|| {
            let key = SigningKey::from_bytes(&rng.random::<[u8; 32]>());
            Authority::new(key, case_config.clone())
        });
        Ok(World {
            config: config.clone(),
            p_transmit,
            path_loss: config.path_loss(),
            case_config,
            day: 0,
            rng,
            agents,
            authority,
            series: Vec::new(),
            tests_today: 0,
            new_today: 0,
            published_today: 0,
            trace: None,
            scripted: BTreeMap::new(),
        })
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Trace::default());
        self
    }

    pub fn day(&self) -> Day {
        self.day
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn authority(&self) -> Option<&Authority> {
        self.authority.as_ref()
    }

    pub fn trace(&self) -> Option<&Trace> {
        self.trace.as_ref()
    }

    pub fn series(&self) -> &[DayMetrics] {
        &self.series
    }

    /// Marks an agent as infected on `day`, for handcrafted scenarios.
    pub fn infect(&mut self, agent: usize, day: Day) {
        let a = &mut self.agents[agent];
        a.infected_day = Some(day);
        a.health = HealthState::Exposed(day);
    }

    pub fn set_asymptomatic(&mut self, agent: usize, asymptomatic: bool) {
        self.agents[agent].asymptomatic = asymptomatic;
    }

    /// Installs or removes the app. Has no effect with tracing off.
    pub fn set_adopter(&mut self, agent: usize, adopter: bool) {
        if self.authority.is_none() {
            return;
        }
        let a = &mut self.agents[agent];
        match (adopter, a.device.is_some()) {
            (true, false) => a.device = Some(Device::new(&self.config, &mut self.rng, self.day)),
            (false, true) => a.device = None,
            _ => {}
        }
    }

    /// Overrides the quarantine flag until the end of the current day.
    pub fn set_quarantined(&mut self, agent: usize, quarantined: bool) {
        self.agents[agent].quarantined = quarantined;
    }

    pub fn schedule_contact(&mut self, day: Day, contact: ScriptedContact) {
        self.scripted.entry(day).or_default().push(contact);
    }

    fn event(
        &mut self,
        day: Day,
        tick: Tick,
        kind: &str,
        subject: impl std::fmt::Display,
        object: impl std::fmt::Display,
        detail: &str,
    ) {
        if let Some(t) = self.trace.as_mut() {
            let _ = writeln!(t.events, "{day},{tick},{kind},{subject},{object},{detail}");
        }
    }

    /// Advances the world by one day.
    pub fn step_day(&mut self) {
        let today = self.day;
        self.tests_today = 0;
        self.new_today = 0;
        self.published_today = 0;

        self.progress_health(today);
        if self.authority.is_some() {
            self.rotate_identifiers(today);
        }
        self.contacts(today);
        self.scripted_contacts(today);
        if self.authority.is_some() {
            self.symptom_testing(today);
            self.publish_and_match(today);
            self.casework_tests(today);
            let margin = self.config.erase_margin_days;
            if let Some(a) = self.authority.as_mut() {
                a.erase_expired(today, margin);
            }
            self.prune_devices(today);
        }
        self.update_quarantine(today);
        if let (Some(t), Some(a)) = (self.trace.as_mut(), self.authority.as_ref()) {
            t.authority_snapshots.push(a.snapshot());
        }
        self.record_metrics(today);
        self.day += 1;
    }

    fn progress_health(&mut self, today: Day) {
        let (latency, onset, course) = (
            self.config.latency_days,
            self.config.symptom_onset_days,
            self.config.course_days,
        );
        let mut changes = Vec::new();
        for a in &mut self.agents {
            let Some(inf) = a.infected_day else { continue };
            let t = today.saturating_sub(inf);
            let next = if t >= course {
                HealthState::Removed(inf + course)
            } else if t >= onset && !a.asymptomatic {
                HealthState::Symptomatic(inf + onset)
            } else if t >= latency {
                HealthState::Infectious(inf + latency)
            } else {
                HealthState::Exposed(inf)
            };
            if next != a.health {
                a.health = next;
                changes.push((a.id, next));
            }
        }
        for (id, h) in changes {
            let kind = match h {
                HealthState::Infectious(_) => "infectious",
                HealthState::Symptomatic(_) => "onset",
                HealthState::Removed(_) => "removed",
                _ => continue,
            };
            self.event(today, 0, kind, id, "-", "");
        }
    }

    fn rotate_identifiers(&mut self, today: Day) {
        for a in &mut self.agents {
            if let Some(d) = a.device.as_mut() {
                let next = rotate_if_needed(d.current, today, &mut self.rng);
                if next != d.current {
                    d.current = next;
                    d.own_history.push(next);
                }
            }
        }
    }

    fn sample_class(&mut self) -> DistanceClass {
        let u: f64 = self.rng.random();
        if u < self.config.near_fraction {
            DistanceClass::Near
        } else if u < self.config.near_fraction + self.config.mid_fraction {
            DistanceClass::Mid
        } else {
            DistanceClass::Far
        }
    }

    fn contacts(&mut self, today: Day) {
        let n = self.agents.len();
        if n < 2 || self.config.mean_daily_contacts <= 0.0 {
            return;
        }
        let leak = self.config.quarantine_leak;
        let mean = self.config.mean_daily_contacts;
        let free = Poisson::new(mean).expect("positive rate");
        let confined = (mean * leak > 0.0).then(|| Poisson::new(mean * leak).expect("positive rate"));
        let duration = Geometric::new(1.0 / self.config.mean_contact_ticks).expect("mean >= 1");

        for i in 0..n {
            let k = if self.agents[i].quarantined {
                confined.as_ref().map_or(0.0, |d| d.sample(&mut self.rng))
            } else {
                free.sample(&mut self.rng)
            } as u64;
            for _ in 0..k {
                let mut j = self.rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                if self.agents[j].quarantined && !self.rng.random_bool(leak) {
                    continue;
                }
                let class = self.sample_class();
                let ticks = (1 + duration.sample(&mut self.rng)).min(u64::from(TICKS_PER_DAY)) as u16;
                let start = self.rng.random_range(0..=TICKS_PER_DAY - ticks);
                let (lo, hi) = CLASS_RANGES_M[class as usize];
                let distance = self.rng.random_range(lo..hi);
                self.contact(i, j, today, start, ticks, distance, class);
            }
        }
    }

    fn scripted_contacts(&mut self, today: Day) {
        for c in self.scripted.remove(&today).unwrap_or_default() {
            let class = self.path_loss.classify_distance(c.distance_m);
            self.contact(
                c.a,
                c.b,
                today,
                c.start,
                c.ticks.clamp(1, TICKS_PER_DAY - c.start),
                c.distance_m,
                class,
            );
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn contact(
        &mut self,
        i: usize,
        j: usize,
        today: Day,
        start: Tick,
        ticks: u16,
        distance: f64,
        class: DistanceClass,
    ) {
        let (ai, aj) = (&self.agents[i], &self.agents[j]);
        let beacons = self.authority.is_some() && ai.is_adopter() && aj.is_adopter();
        let source = if ai.health.is_infectious() && aj.health == HealthState::Susceptible {
            Some((i, j))
        } else if aj.health.is_infectious() && ai.health == HealthState::Susceptible {
            Some((j, i))
        } else {
            None
        };
        if beacons {
            self.exchange_beacons(i, j, today, start, ticks, distance);
        }
        if let Some((from, to)) = source {
            let ev = ContactEvent::single(class, u32::from(ticks));
            if transmit(&ev, &mut self.rng, self.p_transmit) {
                let target = &mut self.agents[to];
                target.health = HealthState::Exposed(today);
                target.infected_day = Some(today);
                target.infected_by = Some(from as u32);
                self.agents[from].secondary += 1;
                self.new_today += 1;
                let detail = format!("class={class:?};ticks={ticks}");
                self.event(today, start, "infect", from, to, &detail);
            }
        }
    }

    /// Both devices hear each other once per tick of the event. Every
    /// reception goes through the beacon decoder and the contact log.
    fn exchange_beacons(&mut self, i: usize, j: usize, today: Day, start: Tick, ticks: u16, distance: f64) {
        let tx = self.config.tx_power_dbm;
        let rssi = self.path_loss.rssi_at(distance, tx);
        let location: [u8; 16] = self.rng.random();
        let orientation: [u8; 2] = self.rng.random();
        for (rx, txr) in [(i, j), (j, i)] {
            let beacon = encode_beacon(&self.agents[txr].device.as_ref().expect("adopter").current);
            let path_loss = self.path_loss;
            let device = self.agents[rx].device.as_mut().expect("adopter");
            for tick in start..start + ticks {
                let rdi = decode_beacon(&beacon).expect("well-formed beacon");
                let class = path_loss.estimate_distance_class(rssi, tx);
                device.log.observe_one(rdi, class, today, tick);
            }
            device.locations.append(
                today,
                LocationEntry {
                    tick: start,
                    location: location.to_vec(),
                    orientation: orientation.to_vec(),
                },
            );
        }
    }

    fn test_outcome(&self, agent: usize) -> TestOutcome {
        if self.agents[agent].health.is_infectious() {
            TestOutcome::Positive
        } else {
            TestOutcome::Negative
        }
    }

    fn symptom_testing(&mut self, today: Day) {
        let due = self.config.symptom_onset_days + self.config.test_delay_days;
        for i in 0..self.agents.len() {
            let a = &self.agents[i];
            let eligible = a.is_adopter()
                && !a.symptom_tested
                && a.carrier_since.is_none()
                && !a.asymptomatic
                && matches!(a.health, HealthState::Symptomatic(_))
                && a.infected_day.is_some_and(|d| d + due <= today);
            if !eligible {
                continue;
            }
            self.agents[i].symptom_tested = true;
            self.tests_today += 1;
            let outcome = self.test_outcome(i);
            self.event(today, 0, "test", i, "-", "symptoms;positive");
            if outcome == TestOutcome::Positive {
                self.become_carrier(i, today);
            }
        }
    }

    fn upload_for(&self, agent: usize, from: Day, today: Day) -> CarrierUpload {
        let d = self.agents[agent].device.as_ref().expect("adopter");
        CarrierUpload {
            own_identifiers: d.own_history.iter().filter(|id| id.date >= from).copied().collect(),
            history: d.log.export_history(from, today).unwrap_or_default(),
        }
    }

    /// A positive test: report it on every open case, or register directly
    /// when no case exists.
    fn become_carrier(&mut self, agent: usize, today: Day) {
        self.agents[agent].carrier_since = Some(today);
        self.event(today, 0, "carrier", agent, "-", "");
        let awaiting: Vec<InquiryToken> = self.agents[agent]
            .device
            .as_ref()
            .map(|d| {
                d.cases
                    .iter()
                    .filter(|(_, c)| matches!(c.record.state, CaseState::AwaitingTest1 | CaseState::AwaitingTest2))
                    .map(|(t, _)| *t)
                    .collect()
            })
            .unwrap_or_default();
        for token in &awaiting {
            let msg = MailboxMessage::new(
                *token,
                MessageKind::TestResult {
                    outcome: TestOutcome::Positive,
                    date: today,
                },
            );
            self.send(agent, msg, today);
        }
        if awaiting.is_empty() {
            let from = today.saturating_sub(self.config.lookback_days);
            let upload = self.upload_for(agent, from, today);
            if let Some(a) = self.authority.as_mut() {
                let detail = match a.register_carrier(&upload, from, today) {
                    Ok(r) => format!("own={};contacts={}", r.carrier_own, r.contact_derived),
                    Err(e) => e.to_string(),
                };
                self.event(today, 0, "register", agent, "-", &detail);
            }
        }
    }

    fn record_message(&mut self, msg: &MailboxMessage) {
        if let Some(t) = self.trace.as_mut() {
            if let Ok(bytes) = encode_message(msg) {
                t.mailbox.extend_from_slice(&bytes);
            }
        }
    }

    fn mirror(&mut self, agent: usize, msg: &MailboxMessage, today: Day) {
        let cfg = self.case_config.clone();
        let test_delay = self.config.test_delay_days;
        let Some(device) = self.agents[agent].device.as_mut() else {
            return;
        };
        let entry = device.cases.entry(msg.token).or_insert_with(|| DeviceCase {
            record: CaseRecord::idle(msg.token, today),
            test_due: None,
        });
        let t = casework::step(&entry.record, msg, &cfg, today);
        entry.record = t.case;
        if msg.kind == MessageKind::TestOrder && entry.record.state == CaseState::AwaitingTest1 {
            entry.test_due = Some(today + test_delay);
        }
    }

    /// Sends one device message to the authority and handles the replies.
    fn send(&mut self, agent: usize, msg: MailboxMessage, today: Day) {
        self.record_message(&msg);
        self.mirror(agent, &msg, today);
        let replies = match self.authority.as_mut() {
            Some(a) => a.receive(&msg, today),
            None => return,
        };
        for reply in replies {
            self.record_message(&reply);
            self.mirror(agent, &reply, today);
            match reply.kind {
                MessageKind::TestOrder => self.event(today, 0, "test_order", agent, "-", ""),
                MessageKind::HistoryRequest { from } => {
                    let upload = self.upload_for(agent, from, today);
                    for m in casework::upload_messages(reply.token, &upload) {
                        self.send(agent, m, today);
                    }
                }
                MessageKind::Release => self.event(today, 0, "release", agent, "-", ""),
                MessageKind::Drop => self.event(today, 0, "drop", agent, "-", ""),
                _ => {}
            }
        }
    }

    fn publish_and_match(&mut self, today: Day) {
        let Some(authority) = self.authority.as_ref() else {
            return;
        };
        let list = authority.publish(today);
        let bytes = serialize_list(&list);
        let public_key = authority.public_key();
        self.published_today = list.entries.len() as u64;
        let detail = format!("entries={}", list.entries.len());
        self.event(today, 0, "publish", "authority", "-", &detail);
        if let Some(t) = self.trace.as_mut() {
            t.published.push(bytes.clone());
        }
        if list.entries.is_empty() {
            return;
        }
        // Every device downloads the same bytes; one verification stands for all.
        if !verify_list_bytes(&bytes, &public_key) {
            return;
        }
        let index = match CarrierIndex::build(&list, &public_key) {
            Ok(ix) => ix,
            Err(_) => return,
        };
        for i in 0..self.agents.len() {
            let a = &self.agents[i];
            if a.carrier_since.is_some() {
                continue;
            }
            let Some(d) = a.device.as_ref() else { continue };
            let mut summaries: Vec<HitSummary> = match_contacts(d.log.records(), &index)
                .into_iter()
                .map(|h| HitSummary::observed(&h.record))
                .collect();
            summaries.extend(
                match_own_identifiers(&d.own_history, &index)
                    .iter()
                    .map(HitSummary::own),
            );
            summaries.retain(|s| !d.inquired.contains(&(s.date, s.rdi)));
            if summaries.is_empty() {
                continue;
            }
            let preference = d.preference;
            let device = self.agents[i].device.as_mut().expect("adopter");
            device.inquired.extend(summaries.iter().map(|s| (s.date, s.rdi)));
            let detail = format!("hits={}", summaries.len());
            self.event(today, 0, "hit", i, "-", &detail);
            let Ok((state, msgs)) = casework::on_hits(&summaries, preference, &mut self.rng) else {
                continue;
            };
            if state == CaseState::SelfQuarantined {
                let until = today + self.config.self_quarantine_days;
                let device = self.agents[i].device.as_mut().expect("adopter");
                device.self_quarantine_until = Some(device.self_quarantine_until.map_or(until, |u| u.max(until)));
                self.event(today, 0, "self_quarantine", i, "-", "");
            }
            for msg in msgs {
                self.send(i, msg, today);
            }
        }
    }

    fn casework_tests(&mut self, today: Day) {
        let cfg = self.case_config.clone();
        for i in 0..self.agents.len() {
            let a = &self.agents[i];
            if a.carrier_since.is_some() {
                continue;
            }
            let Some(d) = a.device.as_ref() else { continue };
            let mut due = Vec::new();
            let mut awaiting = false;
            for (token, c) in &d.cases {
                let is_due = match c.record.state {
                    CaseState::AwaitingTest1 => c.test_due.is_some_and(|t| t <= today),
                    CaseState::AwaitingTest2 => c.record.retest_due(&cfg).is_some_and(|t| t <= today),
                    _ => continue,
                };
                awaiting = true;
                if is_due {
                    due.push(*token);
                }
            }
            if !awaiting || due.is_empty() {
                continue;
            }
            self.tests_today += 1;
            let outcome = self.test_outcome(i);
            let detail = format!("casework;{outcome:?}").to_lowercase();
            self.event(today, 0, "test", i, "-", &detail);
            if outcome == TestOutcome::Positive {
                self.become_carrier(i, today);
                continue;
            }
            for token in due {
                let msg = MailboxMessage::new(token, MessageKind::TestResult { outcome, date: today });
                self.send(i, msg, today);
            }
        }
    }

    fn prune_devices(&mut self, today: Day) {
        let retention = self.config.retention_days;
        let cutoff = today.saturating_sub(retention);
        for a in &mut self.agents {
            if let Some(d) = a.device.as_mut() {
                d.log.prune(today);
                d.locations.prune(today, retention);
                d.own_history.retain(|id| id.date >= cutoff);
                d.inquired = d.inquired.split_off(&(cutoff, Rdi(0)));
                d.cases.retain(|_, c| !c.record.state.is_terminal());
            }
        }
    }

    fn update_quarantine(&mut self, today: Day) {
        let mut changes = Vec::new();
        for a in &mut self.agents {
            let isolated = a.carrier_since.is_some() && a.health.is_active();
            let by_device = a.device.as_ref().is_some_and(|d| {
                d.self_quarantine_until.is_some_and(|u| u > today)
                    || d.cases.values().any(|c| {
                        matches!(
                            c.record.state,
                            CaseState::Categorized(_) | CaseState::AwaitingTest1 | CaseState::AwaitingTest2
                        )
                    })
            });
            let q = isolated || by_device;
            if q != a.quarantined {
                a.quarantined = q;
                changes.push((a.id, q));
            }
        }
        for (id, q) in changes {
            self.event(today, 0, if q { "quarantine" } else { "unquarantine" }, id, "-", "");
        }
    }

    fn record_metrics(&mut self, today: Day) {
        let mut m = DayMetrics {
            day: today,
            new_infections: self.new_today,
            tests_used: self.tests_today,
            published_list_size: self.published_today,
            ..DayMetrics::default()
        };
        for a in &self.agents {
            match a.health {
                HealthState::Susceptible => m.susceptible += 1,
                HealthState::Exposed(_) => m.exposed += 1,
                HealthState::Infectious(_) => m.infectious += 1,
                HealthState::Symptomatic(_) => m.symptomatic += 1,
                HealthState::Removed(_) => m.removed += 1,
            }
            if a.quarantined {
                m.quarantined += 1;
            }
        }
        m.active_cases = m.exposed + m.infectious + m.symptomatic;
        self.series.push(m);
    }

    pub fn report(&self) -> MetricsReport {
        let n = self.agents.len();
        let infected = self.agents.iter().filter(|a| a.infected_day.is_some()).count();
        let index: Vec<&Agent> = self.agents.iter().filter(|a| a.index_case).collect();
        let empirical_r0 = if index.is_empty() {
            0.0
        } else {
            index.iter().map(|a| f64::from(a.secondary)).sum::<f64>() / index.len() as f64
        };
        let horizon = self.day;
        let completed: Vec<&Agent> = self
            .agents
            .iter()
            .filter(|a| !a.index_case && a.infected_day.is_some_and(|d| d + self.config.course_days < horizon))
            .collect();
        let secondary: u64 = completed.iter().map(|a| u64::from(a.secondary)).sum();
        MetricsReport {
            population: n as u64,
            generation_days: self.config.generation_days(),
            days: self.series.clone(),
            final_attack_rate: if n == 0 { 0.0 } else { infected as f64 / n as f64 },
            empirical_r0,
            case_reproduction: if completed.is_empty() {
                0.0
            } else {
                secondary as f64 / completed.len() as f64
            },
            completed_cases: completed.len() as u64,
            secondary_infections: secondary,
            extinct: self.series.iter().any(|d| d.active_cases == 0),
        }
    }

    pub fn into_trace(self) -> Option<Trace> {
        self.trace
    }
}
