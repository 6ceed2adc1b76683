use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use crate::casework::CaseConfig;
use crate::contact_log::{Category, DEFAULT_THRESHOLD_MINUTES};
use crate::ident::PathLoss;

use super::SimError;

/// Which contact categories the authority traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TracedCategories {
    Cat1,
    Cat1AndCat2,
}

impl TracedCategories {
    pub fn as_set(self) -> BTreeSet<Category> {
        match self {
            TracedCategories::Cat1 => [Category::Category1].into_iter().collect(),
            TracedCategories::Cat1AndCat2 => [Category::Category1, Category::Category2].into_iter().collect(),
        }
    }
}

impl fmt::Display for TracedCategories {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TracedCategories::Cat1 => "cat1",
            TracedCategories::Cat1AndCat2 => "cat1+cat2",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub population: usize,
    pub days: u32,
    pub seed: u64,
    pub target_r0: f64,
    pub latency_days: u32,
    pub symptom_onset_days: u32,
    pub course_days: u32,
    pub asymptomatic_fraction: f64,
    pub adoption_fraction: f64,
    pub test_delay_days: u32,
    /// Contact events each agent initiates per day (Poisson mean). Every agent
    /// also receives events initiated by others, so it takes part in about
    /// twice this many.
    pub mean_daily_contacts: f64,
    /// Mean event length in 30-second ticks (geometric, at least one tick).
    pub mean_contact_ticks: f64,
    pub near_fraction: f64,
    pub mid_fraction: f64,
    pub far_fraction: f64,
    /// Per-Near-tick transmission probability; `None` means calibrate to
    /// `target_r0` before running.
    pub p_transmit: Option<f64>,
    pub quarantine_leak: f64,
    pub categories_traced: TracedCategories,
    pub index_cases: usize,
    /// Master switch for devices, the authority, and casework.
    pub tracing: bool,
    pub retention_days: u32,
    pub incubation_days: u32,
    pub lookback_days: u32,
    pub erase_margin_days: u32,
    /// Share of adopters who quarantine silently on a hit instead of
    /// negotiating.
    pub silent_quarantine_fraction: f64,
    pub self_quarantine_days: u32,
    pub tx_power_dbm: i32,
    pub path_loss_exponent: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            population: 1000,
            days: 60,
            seed: 1,
            target_r0: 2.15,
            latency_days: 3,
            symptom_onset_days: 5,
            course_days: 21,
            asymptomatic_fraction: 0.3,
            adoption_fraction: 0.0,
            test_delay_days: 1,
            mean_daily_contacts: 4.0,
            mean_contact_ticks: 20.0,
            near_fraction: 0.4,
            mid_fraction: 0.3,
            far_fraction: 0.3,
            p_transmit: None,
            quarantine_leak: 0.05,
            categories_traced: TracedCategories::Cat1AndCat2,
            index_cases: 10,
            tracing: true,
            retention_days: 21,
            incubation_days: 5,
            lookback_days: 5,
            erase_margin_days: 1,
            silent_quarantine_fraction: 0.0,
            self_quarantine_days: 14,
            tx_power_dbm: -59,
            path_loss_exponent: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl ScenarioConfig {
    pub fn case_config(&self) -> CaseConfig {
        CaseConfig {
            incubation_days: self.incubation_days,
            lookback_days: self.lookback_days,
            threshold_minutes: DEFAULT_THRESHOLD_MINUTES,
            categories_traced: self.categories_traced.as_set(),
        }
    }

    pub fn path_loss(&self) -> PathLoss {
        PathLoss {
            exponent: self.path_loss_exponent,
            ..PathLoss::default()
        }
    }

    /// Generation interval used by the R(t) estimator.
    pub fn generation_days(&self) -> u32 {
        self.latency_days + 2
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut errs = Vec::new();
        let mut bad = |field: &str, message: &str| {
            errs.push(FieldError {
                field: field.to_owned(),
                message: message.to_owned(),
            })
        };
        let fractions = [
            ("asymptomatic_fraction", self.asymptomatic_fraction),
            ("adoption_fraction", self.adoption_fraction),
            ("near_fraction", self.near_fraction),
            ("mid_fraction", self.mid_fraction),
            ("far_fraction", self.far_fraction),
            ("quarantine_leak", self.quarantine_leak),
            ("silent_quarantine_fraction", self.silent_quarantine_fraction),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                bad(name, "must be in [0, 1]");
            }
        }
        let mix = self.near_fraction + self.mid_fraction + self.far_fraction;
        if (mix - 1.0).abs() > 1e-9 {
            bad("near_fraction", "near + mid + far fractions must sum to 1");
        }
        if !(self.mean_daily_contacts >= 0.0 && self.mean_daily_contacts.is_finite()) {
            bad("mean_daily_contacts", "must be a finite rate >= 0");
        }
        if !(self.mean_contact_ticks >= 1.0 && self.mean_contact_ticks.is_finite()) {
            bad("mean_contact_ticks", "must be >= 1");
        }
        if !(self.target_r0 >= 0.0 && self.target_r0.is_finite()) {
            bad("target_r0", "must be >= 0");
        }
        if let Some(p) = self.p_transmit {
            if !(0.0..=1.0).contains(&p) {
                bad("p_transmit", "must be in [0, 1]");
            }
        }
        if self.index_cases > self.population {
            bad("index_cases", "exceeds population");
        }
        if self.latency_days > self.symptom_onset_days {
            bad("latency_days", "must not exceed symptom_onset_days");
        }
        if self.symptom_onset_days >= self.course_days {
            bad("symptom_onset_days", "must be below course_days");
        }
        if !(self.path_loss_exponent > 0.0 && self.path_loss_exponent.is_finite()) {
            bad("path_loss_exponent", "must be > 0");
        }
        if self.population > u32::MAX as usize {
            bad("population", "too large");
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(errs))
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. Keys not given keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut cfg = ScenarioConfig::default();
        let mut errs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errs.push(FieldError {
                    field: format!("line {}", i + 1),
                    message: "expected key = value".into(),
                });
                continue;
            };
            if let Err(message) = cfg.set(key.trim(), value.trim()) {
                errs.push(FieldError {
                    field: key.trim().to_owned(),
                    message: format!("line {}: {message}", i + 1),
                });
            }
        }
        if !errs.is_empty() {
            return Err(SimError::InvalidConfig(errs));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse {v:?}"))
        }
        fn flag(v: &str) -> Result<bool, String> {
            match v {
                "true" | "1" | "on" => Ok(true),
                "false" | "0" | "off" => Ok(false),
                _ => Err(format!("expected true/false, got {v:?}")),
            }
        }
        match key {
            "population" => self.population = num(value)?,
            "days" => self.days = num(value)?,
            "seed" => self.seed = num(value)?,
            "target_r0" => self.target_r0 = num(value)?,
            "latency_days" => self.latency_days = num(value)?,
            "symptom_onset_days" => self.symptom_onset_days = num(value)?,
            "course_days" => self.course_days = num(value)?,
            "asymptomatic_fraction" => self.asymptomatic_fraction = num(value)?,
            "adoption_fraction" => self.adoption_fraction = num(value)?,
            "test_delay_days" => self.test_delay_days = num(value)?,
            "mean_daily_contacts" => self.mean_daily_contacts = num(value)?,
            "mean_contact_ticks" => self.mean_contact_ticks = num(value)?,
            "near_fraction" => self.near_fraction = num(value)?,
            "mid_fraction" => self.mid_fraction = num(value)?,
            "far_fraction" => self.far_fraction = num(value)?,
            "p_transmit" => {
                self.p_transmit = match value {
                    "auto" | "" => None,
                    v => Some(num(v)?),
                }
            }
            "quarantine_leak" => self.quarantine_leak = num(value)?,
            "categories_traced" => {
                self.categories_traced = match value.to_ascii_lowercase().as_str() {
                    "cat1" => TracedCategories::Cat1,
                    "cat1+cat2" => TracedCategories::Cat1AndCat2,
                    other => return Err(format!("expected cat1 or cat1+cat2, got {other:?}")),
                }
            }
            "index_cases" => self.index_cases = num(value)?,
            "tracing" => self.tracing = flag(value)?,
            "retention_days" => self.retention_days = num(value)?,
            "incubation_days" => self.incubation_days = num(value)?,
            "lookback_days" => self.lookback_days = num(value)?,
            "erase_margin_days" => self.erase_margin_days = num(value)?,
            "silent_quarantine_fraction" => self.silent_quarantine_fraction = num(value)?,
            "self_quarantine_days" => self.self_quarantine_days = num(value)?,
            "tx_power_dbm" => self.tx_power_dbm = num(value)?,
            "path_loss_exponent" => self.path_loss_exponent = num(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Inverse of [`ScenarioConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = self.p_transmit.map_or("auto".to_owned(), |p| p.to_string());
        let _ = write!(
            s,
            "population = {}\ndays = {}\nseed = {}\ntarget_r0 = {}\nlatency_days = {}\n\
             symptom_onset_days = {}\ncourse_days = {}\nasymptomatic_fraction = {}\n\
             adoption_fraction = {}\ntest_delay_days = {}\nmean_daily_contacts = {}\n\
             mean_contact_ticks = {}\nnear_fraction = {}\nmid_fraction = {}\nfar_fraction = {}\n\
             p_transmit = {}\nquarantine_leak = {}\ncategories_traced = {}\nindex_cases = {}\n\
             tracing = {}\nretention_days = {}\nincubation_days = {}\nlookback_days = {}\n\
             erase_margin_days = {}\nsilent_quarantine_fraction = {}\nself_quarantine_days = {}\n\
             tx_power_dbm = {}\npath_loss_exponent = {}\n",
            self.population,
            self.days,
            self.seed,
            self.target_r0,
            self.latency_days,
            self.symptom_onset_days,
            self.course_days,
            self.asymptomatic_fraction,
            self.adoption_fraction,
            self.test_delay_days,
            self.mean_daily_contacts,
            self.mean_contact_ticks,
            self.near_fraction,
            self.mid_fraction,
            self.far_fraction,
            p,
            self.quarantine_leak,
            self.categories_traced,
            self.index_cases,
            self.tracing,
            self.retention_days,
            self.incubation_days,
            self.lookback_days,
            self.erase_margin_days,
            self.silent_quarantine_fraction,
            self.self_quarantine_days,
            self.tx_power_dbm,
            self.path_loss_exponent,
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_with_comments() {
        let cfg = ScenarioConfig::parse(
            "# scenario\npopulation = 500\n\ndays=30 # short\np_transmit = 0.01\ncategories_traced = cat1\ntracing = off\n",
        )
        .unwrap();
        assert_eq!(cfg.population, 500);
        assert_eq!(cfg.days, 30);
        assert_eq!(cfg.p_transmit, Some(0.01));
        assert_eq!(cfg.categories_traced, TracedCategories::Cat1);
        assert!(!cfg.tracing);
    }

    #[test]
    fn text_round_trip() {
        let cfg = ScenarioConfig {
            p_transmit: Some(0.0123),
            adoption_fraction: 0.6,
            ..ScenarioConfig::default()
        };
        assert_eq!(ScenarioConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(
            ScenarioConfig::parse(&ScenarioConfig::default().to_text()).unwrap(),
            ScenarioConfig::default()
        );
    }

    #[test]
    fn diagnostics_name_fields() {
        let err = ScenarioConfig::parse("bogus = 1\npopulation = x\nadoption_fraction = 2\n").unwrap_err();
        let SimError::InvalidConfig(fields) = err else { panic!() };
        let names: Vec<_> = fields.iter().map(|f| f.field.as_str()).collect();
        assert_eq!(names, vec!["bogus", "population"]);

        let err = ScenarioConfig::parse("adoption_fraction = 2\nnear_fraction = 0.9\n").unwrap_err();
        let SimError::InvalidConfig(fields) = err else { panic!() };
        let names: Vec<_> = fields.iter().map(|f| f.field.as_str()).collect();
        assert_eq!(names, vec!["adoption_fraction", "near_fraction"]);
    }
}
