use std::fmt::Write as _;

use super::SimError;

pub const METRICS_CSV_HEADER: &str = "day,new_infections,active_cases,quarantined,tests_used,published_list_size,\
susceptible,exposed,infectious,symptomatic,removed";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DayMetrics {
    pub day: u32,
    pub new_infections: u64,
    pub active_cases: u64,
    pub quarantined: u64,
    pub tests_used: u64,
    pub published_list_size: u64,
    pub susceptible: u64,
    pub exposed: u64,
    pub infectious: u64,
    pub symptomatic: u64,
    pub removed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub population: u64,
    pub generation_days: u32,
    pub days: Vec<DayMetrics>,
    /// Share of the population ever infected, index cases included.
    pub final_attack_rate: f64,
    /// Mean secondary infections of the index cases.
    pub empirical_r0: f64,
    /// Mean secondary infections of non-index cases whose course ended
    /// within the run.
    pub case_reproduction: f64,
    pub completed_cases: u64,
    pub secondary_infections: u64,
    /// Active cases dropped to zero on some day of the run.
    pub extinct: bool,
}

impl MetricsReport {
    pub fn new_infections(&self) -> Vec<u64> {
        self.days.iter().map(|d| d.new_infections).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_CSV_HEADER);
        s.push('\n');
        for d in &self.days {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                d.day,
                d.new_infections,
                d.active_cases,
                d.quarantined,
                d.tests_used,
                d.published_list_size,
                d.susceptible,
                d.exposed,
                d.infectious,
                d.symptomatic,
                d.removed
            );
        }
        s.push('\n');
        s.push_str("key,value\n");
        let _ = writeln!(s, "population,{}", self.population);
        let _ = writeln!(s, "generation_days,{}", self.generation_days);
        let _ = writeln!(s, "final_attack_rate,{:.6}", self.final_attack_rate);
        let _ = writeln!(s, "empirical_r0,{:.6}", self.empirical_r0);
        let _ = writeln!(s, "case_reproduction,{:.6}", self.case_reproduction);
        let _ = writeln!(s, "completed_cases,{}", self.completed_cases);
        let _ = writeln!(s, "secondary_infections,{}", self.secondary_infections);
        let _ = writeln!(s, "extinct,{}", self.extinct);
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, SimError> {
        let bad = |line: usize, why: &str| SimError::Metrics(format!("line {line}: {why}"));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == METRICS_CSV_HEADER => {}
            _ => return Err(bad(1, "missing header")),
        }
        let mut report = MetricsReport::default();
        let mut in_summary = false;
        for (i, line) in lines {
            let n = i + 1;
            if line.is_empty() {
                continue;
            }
            if line == "key,value" {
                in_summary = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if in_summary {
                let [key, value] = fields[..] else {
                    return Err(bad(n, "expected key,value"));
                };
                let f = || value.parse::<f64>().map_err(|_| bad(n, "bad number"));
                let u = || value.parse::<u64>().map_err(|_| bad(n, "bad integer"));
                match key {
                    "population" => report.population = u()?,
                    "generation_days" => report.generation_days = u()? as u32,
                    "final_attack_rate" => report.final_attack_rate = f()?,
                    "empirical_r0" => report.empirical_r0 = f()?,
                    "case_reproduction" => report.case_reproduction = f()?,
                    "completed_cases" => report.completed_cases = u()?,
                    "secondary_infections" => report.secondary_infections = u()?,
                    "extinct" => report.extinct = value == "true",
                    _ => return Err(bad(n, "unknown summary key")),
                }
                continue;
            }
            if fields.len() != 11 {
                return Err(bad(n, "expected 11 fields"));
            }
            let v: Vec<u64> = fields
                .iter()
                .map(|f| f.parse::<u64>().map_err(|_| bad(n, "bad integer")))
                .collect::<Result<_, _>>()?;
            report.days.push(DayMetrics {
                day: v[0] as u32,
                new_infections: v[1],
                active_cases: v[2],
                quarantined: v[3],
                tests_used: v[4],
                published_list_size: v[5],
                susceptible: v[6],
                exposed: v[7],
                infectious: v[8],
                symptomatic: v[9],
                removed: v[10],
            });
        }
        Ok(report)
    }
}

/// Ratio-of-new-infections estimate over a generation interval `g`:
/// `R(t) = sum(new[t..t+g]) / sum(new[t-g..t])` for every `t` where both
/// windows fit. `None` where the earlier window saw no infections.
pub fn estimate_r_effective(
    new_infections: &[u64],
    generation_days: u32,
    window_days: u32,
) -> Result<Vec<(u32, Option<f64>)>, SimError> {
    let g = generation_days.max(1) as usize;
    let need = (window_days as usize).max(2 * g);
    if new_infections.len() < need {
        return Err(SimError::InsufficientData {
            have: new_infections.len(),
            need,
        });
    }
    let out = (g..=new_infections.len() - g)
        .map(|t| {
            let before: u64 = new_infections[t - g..t].iter().sum();
            let after: u64 = new_infections[t..t + g].iter().sum();
            let r = (before > 0).then(|| after as f64 / before as f64);
            (t as u32, r)
        })
        .collect();
    Ok(out)
}

/// [`estimate_r_effective`] over a report's own series.
pub fn estimate_r_effective_report(
    report: &MetricsReport,
    window_days: u32,
) -> Result<Vec<(u32, Option<f64>)>, SimError> {
    estimate_r_effective(&report.new_infections(), report.generation_days, window_days)
}
