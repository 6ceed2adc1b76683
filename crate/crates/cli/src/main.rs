use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use tempfile::NamedTempFile;

use tracenet::authority::{
    deserialize_list, public_key_from_hex, public_key_to_hex, serialize_list, signing_key_from_hex, verify_list,
    Authority, CarrierEntry, EntrySource, SignedCarrierList,
};
use tracenet::casework::{decode_trace, CaseConfig, Casebook};
use tracenet::contact_log::{history_from_csv, DEFAULT_THRESHOLD_MINUTES};
use tracenet::ident::{Day, Rdi};
use tracenet::matching::{match_contacts, CarrierIndex};
use tracenet::simnet::{calibrate_p_transmit, estimate_r_effective_report, run_traced, MetricsReport, ScenarioConfig};

const SEED_ENV: &str = "TRACENET_SEED";

/// Contact-tracing protocol tools and epidemic simulator.
#[derive(Debug, Parser)]
#[command(name = "tracenet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write metrics.csv, events.log and mailbox.bin.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides TRACENET_SEED and the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Sign a carrier list from a CSV of `added_epoch,date,rdi_hex` rows.
    Genlist {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        epoch: Day,
        /// File holding the 32-byte Ed25519 secret key as hex.
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the signature of a serialized carrier list.
    Verify {
        #[arg(long)]
        list: PathBuf,
        #[arg(long)]
        pubkey: String,
    },
    /// Match an exported contact history against a carrier list.
    Match {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        list: PathBuf,
        #[arg(long)]
        pubkey: String,
    },
    /// Replay a mailbox trace through the case state machine.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Summarize a metrics CSV.
    Report {
        #[arg(long)]
        metrics: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate { config, seed, out } => simulate(&config, seed, &out),
        Command::Genlist { state, epoch, key, out } => genlist(&state, epoch, &key, &out),
        Command::Verify { list, pubkey } => verify(&list, &pubkey),
        Command::Match { log, list, pubkey } => match_log(&log, &list, &pubkey),
        Command::Replay { trace } => replay(&trace),
        Command::Report { metrics } => report(&metrics),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn resolve_seed(flag: Option<u64>, config_seed: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}={v:?} is not a seed")),
        Err(_) => Ok(config_seed),
    }
}

fn simulate(config_path: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = ScenarioConfig::parse(&read_text(config_path)?)?;
    cfg.seed = resolve_seed(seed, cfg.seed)?;
    if cfg.p_transmit.is_none() {
        let cal = calibrate_p_transmit(&cfg, cfg.target_r0, 0.1)?;
        eprintln!("calibrated p_transmit={} (R0 {:.3})", cal.p_transmit, cal.r0);
        cfg.p_transmit = Some(cal.p_transmit);
    }
    let (report, trace) = run_traced(&cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_atomic(&out.join("metrics.csv"), report.to_csv().as_bytes())?;
    write_atomic(&out.join("events.log"), trace.events.as_bytes())?;
    write_atomic(&out.join("mailbox.bin"), &trace.mailbox)?;
    println!(
        "seed={} days={} attack_rate={:.4} empirical_r0={:.4} extinct={}",
        cfg.seed,
        report.days.len(),
        report.final_attack_rate,
        report.empirical_r0,
        report.extinct
    );
    Ok(())
}

fn parse_state(text: &str) -> Result<Vec<CarrierEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("added_epoch")) {
            continue;
        }
        let bad = |why: &str| anyhow!("state line {}: {why}", i + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [added, date, rdi] = fields[..] else {
            return Err(bad("expected added_epoch,date,rdi_hex"));
        };
        out.push(CarrierEntry {
            added_epoch: added.parse().map_err(|_| bad("bad added_epoch"))?,
            date: date.parse().map_err(|_| bad("bad date"))?,
            rdi: Rdi::from_hex(rdi).map_err(|_| bad("bad rdi"))?,
            source: EntrySource::CarrierOwn,
        });
    }
    Ok(out)
}

fn genlist(state: &Path, epoch: Day, key: &Path, out: &Path) -> Result<()> {
    let key = signing_key_from_hex(read_text(key)?.trim())?;
    let mut authority = Authority::new(key, CaseConfig::default());
    for entry in parse_state(&read_text(state)?)? {
        authority.insert_entry(entry);
    }
    let list = authority.publish(epoch);
    write_atomic(out, &serialize_list(&list))?;
    println!("{}", public_key_to_hex(&authority.public_key()));
    Ok(())
}

/// A list that does not parse cannot be verified either.
fn load_list(path: &Path) -> Result<SignedCarrierList> {
    deserialize_list(&read(path)?).map_err(|e| anyhow!("signature verification failed: {e}"))
}

fn load_verified(list: &Path, pubkey: &str) -> Result<CarrierIndex> {
    let pk = public_key_from_hex(pubkey)?;
    let list = load_list(list)?;
    CarrierIndex::build(&list, &pk).map_err(|_| anyhow!("signature verification failed"))
}

fn verify(list_path: &Path, pubkey: &str) -> Result<()> {
    let pk = public_key_from_hex(pubkey)?;
    let list = load_list(list_path)?;
    if !verify_list(&list, &pk) {
        bail!("signature verification failed");
    }
    println!("ok epoch={} entries={}", list.epoch_date, list.entries.len());
    Ok(())
}

fn match_log(log: &Path, list: &Path, pubkey: &str) -> Result<()> {
    let index = load_verified(list, pubkey)?;
    let rows = history_from_csv(&read_text(log)?)?;
    let mut out = String::from("date,rdi_hex,duration_minutes,category\n");
    for hit in match_contacts(&rows, &index) {
        let counts = hit.record.counts;
        out.push_str(&format!(
            "{},{},{},{}\n",
            hit.date,
            hit.rdi,
            f64::from(counts.total()) * 0.5,
            counts.category(DEFAULT_THRESHOLD_MINUTES).as_str()
        ));
    }
    print!("{out}");
    Ok(())
}

fn replay(trace: &Path) -> Result<()> {
    let messages = decode_trace(&read(trace)?)?;
    let mut book = Casebook::new(CaseConfig::default());
    println!("seq,token,kind,state");
    for (seq, msg) in messages.iter().enumerate() {
        book.deliver(msg, 0);
        let state = book
            .get(msg.token)
            .map_or_else(|| "Idle".to_owned(), |c| format!("{:?}", c.state));
        println!("{seq},{},{},{state}", msg.token, msg.kind.name());
    }
    let violations = book.audit().len();
    eprintln!(
        "messages={} cases={} violations={violations}",
        messages.len(),
        book.len()
    );
    Ok(())
}

fn report(path: &Path) -> Result<()> {
    let report = MetricsReport::from_csv(&read_text(path)?)?;
    let peak = report.days.iter().max_by_key(|d| d.active_cases);
    println!("days,{}", report.days.len());
    println!("population,{}", report.population);
    println!("final_attack_rate,{:.6}", report.final_attack_rate);
    println!("empirical_r0,{:.6}", report.empirical_r0);
    println!("case_reproduction,{:.6}", report.case_reproduction);
    println!("extinct,{}", report.extinct);
    if let Some(p) = peak {
        println!("peak_active,{}", p.active_cases);
        println!("peak_day,{}", p.day);
    }
    println!("tests_used,{}", report.days.iter().map(|d| d.tests_used).sum::<u64>());
    let series = estimate_r_effective_report(&report, 7)?;
    println!();
    println!("day,r_effective");
    for (day, r) in series {
        match r {
            Some(r) => println!("{day},{r:.4}"),
            None => println!("{day},"),
        }
    }
    Ok(())
}
