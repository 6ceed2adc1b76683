//! Fixtures shared by the benchmarks under `benches/`.

use ed25519_dalek::{SigningKey, VerifyingKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracenet::authority::{Authority, CarrierEntry, EntrySource, SignedCarrierList};
use tracenet::casework::CaseConfig;
use tracenet::contact_log::{ContactLog, TICKS_PER_DAY};
use tracenet::ident::{DistanceClass, Rdi};

/// A log of `n` single-tick sightings spread over 14 days.
pub fn contact_log(n: usize, seed: u64) -> ContactLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = ContactLog::new(30);
    while log.len() < n {
        let tick = rng.random_range(0..TICKS_PER_DAY);
        log.observe_one(Rdi(rng.random()), DistanceClass::Near, rng.random_range(0..14), tick);
    }
    log
}

/// A signed list of `m` entries, `overlap` of them taken from `log`.
pub fn carrier_list(log: &ContactLog, m: usize, overlap: usize, seed: u64) -> (SignedCarrierList, VerifyingKey) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut authority = Authority::new(SigningKey::from_bytes(&[42; 32]), CaseConfig::default());
    let mut add = |date, rdi| {
        authority.insert_entry(CarrierEntry {
            rdi,
            date,
            added_epoch: 20,
            source: EntrySource::CarrierOwn,
        })
    };
    let mut n = 0;
    for r in log.records().take(overlap) {
        n += usize::from(add(r.date, r.foreign_rdi));
    }
    while n < m {
        n += usize::from(add(rng.random_range(0..14), Rdi(rng.random())));
    }
    (authority.publish(20), authority.public_key())
}
