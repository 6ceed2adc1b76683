//! The health authority: keeps the carrier list, publishes signed daily
//! copies of it, runs casework, and erases what it no longer needs.
//!
//! Signed list layout (all integers big-endian):
//!
//! ```text
//! "GACTC" | version 0x01 | algorithm | epoch u32 | count u32 | count × (date u32, rdi 16)
//!         | sig_len u16 | signature
//! ```
//!
//! The signature covers every byte before `sig_len`.

use std::collections::BTreeMap;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use thiserror::Error;

use crate::casework::{
    self, CarrierUpload, CaseConfig, CaseRecord, CaseState, Casebook, HitSource, HitSummary, MailboxMessage,
    MessageKind, Transition,
};
use crate::contact_log::{Category, ContactRecord, TickCounts};
use crate::ident::{Day, Rdi};
use crate::wire::{self, Malformed, Reader, Writer};

pub const LIST_MAGIC: [u8; 5] = *b"GACTC";
pub const LIST_VERSION: u8 = 0x01;
pub const ALG_ED25519: u8 = 0x01;
const HEADER_LEN: usize = 5 + 1 + 1 + 4 + 4;
const ENTRY_LEN: usize = 4 + 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthorityError {
    #[error("every uploaded record predates the infectious window starting day {0}")]
    StaleHistory(Day),
    #[error(transparent)]
    Malformed(#[from] Malformed),
    #[error("bad key: {0}")]
    BadKey(String),
}

/// Whether an entry came from the carrier's own beacons or from someone the
/// carrier observed. Never published.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntrySource {
    CarrierOwn,
    ContactDerived,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CarrierEntry {
    pub rdi: Rdi,
    pub date: Day,
    pub added_epoch: Day,
    pub source: EntrySource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedCarrierList {
    pub epoch_date: Day,
    pub algorithm: u8,
    /// Sorted ascending by `(date, rdi)`.
    pub entries: Vec<(Day, Rdi)>,
    pub signature: Vec<u8>,
}

impl SignedCarrierList {
    /// The bytes the signature covers.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&LIST_MAGIC)
            .u8(LIST_VERSION)
            .u8(self.algorithm)
            .u32(self.epoch_date)
            .u32(self.entries.len() as u32);
        for &(date, rdi) in &self.entries {
            w.u32(date).rdi(rdi);
        }
        w.finish()
    }

    pub fn contains(&self, date: Day, rdi: Rdi) -> bool {
        self.entries.binary_search(&(date, rdi)).is_ok()
    }
}

pub fn serialize_list(list: &SignedCarrierList) -> Vec<u8> {
    let mut out = list.signed_bytes();
    out.extend_from_slice(&(list.signature.len() as u16).to_be_bytes());
    out.extend_from_slice(&list.signature);
    out
}

pub fn deserialize_list(bytes: &[u8]) -> Result<SignedCarrierList, Malformed> {
    if bytes.len() < HEADER_LEN + 2 {
        return Err(Malformed::new("shorter than list header"));
    }
    let mut r = Reader::new(bytes);
    if r.take(5)? != LIST_MAGIC {
        return Err(Malformed::new("bad list magic"));
    }
    let version = r.u8()?;
    if version != LIST_VERSION {
        return Err(Malformed::new(format!("unsupported list version {version}")));
    }
    let algorithm = r.u8()?;
    let epoch_date = r.u32()?;
    let count = r.u32()? as usize;
    let body = count
        .checked_mul(ENTRY_LEN)
        .filter(|&b| b + 2 <= r.remaining())
        .ok_or_else(|| Malformed::new("entry count disagrees with body length"))?;
    let mut entries = Vec::with_capacity(body / ENTRY_LEN);
    for _ in 0..count {
        let date = r.u32()?;
        let rdi = r.rdi()?;
        entries.push((date, rdi));
    }
    if entries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Malformed::new("entries not in canonical order"));
    }
    let sig_len = usize::from(r.u16()?);
    if sig_len != r.remaining() {
        return Err(Malformed::new("signature length disagrees with body length"));
    }
    let signature = r.take(sig_len)?.to_vec();
    Ok(SignedCarrierList {
        epoch_date,
        algorithm,
        entries,
        signature,
    })
}

/// True iff the signature validates over the canonical bytes.
pub fn verify_list(list: &SignedCarrierList, public_key: &VerifyingKey) -> bool {
    if list.algorithm != ALG_ED25519 {
        return false;
    }
    let Ok(sig) = Signature::from_slice(&list.signature) else {
        return false;
    };
    if list.entries.windows(2).any(|w| w[0] >= w[1]) {
        return false;
    }
    public_key.verify(&list.signed_bytes(), &sig).is_ok()
}

/// Deserialize and verify in one go; malformed input is simply unverified.
pub fn verify_list_bytes(bytes: &[u8], public_key: &VerifyingKey) -> bool {
    deserialize_list(bytes).is_ok_and(|l| verify_list(&l, public_key))
}

pub fn public_key_from_hex(s: &str) -> Result<VerifyingKey, AuthorityError> {
    let mut raw = [0u8; 32];
    hex::decode_to_slice(s.trim(), &mut raw).map_err(|e| AuthorityError::BadKey(e.to_string()))?;
    VerifyingKey::from_bytes(&raw).map_err(|e| AuthorityError::BadKey(e.to_string()))
}

pub fn public_key_to_hex(key: &VerifyingKey) -> String {
    hex::encode(key.to_bytes())
}

pub fn signing_key_from_hex(s: &str) -> Result<SigningKey, AuthorityError> {
    let mut raw = [0u8; 32];
    hex::decode_to_slice(s.trim(), &mut raw).map_err(|e| AuthorityError::BadKey(e.to_string()))?;
    Ok(SigningKey::from_bytes(&raw))
}

/// A carrier upload kept for categorization until erasure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredHistory {
    pub epoch: Day,
    pub records: Vec<ContactRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Registration {
    pub carrier_own: usize,
    pub contact_derived: usize,
}

pub struct Authority {
    key: SigningKey,
    ga_ctc: BTreeMap<(Day, Rdi), CarrierEntry>,
    histories: Vec<StoredHistory>,
    pub casebook: Casebook,
}

impl Authority {
    pub fn new(key: SigningKey, config: CaseConfig) -> Self {
        Authority {
            key,
            ga_ctc: BTreeMap::new(),
            histories: Vec::new(),
            casebook: Casebook::new(config),
        }
    }

    pub fn public_key(&self) -> VerifyingKey {
        self.key.verifying_key()
    }

    pub fn entries(&self) -> impl Iterator<Item = &CarrierEntry> {
        self.ga_ctc.values()
    }

    pub fn histories(&self) -> &[StoredHistory] {
        &self.histories
    }

    /// Adds an entry unless `(date, rdi)` is already listed.
    pub fn insert_entry(&mut self, entry: CarrierEntry) -> bool {
        let key = (entry.date, entry.rdi);
        if self.ga_ctc.contains_key(&key) {
            return false;
        }
        self.ga_ctc.insert(key, entry);
        true
    }

    /// Lists the carrier's own identifiers for `infectious_start..=today` and
    /// the identifiers of its traced contacts from the same window, and keeps
    /// the contact records for categorization.
    pub fn register_carrier(
        &mut self,
        upload: &CarrierUpload,
        infectious_start: Day,
        today: Day,
    ) -> Result<Registration, AuthorityError> {
        if !upload.history.is_empty() && upload.history.iter().all(|r| r.date < infectious_start) {
            return Err(AuthorityError::StaleHistory(infectious_start));
        }
        let mut reg = Registration {
            carrier_own: 0,
            contact_derived: 0,
        };
        for id in &upload.own_identifiers {
            if id.date >= infectious_start && id.date <= today {
                reg.carrier_own += usize::from(self.insert_entry(CarrierEntry {
                    rdi: id.rdi,
                    date: id.date,
                    added_epoch: today,
                    source: EntrySource::CarrierOwn,
                }));
            }
        }
        let cfg = &self.casebook.config;
        let kept: Vec<ContactRecord> = upload
            .history
            .iter()
            .filter(|r| r.date >= infectious_start)
            .cloned()
            .collect();
        let traced: Vec<(Day, Rdi)> = kept
            .iter()
            .filter(|r| {
                let c = r.classify(cfg.threshold_minutes);
                c != Category::Uncritical && cfg.categories_traced.contains(&c)
            })
            .map(|r| (r.date, r.foreign_rdi))
            .collect();
        for (date, rdi) in traced {
            reg.contact_derived += usize::from(self.insert_entry(CarrierEntry {
                rdi,
                date,
                added_epoch: today,
                source: EntrySource::ContactDerived,
            }));
        }
        if !kept.is_empty() {
            let duplicate = self.histories.iter().any(|h| h.records == kept);
            if !duplicate {
                self.histories.push(StoredHistory {
                    epoch: today,
                    records: kept,
                });
            }
        }
        Ok(reg)
    }

    /// Signs every entry added on `epoch_date` or the day before.
    pub fn publish(&self, epoch_date: Day) -> SignedCarrierList {
        let prev = epoch_date.checked_sub(1);
        let entries: Vec<(Day, Rdi)> = self
            .ga_ctc
            .values()
            .filter(|e| e.added_epoch == epoch_date || Some(e.added_epoch) == prev)
            .map(|e| (e.date, e.rdi))
            .collect();
        let mut list = SignedCarrierList {
            epoch_date,
            algorithm: ALG_ED25519,
            entries,
            signature: Vec::new(),
        };
        list.signature = self.key.sign(&list.signed_bytes()).to_bytes().to_vec();
        list
    }

    /// Deletes histories and resolved cases from epochs at or before
    /// `epoch_date - margin_days`, plus entries that no longer fall inside a
    /// publication window.
    pub fn erase_expired(&mut self, epoch_date: Day, margin_days: u32) {
        if let Some(cutoff) = epoch_date.checked_sub(margin_days) {
            self.histories.retain(|h| h.epoch > cutoff);
            self.casebook.erase_resolved(cutoff);
        }
        if let Some(oldest_published) = epoch_date.checked_sub(1) {
            self.ga_ctc.retain(|_, e| e.added_epoch >= oldest_published);
        }
    }

    /// The authority's view of a contact: for an own-identifier hit, the
    /// carrier's record of that identifier (the longest, if several).
    pub fn assess(&self, summary: &HitSummary) -> HitSummary {
        match summary.source {
            HitSource::Observed => *summary,
            HitSource::OwnIdentifier => {
                let counts = self
                    .histories
                    .iter()
                    .flat_map(|h| &h.records)
                    .filter(|r| r.date == summary.date && r.foreign_rdi == summary.rdi)
                    .map(|r| r.counts)
                    .max_by_key(|c| (c.face_ticks(), c.total()))
                    .unwrap_or(TickCounts::default());
                HitSummary { counts, ..*summary }
            }
        }
    }

    /// Handles one inbound mailbox message and returns the replies.
    pub fn receive(&mut self, msg: &MailboxMessage, today: Day) -> Vec<MailboxMessage> {
        match &msg.kind {
            MessageKind::OpenInquiry(summary) => {
                let opened = self.casebook.deliver(msg, today);
                let Some(case) = self.casebook.get(msg.token).cloned() else {
                    return opened;
                };
                if case.state != CaseState::InquiryOpen || case.created_epoch != today {
                    return opened;
                }
                self.decide(&case, summary, today)
            }
            MessageKind::CategorizationEvidence(_) => self.casebook.deliver(msg, today),
            MessageKind::HistoryUpload(upload) => {
                let carrier = self
                    .casebook
                    .get(msg.token)
                    .filter(|c| c.state == CaseState::Carrier)
                    .and_then(|c| c.positive);
                let out = self.casebook.deliver(msg, today);
                if let Some(positive) = carrier {
                    let start = positive.saturating_sub(self.casebook.config.lookback_days);
                    // A stale upload is dropped; the case stays a carrier.
                    let _ = self.register_carrier(upload, start, today);
                }
                out
            }
            _ => self.casebook.deliver(msg, today),
        }
    }

    /// Categorizes an open case, taking any evidence already received.
    pub fn decide(&mut self, case: &CaseRecord, summary: &HitSummary, today: Day) -> Vec<MailboxMessage> {
        let evidence = case.payload.as_ref().and_then(|p| p.evidence.clone());
        let view = self.assess(summary);
        match casework::categorize(case, &view, evidence.as_ref(), &self.casebook.config, today) {
            Ok((next, out)) => self.casebook.commit(
                Transition {
                    case: next,
                    outbound: out,
                    violation: None,
                },
                today,
            ),
            Err(e) => self.casebook.commit(
                Transition {
                    case: case.clone(),
                    outbound: Vec::new(),
                    violation: Some(e.to_string()),
                },
                today,
            ),
        }
    }

    /// Every byte of retained state, for data-minimization scans.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = Writer::new();
        for e in self.ga_ctc.values() {
            w.u32(e.date).rdi(e.rdi).u32(e.added_epoch);
        }
        for h in &self.histories {
            w.u32(h.epoch);
            for r in &h.records {
                wire::put_record(&mut w, r);
            }
        }
        self.casebook.payload_bytes(&mut w);
        w.finish()
    }
}
