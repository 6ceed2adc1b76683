//! Device-side lookup of contact-log entries in a verified carrier list.
//!
//! Identifiers rotate daily, so a hit needs both the identifier and the
//! date to match.

use std::collections::HashSet;

use ed25519_dalek::VerifyingKey;
use thiserror::Error;

use crate::authority::{verify_list, SignedCarrierList};
use crate::contact_log::{Contact, ContactRecord};
use crate::ident::{DailyIdentifier, Day, Rdi};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MatchError {
    #[error("carrier list failed signature verification")]
    UnverifiedList,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Hit<R = ContactRecord> {
    pub rdi: Rdi,
    pub date: Day,
    pub record: R,
}

/// Membership index over a verified list.
#[derive(Debug, Clone, Default)]
pub struct CarrierIndex {
    entries: HashSet<(Day, Rdi)>,
}

impl CarrierIndex {
    pub fn build(list: &SignedCarrierList, public_key: &VerifyingKey) -> Result<Self, MatchError> {
        if !verify_list(list, public_key) {
            return Err(MatchError::UnverifiedList);
        }
        Ok(CarrierIndex {
            entries: list.entries.iter().copied().collect(),
        })
    }

    /// Merges a later list into this index.
    pub fn extend(&mut self, list: &SignedCarrierList, public_key: &VerifyingKey) -> Result<(), MatchError> {
        if !verify_list(list, public_key) {
            return Err(MatchError::UnverifiedList);
        }
        self.entries.extend(list.entries.iter().copied());
        Ok(())
    }

    pub fn contains(&self, date: Day, rdi: Rdi) -> bool {
        self.entries.contains(&(date, rdi))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn sort_hits<R: Contact>(hits: &mut [Hit<R>]) {
    hits.sort_by_key(|h| (h.date, h.record.first_tick(), h.rdi));
}

/// Records whose `(date, rdi)` is listed, ordered by `(date, first_tick)`.
pub fn match_contacts<'a, R, I>(records: I, index: &CarrierIndex) -> Vec<Hit<R>>
where
    R: Contact + Clone + 'a,
    I: IntoIterator<Item = &'a R>,
{
    let mut hits: Vec<Hit<R>> = records
        .into_iter()
        .filter(|r| index.contains(r.date(), r.foreign_rdi()))
        .map(|r| Hit {
            rdi: r.foreign_rdi(),
            date: r.date(),
            record: r.clone(),
        })
        .collect();
    sort_hits(&mut hits);
    hits
}

/// Reference semantics for [`match_contacts`]: every record against every
/// list entry.
pub fn brute_force_match<'a, R, I>(records: I, list: &[(Day, Rdi)]) -> Vec<Hit<R>>
where
    R: Contact + Clone + 'a,
    I: IntoIterator<Item = &'a R>,
{
    let mut hits = Vec::new();
    for r in records {
        let mut listed = false;
        for &(date, rdi) in list {
            if date == r.date() && rdi == r.foreign_rdi() {
                listed = true;
            }
        }
        if listed {
            hits.push(Hit {
                rdi: r.foreign_rdi(),
                date: r.date(),
                record: r.clone(),
            });
        }
    }
    sort_hits(&mut hits);
    hits
}

/// The device's own broadcast identifiers that appear in the list.
pub fn match_own_identifiers<'a>(
    own: impl IntoIterator<Item = &'a DailyIdentifier>,
    index: &CarrierIndex,
) -> Vec<DailyIdentifier> {
    let mut out: Vec<DailyIdentifier> = own
        .into_iter()
        .filter(|id| index.contains(id.date, id.rdi))
        .copied()
        .collect();
    out.sort_by_key(|id| (id.date, id.rdi));
    out.dedup();
    out
}
