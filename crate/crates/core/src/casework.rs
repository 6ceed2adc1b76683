//! Anonymous mailbox casework: inquiry tokens, messages and their wire
//! format, and the case state machine.
//!
//! Transition graph (anything else is a protocol violation that leaves the
//! case untouched):
//!
//! ```text
//! Idle --OpenInquiry--> InquiryOpen --CategoryDecision(c)--> Categorized(c) --TestOrder--> AwaitingTest1
//!                       InquiryOpen --CategoryDecision(Uncritical) | Drop--> Dropped
//!                       Categorized --Drop--> Dropped
//! AwaitingTest1 --negative--> AwaitingTest2 --negative, >= incubation later--> Released
//! AwaitingTest1 | AwaitingTest2 --positive--> Carrier
//! Idle --(device, quarantine silently)--> SelfQuarantined
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::contact_log::{Category, ContactRecord, LocationEntry, TickCounts, DEFAULT_THRESHOLD_MINUTES};
use crate::ident::{DailyIdentifier, Day, DistanceClass, Rdi};
use crate::wire::{self, Malformed, Reader, Writer};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InquiryToken(pub u128);

impl InquiryToken {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        InquiryToken(rng.random())
    }
}

impl fmt::Debug for InquiryToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Token({:032x})", self.0)
    }
}

impl fmt::Display for InquiryToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseState {
    Idle,
    SelfQuarantined,
    InquiryOpen,
    Categorized(Category),
    AwaitingTest1,
    AwaitingTest2,
    Carrier,
    Released,
    Dropped,
}

impl CaseState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            CaseState::Carrier | CaseState::Released | CaseState::Dropped | CaseState::SelfQuarantined
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preference {
    QuarantineSilently,
    Negotiate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestOutcome {
    Positive,
    Negative,
}

/// Which side of the contact the published identifier belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HitSource {
    /// The device logged this identifier from someone else's beacon.
    Observed,
    /// The device's own broadcast identifier was published.
    OwnIdentifier,
}

/// What a device discloses when it opens an inquiry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HitSummary {
    pub date: Day,
    pub rdi: Rdi,
    pub counts: TickCounts,
    pub source: HitSource,
}

impl HitSummary {
    pub fn observed(record: &ContactRecord) -> Self {
        HitSummary {
            date: record.date,
            rdi: record.foreign_rdi,
            counts: record.counts,
            source: HitSource::Observed,
        }
    }

    pub fn own(id: &DailyIdentifier) -> Self {
        HitSummary {
            date: id.date,
            rdi: id.rdi,
            counts: TickCounts::default(),
            source: HitSource::OwnIdentifier,
        }
    }
}

/// Opaque categorization evidence: location excerpts plus an optional
/// override of the distance assessment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Evidence {
    pub distance_override: Option<DistanceClass>,
    pub excerpts: Vec<LocationEntry>,
}

impl Evidence {
    /// Moves every observed tick into the overriding class.
    pub fn apply(&self, counts: TickCounts) -> TickCounts {
        let total = counts.total();
        match self.distance_override {
            None => counts,
            Some(DistanceClass::Near) => TickCounts {
                near: total,
                mid: 0,
                far: 0,
            },
            Some(DistanceClass::Mid) => TickCounts {
                near: 0,
                mid: total,
                far: 0,
            },
            Some(DistanceClass::Far) => TickCounts {
                near: 0,
                mid: 0,
                far: total,
            },
        }
    }
}

/// A carrier's upload: its own daily identifiers and its contact records.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct CarrierUpload {
    pub own_identifiers: Vec<DailyIdentifier>,
    pub history: Vec<ContactRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MessageKind {
    OpenInquiry(HitSummary),
    CategorizationEvidence(Evidence),
    CategoryDecision(Category),
    TestOrder,
    TestResult { outcome: TestOutcome, date: Day },
    HistoryRequest { from: Day },
    HistoryUpload(CarrierUpload),
    Release,
    Drop,
}

impl MessageKind {
    pub fn code(&self) -> u8 {
        match self {
            MessageKind::OpenInquiry(_) => 0x01,
            MessageKind::CategorizationEvidence(_) => 0x02,
            MessageKind::CategoryDecision(_) => 0x03,
            MessageKind::TestOrder => 0x04,
            MessageKind::TestResult { .. } => 0x05,
            MessageKind::HistoryRequest { .. } => 0x06,
            MessageKind::HistoryUpload(_) => 0x07,
            MessageKind::Release => 0x08,
            MessageKind::Drop => 0x09,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MessageKind::OpenInquiry(_) => "open_inquiry",
            MessageKind::CategorizationEvidence(_) => "evidence",
            MessageKind::CategoryDecision(_) => "category_decision",
            MessageKind::TestOrder => "test_order",
            MessageKind::TestResult { .. } => "test_result",
            MessageKind::HistoryRequest { .. } => "history_request",
            MessageKind::HistoryUpload(_) => "history_upload",
            MessageKind::Release => "release",
            MessageKind::Drop => "drop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MailboxMessage {
    pub token: InquiryToken,
    pub kind: MessageKind,
}

impl MailboxMessage {
    pub fn new(token: InquiryToken, kind: MessageKind) -> Self {
        MailboxMessage { token, kind }
    }
}

/// Largest encoded message, bounded by the u16 length prefix.
pub const MAX_MESSAGE_LEN: usize = u16::MAX as usize;

fn category_code(c: Category) -> u8 {
    match c {
        Category::Uncritical => 0,
        Category::Category1 => 1,
        Category::Category2 => 2,
    }
}

fn category_from(code: u8) -> Result<Category, Malformed> {
    match code {
        0 => Ok(Category::Uncritical),
        1 => Ok(Category::Category1),
        2 => Ok(Category::Category2),
        other => Err(Malformed::new(format!("category code {other}"))),
    }
}

fn class_code(c: Option<DistanceClass>) -> u8 {
    match c {
        None => 0,
        Some(DistanceClass::Near) => 1,
        Some(DistanceClass::Mid) => 2,
        Some(DistanceClass::Far) => 3,
    }
}

fn class_from(code: u8) -> Result<Option<DistanceClass>, Malformed> {
    Ok(match code {
        0 => None,
        1 => Some(DistanceClass::Near),
        2 => Some(DistanceClass::Mid),
        3 => Some(DistanceClass::Far),
        other => return Err(Malformed::new(format!("distance code {other}"))),
    })
}

pub(crate) fn put_summary(w: &mut Writer, s: &HitSummary) {
    w.u32(s.date).rdi(s.rdi);
    wire::put_counts(w, &s.counts);
    w.u8(match s.source {
        HitSource::Observed => 0,
        HitSource::OwnIdentifier => 1,
    });
}

fn get_summary(r: &mut Reader<'_>) -> Result<HitSummary, Malformed> {
    let date = r.u32()?;
    let rdi = r.rdi()?;
    let counts = wire::get_counts(r)?;
    let source = match r.u8()? {
        0 => HitSource::Observed,
        1 => HitSource::OwnIdentifier,
        other => return Err(Malformed::new(format!("hit source {other}"))),
    };
    Ok(HitSummary {
        date,
        rdi,
        counts,
        source,
    })
}

pub(crate) fn put_evidence(w: &mut Writer, e: &Evidence) -> Result<(), Malformed> {
    w.u8(class_code(e.distance_override));
    let n = u16::try_from(e.excerpts.len()).map_err(|_| Malformed::new("too many excerpts"))?;
    w.u16(n);
    for x in &e.excerpts {
        w.u16(x.tick);
        w.blob(&x.location)?;
        w.blob(&x.orientation)?;
    }
    Ok(())
}

fn get_evidence(r: &mut Reader<'_>) -> Result<Evidence, Malformed> {
    let distance_override = class_from(r.u8()?)?;
    let n = r.u16()?;
    let mut excerpts = Vec::with_capacity(usize::from(n));
    for _ in 0..n {
        let tick = r.u16()?;
        let location = r.blob()?.to_vec();
        let orientation = r.blob()?.to_vec();
        excerpts.push(LocationEntry {
            tick,
            location,
            orientation,
        });
    }
    Ok(Evidence {
        distance_override,
        excerpts,
    })
}

pub(crate) fn put_upload(w: &mut Writer, u: &CarrierUpload) -> Result<(), Malformed> {
    let n_own = u16::try_from(u.own_identifiers.len()).map_err(|_| Malformed::new("too many identifiers"))?;
    w.u16(n_own);
    for id in &u.own_identifiers {
        wire::put_identifier(w, id);
    }
    w.u32(u.history.len() as u32);
    for rec in &u.history {
        wire::put_record(w, rec);
    }
    Ok(())
}

fn get_upload(r: &mut Reader<'_>) -> Result<CarrierUpload, Malformed> {
    let n_own = r.u16()?;
    let own_identifiers = (0..n_own)
        .map(|_| wire::get_identifier(r))
        .collect::<Result<Vec<_>, _>>()?;
    let n = r.u32()?;
    // A record is at least 38 bytes; reject counts the body cannot hold.
    if (n as usize).saturating_mul(38) > r.remaining() {
        return Err(Malformed::new("record count exceeds body"));
    }
    let history = (0..n).map(|_| wire::get_record(r)).collect::<Result<Vec<_>, _>>()?;
    Ok(CarrierUpload {
        own_identifiers,
        history,
    })
}

/// `u16 total length | token 16 | kind 1 | body`; the length counts every
/// byte including itself.
pub fn encode_message(msg: &MailboxMessage) -> Result<Vec<u8>, Malformed> {
    let mut w = Writer::new();
    w.u16(0).bytes(&msg.token.0.to_be_bytes()).u8(msg.kind.code());
    match &msg.kind {
        MessageKind::OpenInquiry(s) => put_summary(&mut w, s),
        MessageKind::CategorizationEvidence(e) => put_evidence(&mut w, e)?,
        MessageKind::CategoryDecision(c) => {
            w.u8(category_code(*c));
        }
        MessageKind::TestOrder | MessageKind::Release | MessageKind::Drop => {}
        MessageKind::TestResult { outcome, date } => {
            w.u8(match outcome {
                TestOutcome::Negative => 0,
                TestOutcome::Positive => 1,
            })
            .u32(*date);
        }
        MessageKind::HistoryRequest { from } => {
            w.u32(*from);
        }
        MessageKind::HistoryUpload(u) => put_upload(&mut w, u)?,
    }
    let mut out = w.finish();
    let len = u16::try_from(out.len())
        .map_err(|_| Malformed::new(format!("message of {} bytes exceeds u16 length", out.len())))?;
    out[..2].copy_from_slice(&len.to_be_bytes());
    Ok(out)
}

/// Decodes one message from the front of `bytes`, returning it with the
/// number of bytes consumed.
pub fn decode_message(bytes: &[u8]) -> Result<(MailboxMessage, usize), Malformed> {
    let mut head = Reader::new(bytes);
    let total = usize::from(head.u16()?);
    if total < 19 || total > bytes.len() {
        return Err(Malformed::new(format!("bad message length {total}")));
    }
    let mut r = Reader::new(&bytes[2..total]);
    let token = InquiryToken(u128::from_be_bytes(r.take(16)?.try_into().unwrap()));
    let kind = match r.u8()? {
        0x01 => MessageKind::OpenInquiry(get_summary(&mut r)?),
        0x02 => MessageKind::CategorizationEvidence(get_evidence(&mut r)?),
        0x03 => MessageKind::CategoryDecision(category_from(r.u8()?)?),
        0x04 => MessageKind::TestOrder,
        0x05 => {
            let outcome = match r.u8()? {
                0 => TestOutcome::Negative,
                1 => TestOutcome::Positive,
                other => return Err(Malformed::new(format!("test outcome {other}"))),
            };
            MessageKind::TestResult {
                outcome,
                date: r.u32()?,
            }
        }
        0x06 => MessageKind::HistoryRequest { from: r.u32()? },
        0x07 => MessageKind::HistoryUpload(get_upload(&mut r)?),
        0x08 => MessageKind::Release,
        0x09 => MessageKind::Drop,
        other => return Err(Malformed::new(format!("message kind {other:#04x}"))),
    };
    r.expect_end()?;
    Ok((MailboxMessage { token, kind }, total))
}

/// Decodes a concatenation of messages, as written to trace files.
pub fn decode_trace(mut bytes: &[u8]) -> Result<Vec<MailboxMessage>, Malformed> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (msg, used) = decode_message(bytes)?;
        out.push(msg);
        bytes = &bytes[used..];
    }
    Ok(out)
}

/// Splits an upload into messages that each fit the length prefix.
pub fn upload_messages(token: InquiryToken, upload: &CarrierUpload) -> Vec<MailboxMessage> {
    // header 19 + own count 2 + history count 4
    const BUDGET: usize = MAX_MESSAGE_LEN - 25;
    let mut out = Vec::new();
    let mut current = CarrierUpload {
        own_identifiers: upload.own_identifiers.clone(),
        history: Vec::new(),
    };
    let mut used = 20 * current.own_identifiers.len();
    for rec in &upload.history {
        let n = wire::record_len(rec);
        if used + n > BUDGET && !(current.history.is_empty() && current.own_identifiers.is_empty()) {
            out.push(MailboxMessage::new(
                token,
                MessageKind::HistoryUpload(std::mem::take(&mut current)),
            ));
            used = 0;
        }
        used += n;
        current.history.push(rec.clone());
    }
    if !current.history.is_empty() || !current.own_identifiers.is_empty() || out.is_empty() {
        out.push(MailboxMessage::new(token, MessageKind::HistoryUpload(current)));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseConfig {
    /// Minimum spacing between the two negative tests.
    pub incubation_days: u32,
    /// How far before a positive test the history request reaches back.
    pub lookback_days: u32,
    pub threshold_minutes: f64,
    /// Categories that lead to quarantine and testing; others are dropped.
    pub categories_traced: BTreeSet<Category>,
}

impl Default for CaseConfig {
    fn default() -> Self {
        CaseConfig {
            incubation_days: 5,
            lookback_days: 5,
            threshold_minutes: DEFAULT_THRESHOLD_MINUTES,
            categories_traced: [Category::Category1, Category::Category2].into_iter().collect(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CaseError {
    #[error("no hits to act on")]
    NoHits,
    #[error("{op} not allowed in state {state:?}")]
    WrongState { state: CaseState, op: &'static str },
    #[error("retest on day {second} is earlier than first negative {first} plus incubation")]
    PrematureRetest { first: Day, second: Day },
}

/// Stored material of an open case; erased on drop.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CasePayload {
    pub summary: HitSummary,
    pub evidence: Option<Evidence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CaseRecord {
    pub token: InquiryToken,
    pub state: CaseState,
    pub category: Option<Category>,
    pub negatives: Vec<Day>,
    pub positive: Option<Day>,
    pub created_epoch: Day,
    pub resolution_epoch: Option<Day>,
    pub payload: Option<CasePayload>,
}

impl CaseRecord {
    pub fn idle(token: InquiryToken, epoch: Day) -> Self {
        CaseRecord {
            token,
            state: CaseState::Idle,
            category: None,
            negatives: Vec::new(),
            positive: None,
            created_epoch: epoch,
            resolution_epoch: None,
            payload: None,
        }
    }

    /// Day from which the retest may be taken, once in `AwaitingTest2`.
    pub fn retest_due(&self, cfg: &CaseConfig) -> Option<Day> {
        match (self.state, self.negatives.first()) {
            (CaseState::AwaitingTest2, Some(&first)) => Some(first + cfg.incubation_days),
            _ => None,
        }
    }

    fn resolve(&mut self, state: CaseState, epoch: Day) {
        self.state = state;
        self.resolution_epoch = Some(epoch);
    }

    fn drop_and_erase(&mut self, epoch: Day) {
        self.resolve(CaseState::Dropped, epoch);
        self.payload = None;
    }

    fn is_replayed_result(&self, outcome: TestOutcome, date: Day) -> bool {
        match outcome {
            TestOutcome::Positive => self.positive == Some(date),
            TestOutcome::Negative => self.negatives.contains(&date),
        }
    }
}

/// Device side: what to do about a batch of hits.
///
/// Silent quarantine emits nothing at all. Negotiation opens one inquiry per
/// distinct `(date, rdi)`, each with a fresh token.
pub fn on_hits<R: Rng + ?Sized>(
    hits: &[HitSummary],
    preference: Preference,
    rng: &mut R,
) -> Result<(CaseState, Vec<MailboxMessage>), CaseError> {
    if hits.is_empty() {
        return Err(CaseError::NoHits);
    }
    match preference {
        Preference::QuarantineSilently => Ok((CaseState::SelfQuarantined, Vec::new())),
        Preference::Negotiate => {
            let mut seen = BTreeSet::new();
            let msgs = hits
                .iter()
                .filter(|h| seen.insert((h.date, h.rdi)))
                .map(|h| MailboxMessage::new(InquiryToken::random(rng), MessageKind::OpenInquiry(*h)))
                .collect();
            Ok((CaseState::InquiryOpen, msgs))
        }
    }
}

/// Authority side: decide the category of an open inquiry.
///
/// `summary` is the authority's best view of the contact, which may differ
/// from what the device sent. Uncritical or untraced categories drop the
/// case and erase its payload; anything else orders a test.
pub fn categorize(
    case: &CaseRecord,
    summary: &HitSummary,
    evidence: Option<&Evidence>,
    cfg: &CaseConfig,
    today: Day,
) -> Result<(CaseRecord, Vec<MailboxMessage>), CaseError> {
    if case.state != CaseState::InquiryOpen {
        return Err(CaseError::WrongState {
            state: case.state,
            op: "categorize",
        });
    }
    let counts = evidence.map_or(summary.counts, |e| e.apply(summary.counts));
    let category = counts.category(cfg.threshold_minutes);
    let mut next = case.clone();
    next.category = Some(category);
    let token = case.token;
    let decision = MailboxMessage::new(token, MessageKind::CategoryDecision(category));
    if category == Category::Uncritical || !cfg.categories_traced.contains(&category) {
        next.drop_and_erase(today);
        let drop = MailboxMessage::new(token, MessageKind::Drop);
        return Ok((next, vec![decision, drop]));
    }
    next.state = CaseState::AwaitingTest1;
    Ok((next, vec![decision, MailboxMessage::new(token, MessageKind::TestOrder)]))
}

pub fn record_test_result(
    case: &CaseRecord,
    outcome: TestOutcome,
    date: Day,
    cfg: &CaseConfig,
    today: Day,
) -> Result<(CaseRecord, Vec<MailboxMessage>), CaseError> {
    let mut next = case.clone();
    let token = case.token;
    match (case.state, outcome) {
        (CaseState::AwaitingTest1 | CaseState::AwaitingTest2, TestOutcome::Positive) => {
            next.positive = Some(date);
            next.resolve(CaseState::Carrier, today);
            let from = date.saturating_sub(cfg.lookback_days);
            Ok((
                next,
                vec![MailboxMessage::new(token, MessageKind::HistoryRequest { from })],
            ))
        }
        (CaseState::AwaitingTest1, TestOutcome::Negative) => {
            next.negatives.push(date);
            next.state = CaseState::AwaitingTest2;
            Ok((next, Vec::new()))
        }
        (CaseState::AwaitingTest2, TestOutcome::Negative) => {
            let first = case.negatives[0];
            if u64::from(date) < u64::from(first) + u64::from(cfg.incubation_days) || date == first {
                return Err(CaseError::PrematureRetest { first, second: date });
            }
            next.negatives.push(date);
            next.resolve(CaseState::Released, today);
            Ok((next, vec![MailboxMessage::new(token, MessageKind::Release)]))
        }
        (state, _) => Err(CaseError::WrongState {
            state,
            op: "record_test_result",
        }),
    }
}

/// Result of [`step`]. A violation means the message was illegal in the
/// case's state and nothing changed.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub case: CaseRecord,
    pub outbound: Vec<MailboxMessage>,
    pub violation: Option<String>,
}

impl Transition {
    fn ok(case: CaseRecord, outbound: Vec<MailboxMessage>) -> Self {
        Transition {
            case,
            outbound,
            violation: None,
        }
    }

    fn unchanged(case: &CaseRecord) -> Self {
        Transition::ok(case.clone(), Vec::new())
    }

    fn illegal(case: &CaseRecord, why: String) -> Self {
        Transition {
            case: case.clone(),
            outbound: Vec::new(),
            violation: Some(why),
        }
    }
}

/// Total transition function over `(case, message)`.
pub fn step(case: &CaseRecord, msg: &MailboxMessage, cfg: &CaseConfig, today: Day) -> Transition {
    use CaseState as S;
    use MessageKind as K;

    let illegal = || Transition::illegal(case, format!("{} in state {:?}", msg.kind.name(), case.state));
    if msg.token != case.token {
        return Transition::illegal(case, format!("token {} addressed to case {}", msg.token, case.token));
    }
    match (case.state, &msg.kind) {
        (S::Idle, K::OpenInquiry(summary)) => {
            let mut next = case.clone();
            next.state = S::InquiryOpen;
            next.created_epoch = today;
            next.payload = Some(CasePayload {
                summary: *summary,
                evidence: None,
            });
            Transition::ok(next, Vec::new())
        }
        (S::InquiryOpen, K::CategorizationEvidence(e)) => {
            let mut next = case.clone();
            if let Some(p) = next.payload.as_mut() {
                p.evidence = Some(e.clone());
            }
            Transition::ok(next, Vec::new())
        }
        (S::InquiryOpen, K::CategoryDecision(c)) => {
            let mut next = case.clone();
            next.category = Some(*c);
            if *c == Category::Uncritical {
                next.drop_and_erase(today);
            } else {
                next.state = S::Categorized(*c);
            }
            Transition::ok(next, Vec::new())
        }
        (S::InquiryOpen | S::Categorized(_), K::Drop) => {
            let mut next = case.clone();
            next.drop_and_erase(today);
            Transition::ok(next, Vec::new())
        }
        (S::Categorized(_), K::TestOrder) => {
            let mut next = case.clone();
            next.state = S::AwaitingTest1;
            Transition::ok(next, Vec::new())
        }
        (S::AwaitingTest1 | S::AwaitingTest2 | S::Carrier | S::Released, K::TestResult { outcome, date })
            if case.is_replayed_result(*outcome, *date) =>
        {
            Transition::unchanged(case)
        }
        (S::AwaitingTest1 | S::AwaitingTest2, K::TestResult { outcome, date }) => {
            match record_test_result(case, *outcome, *date, cfg, today) {
                Ok((next, out)) => Transition::ok(next, out),
                Err(e) => Transition::illegal(case, e.to_string()),
            }
        }
        (S::Carrier, K::HistoryRequest { .. } | K::HistoryUpload(_)) => Transition::unchanged(case),
        (S::Released, K::Release) | (S::Dropped, K::Drop) => Transition::unchanged(case),
        _ => illegal(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AuditEntry {
    pub epoch: Day,
    pub token: InquiryToken,
    pub reason: String,
}

/// Token-keyed set of cases with the protocol-violation audit trail.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Casebook {
    pub config: CaseConfig,
    cases: BTreeMap<InquiryToken, CaseRecord>,
    audit: Vec<AuditEntry>,
}

impl Casebook {
    pub fn new(config: CaseConfig) -> Self {
        Casebook {
            config,
            cases: BTreeMap::new(),
            audit: Vec::new(),
        }
    }

    pub fn get(&self, token: InquiryToken) -> Option<&CaseRecord> {
        self.cases.get(&token)
    }

    pub fn cases(&self) -> impl Iterator<Item = &CaseRecord> {
        self.cases.values()
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    /// Applies `msg` to its case; an unknown token starts from `Idle`.
    pub fn deliver(&mut self, msg: &MailboxMessage, today: Day) -> Vec<MailboxMessage> {
        let current = self
            .cases
            .get(&msg.token)
            .cloned()
            .unwrap_or_else(|| CaseRecord::idle(msg.token, today));
        let t = step(&current, msg, &self.config, today);
        self.commit(t, today)
    }

    /// Stores a transition produced elsewhere (e.g. by [`categorize`]).
    pub fn commit(&mut self, t: Transition, today: Day) -> Vec<MailboxMessage> {
        if let Some(reason) = t.violation {
            self.audit.push(AuditEntry {
                epoch: today,
                token: t.case.token,
                reason,
            });
            return Vec::new();
        }
        if t.case.state != CaseState::Idle {
            self.cases.insert(t.case.token, t.case);
        }
        t.outbound
    }

    /// Removes terminal cases resolved on or before `cutoff`.
    pub fn erase_resolved(&mut self, cutoff: Day) {
        self.cases
            .retain(|_, c| !(c.state.is_terminal() && c.resolution_epoch.is_some_and(|e| e <= cutoff)));
    }

    pub(crate) fn payload_bytes(&self, w: &mut Writer) {
        for case in self.cases.values() {
            w.bytes(&case.token.0.to_be_bytes());
            if let Some(p) = &case.payload {
                put_summary(w, &p.summary);
                if let Some(e) = &p.evidence {
                    let _ = put_evidence(w, e);
                }
            }
        }
        for a in &self.audit {
            w.u32(a.epoch)
                .bytes(&a.token.0.to_be_bytes())
                .bytes(a.reason.as_bytes());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    const T: InquiryToken = InquiryToken(42);

    fn summary(near: u32, mid: u32, far: u32) -> HitSummary {
        HitSummary {
            date: 10,
            rdi: Rdi(7),
            counts: TickCounts { near, mid, far },
            source: HitSource::Observed,
        }
    }

    fn open_case(s: HitSummary) -> CaseRecord {
        let cfg = CaseConfig::default();
        step(
            &CaseRecord::idle(T, 10),
            &MailboxMessage::new(T, MessageKind::OpenInquiry(s)),
            &cfg,
            10,
        )
        .case
    }

    fn awaiting_test1() -> CaseRecord {
        let s = summary(40, 0, 0);
        categorize(&open_case(s), &s, None, &CaseConfig::default(), 10)
            .unwrap()
            .0
    }

    fn result(outcome: TestOutcome, date: Day) -> MailboxMessage {
        MailboxMessage::new(T, MessageKind::TestResult { outcome, date })
    }

    #[test]
    fn silent_quarantine_sends_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (state, msgs) = on_hits(&[summary(3, 0, 0)], Preference::QuarantineSilently, &mut rng).unwrap();
        assert_eq!(state, CaseState::SelfQuarantined);
        assert!(msgs.is_empty());
    }

    #[test]
    fn negotiate_opens_one_inquiry_per_carrier_day() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (state, msgs) = on_hits(&[summary(3, 0, 0)], Preference::Negotiate, &mut rng).unwrap();
        assert_eq!(state, CaseState::InquiryOpen);
        assert_eq!(msgs.len(), 1);
        assert_eq!(msgs[0].kind, MessageKind::OpenInquiry(summary(3, 0, 0)));

        let mut a = summary(3, 0, 0);
        let mut b = a;
        b.rdi = Rdi(8);
        let mut c = a;
        c.date = 11;
        let dup = a;
        a.counts.far = 1;
        let (_, msgs) = on_hits(&[a, b, c, dup], Preference::Negotiate, &mut rng).unwrap();
        assert_eq!(msgs.len(), 3);
        let tokens: HashSet<_> = msgs.iter().map(|m| m.token).collect();
        assert_eq!(tokens.len(), 3);

        assert_eq!(on_hits(&[], Preference::Negotiate, &mut rng), Err(CaseError::NoHits));
    }

    #[test]
    fn tokens_unique_over_many_inquiries() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tokens: HashSet<_> = (0..100_000).map(|_| InquiryToken::random(&mut rng)).collect();
        assert_eq!(tokens.len(), 100_000);
    }

    #[test]
    fn categorize_examples() {
        let cfg = CaseConfig::default();

        let s = summary(40, 0, 0); // 20 min near
        let (c, msgs) = categorize(&open_case(s), &s, None, &cfg, 10).unwrap();
        assert_eq!(c.state, CaseState::AwaitingTest1);
        assert_eq!(c.category, Some(Category::Category1));
        assert_eq!(msgs[0].kind, MessageKind::CategoryDecision(Category::Category1));
        assert_eq!(msgs[1].kind, MessageKind::TestOrder);

        let s = summary(0, 0, 120); // 60 min far
        let (c, msgs) = categorize(&open_case(s), &s, None, &cfg, 10).unwrap();
        assert_eq!(c.state, CaseState::Dropped);
        assert!(c.payload.is_none());
        assert_eq!(msgs.last().unwrap().kind, MessageKind::Drop);

        let s = summary(20, 0, 0); // 10 min near
        let (c, _) = categorize(&open_case(s), &s, None, &cfg, 10).unwrap();
        assert_eq!(c.category, Some(Category::Category2));
        assert_eq!(c.state, CaseState::AwaitingTest1);

        let err = categorize(&CaseRecord::idle(T, 0), &s, None, &cfg, 10).unwrap_err();
        assert!(matches!(err, CaseError::WrongState { .. }));
    }

    #[test]
    fn evidence_flips_distance() {
        let cfg = CaseConfig::default();
        let s = summary(0, 0, 120);
        let near = Evidence {
            distance_override: Some(DistanceClass::Near),
            excerpts: vec![],
        };
        let (c, _) = categorize(&open_case(s), &s, Some(&near), &cfg, 10).unwrap();
        assert_eq!(c.category, Some(Category::Category1));

        let s = summary(100, 0, 0);
        let far = Evidence {
            distance_override: Some(DistanceClass::Far),
            excerpts: vec![],
        };
        let (c, _) = categorize(&open_case(s), &s, Some(&far), &cfg, 10).unwrap();
        assert_eq!(c.state, CaseState::Dropped);
    }

    #[test]
    fn untraced_category_is_dropped() {
        let cfg = CaseConfig {
            categories_traced: [Category::Category1].into_iter().collect(),
            ..CaseConfig::default()
        };
        let s = summary(10, 0, 0);
        let (c, _) = categorize(&open_case(s), &s, None, &cfg, 10).unwrap();
        assert_eq!(c.category, Some(Category::Category2));
        assert_eq!(c.state, CaseState::Dropped);
    }

    #[test]
    fn test_results() {
        let cfg = CaseConfig::default();
        let (c, msgs) = record_test_result(&awaiting_test1(), TestOutcome::Positive, 12, &cfg, 12).unwrap();
        assert_eq!(c.state, CaseState::Carrier);
        assert_eq!(msgs[0].kind, MessageKind::HistoryRequest { from: 7 });
        assert_eq!(c.resolution_epoch, Some(12));

        let (c, msgs) = record_test_result(&awaiting_test1(), TestOutcome::Negative, 12, &cfg, 12).unwrap();
        assert_eq!(c.state, CaseState::AwaitingTest2);
        assert!(msgs.is_empty());
        assert_eq!(c.retest_due(&cfg), Some(17));
        let (c2, msgs) = record_test_result(&c, TestOutcome::Negative, 17, &cfg, 17).unwrap();
        assert_eq!(c2.state, CaseState::Released);
        assert_eq!(msgs[0].kind, MessageKind::Release);
        assert_eq!(c2.negatives, vec![12, 17]);

        assert_eq!(
            record_test_result(&c, TestOutcome::Negative, 14, &cfg, 14),
            Err(CaseError::PrematureRetest { first: 12, second: 14 })
        );
        assert!(matches!(
            record_test_result(&CaseRecord::idle(T, 0), TestOutcome::Negative, 1, &cfg, 1),
            Err(CaseError::WrongState { .. })
        ));
    }

    #[test]
    fn step_illegal_pairs_are_noops() {
        let cfg = CaseConfig::default();
        let idle = CaseRecord::idle(T, 0);
        let t = step(&idle, &MailboxMessage::new(T, MessageKind::TestOrder), &cfg, 0);
        assert_eq!(t.case, idle);
        assert!(t.outbound.is_empty());
        assert!(t.violation.is_some());

        let open = open_case(summary(1, 0, 0));
        let t = step(&open, &MailboxMessage::new(T, MessageKind::Drop), &cfg, 11);
        assert_eq!(t.case.state, CaseState::Dropped);
        assert!(t.case.payload.is_none());

        let t = step(
            &open,
            &MailboxMessage::new(InquiryToken(1), MessageKind::Drop),
            &cfg,
            11,
        );
        assert!(t.violation.is_some());
    }

    #[test]
    fn replayed_result_is_idempotent() {
        let cfg = CaseConfig::default();
        let c = awaiting_test1();
        let once = step(&c, &result(TestOutcome::Negative, 12), &cfg, 12);
        let twice = step(&once.case, &result(TestOutcome::Negative, 12), &cfg, 12);
        assert_eq!(twice.case, once.case);
        assert!(twice.outbound.is_empty());
        assert!(twice.violation.is_none());

        let pos = step(&c, &result(TestOutcome::Positive, 12), &cfg, 12);
        let again = step(&pos.case, &result(TestOutcome::Positive, 12), &cfg, 13);
        assert_eq!(again.case, pos.case);
        assert!(again.outbound.is_empty());
    }

    #[test]
    fn device_side_walk_through() {
        let cfg = CaseConfig::default();
        let mut book = Casebook::new(cfg);
        let s = summary(40, 0, 0);
        book.deliver(&MailboxMessage::new(T, MessageKind::OpenInquiry(s)), 10);
        book.deliver(
            &MailboxMessage::new(T, MessageKind::CategoryDecision(Category::Category1)),
            10,
        );
        assert_eq!(book.get(T).unwrap().state, CaseState::Categorized(Category::Category1));
        book.deliver(&MailboxMessage::new(T, MessageKind::TestOrder), 10);
        book.deliver(&result(TestOutcome::Negative, 10), 10);
        let out = book.deliver(&result(TestOutcome::Negative, 15), 15);
        assert_eq!(out, vec![MailboxMessage::new(T, MessageKind::Release)]);
        assert_eq!(book.get(T).unwrap().state, CaseState::Released);
        book.deliver(&MailboxMessage::new(T, MessageKind::TestOrder), 16);
        assert_eq!(book.audit().len(), 1);

        book.erase_resolved(14);
        assert_eq!(book.len(), 1);
        book.erase_resolved(15);
        assert!(book.is_empty());
    }

    #[test]
    fn message_codec_examples() {
        let msg = MailboxMessage::new(T, MessageKind::TestOrder);
        let bytes = encode_message(&msg).unwrap();
        assert_eq!(bytes.len(), 19);
        assert_eq!(&bytes[..2], &[0, 19]);
        assert_eq!(bytes[18], 0x04);
        assert_eq!(decode_message(&bytes).unwrap(), (msg, 19));

        assert!(decode_message(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[18] = 0x77;
        assert!(decode_message(&bad).is_err());
        let mut long = bytes;
        long[1] = 20;
        long.push(0);
        assert!(decode_message(&long).is_err());
    }

    #[test]
    fn large_upload_is_chunked() {
        let mut log = crate::contact_log::ContactLog::default();
        for r in 0..800u128 {
            for t in 0..200u16 {
                log.observe_one(Rdi(r), DistanceClass::Near, 3, t * 4);
            }
        }
        let upload = CarrierUpload {
            own_identifiers: vec![DailyIdentifier { rdi: Rdi(1), date: 3 }],
            history: log.records().cloned().collect(),
        };
        let msgs = upload_messages(T, &upload);
        assert!(msgs.len() > 1);
        let mut rebuilt = CarrierUpload::default();
        for m in &msgs {
            let bytes = encode_message(m).unwrap();
            let (back, _) = decode_message(&bytes).unwrap();
            let MessageKind::HistoryUpload(u) = back.kind else {
                panic!()
            };
            rebuilt.own_identifiers.extend(u.own_identifiers);
            rebuilt.history.extend(u.history);
        }
        assert_eq!(rebuilt, upload);
    }

    fn arb_kind() -> impl Strategy<Value = MessageKind> {
        let counts =
            (any::<u32>(), any::<u32>(), any::<u32>()).prop_map(|(near, mid, far)| TickCounts { near, mid, far });
        let summary =
            (any::<u32>(), any::<u128>(), counts, any::<bool>()).prop_map(|(date, r, counts, own)| HitSummary {
                date,
                rdi: Rdi(r),
                counts,
                source: if own {
                    HitSource::OwnIdentifier
                } else {
                    HitSource::Observed
                },
            });
        let entry = (
            0u16..2880,
            prop::collection::vec(any::<u8>(), 0..8),
            prop::collection::vec(any::<u8>(), 0..8),
        )
            .prop_map(|(tick, location, orientation)| LocationEntry {
                tick,
                location,
                orientation,
            });
        let evidence = (0u8..4, prop::collection::vec(entry, 0..4)).prop_map(|(c, excerpts)| Evidence {
            distance_override: class_from(c).unwrap(),
            excerpts,
        });
        prop_oneof![
            summary.prop_map(MessageKind::OpenInquiry),
            evidence.prop_map(MessageKind::CategorizationEvidence),
            (0u8..3).prop_map(|c| MessageKind::CategoryDecision(category_from(c).unwrap())),
            Just(MessageKind::TestOrder),
            (any::<bool>(), any::<u32>()).prop_map(|(p, date)| MessageKind::TestResult {
                outcome: if p {
                    TestOutcome::Positive
                } else {
                    TestOutcome::Negative
                },
                date
            }),
            any::<u32>().prop_map(|from| MessageKind::HistoryRequest { from }),
            prop::collection::vec((any::<u32>(), any::<u128>()), 0..5).prop_map(|ids| MessageKind::HistoryUpload(
                CarrierUpload {
                    own_identifiers: ids
                        .into_iter()
                        .map(|(date, r)| DailyIdentifier { rdi: Rdi(r), date })
                        .collect(),
                    history: vec![],
                }
            )),
            Just(MessageKind::Release),
            Just(MessageKind::Drop),
        ]
    }

    proptest! {
        #[test]
        fn message_round_trip(token in any::<u128>(), kind in arb_kind()) {
            let msg = MailboxMessage::new(InquiryToken(token), kind);
            let bytes = encode_message(&msg).unwrap();
            prop_assert_eq!(usize::from(u16::from_be_bytes([bytes[0], bytes[1]])), bytes.len());
            prop_assert_eq!(decode_message(&bytes).unwrap(), (msg, bytes.len()));
        }

        #[test]
        fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
            let _ = decode_message(&bytes);
        }
    }
}
