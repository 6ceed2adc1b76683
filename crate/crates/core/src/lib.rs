//! Decentralized contact tracing: rotating identifiers, on-device contact
//! logs, a signing health authority, case management and a simulator.

pub mod authority;
pub mod casework;
pub mod contact_log;
pub mod ident;
pub mod matching;
pub mod simnet;
pub mod wire;

pub use authority::{Authority, CarrierEntry, SignedCarrierList};
pub use casework::{CaseConfig, CaseRecord, CaseState, InquiryToken, MailboxMessage, MessageKind};
pub use contact_log::{Category, ContactLog, ContactRecord, TickCounts};
pub use ident::{DailyIdentifier, Day, DistanceClass, Rdi};
pub use matching::{CarrierIndex, Hit};
pub use simnet::{MetricsReport, ScenarioConfig, SimError};
