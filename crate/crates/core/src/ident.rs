//! Daily random identifiers, the beacon wire format, and received-power
//! proximity classes.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

/// Calendar day, counted in whole days since a fixed epoch.
pub type Day = u32;

/// Magic prefix carried by every beacon.
pub const BEACON_MAGIC: [u8; 7] = *b"C0F1D19";
pub const BEACON_VERSION: u8 = 0x01;
pub const BEACON_LEN: usize = 24;

/// A 128-bit random daily identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Rdi(pub u128);

impl Rdi {
    pub fn to_bytes(self) -> [u8; 16] {
        self.0.to_be_bytes()
    }

    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        Rdi(u128::from_be_bytes(bytes))
    }

    pub fn to_hex(self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(s: &str) -> Result<Self, RdiParseError> {
        let mut buf = [0u8; 16];
        hex::decode_to_slice(s.trim(), &mut buf).map_err(|_| RdiParseError(s.to_owned()))?;
        Ok(Rdi::from_bytes(buf))
    }
}

impl fmt::Debug for Rdi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rdi({})", self.to_hex())
    }
}

impl fmt::Display for Rdi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Rdi {
    type Err = RdiParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Rdi::from_hex(s)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("not a 32-digit hex identifier: {0:?}")]
pub struct RdiParseError(String);

/// The pseudonym a device broadcasts for one calendar day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DailyIdentifier {
    pub rdi: Rdi,
    pub date: Day,
}

/// Draws a fresh identifier for `date`. Nothing about the device goes in.
pub fn generate_daily_identifier<R: Rng + ?Sized>(rng: &mut R, date: Day) -> DailyIdentifier {
    DailyIdentifier {
        rdi: Rdi(rng.random()),
        date,
    }
}

/// Keeps `current` while the date is unchanged; any other date, including an
/// earlier one after a clock regression, gets a fresh identifier.
pub fn rotate_if_needed<R: Rng + ?Sized>(current: DailyIdentifier, now: Day, rng: &mut R) -> DailyIdentifier {
    if current.date == now {
        current
    } else {
        generate_daily_identifier(rng, now)
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum BeaconError {
    #[error("beacon must be {BEACON_LEN} bytes, got {0}")]
    WrongLength(usize),
    #[error("beacon magic mismatch")]
    BadMagic,
    #[error("unsupported beacon version {0:#04x}")]
    UnsupportedVersion(u8),
}

/// Layout: magic (7) | version (1) | rdi big-endian (16).
pub fn encode_beacon(id: &DailyIdentifier) -> [u8; BEACON_LEN] {
    let mut out = [0u8; BEACON_LEN];
    out[..7].copy_from_slice(&BEACON_MAGIC);
    out[7] = BEACON_VERSION;
    out[8..].copy_from_slice(&id.rdi.to_bytes());
    out
}

/// The beacon carries no date; the receiver stamps its own.
pub fn decode_beacon(bytes: &[u8]) -> Result<Rdi, BeaconError> {
    if bytes.len() != BEACON_LEN {
        return Err(BeaconError::WrongLength(bytes.len()));
    }
    if bytes[..7] != BEACON_MAGIC {
        return Err(BeaconError::BadMagic);
    }
    if bytes[7] != BEACON_VERSION {
        return Err(BeaconError::UnsupportedVersion(bytes[7]));
    }
    let mut rdi = [0u8; 16];
    rdi.copy_from_slice(&bytes[8..]);
    Ok(Rdi::from_bytes(rdi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DistanceClass {
    Near,
    Mid,
    Far,
}

impl DistanceClass {
    pub const ALL: [DistanceClass; 3] = [DistanceClass::Near, DistanceClass::Mid, DistanceClass::Far];
}

/// Log-distance path-loss model and the class boundaries applied to its
/// distance estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLoss {
    pub exponent: f64,
    /// Upper bound (inclusive) of `Near`, meters.
    pub near_max_m: f64,
    /// Upper bound (inclusive) of `Mid`, meters.
    pub mid_max_m: f64,
}

impl Default for PathLoss {
    fn default() -> Self {
        PathLoss {
            exponent: 2.0,
            near_max_m: 2.0,
            mid_max_m: 5.0,
        }
    }
}

impl PathLoss {
    /// `d = 10^((tx - rssi) / (10 n))`, with `tx` the calibrated power at 1 m.
    pub fn distance_m(&self, rssi_dbm: i32, tx_power_dbm: i32) -> f64 {
        let loss = f64::from(tx_power_dbm) - f64::from(rssi_dbm);
        10f64.powf(loss / (10.0 * self.exponent))
    }

    /// Inverse of [`PathLoss::distance_m`], rounded to whole dBm.
    pub fn rssi_at(&self, distance_m: f64, tx_power_dbm: i32) -> i32 {
        let loss = 10.0 * self.exponent * distance_m.log10();
        (f64::from(tx_power_dbm) - loss).round() as i32
    }

    pub fn classify_distance(&self, d: f64) -> DistanceClass {
        if !d.is_finite() || d.is_nan() {
            DistanceClass::Far
        } else if d <= self.near_max_m {
            DistanceClass::Near
        } else if d <= self.mid_max_m {
            DistanceClass::Mid
        } else {
            DistanceClass::Far
        }
    }

    pub fn estimate_distance_class(&self, rssi_dbm: i32, tx_power_dbm: i32) -> DistanceClass {
        self.classify_distance(self.distance_m(rssi_dbm, tx_power_dbm))
    }
}

/// [`PathLoss::estimate_distance_class`] with the default model.
pub fn estimate_distance_class(rssi_dbm: i32, tx_power_dbm: i32) -> DistanceClass {
    PathLoss::default().estimate_distance_class(rssi_dbm, tx_power_dbm)
}
