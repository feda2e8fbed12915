//! Beacon advertisement codec and RSSI-based proximity estimation.
//!
//! Frame layout (25 bytes, manufacturer-specific data):
//!
//! ```text
//! [0..2]   4C 00   manufacturer id (little endian 0x004C)
//! [2]      02      beacon type
//! [3]      15      remaining length (21)
//! [4..20]  uuid
//! [20..22] major, big endian
//! [22..24] minor, big endian
//! [24]     measured power at 1 m, two's complement
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
pub use uuid::Uuid;

use crate::Scalar;

pub const FRAME_LEN: usize = 25;
pub const MANUFACTURER_ID: [u8; 2] = [0x4C, 0x00];
pub const BEACON_TYPE: u8 = 0x02;
pub const PAYLOAD_LEN: u8 = 0x15;

pub const DEFAULT_PATH_LOSS_EXPONENT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MalformedFrame {
    #[error("expected {FRAME_LEN} bytes, got {0}")]
    Length(usize),
    #[error("manufacturer prefix {0:02X} {1:02X} is not 4C 00")]
    Manufacturer(u8, u8),
    #[error("beacon type marker {0:#04x} is not 0x02")]
    TypeMarker(u8),
    #[error("length marker {0:#04x} is not 0x15")]
    LengthMarker(u8),
    #[error("measured power {0} dBm outside [-127, 0]")]
    Power(i8),
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum BeaconError {
    #[error("malformed frame: {0}")]
    MalformedFrame(#[from] MalformedFrame),
    #[error("measured power {0} dBm outside [-127, 0]")]
    InvalidPower(i16),
    #[error("path loss exponent must be positive, got {0}")]
    InvalidExponent(f64),
}

/// Hardware class of a beacon. Not carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BeaconKind {
    #[default]
    Proximity,
    Sticker,
}

/// Deployment-unique beacon identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BeaconId {
    #[serde(with = "uuid_hex")]
    pub uuid: Uuid,
    pub major: u16,
    pub minor: u16,
}

impl BeaconId {
    pub fn new(uuid: Uuid, major: u16, minor: u16) -> Self {
        Self { uuid, major, minor }
    }
}

impl fmt::Display for BeaconId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.uuid.simple(), self.major, self.minor)
    }
}

/// UUIDs travel as 32 lowercase hex digits; hyphenated input is accepted.
pub mod uuid_hex {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};
    use uuid::Uuid;

    pub fn serialize<S: Serializer>(uuid: &Uuid, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&uuid.simple())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Uuid, D::Error> {
        let s = String::deserialize(d)?;
        Uuid::parse_str(&s).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BeaconFrame {
    pub uuid: Uuid,
    pub major: u16,
    pub minor: u16,
    measured_power: i8,
}

impl BeaconFrame {
    pub fn new(uuid: Uuid, major: u16, minor: u16, measured_power: i16) -> Result<Self, BeaconError> {
        if !(-127..=0).contains(&measured_power) {
            return Err(BeaconError::InvalidPower(measured_power));
        }
        Ok(Self {
            uuid,
            major,
            minor,
            measured_power: measured_power as i8,
        })
    }

    pub fn measured_power(&self) -> i8 {
        self.measured_power
    }

    pub fn id(&self) -> BeaconId {
        BeaconId::new(self.uuid, self.major, self.minor)
    }

    pub fn encode(&self) -> [u8; FRAME_LEN] {
        encode_advertisement(self)
    }
}

pub fn encode_advertisement(frame: &BeaconFrame) -> [u8; FRAME_LEN] {
    let mut out = [0u8; FRAME_LEN];
    out[0..2].copy_from_slice(&MANUFACTURER_ID);
    out[2] = BEACON_TYPE;
    out[3] = PAYLOAD_LEN;
    out[4..20].copy_from_slice(frame.uuid.as_bytes());
    out[20..22].copy_from_slice(&frame.major.to_be_bytes());
    out[22..24].copy_from_slice(&frame.minor.to_be_bytes());
    out[24] = frame.measured_power.to_be_bytes()[0];
    out
}

/// Parses a manufacturer-specific advertisement payload. Anything that is
/// not a beacon frame is reported as [`MalformedFrame`] and should be
/// dropped by the caller.
pub fn parse_advertisement(bytes: &[u8]) -> Result<BeaconFrame, MalformedFrame> {
    if bytes.len() != FRAME_LEN {
        return Err(MalformedFrame::Length(bytes.len()));
    }
    if bytes[0..2] != MANUFACTURER_ID {
        return Err(MalformedFrame::Manufacturer(bytes[0], bytes[1]));
    }
    if bytes[2] != BEACON_TYPE {
        return Err(MalformedFrame::TypeMarker(bytes[2]));
    }
    if bytes[3] != PAYLOAD_LEN {
        return Err(MalformedFrame::LengthMarker(bytes[3]));
    }
    let uuid = Uuid::from_slice(&bytes[4..20]).expect("16-byte slice");
    let major = u16::from_be_bytes([bytes[20], bytes[21]]);
    let minor = u16::from_be_bytes([bytes[22], bytes[23]]);
    let power = i8::from_be_bytes([bytes[24]]);
    if !(-127..=0).contains(&power) {
        return Err(MalformedFrame::Power(power));
    }
    Ok(BeaconFrame {
        uuid,
        major,
        minor,
        measured_power: power,
    })
}

/// Log-distance path-loss model: `10^((measured_power - rssi) / (10 n))`.
pub fn estimate_distance<T: Scalar>(rssi: T, measured_power: T, path_loss_exponent: T) -> Result<T, BeaconError> {
    if !(path_loss_exponent > T::zero()) {
        return Err(BeaconError::InvalidExponent(path_loss_exponent.to_f64_lossy()));
    }
    let ten = T::of(10.0);
    Ok(ten.powf((measured_power - rssi) / (ten * path_loss_exponent)))
}

/// Ordered from closest to farthest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Immediate,
    Near,
    Far,
    OutOfRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProximityZone<T> {
    pub zone: Zone,
    pub distance_m: T,
}

/// Upper bounds (inclusive) of the immediate, near and far zones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneThresholds<T> {
    pub immediate_m: T,
    pub near_m: T,
    pub far_m: T,
}

impl<T: Scalar> Default for ZoneThresholds<T> {
    fn default() -> Self {
        Self {
            immediate_m: T::one(),
            near_m: T::of(7.0),
            far_m: T::of(30.0),
        }
    }
}

impl<T: Scalar> ZoneThresholds<T> {
    pub fn classify(&self, distance_m: T) -> ProximityZone<T> {
        let zone = if distance_m <= self.immediate_m {
            Zone::Immediate
        } else if distance_m <= self.near_m {
            Zone::Near
        } else if distance_m <= self.far_m {
            Zone::Far
        } else {
            Zone::OutOfRange
        };
        ProximityZone { zone, distance_m }
    }
}

/// Classifies against the default 1 / 7 / 30 m thresholds.
pub fn classify_proximity<T: Scalar>(distance_m: T) -> ProximityZone<T> {
    ZoneThresholds::default().classify(distance_m)
}
