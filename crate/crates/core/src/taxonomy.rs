//! Plug-type, classifier and detector class taxonomies.
//!
//! Types D/M and J/N are visually indistinguishable and exist only as the
//! merged values [`PlugType::DM`] and [`PlugType::JN`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaxonomyError {
    #[error("unknown plug type {0:?}")]
    UnknownPlugType(String),
    #[error("unknown classifier class {0:?}")]
    UnknownClass(String),
    #[error("classifier class index {0} out of range 0..13")]
    ClassIndex(usize),
    #[error("unknown detection class id {0}")]
    DetClassId(u32),
}

/// The 12 visually distinct socket classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlugType {
    A,
    B,
    C,
    DM,
    E,
    F,
    G,
    H,
    I,
    JN,
    K,
    L,
}

impl PlugType {
    pub const ALL: [PlugType; 12] = [
        PlugType::A,
        PlugType::B,
        PlugType::C,
        PlugType::DM,
        PlugType::E,
        PlugType::F,
        PlugType::G,
        PlugType::H,
        PlugType::I,
        PlugType::JN,
        PlugType::K,
        PlugType::L,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PlugType::A => "A",
            PlugType::B => "B",
            PlugType::C => "C",
            PlugType::DM => "DM",
            PlugType::E => "E",
            PlugType::F => "F",
            PlugType::G => "G",
            PlugType::H => "H",
            PlugType::I => "I",
            PlugType::JN => "JN",
            PlugType::K => "K",
            PlugType::L => "L",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PlugType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlugType {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        PlugType::ALL
            .into_iter()
            .find(|t| t.as_str() == upper)
            .ok_or_else(|| TaxonomyError::UnknownPlugType(s.to_string()))
    }
}

/// Classifier output label: a plug type or NOISE.
///
/// Index order is A..L followed by NOISE (index 12); probability vectors
/// use the same order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClfClass {
    Plug(PlugType),
    Noise,
}

impl ClfClass {
    pub const COUNT: usize = 13;

    pub const ALL: [ClfClass; 13] = [
        ClfClass::Plug(PlugType::A),
        ClfClass::Plug(PlugType::B),
        ClfClass::Plug(PlugType::C),
        ClfClass::Plug(PlugType::DM),
        ClfClass::Plug(PlugType::E),
        ClfClass::Plug(PlugType::F),
        ClfClass::Plug(PlugType::G),
        ClfClass::Plug(PlugType::H),
        ClfClass::Plug(PlugType::I),
        ClfClass::Plug(PlugType::JN),
        ClfClass::Plug(PlugType::K),
        ClfClass::Plug(PlugType::L),
        ClfClass::Noise,
    ];

    pub fn index(self) -> usize {
        match self {
            ClfClass::Plug(t) => t.index(),
            ClfClass::Noise => 12,
        }
    }

    pub fn from_index(i: usize) -> Result<Self, TaxonomyError> {
        Self::ALL.get(i).copied().ok_or(TaxonomyError::ClassIndex(i))
    }

    pub fn plug_type(self) -> Option<PlugType> {
        match self {
            ClfClass::Plug(t) => Some(t),
            ClfClass::Noise => None,
        }
    }

    pub fn is_noise(self) -> bool {
        self == ClfClass::Noise
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClfClass::Plug(t) => t.as_str(),
            ClfClass::Noise => "NOISE",
        }
    }
}

impl From<PlugType> for ClfClass {
    fn from(t: PlugType) -> Self {
        ClfClass::Plug(t)
    }
}

impl fmt::Display for ClfClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClfClass {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("noise") {
            return Ok(ClfClass::Noise);
        }
        s.parse::<PlugType>()
            .map(ClfClass::Plug)
            .map_err(|_| TaxonomyError::UnknownClass(s.to_string()))
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(PlugType);
string_serde!(ClfClass);

/// Stage-1 detection classes. Numeric ids are fixed by the annotation format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DetClass {
    /// Switchboard panels, id 0.
    NaSwitchboard,
    /// Sockets, id 1.
    Socket,
}

impl DetClass {
    pub const ALL: [DetClass; 2] = [DetClass::NaSwitchboard, DetClass::Socket];

    pub fn id(self) -> u32 {
        match self {
            DetClass::NaSwitchboard => 0,
            DetClass::Socket => 1,
        }
    }

    pub fn from_id(id: u32) -> Result<Self, TaxonomyError> {
        match id {
            0 => Ok(DetClass::NaSwitchboard),
            1 => Ok(DetClass::Socket),
            other => Err(TaxonomyError::DetClassId(other)),
        }
    }
}
