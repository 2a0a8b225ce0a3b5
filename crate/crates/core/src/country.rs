//! ISO 3166-1 country codes backed by a bundled table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

static ISO_TSV: &str = include_str!("../data/iso3166.tsv");

/// One row of the bundled ISO 3166-1 table.
#[derive(Debug, Clone)]
pub struct CountryInfo {
    pub alpha2: String,
    pub alpha3: String,
    pub numeric: String,
    /// ISO short name, e.g. "Korea, Republic of".
    pub name: String,
    pub official_name: Option<String>,
    /// Everyday name where ISO's short name is awkward, e.g. "South Korea".
    pub common_name: Option<String>,
}

impl CountryInfo {
    /// Name used for display and directory layout.
    pub fn display_name(&self) -> &str {
        self.common_name.as_deref().unwrap_or(&self.name)
    }
}

static TABLE: LazyLock<BTreeMap<[u8; 2], CountryInfo>> = LazyLock::new(|| {
    let mut table = BTreeMap::new();
    for line in ISO_TSV.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 6 {
            continue;
        }
        let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
        let bytes = cols[0].as_bytes();
        table.insert(
            [bytes[0], bytes[1]],
            CountryInfo {
                alpha2: cols[0].to_string(),
                alpha3: cols[1].to_string(),
                numeric: cols[2].to_string(),
                name: cols[3].to_string(),
                official_name: opt(cols[4]),
                common_name: opt(cols[5]),
            },
        );
    }
    table
});

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid country code {0:?}: not an assigned ISO 3166-1 alpha-2 code")]
pub struct InvalidCountryCode(pub String);

/// An assigned ISO 3166-1 alpha-2 code, always uppercase.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CountryCode([u8; 2]);

impl CountryCode {
    /// Parses a code. Lowercase input is accepted and normalized.
    pub fn new(code: &str) -> Result<Self, InvalidCountryCode> {
        let trimmed = code.trim();
        let bytes = trimmed.as_bytes();
        if bytes.len() != 2 || !bytes.iter().all(u8::is_ascii_alphabetic) {
            return Err(InvalidCountryCode(code.to_string()));
        }
        let key = [bytes[0].to_ascii_uppercase(), bytes[1].to_ascii_uppercase()];
        if TABLE.contains_key(&key) {
            Ok(Self(key))
        } else {
            Err(InvalidCountryCode(code.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        // Only ASCII letters are ever stored.
        std::str::from_utf8(&self.0).expect("ascii code")
    }

    pub fn info(&self) -> &'static CountryInfo {
        &TABLE[&self.0]
    }

    /// Every assigned code in the bundled table, in code order.
    pub fn all() -> impl Iterator<Item = CountryCode> {
        TABLE.keys().map(|k| CountryCode(*k))
    }
}

impl fmt::Debug for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_str())
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CountryCode {
    type Err = InvalidCountryCode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl Serialize for CountryCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CountryCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        CountryCode::new(&s).map_err(serde::de::Error::custom)
    }
}
