//! Versioned plug-type → country knowledge base.
//!
//! A [`KnowledgeBase`] is immutable once loaded; revisions ship as new
//! versioned files. The bundled `v1` file is available through
//! [`KnowledgeBase::bundled_v1`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::country::CountryCode;
use crate::taxonomy::{ClfClass, PlugType};

static KB_V1_JSON: &str = include_str!("../data/kb_v1.json");

/// Per-type country counts the `v1` file must reproduce, in [`PlugType::ALL`] order.
pub const V1_CARDINALITIES: [usize; 12] = [46, 28, 65, 21, 24, 35, 32, 1, 11, 9, 6, 9];

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("reading knowledge base: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing knowledge base: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("missing entry: {0}")]
    MissingEntry(PlugType),
    #[error("empty entry: {0}")]
    EmptyEntry(PlugType),
    #[error("unknown plug type key {0:?}")]
    UnknownType(String),
    #[error("entry {plug_type}: unknown country code {code:?}")]
    UnknownCountry { plug_type: PlugType, code: String },
    #[error("entry {plug_type}: duplicate country {country}")]
    DuplicateCountry { plug_type: PlugType, country: CountryCode },
    #[error("entry {plug_type}: expected {expected} countries for version {version}, found {found}")]
    Cardinality {
        version: String,
        plug_type: PlugType,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct RawEntry {
    country: String,
    #[serde(default)]
    source: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawKb {
    version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    notes: Option<String>,
    entries: BTreeMap<String, Vec<RawEntry>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBase {
    version: String,
    notes: Option<String>,
    entries: BTreeMap<PlugType, BTreeSet<CountryCode>>,
    provenance: BTreeMap<(PlugType, CountryCode), String>,
    by_country: BTreeMap<CountryCode, BTreeSet<PlugType>>,
}

impl KnowledgeBase {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, KbError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn bundled_v1() -> Self {
        Self::from_json_str(KB_V1_JSON).expect("bundled knowledge base is valid")
    }

    /// Parses and validates a KB document.
    ///
    /// Every plug type must have a non-empty entry. Files declaring version
    /// `v1` must also match [`V1_CARDINALITIES`].
    pub fn from_json_str(text: &str) -> Result<Self, KbError> {
        let raw: RawKb = serde_json::from_str(text)?;

        let mut entries = BTreeMap::new();
        let mut provenance = BTreeMap::new();
        for (key, list) in &raw.entries {
            let plug_type: PlugType = key
                .parse()
                .map_err(|_| KbError::UnknownType(key.clone()))?;
            let mut set = BTreeSet::new();
            for e in list {
                let country = CountryCode::new(&e.country).map_err(|_| KbError::UnknownCountry {
                    plug_type,
                    code: e.country.clone(),
                })?;
                if !set.insert(country) {
                    return Err(KbError::DuplicateCountry { plug_type, country });
                }
                provenance.insert((plug_type, country), e.source.clone());
            }
            entries.insert(plug_type, set);
        }

        for t in PlugType::ALL {
            match entries.get(&t) {
                None => return Err(KbError::MissingEntry(t)),
                Some(set) if set.is_empty() => return Err(KbError::EmptyEntry(t)),
                Some(_) => {}
            }
        }

        if raw.version == "v1" {
            for (t, expected) in PlugType::ALL.into_iter().zip(V1_CARDINALITIES) {
                let found = entries[&t].len();
                if found != expected {
                    return Err(KbError::Cardinality {
                        version: raw.version.clone(),
                        plug_type: t,
                        expected,
                        found,
                    });
                }
            }
        }

        let mut by_country: BTreeMap<CountryCode, BTreeSet<PlugType>> = BTreeMap::new();
        for (t, set) in &entries {
            for c in set {
                by_country.entry(*c).or_default().insert(*t);
            }
        }

        Ok(Self {
            version: raw.version,
            notes: raw.notes,
            entries,
            provenance,
            by_country,
        })
    }

    /// Canonical serialization: types A→L, countries sorted.
    pub fn to_json_string(&self) -> String {
        let entries = self
            .entries
            .iter()
            .map(|(t, set)| {
                let list = set
                    .iter()
                    .map(|c| RawEntry {
                        country: c.to_string(),
                        source: self.provenance.get(&(*t, *c)).cloned().unwrap_or_default(),
                    })
                    .collect();
                (t.as_str().to_string(), list)
            })
            .collect::<Vec<(String, Vec<RawEntry>)>>();
        // BTreeMap<String, _> would sort "DM" before "C"; keep plug-type order instead.
        let mut out = String::from("{\n");
        out.push_str(&format!("  \"version\": {},\n", serde_json::to_string(&self.version).unwrap()));
        if let Some(notes) = &self.notes {
            out.push_str(&format!("  \"notes\": {},\n", serde_json::to_string(notes).unwrap()));
        }
        out.push_str("  \"entries\": {\n");
        for (i, (key, list)) in entries.iter().enumerate() {
            out.push_str(&format!("    {}: [\n", serde_json::to_string(key).unwrap()));
            for (j, e) in list.iter().enumerate() {
                out.push_str(&format!(
                    "      {{\"country\": {}, \"source\": {}}}{}\n",
                    serde_json::to_string(&e.country).unwrap(),
                    serde_json::to_string(&e.source).unwrap(),
                    if j + 1 < list.len() { "," } else { "" }
                ));
            }
            out.push_str(&format!("    ]{}\n", if i + 1 < entries.len() { "," } else { "" }));
        }
        out.push_str("  }\n}\n");
        out
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn notes(&self) -> Option<&str> {
        self.notes.as_deref()
    }

    pub fn countries_for(&self, t: PlugType) -> &BTreeSet<CountryCode> {
        &self.entries[&t]
    }

    /// True iff `class` is a plug type whose entry contains `country`.
    pub fn is_valid_pair(&self, class: ClfClass, country: CountryCode) -> bool {
        match class.plug_type() {
            Some(t) => self.entries[&t].contains(&country),
            None => false,
        }
    }

    /// Inverse index; empty for countries the KB never mentions.
    pub fn types_for_country(&self, country: CountryCode) -> BTreeSet<PlugType> {
        self.by_country.get(&country).cloned().unwrap_or_default()
    }

    pub fn provenance(&self, t: PlugType, country: CountryCode) -> Option<&str> {
        self.provenance.get(&(t, country)).map(String::as_str)
    }

    /// Entry sizes in [`PlugType::ALL`] order.
    pub fn cardinalities(&self) -> [usize; 12] {
        PlugType::ALL.map(|t| self.entries[&t].len())
    }

    /// Every country that appears under at least one plug type.
    pub fn countries(&self) -> impl Iterator<Item = CountryCode> + '_ {
        self.by_country.keys().copied()
    }
}
