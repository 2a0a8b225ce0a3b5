//! Country-name standardization and directory-name sanitizing.

use std::collections::HashMap;
use std::sync::LazyLock;

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::CountryCode;

use super::IngestError;

/// Alternative spellings, including native-language names, mapped to codes.
const ALIASES: &[(&str, &str)] = &[
    ("Deutschland", "DE"),
    ("Germany", "DE"),
    ("Bundesrepublik Deutschland", "DE"),
    ("España", "ES"),
    ("Italia", "IT"),
    ("Nederland", "NL"),
    ("Holland", "NL"),
    ("The Netherlands", "NL"),
    ("België", "BE"),
    ("Belgique", "BE"),
    ("Belgien", "BE"),
    ("Österreich", "AT"),
    ("Schweiz", "CH"),
    ("Suisse", "CH"),
    ("Svizzera", "CH"),
    ("Sverige", "SE"),
    ("Norge", "NO"),
    ("Danmark", "DK"),
    ("Suomi", "FI"),
    ("Polska", "PL"),
    ("Česko", "CZ"),
    ("Česká republika", "CZ"),
    ("Czech Republic", "CZ"),
    ("Magyarország", "HU"),
    ("România", "RO"),
    ("Ελλάδα", "GR"),
    ("Ellada", "GR"),
    ("Hellas", "GR"),
    ("Turkey", "TR"),
    ("Россия", "RU"),
    ("Rossiya", "RU"),
    ("Russia", "RU"),
    ("Україна", "UA"),
    ("Hrvatska", "HR"),
    ("Srbija", "RS"),
    ("Slovensko", "SK"),
    ("Slovenija", "SI"),
    ("Éire", "IE"),
    ("Ísland", "IS"),
    ("Lietuva", "LT"),
    ("Latvija", "LV"),
    ("Eesti", "EE"),
    ("Shqipëria", "AL"),
    ("Crna Gora", "ME"),
    ("Bosna i Hercegovina", "BA"),
    ("Sakartvelo", "GE"),
    ("Hayastan", "AM"),
    ("Lëtzebuerg", "LU"),
    ("Luxemburg", "LU"),
    ("Macedonia", "MK"),
    ("Moldova", "MD"),
    ("UK", "GB"),
    ("U.K.", "GB"),
    ("Great Britain", "GB"),
    ("Britain", "GB"),
    ("England", "GB"),
    ("Scotland", "GB"),
    ("Wales", "GB"),
    ("Northern Ireland", "GB"),
    ("USA", "US"),
    ("U.S.A.", "US"),
    ("U.S.", "US"),
    ("America", "US"),
    ("United States of America", "US"),
    ("Brasil", "BR"),
    ("México", "MX"),
    ("Perú", "PE"),
    ("日本", "JP"),
    ("Nippon", "JP"),
    ("Nihon", "JP"),
    ("中国", "CN"),
    ("Zhongguo", "CN"),
    ("China", "CN"),
    ("台灣", "TW"),
    ("한국", "KR"),
    ("Korea", "KR"),
    ("Republic of Korea", "KR"),
    ("North Korea", "KP"),
    ("Việt Nam", "VN"),
    ("Ivory Coast", "CI"),
    ("UAE", "AE"),
    ("Emirates", "AE"),
    ("Laos", "LA"),
    ("Syria", "SY"),
    ("Vatican", "VA"),
    ("Vatican City", "VA"),
    ("Macau", "MO"),
    ("Macao", "MO"),
    ("Hong Kong", "HK"),
    ("Tanzania", "TZ"),
    ("Venezuela", "VE"),
    ("Micronesia", "FM"),
    ("Palestine", "PS"),
    ("Burma", "MM"),
    ("Cape Verde", "CV"),
    ("Swaziland", "SZ"),
    ("Bharat", "IN"),
    ("भारत", "IN"),
    ("Misr", "EG"),
    ("مصر", "EG"),
    ("Al Maghrib", "MA"),
    ("Maroc", "MA"),
    ("Prathet Thai", "TH"),
    ("ประเทศไทย", "TH"),
    ("Kampuchea", "KH"),
    ("Pilipinas", "PH"),
    ("Aotearoa", "NZ"),
    ("Israel", "IL"),
    ("ישראל", "IL"),
    ("Bolivia", "BO"),
    ("Iran", "IR"),
    ("Persia", "IR"),
    ("Taiwan", "TW"),
    ("Brunei", "BN"),
    ("Congo-Kinshasa", "CD"),
    ("DR Congo", "CD"),
    ("DRC", "CD"),
    ("Congo-Brazzaville", "CG"),
    ("Saint Martin", "MF"),
    ("Sint Maarten", "SX"),
    ("Curacao", "CW"),
    ("Holy See", "VA"),
    ("Timor-Leste", "TL"),
    ("East Timor", "TL"),
];

/// Lowercase, diacritics stripped, punctuation collapsed to single spaces.
pub(crate) fn fold(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for c in raw.replace('&', " and ").nfd() {
        if is_combining_mark(c) || c == '\'' || c == '’' || c == '.' {
            continue;
        }
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(c.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

static INDEX: LazyLock<HashMap<String, CountryCode>> = LazyLock::new(|| {
    let mut index = HashMap::new();
    // aliases first so that ISO names, inserted after, take precedence
    for (alias, code) in ALIASES {
        index.insert(fold(alias), CountryCode::new(code).expect("alias targets are assigned codes"));
    }
    for code in CountryCode::all() {
        let info = code.info();
        let names = [Some(&info.name), info.official_name.as_ref(), info.common_name.as_ref()];
        for n in names.into_iter().flatten() {
            index.insert(fold(n), code);
        }
    }
    index
});

/// Resolves a free-form country name to its ISO code.
///
/// Matches ISO short, official and common names plus a table of aliases,
/// ignoring case, diacritics and punctuation. Two- and three-letter ISO
/// codes are accepted as a last resort.
pub fn standardize_name(raw: &str) -> Result<CountryCode, IngestError> {
    let key = fold(raw);
    if key.is_empty() {
        return Err(IngestError::UnknownCountryName(raw.to_string()));
    }
    if let Some(c) = INDEX.get(&key) {
        return Ok(*c);
    }
    let trimmed = raw.trim();
    match trimmed.len() {
        2 => CountryCode::new(trimmed).ok(),
        3 => CountryCode::all().find(|c| c.info().alpha3.eq_ignore_ascii_case(trimmed)),
        _ => None,
    }
    .ok_or_else(|| IngestError::UnknownCountryName(raw.to_string()))
}

/// Spaces become underscores; anything outside `[A-Za-z0-9_-]` is dropped.
pub fn sanitize_dirname(name: &str) -> Result<String, IngestError> {
    let out: String = name
        .chars()
        .filter_map(|c| match c {
            ' ' => Some('_'),
            c if c.is_ascii_alphanumeric() || c == '_' || c == '-' => Some(c),
            _ => None,
        })
        .collect();
    if out.is_empty() {
        Err(IngestError::EmptyDirname(name.to_string()))
    } else {
        Ok(out)
    }
}
