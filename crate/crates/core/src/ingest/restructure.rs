//! Laying images out in per-country directories with a CSV manifest.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CountryCode;

use super::metadata::{ImageMeta, ImageSourceKind};
use super::names::sanitize_dirname;
use super::IngestError;

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, Default)]
pub struct RestructureOptions {
    /// Root of the source images. Without it only the manifest is written.
    pub images_root: Option<PathBuf>,
    /// Keep TRAVEL_WEBSITE records (excluded by default).
    pub include_travel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image_id: String,
    pub hotel_id: String,
    pub lat: f64,
    pub lon: f64,
    pub country: CountryCode,
    pub source: ImageSourceKind,
    /// Relative to the output root, `/`-separated.
    pub relative_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub image_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestructureReport {
    /// Sorted by relative path.
    pub manifest: Vec<ManifestRow>,
    pub failures: Vec<RecordFailure>,
    pub excluded_travel: usize,
    pub per_country: BTreeMap<String, usize>,
}

/// Directory name for a country: its display name, sanitized.
pub fn country_dirname(c: CountryCode) -> String {
    sanitize_dirname(c.info().display_name()).unwrap_or_else(|_| c.as_str().to_string())
}

fn index_images(root: &Path) -> Result<HashMap<String, PathBuf>, IngestError> {
    let mut index = HashMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let mut entries: Vec<_> = std::fs::read_dir(&dir)
            .map_err(|e| IngestError::io(&dir, e))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                stack.push(p);
            } else if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                index.entry(stem.to_string()).or_insert(p);
            }
        }
    }
    Ok(index)
}

/// Copies each record's image to `out_root/<Country_Name>/<image_id>.<ext>`
/// and writes `out_root/manifest.csv`.
///
/// Records without a country or whose image cannot be found or copied are
/// reported as failures; the rest proceed. Re-running on the same input
/// reproduces the same layout and manifest bytes.
pub fn restructure(
    records: &[ImageMeta],
    out_root: impl AsRef<Path>,
    opts: &RestructureOptions,
) -> Result<RestructureReport, IngestError> {
    let out_root = out_root.as_ref();
    std::fs::create_dir_all(out_root).map_err(|e| IngestError::io(out_root, e))?;
    let index = match &opts.images_root {
        Some(root) => Some(index_images(root)?),
        None => None,
    };

    let mut manifest = Vec::new();
    let mut failures = Vec::new();
    let mut excluded_travel = 0;
    let mut seen = BTreeSet::new();
    for r in records {
        if r.source == ImageSourceKind::TravelWebsite && !opts.include_travel {
            excluded_travel += 1;
            continue;
        }
        let fail = |message: String| RecordFailure {
            image_id: r.image_id.clone(),
            message,
        };
        if !seen.insert(r.image_id.as_str()) {
            failures.push(fail("duplicate image id".into()));
            continue;
        }
        let Some(country) = r.country else {
            failures.push(fail("no resolved country".into()));
            continue;
        };
        let dir = country_dirname(country);
        let source = match (&index, &opts.images_root) {
            (Some(index), Some(root)) => {
                let found = match &r.path {
                    Some(p) => Some(root.join(p)).filter(|p| p.is_file()),
                    None => index.get(&r.image_id).cloned(),
                };
                match found {
                    Some(p) => Some(p),
                    None => {
                        failures.push(fail("image file not found".into()));
                        continue;
                    }
                }
            }
            _ => None,
        };
        let ext = source
            .as_ref()
            .or(r.path.as_ref())
            .and_then(|p| p.extension())
            .and_then(|e| e.to_str())
            .map(|e| format!(".{}", e.to_ascii_lowercase()))
            .unwrap_or_default();
        let file_name = match sanitize_dirname(&r.image_id) {
            Ok(s) => format!("{s}{ext}"),
            Err(e) => {
                failures.push(fail(e.to_string()));
                continue;
            }
        };
        if let Some(src) = &source {
            let dest_dir = out_root.join(&dir);
            let dest = dest_dir.join(&file_name);
            if let Err(e) = std::fs::create_dir_all(&dest_dir).and_then(|_| std::fs::copy(src, &dest)) {
                failures.push(fail(format!("copy {} -> {}: {e}", src.display(), dest.display())));
                continue;
            }
        }
        manifest.push(ManifestRow {
            image_id: r.image_id.clone(),
            hotel_id: r.hotel_id.clone(),
            lat: r.latitude,
            lon: r.longitude,
            country,
            source: r.source,
            relative_path: format!("{dir}/{file_name}"),
        });
    }
    manifest.sort_by(|a, b| a.relative_path.cmp(&b.relative_path).then(a.image_id.cmp(&b.image_id)));

    let mut per_country = BTreeMap::new();
    for m in &manifest {
        *per_country.entry(m.country.as_str().to_string()).or_insert(0) += 1;
    }
    let path = out_root.join(MANIFEST_NAME);
    let file = std::fs::File::create(&path).map_err(|e| IngestError::io(&path, e))?;
    write_manifest(&manifest, file)?;
    Ok(RestructureReport {
        manifest,
        failures,
        excluded_travel,
        per_country,
    })
}

pub fn write_manifest(rows: &[ManifestRow], w: impl std::io::Write) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(w);
    let e = |e: csv::Error| IngestError::Write(e.to_string());
    wtr.write_record(["image_id", "hotel_id", "lat", "lon", "country", "source", "relative_path"])
        .map_err(e)?;
    for r in rows {
        wtr.write_record([
            r.image_id.as_str(),
            r.hotel_id.as_str(),
            &r.lat.to_string(),
            &r.lon.to_string(),
            r.country.as_str(),
            r.source.as_str(),
            r.relative_path.as_str(),
        ])
        .map_err(e)?;
    }
    wtr.flush().map_err(|err| IngestError::Write(err.to_string()))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>, IngestError> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| IngestError::csv(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| IngestError::csv(path, e))?;
        let bad = |m: &str| IngestError::Record {
            file: path.to_path_buf(),
            line: i as u64 + 2,
            message: m.to_string(),
        };
        let get = |j: usize| rec.get(j).unwrap_or_default();
        out.push(ManifestRow {
            image_id: get(0).into(),
            hotel_id: get(1).into(),
            lat: get(2).parse().map_err(|_| bad("bad lat"))?,
            lon: get(3).parse().map_err(|_| bad("bad lon"))?,
            country: CountryCode::new(get(4)).map_err(|_| bad("bad country"))?,
            source: get(5).parse().map_err(|_| bad("bad source"))?,
            relative_path: get(6).into(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: &str, country: Option<&str>, source: ImageSourceKind) -> ImageMeta {
        ImageMeta {
            image_id: id.into(),
            hotel_id: "h".into(),
            latitude: 1.0,
            longitude: 2.0,
            source,
            country: country.map(|c| CountryCode::new(c).unwrap()),
            path: None,
        }
    }

    #[test]
    fn layout_and_conservation() {
        let src = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(src.path().join("nested")).unwrap();
        for id in ["a", "b", "c"] {
            std::fs::write(src.path().join("nested").join(format!("{id}.jpg")), id).unwrap();
        }
        let out = tempfile::tempdir().unwrap();
        let recs = vec![
            meta("a", Some("GB"), ImageSourceKind::Traffickcam),
            meta("b", Some("FR"), ImageSourceKind::Traffickcam),
            meta("c", Some("GB"), ImageSourceKind::Traffickcam),
            meta("d", Some("GB"), ImageSourceKind::TravelWebsite),
            meta("e", None, ImageSourceKind::Traffickcam),
            meta("f", Some("FR"), ImageSourceKind::Traffickcam),
        ];
        let opts = RestructureOptions {
            images_root: Some(src.path().to_path_buf()),
            include_travel: false,
        };
        let rep = restructure(&recs, out.path(), &opts).unwrap();
        assert_eq!(rep.manifest.len(), 3);
        assert_eq!(rep.excluded_travel, 1);
        assert_eq!(rep.failures.len(), 2);
        assert_eq!(rep.per_country["GB"], 2);
        let gb: Vec<_> = std::fs::read_dir(out.path().join("United_Kingdom")).unwrap().collect();
        assert_eq!(gb.len(), 2);
        assert_eq!(std::fs::read_to_string(out.path().join("France/b.jpg")).unwrap(), "b");

        let first = std::fs::read(out.path().join(MANIFEST_NAME)).unwrap();
        restructure(&recs, out.path(), &opts).unwrap();
        assert_eq!(first, std::fs::read(out.path().join(MANIFEST_NAME)).unwrap());
        assert_eq!(read_manifest(out.path().join(MANIFEST_NAME)).unwrap(), rep.manifest);
    }
}
