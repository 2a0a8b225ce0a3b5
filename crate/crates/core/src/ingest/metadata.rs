//! Consolidating image and hotel metadata CSVs into one record per image.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CountryCode;

use super::names::standardize_name;
use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ImageSourceKind {
    Traffickcam,
    TravelWebsite,
}

impl ImageSourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ImageSourceKind::Traffickcam => "TRAFFICKCAM",
            ImageSourceKind::TravelWebsite => "TRAVEL_WEBSITE",
        }
    }
}

impl std::str::FromStr for ImageSourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let k = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        match k.as_str() {
            "traffickcam" | "tc" => Ok(ImageSourceKind::Traffickcam),
            "travel_website" | "travel" | "website" | "expedia" => Ok(ImageSourceKind::TravelWebsite),
            _ => Err(format!("unknown image source {s:?}")),
        }
    }
}

/// Ground-truth record for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    pub hotel_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub source: ImageSourceKind,
    pub country: Option<CountryCode>,
    /// Image file, relative to the image root, when the metadata names one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    ImageId,
    HotelId,
    Lat,
    Lon,
    Source,
    Country,
    Path,
}

fn field_for(header: &str) -> Option<Field> {
    let h = header.trim().to_ascii_lowercase().replace([' ', '-'], "_");
    Some(match h.as_str() {
        "image_id" | "imageid" | "image" | "img_id" | "id" => Field::ImageId,
        "hotel_id" | "hotelid" | "hotel" => Field::HotelId,
        "lat" | "latitude" => Field::Lat,
        "lon" | "lng" | "long" | "longitude" => Field::Lon,
        "source" | "image_source" => Field::Source,
        "country" | "country_name" | "country_code" => Field::Country,
        "path" | "file" | "filename" | "image_path" | "relative_path" => Field::Path,
        _ => return None,
    })
}

type Row = BTreeMap<&'static str, String>;

fn key(f: Field) -> &'static str {
    match f {
        Field::ImageId => "image_id",
        Field::HotelId => "hotel_id",
        Field::Lat => "lat",
        Field::Lon => "lon",
        Field::Source => "source",
        Field::Country => "country",
        Field::Path => "path",
    }
}

struct Table {
    file: PathBuf,
    rows: Vec<(u64, Row)>,
    has_image_id: bool,
}

fn read_table(path: &Path) -> Result<Table, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IngestError::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| IngestError::csv(path, e))?.clone();
    let fields: Vec<Option<Field>> = headers.iter().map(field_for).collect();
    if !fields.iter().any(|f| matches!(f, Some(Field::ImageId | Field::HotelId))) {
        return Err(IngestError::MissingColumn {
            file: path.to_path_buf(),
            column: "image_id or hotel_id".into(),
        });
    }
    let has_image_id = fields.contains(&Some(Field::ImageId));
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| IngestError::csv(path, e))?;
        let mut row = Row::new();
        for (f, v) in fields.iter().zip(rec.iter()) {
            if let Some(f) = f {
                if !v.is_empty() {
                    row.insert(key(*f), v.to_string());
                }
            }
        }
        rows.push((i as u64 + 2, row));
    }
    Ok(Table {
        file: path.to_path_buf(),
        rows,
        has_image_id,
    })
}

/// Merges metadata CSVs into one record per image.
///
/// Files with an `image_id` column contribute image rows; files with only
/// `hotel_id` contribute hotel rows whose columns (typically coordinates)
/// are joined onto every image of that hotel. Image-row values win over
/// hotel-row values. Header names are matched case-insensitively with
/// common aliases (`latitude`, `lng`, ...). Output keeps first-seen order.
pub fn merge_metadata<P: AsRef<Path>>(csv_paths: &[P]) -> Result<Vec<ImageMeta>, IngestError> {
    let tables: Vec<Table> = csv_paths.iter().map(|p| read_table(p.as_ref())).collect::<Result<_, _>>()?;

    let mut hotels: BTreeMap<String, Row> = BTreeMap::new();
    for t in tables.iter().filter(|t| !t.has_image_id) {
        for (line, row) in &t.rows {
            let hid = row.get("hotel_id").ok_or_else(|| IngestError::Record {
                file: t.file.clone(),
                line: *line,
                message: "empty hotel_id".into(),
            })?;
            let entry = hotels.entry(hid.clone()).or_default();
            for (k, v) in row {
                entry.entry(k).or_insert_with(|| v.clone());
            }
        }
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for t in tables.iter().filter(|t| t.has_image_id) {
        for (line, row) in &t.rows {
            let err = |message: String| IngestError::Record {
                file: t.file.clone(),
                line: *line,
                message,
            };
            let image_id = row.get("image_id").cloned().ok_or_else(|| err("empty image_id".into()))?;
            if !seen.insert(image_id.clone()) {
                return Err(IngestError::DuplicateImage(image_id));
            }
            let mut merged = row.clone();
            if let Some(hid) = row.get("hotel_id") {
                if let Some(h) = hotels.get(hid) {
                    for (k, v) in h {
                        merged.entry(k).or_insert_with(|| v.clone());
                    }
                }
            }
            let hotel_id = merged.get("hotel_id").cloned().ok_or_else(|| err(format!("image {image_id}: no hotel_id")))?;
            let coord = |k: &str| -> Result<f64, IngestError> {
                let raw = merged.get(k).ok_or_else(|| IngestError::MissingJoin {
                    image_id: image_id.clone(),
                    hotel_id: hotel_id.clone(),
                })?;
                raw.parse::<f64>().map_err(|_| err(format!("image {image_id}: bad {k} {raw:?}")))
            };
            let (lat, lon) = (coord("lat")?, coord("lon")?);
            if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                return Err(IngestError::CoordinateRange { image_id, lat, lon });
            }
            let source = match merged.get("source") {
                Some(s) => s.parse().map_err(|e: String| err(e))?,
                None => ImageSourceKind::Traffickcam,
            };
            let country = match merged.get("country") {
                Some(c) => Some(CountryCode::new(c).or_else(|_| standardize_name(c)).map_err(|e| err(e.to_string()))?),
                None => None,
            };
            out.push(ImageMeta {
                image_id,
                hotel_id,
                latitude: lat,
                longitude: lon,
                source,
                country,
                path: merged.get("path").map(PathBuf::from),
            });
        }
    }
    Ok(out)
}

/// Fills missing countries by reverse geocoding; returns how many stay unresolved.
pub fn geocode_records(b: &super::CountryBoundaries, records: &mut [ImageMeta]) -> usize {
    use rayon::prelude::*;
    records
        .par_iter_mut()
        .filter(|r| r.country.is_none())
        .map(|r| {
            r.country = b.resolve(r.latitude, r.longitude);
            usize::from(r.country.is_none())
        })
        .sum()
}

/// Writes records as `image_id,hotel_id,lat,lon,source,country,path`.
pub fn write_metadata(records: &[ImageMeta], w: impl std::io::Write) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(w);
    let e = |e: csv::Error| IngestError::Write(e.to_string());
    wtr.write_record(["image_id", "hotel_id", "lat", "lon", "source", "country", "path"]).map_err(e)?;
    for r in records {
        wtr.write_record([
            r.image_id.clone(),
            r.hotel_id.clone(),
            r.latitude.to_string(),
            r.longitude.to_string(),
            r.source.as_str().to_string(),
            r.country.map(|c| c.as_str().to_string()).unwrap_or_default(),
            r.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        ])
        .map_err(e)?;
    }
    wtr.flush().map_err(|err| IngestError::Write(err.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn joins_hotels_onto_images() {
        let dir = tempfile::tempdir().unwrap();
        let images = write(dir.path(), "images.csv", "Image_ID,hotel_id,source\n1,h1,traffickcam\n2,h2,travel_website\n3,h1,\n");
        let hotels = write(dir.path(), "hotels.csv", "hotel_id,Latitude,lng\nh1,48.85,2.35\nh2,51.5,-0.12\n");
        let recs = merge_metadata(&[&images, &hotels]).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!((recs[0].latitude, recs[0].longitude), (48.85, 2.35));
        assert_eq!(recs[1].source, ImageSourceKind::TravelWebsite);
        assert_eq!(recs[2].hotel_id, "h1");
        assert_eq!(recs[2].source, ImageSourceKind::Traffickcam);
    }

    #[test]
    fn errors() {
        let dir = tempfile::tempdir().unwrap();
        let hotels = write(dir.path(), "hotels.csv", "hotel_id,lat,lon\nh1,10,10\nh9,95,0\n");
        let dup = write(dir.path(), "dup.csv", "image_id,hotel_id\n7,h1\n7,h1\n");
        assert!(matches!(merge_metadata(&[&dup, &hotels]), Err(IngestError::DuplicateImage(id)) if id == "7"));
        let orphan = write(dir.path(), "orphan.csv", "image_id,hotel_id\n8,h2\n");
        assert!(matches!(merge_metadata(&[&orphan, &hotels]), Err(IngestError::MissingJoin { .. })));
        let far = write(dir.path(), "far.csv", "image_id,hotel_id\n9,h9\n");
        assert!(matches!(merge_metadata(&[&far, &hotels]), Err(IngestError::CoordinateRange { .. })));
        let nokey = write(dir.path(), "nokey.csv", "lat,lon\n1,2\n");
        assert!(matches!(merge_metadata(&[&nokey]), Err(IngestError::MissingColumn { .. })));
    }
}
