//! Offline reverse geocoding over country boundary polygons.

use std::path::Path;
use std::sync::LazyLock;

use serde_json::Value;

use crate::CountryCode;

use super::IngestError;

static BUNDLED_GEOJSON: &str = include_str!("../../data/boundaries_110m.geojson");
static BUNDLED: LazyLock<CountryBoundaries> = LazyLock::new(|| {
    CountryBoundaries::from_geojson_str(BUNDLED_GEOJSON, "Natural Earth 1:110m (world-atlas countries-110m)")
        .expect("bundled boundaries parse")
});

/// Points up to this many degrees outside every polygon snap to the nearest one.
pub const COASTAL_FALLBACK_DEG: f64 = 0.1;

/// Closed ring of `[lon, lat]` vertices; first and last vertex are equal.
pub type Ring = Vec<[f64; 2]>;

#[derive(Debug, Clone)]
pub struct CountryShape {
    pub country: CountryCode,
    /// Each polygon is an outer ring followed by its holes.
    pub polygons: Vec<Vec<Ring>>,
    bounds: [f64; 4],
}

impl CountryShape {
    fn new(country: CountryCode, polygons: Vec<Vec<Ring>>) -> Self {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in polygons.iter().flatten().flatten() {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        Self {
            country,
            polygons,
            bounds: b,
        }
    }

    /// Even-odd test; holes cancel their outer ring.
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        if lon < self.bounds[0] || lon > self.bounds[2] || lat < self.bounds[1] || lat > self.bounds[3] {
            return false;
        }
        self.polygons
            .iter()
            .any(|rings| rings.iter().filter(|r| ring_crosses(r, lon, lat)).count() % 2 == 1)
    }

    /// Shortest degree-space distance to any edge.
    pub fn edge_distance(&self, lon: f64, lat: f64) -> f64 {
        let d = COASTAL_FALLBACK_DEG;
        if lon < self.bounds[0] - d || lon > self.bounds[2] + d || lat < self.bounds[1] - d || lat > self.bounds[3] + d {
            return f64::INFINITY;
        }
        self.polygons
            .iter()
            .flatten()
            .flat_map(|r| r.windows(2))
            .map(|e| segment_distance([lon, lat], e[0], e[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn ring_crosses(ring: &Ring, x: f64, y: f64) -> bool {
    let mut inside = false;
    for e in ring.windows(2) {
        let ([xi, yi], [xj, yj]) = (e[0], e[1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
    }
    inside
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
}

/// Country polygons indexed for point lookup. Read-only after load.
#[derive(Debug, Clone)]
pub struct CountryBoundaries {
    shapes: Vec<CountryShape>,
    pub resolution: String,
}

impl CountryBoundaries {
    /// The bundled coarse world boundaries. Small states (e.g. Singapore,
    /// Malta, Andorra) are absent at this resolution.
    pub fn bundled() -> &'static CountryBoundaries {
        &BUNDLED
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        Self::from_geojson_str(&text, &path.display().to_string())
    }

    /// Parses a GeoJSON FeatureCollection of Polygon / MultiPolygon features
    /// carrying an `iso_a2` property (also `ISO_A2`). Features with an
    /// unassigned code such as `-99` are skipped.
    pub fn from_geojson_str(text: &str, resolution: &str) -> Result<Self, IngestError> {
        let bad = |m: String| IngestError::Boundaries(m);
        let doc: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        let features = doc["features"]
            .as_array()
            .ok_or_else(|| bad("expected a FeatureCollection".into()))?;
        let mut by_code: std::collections::BTreeMap<CountryCode, Vec<Vec<Ring>>> = Default::default();
        for (i, f) in features.iter().enumerate() {
            let props = &f["properties"];
            let raw = props["iso_a2"].as_str().or_else(|| props["ISO_A2"].as_str()).unwrap_or("");
            let Ok(code) = CountryCode::new(raw) else {
                log::debug!("boundary feature {i}: skipping code {raw:?}");
                continue;
            };
            let geom = &f["geometry"];
            let polys = match geom["type"].as_str() {
                Some("Polygon") => vec![parse_polygon(&geom["coordinates"])],
                Some("MultiPolygon") => geom["coordinates"]
                    .as_array()
                    .ok_or_else(|| bad(format!("feature {i}: bad MultiPolygon")))?
                    .iter()
                    .map(parse_polygon)
                    .collect(),
                other => return Err(bad(format!("feature {i}: unsupported geometry {other:?}"))),
            };
            let polys: Vec<Vec<Ring>> = polys
                .into_iter()
                .collect::<Option<_>>()
                .ok_or_else(|| bad(format!("feature {i} ({code}): malformed coordinates")))?;
            by_code.entry(code).or_default().extend(polys);
        }
        if by_code.is_empty() {
            return Err(bad("no country features with an ISO alpha-2 code".into()));
        }
        Ok(Self {
            shapes: by_code.into_iter().map(|(c, p)| CountryShape::new(c, p)).collect(),
            resolution: resolution.to_string(),
        })
    }

    pub fn shapes(&self) -> &[CountryShape] {
        &self.shapes
    }

    pub fn countries(&self) -> impl Iterator<Item = CountryCode> + '_ {
        self.shapes.iter().map(|s| s.country)
    }

    /// Country containing the point, else the nearest within
    /// [`COASTAL_FALLBACK_DEG`], else `None`. Overlaps resolve to the lowest code.
    pub fn resolve(&self, lat: f64, lon: f64) -> Option<CountryCode> {
        if let Some(s) = self.shapes.iter().find(|s| s.contains(lon, lat)) {
            return Some(s.country);
        }
        let mut best: Option<(f64, CountryCode)> = None;
        for s in &self.shapes {
            let d = s.edge_distance(lon, lat);
            if d <= COASTAL_FALLBACK_DEG && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, s.country));
            }
        }
        best.map(|(_, c)| c)
    }

    /// Rings as GeoJSON, for map rendering.
    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .shapes
            .iter()
            .map(|s| {
                serde_json::json!({
                    "type": "Feature",
                    "properties": {"iso_a2": s.country.as_str(), "name": s.country.info().display_name()},
                    "geometry": {"type": "MultiPolygon", "coordinates": s.polygons},
                })
            })
            .collect();
        serde_json::json!({"type": "FeatureCollection", "features": features})
    }
}

fn parse_polygon(v: &Value) -> Option<Vec<Ring>> {
    v.as_array()?
        .iter()
        .map(|ring| {
            let mut pts: Ring = ring
                .as_array()?
                .iter()
                .map(|p| Some([p.get(0)?.as_f64()?, p.get(1)?.as_f64()?]))
                .collect::<Option<_>>()?;
            if pts.len() < 3 {
                return None;
            }
            if pts.first() != pts.last() {
                pts.push(pts[0]);
            }
            Some(pts)
        })
        .collect()
}

/// Free-function form of [`CountryBoundaries::resolve`].
pub fn resolve_country(b: &CountryBoundaries, lat: f64, lon: f64) -> Option<CountryCode> {
    b.resolve(lat, lon)
}
