//! CSV interchange for boxes: `image_id,class_id,x_min,y_min,x_max,y_max[,confidence]`.
//!
//! Ground truth omits the confidence column. The same layout carries stub
//! classifier sidecars, where `class_id` is a classifier class index.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::taxonomy::DetClass;

use super::{BBox, EvalError, GroundTruthBox, PredictionBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRow {
    pub image_id: String,
    pub class_id: u32,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl BoxRow {
    pub fn bbox(&self) -> Result<BBox, EvalError> {
        BBox::new(self.x_min, self.y_min, self.x_max, self.y_max)
    }
}

/// Reads rows along with their 1-based line numbers.
pub fn read_rows<R: Read>(reader: R) -> Result<Vec<(u64, BoxRow)>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize::<BoxRow>() {
        let row = rec?;
        // header is line 1
        out.push((out.len() as u64 + 2, row));
    }
    Ok(out)
}

fn row_err(line: u64, e: impl std::fmt::Display) -> EvalError {
    EvalError::Row {
        line,
        message: e.to_string(),
    }
}

pub fn read_ground_truths<R: Read>(reader: R) -> Result<Vec<GroundTruthBox>, EvalError> {
    read_rows(reader)?
        .into_iter()
        .map(|(line, r)| {
            Ok(GroundTruthBox {
                cls: DetClass::from_id(r.class_id).map_err(|e| row_err(line, e))?,
                bbox: r.bbox().map_err(|e| row_err(line, e))?,
                image_id: r.image_id,
            })
        })
        .collect()
}

/// Predictions; a missing confidence column is an error.
pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<PredictionBox>, EvalError> {
    read_rows(reader)?
        .into_iter()
        .map(|(line, r)| {
            let conf = r.confidence.ok_or_else(|| row_err(line, "missing confidence"))?;
            let cls = DetClass::from_id(r.class_id).map_err(|e| row_err(line, e))?;
            let bbox = r.bbox().map_err(|e| row_err(line, e))?;
            PredictionBox::new(r.image_id, cls, bbox, conf).map_err(|e| row_err(line, e))
        })
        .collect()
}

pub fn write_rows<W: Write>(writer: W, rows: &[BoxRow]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    let with_conf = rows.iter().any(|r| r.confidence.is_some());
    if with_conf {
        w.write_record(["image_id", "class_id", "x_min", "y_min", "x_max", "y_max", "confidence"])?;
    } else {
        w.write_record(["image_id", "class_id", "x_min", "y_min", "x_max", "y_max"])?;
    }
    for r in rows {
        let mut rec = vec![
            r.image_id.clone(),
            r.class_id.to_string(),
            r.x_min.to_string(),
            r.y_min.to_string(),
            r.x_max.to_string(),
            r.y_max.to_string(),
        ];
        if with_conf {
            rec.push(r.confidence.map(|c| c.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

impl From<&GroundTruthBox> for BoxRow {
    fn from(g: &GroundTruthBox) -> Self {
        BoxRow {
            image_id: g.image_id.clone(),
            class_id: g.cls.id(),
            x_min: g.bbox.x_min,
            y_min: g.bbox.y_min,
            x_max: g.bbox.x_max,
            y_max: g.bbox.y_max,
            confidence: None,
        }
    }
}

impl From<&PredictionBox> for BoxRow {
    fn from(p: &PredictionBox) -> Self {
        BoxRow {
            confidence: Some(p.confidence),
            ..BoxRow::from(&GroundTruthBox {
                image_id: p.image_id.clone(),
                cls: p.cls,
                bbox: p.bbox,
            })
        }
    }
}
