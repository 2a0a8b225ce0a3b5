use serde::{Deserialize, Serialize};

use crate::taxonomy::DetClass;

use super::EvalError;

/// Axis-aligned box in corner form, pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, EvalError> {
        let all_finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !all_finite || x_min < 0.0 || y_min < 0.0 || x_min >= x_max || y_min >= y_max {
            return Err(EvalError::InvalidBox([x_min, y_min, x_max, y_max]));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Converts YOLO-style center/size coordinates.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, EvalError> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Clamps to `[0, width] x [0, height]`; `None` if nothing is left.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BBox> {
        BBox::new(
            self.x_min.clamp(0.0, width),
            self.y_min.clamp(0.0, height),
            self.x_max.clamp(0.0, width),
            self.y_max.clamp(0.0, height),
        )
        .ok()
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            x_min: f64,
            y_min: f64,
            x_max: f64,
            y_max: f64,
        }
        let r = Raw::deserialize(deserializer)?;
        BBox::new(r.x_min, r.y_min, r.x_max, r.y_max).map_err(serde::de::Error::custom)
    }
}

/// Intersection over union. Symmetric, in `[0, 1]`, zero for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub image_id: String,
    pub cls: DetClass,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBox {
    pub image_id: String,
    pub cls: DetClass,
    pub bbox: BBox,
    pub confidence: f64,
}

impl PredictionBox {
    pub fn new(
        image_id: impl Into<String>,
        cls: DetClass,
        bbox: BBox,
        confidence: f64,
    ) -> Result<Self, EvalError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(EvalError::Confidence(confidence));
        }
        Ok(Self {
            image_id: image_id.into(),
            cls,
            bbox,
            confidence,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&b(0.0, 0.0, 1.0, 1.0), &b(2.0, 2.0, 3.0, 3.0)), 0.0);
        // intersection 2, union 6
        assert!((iou(&a, &b(1.0, 0.0, 3.0, 2.0)) - 1.0 / 3.0).abs() < 1e-15);
        // touching edges do not overlap
        assert_eq!(iou(&a, &b(2.0, 0.0, 3.0, 2.0)), 0.0);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BBox::new(-1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 2.0).is_err());
        assert!(serde_json::from_str::<BBox>(r#"{"x_min":3,"y_min":0,"x_max":1,"y_max":1}"#).is_err());
    }

    #[test]
    fn center_form_conversion() {
        let bb = BBox::from_center(10.0, 20.0, 4.0, 6.0).unwrap();
        assert_eq!(bb, b(8.0, 17.0, 12.0, 23.0));
    }

    #[test]
    fn clamping() {
        let bb = b(90.0, 90.0, 120.0, 130.0).clamp_to(100.0, 100.0).unwrap();
        assert_eq!(bb, b(90.0, 90.0, 100.0, 100.0));
        assert!(b(110.0, 0.0, 120.0, 10.0).clamp_to(100.0, 100.0).is_none());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..100.0f64, 0.0..100.0f64, 0.01..50.0f64, 0.01..50.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn iou_symmetric_bounded_identity(a in arb_box(), c in arb_box()) {
            let v = iou(&a, &c);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&c, &a));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }
    }
}
