//! Synthetic stub corpora with known answers.
//!
//! A corpus is a set of small generated images plus detector and classifier
//! sidecars (box interchange CSV) and a truth table. It can run in-process or
//! be written to disk for the CLI and service.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::geoloc::Truth;
use crate::kb::KnowledgeBase;
use crate::pipeline::stub::{StubClassifier, StubDetector};
use crate::pipeline::{
    run_pipeline_with, BackendConfig, ImageRef, PipelineConfig, PipelineError, PipelineRun, RunOptions,
};
use crate::taxonomy::{ClfClass, DetClass, PlugType};
use crate::vision::interchange::{write_rows, BoxRow};
use crate::CountryCode;

pub const IMAGE_WIDTH: u32 = 64;
pub const IMAGE_HEIGHT: u32 = 48;
/// Boxes per image; the 4 x 2 grid cells never overlap.
pub const SLOTS_PER_IMAGE: usize = 8;

#[derive(Debug, Clone)]
pub struct StubCorpus {
    pub image_ids: Vec<String>,
    /// Detector sidecar (DetClass ids).
    pub detections: Vec<BoxRow>,
    /// Classifier sidecar (ClfClass indices, top probability in `confidence`).
    pub labels: Vec<BoxRow>,
    pub truth: Truth,
}

/// Grid cell `slot` of a fixture image, as `[x0, y0, x1, y1]`.
pub fn slot_box(slot: usize) -> [f64; 4] {
    let (cx, cy) = ((slot % 4) as f64 * 16.0, (slot / 4) as f64 * 24.0);
    [cx + 2.0, cy + 3.0, cx + 14.0, cy + 21.0]
}

fn row(image_id: &str, class_id: u32, b: [f64; 4], confidence: f64) -> BoxRow {
    BoxRow {
        image_id: image_id.to_string(),
        class_id,
        x_min: b[0],
        y_min: b[1],
        x_max: b[2],
        y_max: b[3],
        confidence: Some(confidence),
    }
}

impl StubCorpus {
    pub fn render(&self, image_id: &str) -> RgbImage {
        let mut img = RgbImage::from_pixel(IMAGE_WIDTH, IMAGE_HEIGHT, Rgb([200, 196, 188]));
        // id tag in the bottom-right corner, outside every slot, so no two images share bytes
        let tag = Sha256::digest(image_id.as_bytes());
        for (i, px) in tag.chunks(3).take(3).enumerate() {
            img.put_pixel(IMAGE_WIDTH - 3 + i as u32, IMAGE_HEIGHT - 1, Rgb([px[0], px[1], px[2]]));
        }
        for d in self.detections.iter().filter(|d| d.image_id == image_id) {
            for y in d.y_min as u32..(d.y_max as u32).min(IMAGE_HEIGHT) {
                for x in d.x_min as u32..(d.x_max as u32).min(IMAGE_WIDTH) {
                    img.put_pixel(x, y, Rgb([240, 240, 236]));
                }
            }
        }
        img
    }

    pub fn image_refs(&self) -> Vec<ImageRef> {
        self.image_ids
            .iter()
            .map(|id| ImageRef::from_pixels(id.clone(), self.render(id)).expect("fixture images are non-empty"))
            .collect()
    }

    pub fn detector(&self) -> StubDetector {
        StubDetector::from_rows(&self.detections).expect("fixture detections are valid")
    }

    pub fn classifier(&self) -> StubClassifier {
        StubClassifier::from_rows(&self.labels).expect("fixture labels are valid")
    }

    pub fn pipeline_config() -> PipelineConfig {
        PipelineConfig {
            clf_threshold: 0.0,
            ..PipelineConfig::default()
        }
    }

    pub fn run(&self, opts: RunOptions) -> Result<PipelineRun, PipelineError> {
        run_pipeline_with(
            &self.image_refs(),
            &self.detector(),
            &self.classifier(),
            &Self::pipeline_config(),
            opts,
        )
    }

    /// Writes `images/<id>.png`, `detector.csv`, `classifier.csv`,
    /// `detector.json`, `classifier.json`, `pipeline.json` and `truth.csv`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        let images = dir.join("images");
        std::fs::create_dir_all(&images)?;
        for id in &self.image_ids {
            let mut bytes = Vec::new();
            self.render(id)
                .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
                .map_err(std::io::Error::other)?;
            std::fs::write(images.join(format!("{id}.png")), bytes)?;
        }
        let csv_err = |e: crate::vision::EvalError| std::io::Error::other(e.to_string());
        write_rows(std::fs::File::create(dir.join("detector.csv"))?, &self.detections).map_err(csv_err)?;
        write_rows(std::fs::File::create(dir.join("classifier.csv"))?, &self.labels).map_err(csv_err)?;
        std::fs::write(dir.join("detector.json"), pretty(&BackendConfig::stub("detector.csv")))?;
        std::fs::write(dir.join("classifier.json"), pretty(&BackendConfig::stub("classifier.csv")))?;
        std::fs::write(dir.join("pipeline.json"), pretty(&Self::pipeline_config()))?;
        let mut truth = String::from("image_id,country\n");
        for (id, c) in &self.truth {
            truth.push_str(&format!("{id},{c}\n"));
        }
        std::fs::write(dir.join("truth.csv"), truth)
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

/// Probability-band targets for the threshold fixture: `(lo, hi, correct, wrong)`.
pub const SWEEP_BANDS: [(f64, f64, usize, usize); 4] = [
    (0.9, 1.0, 1167, 45),
    (0.8, 0.9, 254, 50),
    (0.7, 0.8, 174, 51),
    (0.1, 0.7, 372, 253),
];
pub const SWEEP_NOISE: usize = 1393;
pub const SWEEP_DETECTIONS: usize = 3759;

#[derive(Debug, Clone, Copy, Serialize)]
enum Slot {
    Noise,
    Scored { band: usize, correct: bool },
}

/// `j`-th of ten evenly spaced interior points of `(lo, hi)`, never on an edge.
fn spread(lo: f64, hi: f64, j: usize) -> f64 {
    let v = lo + ((j % 10) as f64 + 0.5) * (hi - lo) / 10.0;
    (v * 1000.0).round() / 1000.0
}

/// Findings whose cumulative counts at thresholds 0.7 / 0.8 / 0.9 are
/// 1595+146, 1421+95 and 1167+45 (correct + wrong), alongside 1393 noise
/// detections, for 3759 detections in total.
pub fn sweep_corpus(kb: &KnowledgeBase) -> StubCorpus {
    let mut slots: Vec<Slot> = vec![Slot::Noise; SWEEP_NOISE];
    for (band, &(_, _, correct, wrong)) in SWEEP_BANDS.iter().enumerate() {
        slots.extend(std::iter::repeat_n(Slot::Scored { band, correct: true }, correct));
        slots.extend(std::iter::repeat_n(Slot::Scored { band, correct: false }, wrong));
    }
    debug_assert_eq!(slots.len(), SWEEP_DETECTIONS);
    slots.shuffle(&mut ChaCha8Rng::seed_from_u64(6));

    let countries: Vec<CountryCode> = kb.countries().collect();
    let mut corpus = StubCorpus {
        image_ids: Vec::new(),
        detections: Vec::new(),
        labels: Vec::new(),
        truth: Truth::new(),
    };
    let mut seen: BTreeMap<(usize, bool), usize> = BTreeMap::new();
    let mut noise_seen = 0;
    for (i, chunk) in slots.chunks(SLOTS_PER_IMAGE).enumerate() {
        let id = format!("sw-{i:04}");
        let country = countries[(i * 7) % countries.len()];
        let own: Vec<PlugType> = kb.types_for_country(country).into_iter().collect();
        let other: Vec<PlugType> = PlugType::ALL.into_iter().filter(|t| !own.contains(t)).collect();
        for (s, slot) in chunk.iter().enumerate() {
            let b = slot_box(s);
            let det_conf = 0.5 + ((i * 8 + s) * 37 % 50) as f64 / 100.0;
            corpus.detections.push(row(&id, DetClass::Socket.id(), b, det_conf));
            let (class, p) = match *slot {
                Slot::Noise => {
                    noise_seen += 1;
                    (ClfClass::Noise, spread(0.55, 0.99, noise_seen))
                }
                Slot::Scored { band, correct } => {
                    let j = seen.entry((band, correct)).or_default();
                    *j += 1;
                    let pool = if correct { &own } else { &other };
                    let t = pool[(*j + i) % pool.len()];
                    let (lo, hi, _, _) = SWEEP_BANDS[band];
                    (ClfClass::Plug(t), spread(lo, hi, *j))
                }
            };
            corpus.labels.push(row(&id, class.index() as u32, b, p));
        }
        corpus.truth.insert(id.clone(), country);
        corpus.image_ids.push(id);
    }
    corpus
}

/// Countries whose plug-type set is not contained in any other country's set.
pub fn distinguishable_countries(kb: &KnowledgeBase) -> Vec<CountryCode> {
    let sigs: Vec<(CountryCode, BTreeSet<PlugType>)> = kb.countries().map(|c| (c, kb.types_for_country(c))).collect();
    sigs.iter()
        .filter(|(c, s)| s.len() <= SLOTS_PER_IMAGE && !sigs.iter().any(|(o, os)| o != c && s.is_subset(os)))
        .map(|(c, _)| *c)
        .collect()
}

/// `n` images, each planting one socket of every plug type used in its
/// country. Countries cycle through [`distinguishable_countries`], so the
/// planted country is the unique best-supported candidate for its image.
pub fn planted_countries(kb: &KnowledgeBase, n: usize) -> StubCorpus {
    let countries = distinguishable_countries(kb);
    assert!(!countries.is_empty(), "knowledge base has no distinguishable country");
    let mut corpus = StubCorpus {
        image_ids: Vec::new(),
        detections: Vec::new(),
        labels: Vec::new(),
        truth: Truth::new(),
    };
    for i in 0..n {
        let id = format!("case-{i:03}");
        let country = countries[i % countries.len()];
        for (s, t) in kb.types_for_country(country).into_iter().enumerate() {
            let b = slot_box(s);
            corpus.detections.push(row(&id, DetClass::Socket.id(), b, 0.9 - s as f64 * 0.05));
            corpus
                .labels
                .push(row(&id, ClfClass::Plug(t).index() as u32, b, spread(0.75, 0.99, i + s)));
        }
        // a switchboard that must be filtered
        corpus.detections.push(row(&id, DetClass::NaSwitchboard.id(), slot_box(7), 0.95));
        corpus.truth.insert(id.clone(), country);
        corpus.image_ids.push(id);
    }
    corpus
}
