//! Append-only journal plus content-addressed blob directory.
//!
//! `journal.jsonl` holds one [`Event`] per line. The in-memory [`State`]
//! is rebuilt by replaying it on open.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use sha2::{Digest, Sha256};

use crate::model::{Case, Event, JobImage, Processed, ReviewOverride};

pub const JOURNAL_NAME: &str = "journal.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("journal line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("blob {0} not found")]
    MissingBlob(String),
}

fn io_err(path: &Path, e: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct BlobStore {
    root: PathBuf,
}

impl BlobStore {
    pub fn path(&self, sha: &str) -> PathBuf {
        self.root.join(&sha[..2.min(sha.len())]).join(sha)
    }

    /// Stores `bytes` under their hash; existing blobs are left alone.
    pub fn put(&self, bytes: &[u8]) -> Result<String, StoreError> {
        let sha = sha256_hex(bytes);
        let path = self.path(&sha);
        if path.exists() {
            return Ok(sha);
        }
        let dir = path.parent().expect("blob path has a parent");
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let tmp = dir.join(format!(".{sha}.tmp"));
        let mut f = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| io_err(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))?;
        Ok(sha)
    }

    pub fn get(&self, sha: &str) -> Result<Vec<u8>, StoreError> {
        if sha.len() != 64 || !sha.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(StoreError::MissingBlob(sha.to_string()));
        }
        let path = self.path(sha);
        std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => StoreError::MissingBlob(sha.to_string()),
            _ => io_err(&path, e),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ImageEntry {
    pub sha256: String,
    pub filename: Option<String>,
    pub processed: Option<Processed>,
}

#[derive(Debug, Clone)]
pub struct CaseState {
    pub case: Case,
    pub images: BTreeMap<String, ImageEntry>,
    pub by_hash: HashMap<String, String>,
    pub overrides: Vec<ReviewOverride>,
    pub jobs: Vec<String>,
}

impl CaseState {
    /// Latest override per finding id.
    pub fn latest_overrides(&self) -> HashMap<&str, (&ReviewOverride, usize)> {
        let mut out: HashMap<&str, (&ReviewOverride, usize)> = HashMap::new();
        for o in &self.overrides {
            let e = out.entry(o.finding_id.as_str()).or_insert((o, 0));
            e.0 = o;
            e.1 += 1;
        }
        out
    }

    pub fn has_finding(&self, finding_id: &str) -> bool {
        let Some((image_id, _)) = finding_id.rsplit_once('#') else {
            return false;
        };
        self.images
            .get(image_id)
            .and_then(|e| e.processed.as_ref())
            .is_some_and(|p| p.findings.iter().any(|f| f.finding_id == finding_id))
    }
}

#[derive(Debug, Clone)]
pub struct Job {
    pub job_id: String,
    pub case_id: String,
    pub created_at: chrono::DateTime<chrono::Utc>,
    pub images: Vec<JobImage>,
}

#[derive(Debug, Default)]
pub struct State {
    pub cases: BTreeMap<String, CaseState>,
    pub jobs: BTreeMap<String, Job>,
}

impl State {
    pub fn next_case_id(&self) -> String {
        format!("case-{:06}", self.cases.len() + 1)
    }

    pub fn next_job_id(&self) -> String {
        format!("job-{:06}", self.jobs.len() + 1)
    }

    /// Images stored but not yet processed, in case then image order.
    pub fn unprocessed(&self) -> Vec<(String, String)> {
        self.cases
            .values()
            .flat_map(|c| {
                c.images
                    .iter()
                    .filter(|(_, e)| e.processed.is_none())
                    .map(|(id, _)| (c.case.case_id.clone(), id.clone()))
            })
            .collect()
    }

    fn case_mut(&mut self, id: &str) -> Result<&mut CaseState, String> {
        self.cases.get_mut(id).ok_or_else(|| format!("unknown case {id}"))
    }

    pub fn apply(&mut self, ev: &Event) -> Result<(), String> {
        match ev {
            Event::CaseCreated { case } => {
                if self.cases.contains_key(&case.case_id) {
                    return Err(format!("case {} created twice", case.case_id));
                }
                self.cases.insert(
                    case.case_id.clone(),
                    CaseState {
                        case: case.clone(),
                        images: BTreeMap::new(),
                        by_hash: HashMap::new(),
                        overrides: Vec::new(),
                        jobs: Vec::new(),
                    },
                );
            }
            Event::TruthSet { case_id, truth } => {
                self.case_mut(case_id)?.case.truth = truth.clone();
            }
            Event::ImageAdded {
                case_id,
                image_id,
                sha256,
                filename,
            } => {
                let c = self.case_mut(case_id)?;
                if c.images.contains_key(image_id) {
                    return Err(format!("image {image_id} added twice to {case_id}"));
                }
                c.case.image_ids.push(image_id.clone());
                c.by_hash.insert(sha256.clone(), image_id.clone());
                c.images.insert(
                    image_id.clone(),
                    ImageEntry {
                        sha256: sha256.clone(),
                        filename: filename.clone(),
                        processed: None,
                    },
                );
            }
            Event::JobCreated {
                job_id,
                case_id,
                created_at,
                images,
            } => {
                self.case_mut(case_id)?.jobs.push(job_id.clone());
                self.jobs.insert(
                    job_id.clone(),
                    Job {
                        job_id: job_id.clone(),
                        case_id: case_id.clone(),
                        created_at: *created_at,
                        images: images.clone(),
                    },
                );
            }
            Event::ImageProcessed {
                case_id,
                image_id,
                result,
            } => {
                let c = self.case_mut(case_id)?;
                let e = c
                    .images
                    .get_mut(image_id)
                    .ok_or_else(|| format!("unknown image {image_id} in {case_id}"))?;
                if e.processed.is_some() {
                    return Err(format!("image {image_id} processed twice"));
                }
                e.processed = Some(result.clone());
            }
            Event::OverrideAdded { case_id, review } => {
                self.case_mut(case_id)?.overrides.push(review.clone());
            }
        }
        Ok(())
    }
}

/// Durable case store. Writers are serialized; readers see a consistent
/// state between writes.
pub struct Store {
    journal_path: PathBuf,
    journal: Mutex<File>,
    state: RwLock<State>,
    blobs: BlobStore,
}

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let journal_path = dir.join(JOURNAL_NAME);
        let mut state = State::default();
        let mut valid_len = 0u64;
        if journal_path.exists() {
            let f = File::open(&journal_path).map_err(|e| io_err(&journal_path, e))?;
            let mut lines = BufReader::new(f).lines().enumerate().peekable();
            while let Some((i, line)) = lines.next() {
                let line = line.map_err(|e| io_err(&journal_path, e))?;
                let last = lines.peek().is_none();
                match serde_json::from_str::<Event>(&line) {
                    Ok(ev) => state.apply(&ev).map_err(|message| StoreError::Corrupt { line: i + 1, message })?,
                    // a torn final write is dropped
                    Err(e) if last => {
                        log::warn!("dropping unreadable final journal line {}: {e}", i + 1);
                        break;
                    }
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
                valid_len += line.len() as u64 + 1;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal_path)
            .map_err(|e| io_err(&journal_path, e))?;
        if file.metadata().map_err(|e| io_err(&journal_path, e))?.len() > valid_len {
            file.set_len(valid_len).map_err(|e| io_err(&journal_path, e))?;
        }
        Ok(Self {
            journal_path,
            journal: Mutex::new(file),
            state: RwLock::new(state),
            blobs: BlobStore { root: dir.join("blobs") },
        })
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    pub fn read<T>(&self, f: impl FnOnce(&State) -> T) -> T {
        f(&self.state.read().unwrap_or_else(|e| e.into_inner()))
    }

    /// Decides events against the current state and persists them atomically
    /// with respect to other writers.
    pub fn commit<T, E: From<StoreError>>(&self, decide: impl FnOnce(&State) -> Result<(Vec<Event>, T), E>) -> Result<T, E> {
        let mut file = self.journal.lock().unwrap_or_else(|e| e.into_inner());
        let (events, out) = self.read(decide)?;
        if events.is_empty() {
            return Ok(out);
        }
        let mut buf = String::new();
        for ev in &events {
            buf.push_str(&serde_json::to_string(ev).expect("events serialize"));
            buf.push('\n');
        }
        file.write_all(buf.as_bytes())
            .and_then(|_| file.sync_data())
            .map_err(|e| io_err(&self.journal_path, e))?;
        let mut state = self.state.write().unwrap_or_else(|e| e.into_inner());
        for ev in &events {
            state
                .apply(ev)
                .unwrap_or_else(|m| panic!("event rejected after it was written: {m}"));
        }
        Ok(out)
    }

    /// Case ids in creation order.
    pub fn case_ids(&self) -> BTreeSet<String> {
        self.read(|s| s.cases.keys().cloned().collect())
    }
}
