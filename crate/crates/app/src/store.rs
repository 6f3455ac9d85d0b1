//! Append-only run store: one JSON document per run plus a tree-record
//! journal replayed on open.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use canopy_core::postprocess::Detection;
use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::area::AreaSpec;
use crate::error::{AppError, Result};
use crate::trees::{TreeIndex, TreeRecord, Verdict};

/// A completed, immutable detection run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRun {
    pub run_id: String,
    pub area: AreaSpec,
    pub zoom: u8,
    pub threshold: f64,
    pub checkpoint_id: String,
    pub created_at: String,
    pub tree_count: usize,
    /// Detections removed by polygon clipping.
    pub clipped_out: usize,
    pub detections: Vec<Detection>,
}

/// Inputs of a run before it is stored.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunDraft {
    pub area: AreaSpec,
    pub zoom: u8,
    pub threshold: f64,
    pub checkpoint_id: String,
    pub clipped_out: usize,
    pub detections: Vec<Detection>,
}

impl RunDraft {
    /// Content address: identical inputs and detections give the same id.
    pub fn run_id(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("run drafts serialize");
        format!("run-{}", hex::encode(&Sha256::digest(&bytes)[..8]))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum TreeOp {
    Upsert { record: TreeRecord },
    Verdict { tree_id: String, verdict: Verdict },
}

pub struct Store {
    root: PathBuf,
    match_radius_m: f64,
    runs: RwLock<BTreeMap<String, Arc<DetectionRun>>>,
    trees: Mutex<TreeIndex>,
}

const RUNS_DIR: &str = "runs";
const TREE_JOURNAL: &str = "trees.jsonl";

impl Store {
    /// Opens (creating if needed) a store directory.
    pub fn open(root: &Path, match_radius_m: f64) -> Result<Self> {
        let runs_dir = root.join(RUNS_DIR);
        fs::create_dir_all(&runs_dir).map_err(|e| AppError::store(&runs_dir, e))?;
        let mut runs = BTreeMap::new();
        for entry in fs::read_dir(&runs_dir).map_err(|e| AppError::store(&runs_dir, e))? {
            let path = entry.map_err(|e| AppError::store(&runs_dir, e))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let text = fs::read_to_string(&path).map_err(|e| AppError::store(&path, e))?;
                let run: DetectionRun =
                    serde_json::from_str(&text).map_err(|e| AppError::store(&path, e))?;
                runs.insert(run.run_id.clone(), Arc::new(run));
            }
        }
        let mut trees = TreeIndex::default();
        let journal = root.join(TREE_JOURNAL);
        if journal.exists() {
            let text = fs::read_to_string(&journal).map_err(|e| AppError::store(&journal, e))?;
            for (n, line) in text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
            {
                let op: TreeOp = serde_json::from_str(line)
                    .map_err(|e| AppError::store(&journal, format!("line {}: {e}", n + 1)))?;
                match op {
                    TreeOp::Upsert { record } => trees.upsert(record),
                    TreeOp::Verdict { tree_id, verdict } => {
                        trees.set_verdict(&tree_id, verdict)?;
                    }
                }
            }
        }
        Ok(Store {
            root: root.to_path_buf(),
            match_radius_m,
            runs: RwLock::new(runs),
            trees: Mutex::new(trees),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn append_journal(&self, ops: &[TreeOp]) -> Result<()> {
        let path = self.root.join(TREE_JOURNAL);
        let mut buf = Vec::new();
        for op in ops {
            serde_json::to_writer(&mut buf, op).expect("tree ops serialize");
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| AppError::store(&path, e))?;
        f.write_all(&buf)
            .and_then(|_| f.sync_data())
            .map_err(|e| AppError::store(&path, e))
    }

    /// Stores a run, assigning tree ids. A draft whose content address is
    /// already stored returns the stored run unchanged; the flag tells
    /// whether a new run was written.
    pub fn commit(
        &self,
        draft: RunDraft,
        created_at: DateTime<Utc>,
    ) -> Result<(Arc<DetectionRun>, bool)> {
        let run_id = draft.run_id();
        // Holding the tree lock serializes all writers.
        let mut trees = self.trees.lock().expect("tree lock");
        if let Some(existing) = self.runs.read().expect("run lock").get(&run_id) {
            return Ok((existing.clone(), false));
        }
        let mut staged = trees.clone();
        let mut dets = draft.detections;
        // The pyramid level is not persisted; drop it so the stored run
        // equals what a reopened store reads back.
        for d in &mut dets {
            d.level = 0;
        }
        let outcome = staged.assign(&run_id, &mut dets, self.match_radius_m);
        let run = DetectionRun {
            run_id: run_id.clone(),
            area: draft.area,
            zoom: draft.zoom,
            threshold: draft.threshold,
            checkpoint_id: draft.checkpoint_id,
            created_at: created_at.to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            tree_count: dets.len(),
            clipped_out: draft.clipped_out,
            detections: dets,
        };
        let path = self.root.join(RUNS_DIR).join(format!("{run_id}.json"));
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_vec_pretty(&run).expect("runs serialize");
        fs::write(&tmp, text)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| AppError::store(&path, e))?;
        let mut touched: Vec<&String> = outcome.touched.iter().collect();
        touched.sort();
        touched.dedup();
        let ops: Vec<TreeOp> = touched
            .into_iter()
            .map(|id| TreeOp::Upsert {
                record: staged.get(id).expect("touched record").clone(),
            })
            .collect();
        self.append_journal(&ops)?;
        *trees = staged;
        let run = Arc::new(run);
        self.runs
            .write()
            .expect("run lock")
            .insert(run_id, run.clone());
        Ok((run, true))
    }

    pub fn run(&self, id: &str) -> Result<Arc<DetectionRun>> {
        self.runs
            .read()
            .expect("run lock")
            .get(id)
            .cloned()
            .ok_or_else(|| AppError::NotFound {
                kind: "run",
                id: id.to_string(),
            })
    }

    pub fn runs(&self) -> Vec<Arc<DetectionRun>> {
        self.runs
            .read()
            .expect("run lock")
            .values()
            .cloned()
            .collect()
    }

    pub fn tree(&self, id: &str) -> Result<TreeRecord> {
        self.trees
            .lock()
            .expect("tree lock")
            .get(id)
            .cloned()
            .ok_or_else(|| AppError::NotFound {
                kind: "tree",
                id: id.to_string(),
            })
    }

    pub fn tree_count(&self) -> usize {
        self.trees.lock().expect("tree lock").len()
    }

    pub fn set_verdict(&self, id: &str, verdict: Verdict) -> Result<TreeRecord> {
        let mut trees = self.trees.lock().expect("tree lock");
        let mut staged = trees.clone();
        let rec = staged.set_verdict(id, verdict)?;
        self.append_journal(&[TreeOp::Verdict {
            tree_id: id.to_string(),
            verdict,
        }])?;
        *trees = staged;
        Ok(rec)
    }

    /// Tree-count history of one area over `[from, to]`.
    pub fn report(
        &self,
        area: &AreaSpec,
        from: Option<DateTime<Utc>>,
        to: Option<DateTime<Utc>>,
    ) -> Result<Report> {
        let mut runs: Vec<(DateTime<Utc>, Arc<DetectionRun>)> = self
            .runs()
            .into_iter()
            .filter(|r| &r.area == area)
            .filter_map(|r| parse_time(&r.created_at).ok().map(|t| (t, r)))
            .filter(|(t, _)| from.is_none_or(|f| *t >= f) && to.is_none_or(|e| *t <= e))
            .collect();
        runs.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.run_id.cmp(&b.1.run_id)));
        let (Some(first), Some(last)) = (runs.first(), runs.last()) else {
            return Err(AppError::EmptyReport {
                area: area.to_string(),
            });
        };
        let delta = last.1.tree_count as i64 - first.1.tree_count as i64;
        let trees = self.trees.lock().expect("tree lock");
        let ids: Vec<&String> = last
            .1
            .detections
            .iter()
            .filter_map(|d| d.tree_id.as_ref())
            .collect();
        let verified = ids
            .iter()
            .filter(|id| {
                trees
                    .get(id)
                    .is_some_and(|r| r.verdict != Verdict::Unverified)
            })
            .count();
        Ok(Report {
            area: area.to_string(),
            from: from.map(|t| t.to_rfc3339()),
            to: to.map(|t| t.to_rfc3339()),
            runs: runs
                .iter()
                .map(|(_, r)| RunCount {
                    run_id: r.run_id.clone(),
                    created_at: r.created_at.clone(),
                    tree_count: r.tree_count,
                })
                .collect(),
            delta,
            verified_fraction: if ids.is_empty() {
                0.0
            } else {
                verified as f64 / ids.len() as f64
            },
            species: BTreeMap::new(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunCount {
    pub run_id: String,
    pub created_at: String,
    pub tree_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub area: String,
    pub from: Option<String>,
    pub to: Option<String>,
    /// Oldest first.
    pub runs: Vec<RunCount>,
    /// Last count minus first count.
    pub delta: i64,
    /// Share of the latest run's trees that carry a verdict.
    pub verified_fraction: f64,
    /// Per-species counts; species are not classified, so always empty.
    pub species: BTreeMap<String, usize>,
}

/// RFC 3339 timestamp, or a `YYYY-MM-DD` date meaning its first instant
/// (`end_of_day` selects the last).
pub fn parse_time_bound(s: &str, end_of_day: bool) -> Result<DateTime<Utc>> {
    if let Ok(t) = parse_time(s) {
        return Ok(t);
    }
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|_| AppError::BadRequest(format!("unrecognized time `{s}`")))?;
    let t = if end_of_day {
        d.and_hms_milli_opt(23, 59, 59, 999)
    } else {
        d.and_hms_opt(0, 0, 0)
    };
    Ok(t.expect("valid time of day").and_utc())
}

fn parse_time(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| AppError::BadRequest(format!("unrecognized time `{s}`")))
}
