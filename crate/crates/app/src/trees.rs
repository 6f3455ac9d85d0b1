//! Persistent tree identities and verification verdicts.

use std::collections::BTreeMap;

use canopy_core::postprocess::Detection;
use canopy_core::BBox;
use canopy_geo::mercator::ground_distance_m;
use canopy_geo::GeoPoint;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Unverified,
    Confirmed,
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub tree_id: String,
    /// Center of the box that created the record; matching is against this
    /// point so identities do not drift.
    pub center: GeoPoint,
    /// Latest matched box.
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub first_seen: String,
    pub last_seen: String,
    pub verdict: Verdict,
}

/// All tree records by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TreeIndex {
    records: BTreeMap<String, TreeRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignOutcome {
    pub matched: usize,
    pub created: usize,
    /// Ids of every record touched, in detection order.
    pub touched: Vec<String>,
}

fn center(d: &Detection) -> GeoPoint {
    let (lon, lat) = d.bbox.center();
    GeoPoint { lon, lat }
}

/// Meters per degree of latitude, rounded down so the prefilter below stays
/// conservative.
const MIN_M_PER_DEG_LAT: f64 = 110_000.0;

impl TreeIndex {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TreeRecord> {
        self.records.get(id)
    }

    pub fn records(&self) -> impl Iterator<Item = &TreeRecord> {
        self.records.values()
    }

    pub fn upsert(&mut self, r: TreeRecord) {
        self.records.insert(r.tree_id.clone(), r);
    }

    /// Moves an unverified record to `verdict`; any other transition is a
    /// conflict.
    pub fn set_verdict(&mut self, id: &str, verdict: Verdict) -> Result<TreeRecord> {
        if verdict == Verdict::Unverified {
            return Err(AppError::BadRequest(
                "verdict must be `confirmed` or `rejected`".into(),
            ));
        }
        let r = self.records.get_mut(id).ok_or_else(|| AppError::NotFound {
            kind: "tree",
            id: id.to_string(),
        })?;
        if r.verdict != Verdict::Unverified {
            return Err(AppError::Conflict(
                format!("tree `{id}` is already {:?}", r.verdict).to_lowercase(),
            ));
        }
        r.verdict = verdict;
        Ok(r.clone())
    }

    /// Gives every detection of `run_id` a tree id.
    ///
    /// Pairs of (detection, existing record) whose centers lie within
    /// `radius_m` are matched greedily by ascending distance, one to one.
    /// Matched records take the new box and `last_seen`; unmatched
    /// detections create records with ids derived from the run id and their
    /// index.
    pub fn assign(&mut self, run_id: &str, dets: &mut [Detection], radius_m: f64) -> AssignOutcome {
        let mut by_lat: Vec<(f64, &str)> = self
            .records
            .values()
            .map(|r| (r.center.lat, r.tree_id.as_str()))
            .collect();
        by_lat.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        let dlat = radius_m / MIN_M_PER_DEG_LAT;
        let mut pairs: Vec<(f64, usize, String)> = Vec::new();
        for (i, d) in dets.iter().enumerate() {
            let c = center(d);
            let lo = by_lat.partition_point(|e| e.0 < c.lat - dlat);
            for &(lat, id) in &by_lat[lo..] {
                if lat > c.lat + dlat {
                    break;
                }
                let dist = ground_distance_m(c, self.records[id].center);
                if dist <= radius_m {
                    pairs.push((dist, i, id.to_string()));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut det_match: Vec<Option<String>> = vec![None; dets.len()];
        let mut used = std::collections::HashSet::new();
        for (_, i, id) in pairs {
            if det_match[i].is_none() && !used.contains(&id) {
                used.insert(id.clone());
                det_match[i] = Some(id);
            }
        }
        let mut out = AssignOutcome::default();
        for (i, (d, m)) in dets.iter_mut().zip(det_match).enumerate() {
            let id = match m {
                Some(id) => {
                    let r = self.records.get_mut(&id).expect("matched record exists");
                    r.bbox = d.bbox;
                    r.last_seen = run_id.to_string();
                    out.matched += 1;
                    id
                }
                None => {
                    let id = new_tree_id(run_id, i);
                    self.records.insert(
                        id.clone(),
                        TreeRecord {
                            tree_id: id.clone(),
                            center: center(d),
                            bbox: d.bbox,
                            first_seen: run_id.to_string(),
                            last_seen: run_id.to_string(),
                            verdict: Verdict::Unverified,
                        },
                    );
                    out.created += 1;
                    id
                }
            };
            d.tree_id = Some(id.clone());
            out.touched.push(id);
        }
        out
    }
}

fn new_tree_id(run_id: &str, index: usize) -> String {
    let h = Sha256::digest(format!("{run_id}:{index}").as_bytes());
    format!("tree-{}", hex::encode(&h[..6]))
}
