//! Detection service: resolves areas, runs the pipeline, persists runs and
//! drives community jobs. Shared by the HTTP layer and the CLI.

use std::sync::Arc;

use canopy_core::postprocess::PostprocessConfig;
use canopy_geo::{CadastralProvider, TileSource, Viewport};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::area::AreaSpec;
use crate::error::{AppError, Result};
use crate::jobs::{EventKind, Job, JobManager};
use crate::pipeline::{
    detect_polygon, detect_viewport, plan_chunks, postprocess_for, run_chunks, Detector,
};
use crate::store::{DetectionRun, RunDraft, Store};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(Utc::now)
}

fn stamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSettings {
    /// Zoom used for parcel and community runs.
    pub zoom: u8,
    /// Score threshold when a request gives none.
    pub threshold: f64,
    pub iou_threshold: f64,
    pub pre_nms_top_k: usize,
    /// Community chunk side in degrees.
    pub chunk_deg: f64,
    /// Extra pixels around each chunk; defaults to one inference window.
    pub chunk_margin_px: Option<f64>,
    /// Chunks processed concurrently per job.
    pub chunk_workers: usize,
    /// Tree-id matching radius in meters.
    pub match_radius_m: f64,
}

impl Default for DetectSettings {
    fn default() -> Self {
        let post = PostprocessConfig::default();
        DetectSettings {
            zoom: 18,
            threshold: post.score_threshold,
            iou_threshold: post.iou_threshold,
            pre_nms_top_k: post.pre_nms_top_k,
            chunk_deg: 0.01,
            chunk_margin_px: None,
            chunk_workers: 2,
            match_radius_m: 3.0,
        }
    }
}

impl DetectSettings {
    fn post(&self, threshold: Option<f64>) -> Result<PostprocessConfig> {
        let base = PostprocessConfig {
            score_threshold: self.threshold,
            iou_threshold: self.iou_threshold,
            pre_nms_top_k: self.pre_nms_top_k,
        };
        postprocess_for(threshold.unwrap_or(self.threshold), &base)
    }
}

pub struct App {
    pub detector: Option<Arc<Detector>>,
    pub tiles: Arc<dyn TileSource>,
    pub cadastral: Arc<dyn CadastralProvider>,
    pub store: Arc<Store>,
    pub jobs: JobManager,
    pub settings: DetectSettings,
    pub clock: Clock,
}

impl App {
    fn detector(&self) -> Result<&Detector> {
        self.detector.as_deref().ok_or(AppError::ModelNotLoaded)
    }

    fn commit(&self, draft: RunDraft) -> Result<Arc<DetectionRun>> {
        Ok(self.store.commit(draft, (self.clock)())?.0)
    }

    /// Synchronous viewport run.
    pub fn detect_scene(
        &self,
        viewport: &Viewport,
        threshold: Option<f64>,
    ) -> Result<Arc<DetectionRun>> {
        let det = self.detector()?;
        let post = self.settings.post(threshold)?;
        viewport
            .validate()
            .map_err(|e| AppError::BadRequest(e.to_string()))?;
        let detections = detect_viewport(det, self.tiles.as_ref(), viewport, &post)?;
        self.commit(RunDraft {
            area: AreaSpec::Viewport(*viewport),
            zoom: viewport.zoom,
            threshold: post.score_threshold,
            checkpoint_id: det.checkpoint_id.clone(),
            clipped_out: 0,
            detections,
        })
    }

    /// Synchronous parcel run, clipped to the parcel outline.
    pub fn detect_parcel(
        &self,
        community: &str,
        block: &str,
        parcel: &str,
        threshold: Option<f64>,
        zoom: Option<u8>,
    ) -> Result<Arc<DetectionRun>> {
        let det = self.detector()?;
        let post = self.settings.post(threshold)?;
        let p = self.cadastral.get_parcel(community, block, parcel)?;
        let zoom = zoom.unwrap_or(self.settings.zoom);
        let clipped = detect_polygon(det, self.tiles.as_ref(), &p.polygon, zoom, &post)?;
        self.commit(RunDraft {
            area: AreaSpec::Parcel {
                community: community.into(),
                block: block.into(),
                parcel: parcel.into(),
            },
            zoom,
            threshold: post.score_threshold,
            checkpoint_id: det.checkpoint_id.clone(),
            clipped_out: clipped.dropped,
            detections: clipped.detections,
        })
    }

    /// Validates the request and registers a job without running it.
    pub fn create_community_job(
        &self,
        community: &str,
        threshold: Option<f64>,
    ) -> Result<Arc<Job>> {
        self.detector()?;
        self.settings.post(threshold)?;
        self.cadastral.get_community(community)?;
        Ok(self.jobs.create(community))
    }

    /// Starts a community job on its own thread.
    pub fn start_community(
        self: &Arc<Self>,
        community: &str,
        threshold: Option<f64>,
        zoom: Option<u8>,
    ) -> Result<Arc<Job>> {
        let job = self.create_community_job(community, threshold)?;
        let (app, j) = (self.clone(), job.clone());
        std::thread::Builder::new()
            .name(job.id.clone())
            .spawn(move || app.run_community_job(&j, threshold, zoom))
            .map_err(|e| AppError::BadRequest(format!("cannot start job: {e}")))?;
        Ok(job)
    }

    /// Runs a community job to completion on the calling thread, recording
    /// progress and the terminal event on `job`.
    pub fn run_community_job(&self, job: &Job, threshold: Option<f64>, zoom: Option<u8>) {
        job.set_running();
        match self.community_run(job, threshold, zoom) {
            Ok(run) => job.finish(
                EventKind::Done,
                stamp((self.clock)()),
                Some(run.run_id.clone()),
                None,
            ),
            Err(AppError::Cancelled) => {
                job.finish(EventKind::Cancelled, stamp((self.clock)()), None, None)
            }
            Err(e) => job.finish(
                EventKind::Failed,
                stamp((self.clock)()),
                None,
                Some(e.to_string()),
            ),
        }
    }

    fn community_run(
        &self,
        job: &Job,
        threshold: Option<f64>,
        zoom: Option<u8>,
    ) -> Result<Arc<DetectionRun>> {
        let det = self.detector()?;
        let post = self.settings.post(threshold)?;
        let community = self.cadastral.get_community(&job.community)?;
        let zoom = zoom.unwrap_or(self.settings.zoom);
        let margin = self
            .settings
            .chunk_margin_px
            .unwrap_or(det.tiling.tile_size as f64);
        let plan = plan_chunks(
            &community.polygon,
            zoom,
            self.tiles.tile_size(),
            &det.tiling,
            self.settings.chunk_deg,
            margin,
        )?;
        let cancel = job.cancel_flag();
        let clipped = run_chunks(
            det,
            self.tiles.as_ref(),
            &community.polygon,
            &plan,
            &post,
            self.settings.chunk_workers,
            &cancel,
            &mut |p| job.progress(p.index, p.total, p.cumulative_count, stamp((self.clock)())),
        )?;
        if cancel.load(std::sync::atomic::Ordering::SeqCst) {
            return Err(AppError::Cancelled);
        }
        self.commit(RunDraft {
            area: AreaSpec::Community {
                community: job.community.clone(),
            },
            zoom,
            threshold: post.score_threshold,
            checkpoint_id: det.checkpoint_id.clone(),
            clipped_out: clipped.dropped,
            detections: clipped.detections,
        })
    }
}
