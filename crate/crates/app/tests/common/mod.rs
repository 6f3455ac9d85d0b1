//! Shared fixtures: a small detector trained once per target directory, a
//! synthetic world of tiles and cadastral outlines, and an in-process
//! server with a blocking HTTP client.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock};

use canopy_app::jobs::JobManager;
use canopy_app::pipeline::Detector;
use canopy_app::service::Clock;
use canopy_app::world::demo_world;
use canopy_app::{App, DetectSettings, Store};
use canopy_core::checkpoint::Checkpoint;
use canopy_core::datapipe::{
    render_scene, synth_samples, AugmentationConfig, Raster, Sample, SyntheticSceneConfig, TileSpec,
};
use canopy_core::model::{Model, ModelConfig};
use canopy_core::trainer::{fit, FitOptions, TrainConfig};
use canopy_core::BBox;
use canopy_geo::cadastral::{cadastral_feature, feature_collection};
use canopy_geo::fixture::{ocean_tiles, planting_grid, Orchard, OrchardSpec};
use canopy_geo::{
    FixtureProvider, GeoPoint, MemoryTileSource, PixelRect, TileAddress, TileSource, Viewport,
};
use chrono::{DateTime, TimeZone, Utc};
use serde_json::Value;

/// Score threshold at which the fixture detector is clean on bare ground
/// and water. The toy model leaves a floor of low-confidence boxes on any
/// background, so the deployment default of 0.01 is far too permissive.
pub const FIXTURE_THRESHOLD: f64 = 0.3;

pub const ZOOM: u8 = 18;

pub fn fixture_tiling() -> TileSpec {
    TileSpec {
        tile_size: 128,
        overlap: 32,
        ..Default::default()
    }
}

const SEA: [u8; 3] = [18, 52, 96];

/// 24 synthetic scenes plus bare soil and open water with no crowns.
pub fn fixture_samples() -> Vec<Sample> {
    let cfg = SyntheticSceneConfig::default();
    let mut data = synth_samples(&cfg, 24, 99).unwrap();
    for i in 0..4u64 {
        let scene = render_scene(&cfg, &[], 500 + i).unwrap();
        data.push(Sample {
            id: format!("soil-{i}"),
            image: scene.image,
            boxes: Vec::new(),
        });
    }
    let mut sea = Raster::new(cfg.width, cfg.height);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            sea.set(x, y, SEA);
        }
    }
    for i in 0..2 {
        data.push(Sample {
            id: format!("sea-{i}"),
            image: sea.clone(),
            boxes: Vec::new(),
        });
    }
    data
}

fn train_fixture(path: &Path) {
    let data = fixture_samples();
    let mut model = Model::new(ModelConfig::default(), 5).unwrap();
    let mut cfg = TrainConfig {
        augmentation: AugmentationConfig::none(),
        patience: 1000,
        ..Default::default()
    };
    cfg.schedule.total_epochs = 80;
    fit(
        &mut model,
        &data,
        &data[..4],
        &cfg,
        &FitOptions::default(),
        &mut |_| {},
    )
    .unwrap();
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    Checkpoint::inference(model).save(&tmp).unwrap();
    std::fs::rename(&tmp, path).unwrap();
}

/// Path of the fixture checkpoint, training it on first use. The file is
/// kept under the target directory so later test runs skip training.
pub fn fixture_checkpoint() -> &'static Path {
    static PATH: OnceLock<PathBuf> = OnceLock::new();
    PATH.get_or_init(|| {
        let path = Path::new(env!("CARGO_TARGET_TMPDIR")).join("canopy-fixture-v1.ckpt");
        if Checkpoint::load(&path).is_err() {
            eprintln!("training fixture detector into {}", path.display());
            train_fixture(&path);
        }
        path
    })
}

pub fn fixture_detector() -> Arc<Detector> {
    static DET: OnceLock<Arc<Detector>> = OnceLock::new();
    DET.get_or_init(|| Arc::new(Detector::load(fixture_checkpoint(), fixture_tiling()).unwrap()))
        .clone()
}

/// Fixture areas, each two by two tiles at zoom 18 and well apart.
pub struct World {
    /// 5 × 5 planted crowns.
    pub orchard: Orchard,
    /// Ten crowns inside parcel `kfar/1/7` and five south of it.
    pub parcel_orchard: Orchard,
    /// Parcel outline in `parcel_orchard` area pixels.
    pub parcel_px: BBox,
    /// Community `demo`, split into four chunks by [`world_settings`].
    pub community: Orchard,
    pub ocean: PixelRect,
    pub tiles: MemoryTileSource,
    pub cadastral: Value,
}

fn anchored(lon: f64, crowns: Vec<canopy_core::datapipe::CrownSpec>, seed: u64) -> Orchard {
    Orchard::build(&OrchardSpec {
        anchor: GeoPoint { lon, lat: 31.9 },
        crowns,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn copy_tiles(dst: &mut MemoryTileSource, src: &MemoryTileSource) {
    let addrs: Vec<TileAddress> = src.addresses().copied().collect();
    for a in addrs {
        dst.insert(a, src.fetch(a).unwrap());
    }
}

pub fn world() -> &'static World {
    static WORLD: OnceLock<World> = OnceLock::new();
    WORLD.get_or_init(|| {
        let orchard = anchored(35.21, planting_grid(5, 5, 60.0, 60.0, 90.0, 10.0), 11);
        let mut crowns = planting_grid(2, 5, 80.0, 90.0, 85.0, 10.0);
        crowns.extend(planting_grid(1, 5, 80.0, 400.0, 85.0, 10.0));
        let parcel_orchard = anchored(35.23, crowns, 12);
        let parcel_px = BBox::new(40.0, 50.0, 472.0, 230.0).unwrap();
        let community = demo_world(2, 7).unwrap();
        let ocean_rect = anchored(35.25, Vec::new(), 0).rect;
        let mut tiles = MemoryTileSource::new(canopy_geo::TILE_PX);
        for o in [&orchard, &parcel_orchard, &community.orchard] {
            copy_tiles(&mut tiles, &o.tiles);
        }
        copy_tiles(&mut tiles, &ocean_tiles(ocean_rect).unwrap());
        let mut features = community.cadastral["features"].as_array().unwrap().clone();
        let whole = BBox::new(0.0, 0.0, 512.0, 512.0).unwrap();
        features.push(cadastral_feature(
            "community",
            "kfar",
            None,
            None,
            &parcel_orchard.polygon(&whole),
        ));
        features.push(cadastral_feature(
            "parcel",
            "kfar",
            Some("1"),
            Some("7"),
            &parcel_orchard.polygon(&parcel_px),
        ));
        World {
            orchard,
            parcel_orchard,
            parcel_px,
            community: community.orchard,
            ocean: ocean_rect,
            tiles,
            cadastral: feature_collection(features),
        }
    })
}

pub fn viewport_of(rect: &PixelRect) -> Viewport {
    // Shrink by a hair so the covering window is exactly `rect`.
    let g = rect.to_geo(canopy_geo::TILE_PX);
    let e = 1e-9;
    Viewport {
        min_lon: g.x_min + e,
        min_lat: g.y_min + e,
        max_lon: g.x_max - e,
        max_lat: g.y_max - e,
        zoom: rect.zoom,
    }
}

/// Settings for the fixture world: calibrated threshold, 128-pixel chunk
/// margin and 2 × 2 community chunks.
pub fn world_settings() -> DetectSettings {
    DetectSettings {
        threshold: FIXTURE_THRESHOLD,
        chunk_deg: 0.0012,
        ..Default::default()
    }
}

pub fn at(s: &str) -> DateTime<Utc> {
    DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
}

/// Clock the test moves by hand.
#[derive(Clone)]
pub struct ManualClock(Arc<AtomicI64>);

impl ManualClock {
    pub fn new(t: DateTime<Utc>) -> Self {
        ManualClock(Arc::new(AtomicI64::new(t.timestamp_millis())))
    }

    pub fn set(&self, t: DateTime<Utc>) {
        self.0.store(t.timestamp_millis(), Ordering::SeqCst);
    }

    pub fn clock(&self) -> Clock {
        let t = self.0.clone();
        Arc::new(move || Utc.timestamp_millis_opt(t.load(Ordering::SeqCst)).unwrap())
    }
}

/// Tile source that blocks every fetch until opened.
pub struct GatedTiles {
    inner: Arc<dyn TileSource>,
    open: Mutex<bool>,
    cv: Condvar,
}

impl GatedTiles {
    pub fn new(inner: Arc<dyn TileSource>) -> Self {
        GatedTiles {
            inner,
            open: Mutex::new(false),
            cv: Condvar::new(),
        }
    }

    pub fn open(&self) {
        *self.open.lock().unwrap() = true;
        self.cv.notify_all();
    }
}

impl TileSource for GatedTiles {
    fn tile_size(&self) -> usize {
        self.inner.tile_size()
    }

    fn fetch(&self, addr: TileAddress) -> canopy_geo::Result<Raster> {
        let mut open = self.open.lock().unwrap();
        while !*open {
            open = self.cv.wait(open).unwrap();
        }
        drop(open);
        self.inner.fetch(addr)
    }
}

pub struct Harness {
    pub app: Arc<App>,
    pub base: String,
    pub dir: tempfile::TempDir,
}

pub fn app(
    detector: Option<Arc<Detector>>,
    tiles: Arc<dyn TileSource>,
    store: &Path,
    clock: Clock,
) -> Arc<App> {
    let settings = world_settings();
    Arc::new(App {
        detector,
        tiles,
        cadastral: Arc::new(FixtureProvider::from_geojson(&world().cadastral).unwrap()),
        store: Arc::new(Store::open(store, settings.match_radius_m).unwrap()),
        jobs: JobManager::default(),
        settings,
        clock,
    })
}

/// Serves `app` on an ephemeral port from a background runtime.
pub fn serve(app: Arc<App>) -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            canopy_app::http::serve(app, listener).await.unwrap();
        });
    });
    base
}

/// Server over the fixture world with the fixture detector.
pub fn harness(clock: Clock) -> Harness {
    harness_with(
        Some(fixture_detector()),
        Arc::new(world().tiles.clone()),
        clock,
    )
}

pub fn harness_with(
    detector: Option<Arc<Detector>>,
    tiles: Arc<dyn TileSource>,
    clock: Clock,
) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let app = app(detector, tiles, dir.path(), clock);
    let base = serve(app.clone());
    Harness { app, base, dir }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

pub fn get(base: &str, path: &str) -> (u16, String) {
    let mut r = agent().get(&format!("{base}{path}")).call().unwrap();
    (r.status().as_u16(), r.body_mut().read_to_string().unwrap())
}

pub fn get_with(base: &str, path: &str, header: (&str, &str)) -> (u16, String) {
    let mut r = agent()
        .get(&format!("{base}{path}"))
        .header(header.0, header.1)
        .call()
        .unwrap();
    (r.status().as_u16(), r.body_mut().read_to_string().unwrap())
}

pub fn post(base: &str, path: &str, body: &Value) -> (u16, String) {
    let mut r = agent()
        .post(&format!("{base}{path}"))
        .header("content-type", "application/json")
        .send(body.to_string())
        .unwrap();
    (r.status().as_u16(), r.body_mut().read_to_string().unwrap())
}

pub fn json(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or_else(|e| panic!("not JSON ({e}): {s}"))
}

/// One parsed server-sent event.
#[derive(Clone, Debug, PartialEq)]
pub struct Sse {
    pub id: String,
    pub event: String,
    pub data: Value,
}

pub fn parse_sse(body: &str) -> Vec<Sse> {
    body.split("\n\n")
        .filter_map(|block| {
            let field = |name: &str| {
                block
                    .lines()
                    .find_map(|l| l.strip_prefix(name).map(|v| v.trim_start().to_string()))
            };
            let data = field("data:")?;
            Some(Sse {
                id: field("id:").unwrap_or_default(),
                event: field("event:").unwrap_or_default(),
                data: json(&data),
            })
        })
        .collect()
}

/// Polls a job until it reaches a terminal state.
pub fn wait_job(base: &str, job: &str) -> Value {
    for _ in 0..6000 {
        let (_, body) = get(base, &format!("/jobs/{job}"));
        let status = json(&body);
        if matches!(
            status["state"].as_str(),
            Some("done" | "failed" | "cancelled")
        ) {
            return status;
        }
        std::thread::sleep(std::time::Duration::from_millis(10));
    }
    panic!("job {job} did not finish");
}
