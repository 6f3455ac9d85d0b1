use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use canopy_app::config::CanopyConfig;
use canopy_app::jobs::EventKind;
use canopy_app::pipeline::Detector;
use canopy_app::{http, world, App, DetectionRun, Store};
use canopy_core::checkpoint::Checkpoint;
use canopy_core::datapipe::{
    load_annotations, load_dataset, split_dataset, tile_image, write_annotations,
    write_synth_dataset, AnnotationRecord, Raster, ANNOTATION_FILE,
};
use canopy_core::inference::evaluate_model;
use canopy_core::model::Model;
use canopy_core::postprocess::PostprocessConfig;
use canopy_core::trainer::{fit, FitOptions};
use canopy_geo::Viewport;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

/// Tree crown detection: training, evaluation and geospatial detection.
///
/// Every command prints one JSON summary line on stdout; progress goes to
/// stderr.
#[derive(Parser)]
#[command(name = "canopy", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Model checkpoint (overrides `model.checkpoint`).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Tile directory laid out as z/x/y.png (overrides `tiles`).
    #[arg(long, global = true)]
    tiles: Option<PathBuf>,
    /// Tile URL template with {z}, {x} and {y} (overrides `tiles`).
    #[arg(long, global = true)]
    tiles_url: Option<String>,
    /// Cadastral GeoJSON document (overrides `cadastral`).
    #[arg(long, global = true)]
    cadastral: Option<PathBuf>,
    /// Cadastral service base URL (overrides `cadastral`).
    #[arg(long, global = true)]
    cadastral_url: Option<String>,
    /// Run store directory (overrides `store.dir`).
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Inference window side in pixels (overrides `tiling.tile_size`).
    #[arg(long, global = true)]
    tile_size: Option<usize>,
    /// Inference window overlap in pixels (overrides `tiling.overlap`).
    #[arg(long, global = true)]
    overlap: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic training data or an offline demo world.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Where the best checkpoint is written.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch metrics table.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Disable augmentation.
        #[arg(long)]
        no_augment: bool,
        /// Share of images used for training; the rest validate.
        #[arg(long, default_value_t = 0.85)]
        train_fraction: f64,
    },
    /// Evaluate a checkpoint on a dataset directory.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Cut a large annotated image into training tiles.
    Tile {
        #[arg(long)]
        image: PathBuf,
        /// Annotation table; rows whose image_path matches the image's file
        /// name are used.
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect trees over a scene, parcel or community.
    #[command(subcommand)]
    Detect(DetectCommand),
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Synthetic orchard scenes with annotations and a manifest.
    Dataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Slippy tiles and a cadastral document for offline serving.
    World {
        #[arg(long)]
        out: PathBuf,
        /// Tiles per side.
        #[arg(long, default_value_t = 4)]
        size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum DetectCommand {
    Scene {
        /// min_lon,min_lat,max_lon,max_lat
        #[arg(
            long,
            value_delimiter = ',',
            required = true,
            allow_negative_numbers = true
        )]
        bbox: Vec<f64>,
        #[arg(long)]
        zoom: Option<u8>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    Parcel {
        #[arg(long)]
        community: String,
        #[arg(long)]
        block: String,
        #[arg(long)]
        parcel: String,
        #[arg(long)]
        zoom: Option<u8>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    Community {
        #[arg(long)]
        community: String,
        #[arg(long)]
        zoom: Option<u8>,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        println!("{}", json!({"ok": false, "error": format!("{e:#}")}));
        std::process::exit(1);
    }
}

fn load_config(g: &Global) -> anyhow::Result<CanopyConfig> {
    let mut cfg = match &g.config {
        Some(p) => CanopyConfig::load(p)?,
        None => CanopyConfig::default(),
    };
    if let Some(p) = &g.checkpoint {
        cfg.model.checkpoint = Some(p.clone());
    }
    if g.tiles.is_some() || g.tiles_url.is_some() {
        cfg.tiles.path = g.tiles.clone();
        cfg.tiles.url = g.tiles_url.clone();
    }
    if g.cadastral.is_some() || g.cadastral_url.is_some() {
        cfg.cadastral.path = g.cadastral.clone();
        cfg.cadastral.url = g.cadastral_url.clone();
    }
    if let Some(p) = &g.store {
        cfg.store.dir = p.clone();
    }
    if let Some(t) = g.tile_size {
        cfg.tiling.tile_size = t;
    }
    if let Some(o) = g.overlap {
        cfg.tiling.overlap = o;
    }
    Ok(cfg)
}

fn emit(v: serde_json::Value) {
    println!("{v}");
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Synth(SynthCommand::Dataset { out, count, seed }) => {
            let m = write_synth_dataset(&out, &cfg.synth, count, seed)?;
            let boxes: usize = m.images.iter().map(|e| e.n_boxes).sum();
            emit(
                json!({"ok": true, "command": "synth dataset", "out": out, "images": m.images.len(), "boxes": boxes}),
            );
        }
        Command::Synth(SynthCommand::World { out, size, seed }) => {
            let s = world::write_demo_world(&out, size, seed)?;
            emit(json!({"ok": true, "command": "synth world", "out": out, "world": s}));
        }
        Command::Train {
            data,
            out,
            metrics,
            epochs,
            lr,
            batch_size,
            patience,
            seed,
            no_augment,
            train_fraction,
        } => train(
            &cfg,
            &data,
            &out,
            metrics,
            epochs,
            lr,
            batch_size,
            patience,
            seed,
            no_augment,
            train_fraction,
        )?,
        Command::Eval { data, threshold } => {
            let path = cfg
                .model
                .checkpoint
                .as_ref()
                .context("no checkpoint configured")?;
            let model = Checkpoint::load(path)?.model;
            let (samples, dropped) = load_dataset(&data)?;
            let post = PostprocessConfig {
                score_threshold: threshold.unwrap_or(cfg.detect.threshold),
                iou_threshold: cfg.detect.iou_threshold,
                pre_nms_top_k: cfg.detect.pre_nms_top_k,
            };
            post.validate()?;
            let report = evaluate_model(&model, &samples, &post, cfg.train.batch_size)?;
            emit(
                json!({"ok": true, "command": "eval", "dropped_boxes": dropped, "report": report}),
            );
        }
        Command::Tile {
            image,
            annotations,
            out,
        } => {
            let raster = Raster::load_png(&image)?;
            let name = image
                .file_name()
                .and_then(|n| n.to_str())
                .context("image path has no file name")?;
            let set = load_annotations(&annotations)?;
            let boxes = set.by_image().remove(name).unwrap_or_default();
            let tiles = tile_image(&raster, &boxes, &cfg.tiling)?;
            std::fs::create_dir_all(&out)?;
            let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("tile");
            let mut records = Vec::new();
            for t in &tiles {
                let file = format!("{stem}_{}_{}.png", t.origin.0, t.origin.1);
                t.image.save_png(&out.join(&file))?;
                records.extend(t.boxes.iter().map(|&bbox| AnnotationRecord {
                    image_path: file.clone(),
                    bbox,
                    source: name.to_string(),
                }));
            }
            write_annotations(&out.join(ANNOTATION_FILE), &records)?;
            emit(
                json!({"ok": true, "command": "tile", "tiles": tiles.len(), "boxes_in": boxes.len(), "boxes_out": records.len()}),
            );
        }
        Command::Detect(cmd) => detect(&cfg, cmd)?,
        Command::Serve { bind } => {
            let app = Arc::new(build_app(&cfg, false)?);
            let bind = bind.unwrap_or(cfg.server.bind.clone());
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&bind).await.with_context(|| format!("binding {bind}"))?;
                emit(json!({"ok": true, "command": "serve", "listening": listener.local_addr()?.to_string(), "model_loaded": app.detector.is_some()}));
                std::io::stdout().flush()?;
                http::serve(app, listener).await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    cfg: &CanopyConfig,
    data: &Path,
    out: &Path,
    metrics: Option<PathBuf>,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    patience: Option<usize>,
    seed: Option<u64>,
    no_augment: bool,
    train_fraction: f64,
) -> anyhow::Result<()> {
    let mut tc = cfg.train.clone();
    if let Some(e) = epochs {
        tc.schedule.total_epochs = e;
    }
    if let Some(lr) = lr {
        tc.optimizer.lr0 = lr;
    }
    if let Some(b) = batch_size {
        tc.batch_size = b;
    }
    if let Some(p) = patience {
        tc.patience = p;
    }
    if let Some(s) = seed {
        tc.seed = s;
        tc.augmentation.seed = s;
    }
    if no_augment {
        tc.augmentation = canopy_core::datapipe::AugmentationConfig::none();
    }
    let (samples, dropped) = load_dataset(data)?;
    let split = split_dataset(&samples, train_fraction, tc.seed)?;
    if let Some(w) = &split.warning {
        eprintln!("warning: {w}");
    }
    if split.train.is_empty() || split.val.is_empty() {
        bail!(
            "need at least one training and one validation image, got {} and {}",
            split.train.len(),
            split.val.len()
        );
    }
    let mut model = Model::new(cfg.model.config.clone(), tc.seed)?;
    let opts = FitOptions {
        checkpoint: Some(out.to_path_buf()),
        metrics_log: metrics,
    };
    let report = fit(&mut model, &split.train, &split.val, &tc, &opts, &mut |e| {
        eprintln!(
            "epoch {:>3} lr {:.2e} focal {:.4} giou {:.4} bce {:.4} val mAP@.5 {:.3}",
            e.epoch, e.lr, e.focal, e.giou, e.bce, e.val_map50
        );
    })?;
    emit(json!({
        "ok": true,
        "command": "train",
        "checkpoint": out,
        "train_images": split.train.len(),
        "val_images": split.val.len(),
        "dropped_boxes": dropped,
        "epochs_run": report.epochs_run,
        "best_epoch": report.best_epoch,
        "best_val_map50": report.best_map50,
        "stopped_early": report.stopped_early,
    }));
    Ok(())
}

fn build_app(cfg: &CanopyConfig, require_model: bool) -> anyhow::Result<App> {
    let detector = match &cfg.model.checkpoint {
        Some(p) if p.exists() => Some(Arc::new(Detector::load(p, cfg.tiling.clone())?)),
        Some(p) if require_model => bail!("checkpoint {} does not exist", p.display()),
        None if require_model => bail!("no checkpoint configured"),
        _ => None,
    };
    Ok(App {
        detector,
        tiles: cfg.tile_source()?,
        cadastral: cfg.cadastral_provider()?,
        store: Arc::new(Store::open(&cfg.store.dir, cfg.detect.match_radius_m)?),
        jobs: Default::default(),
        settings: cfg.detect.clone(),
        clock: canopy_app::service::system_clock(),
    })
}

fn run_summary(run: &DetectionRun) -> serde_json::Value {
    json!({
        "run_id": run.run_id,
        "area": run.area.to_string(),
        "tree_count": run.tree_count,
        "clipped_out": run.clipped_out,
        "threshold": run.threshold,
        "checkpoint_id": run.checkpoint_id,
        "created_at": run.created_at,
    })
}

fn detect(cfg: &CanopyConfig, cmd: DetectCommand) -> anyhow::Result<()> {
    let app = Arc::new(build_app(cfg, true)?);
    let run = match cmd {
        DetectCommand::Scene {
            bbox,
            zoom,
            threshold,
        } => {
            if bbox.len() != 4 {
                bail!(
                    "--bbox needs four comma-separated numbers, got {}",
                    bbox.len()
                );
            }
            let vp = Viewport {
                min_lon: bbox[0],
                min_lat: bbox[1],
                max_lon: bbox[2],
                max_lat: bbox[3],
                zoom: zoom.unwrap_or(cfg.detect.zoom),
            };
            app.detect_scene(&vp, threshold)?
        }
        DetectCommand::Parcel {
            community,
            block,
            parcel,
            zoom,
            threshold,
        } => app.detect_parcel(&community, &block, &parcel, threshold, zoom)?,
        DetectCommand::Community {
            community,
            zoom,
            threshold,
        } => {
            let job = app.start_community(&community, threshold, zoom)?;
            let mut last = 0;
            loop {
                let (events, _) = job.events_after(last);
                for e in &events {
                    last = e.seq;
                    match e.kind {
                        EventKind::Progress => eprintln!(
                            "chunk {}/{}: {} trees so far",
                            e.chunk_index, e.chunk_total, e.cumulative_count
                        ),
                        EventKind::Done => {}
                        EventKind::Failed => {
                            bail!("job failed: {}", e.error.clone().unwrap_or_default())
                        }
                        EventKind::Cancelled => bail!("job cancelled"),
                    }
                }
                if let Some(id) = events.iter().find_map(|e| e.run_id.clone()) {
                    break app.store.run(&id)?;
                }
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    };
    let mut summary = run_summary(&run);
    summary["ok"] = json!(true);
    summary["command"] = json!("detect");
    emit(summary);
    Ok(())
}
