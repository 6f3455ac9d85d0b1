//! Annotations, image tiling, augmentation and synthetic scenes.

mod annotations;
mod augment;
mod dataset;
mod raster;
mod split;
mod synth;
mod tiling;

pub use annotations::{
    load_annotations, parse_annotations, write_annotations, AnnotationRecord, AnnotationSet,
    ANNOTATION_COLUMNS,
};
pub use augment::{augment, box_blur, color_jitter, hflip, rotate90, vflip, AugmentationConfig};
pub use dataset::{
    load_dataset, scene_seed, synth_samples, write_synth_dataset, ManifestEntry, Sample,
    SynthManifest, ANNOTATION_FILE, MANIFEST_FILE,
};
pub use raster::Raster;
pub use split::{split_dataset, DatasetSplit};
pub use synth::{render_scene, synth_scene, CrownSpec, Scene, SyntheticSceneConfig};
pub use tiling::{clip_box_to_window, tile_image, tile_offsets, Tile, TileSpec};
