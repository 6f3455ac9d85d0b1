//! TOML configuration shared by the CLI and the server.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use canopy_core::datapipe::{SyntheticSceneConfig, TileSpec};
use canopy_core::model::ModelConfig;
use canopy_core::trainer::TrainConfig;
use canopy_geo::{
    CadastralProvider, DirTileSource, FixtureProvider, HttpTileSource, RemoteProvider, TileSource,
};
use serde::{Deserialize, Serialize};

use crate::service::DetectSettings;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CanopyConfig {
    pub model: ModelSection,
    /// Inference windows; smaller than the training default is fine as long
    /// as it is a multiple of the coarsest stride.
    pub tiling: TileSpec,
    pub tiles: SourceSection,
    pub cadastral: SourceSection,
    pub store: StoreSection,
    pub detect: DetectSettings,
    pub train: TrainConfig,
    pub synth: SyntheticSceneConfig,
    pub server: ServerSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub checkpoint: Option<PathBuf>,
    /// Architecture for new models.
    pub config: ModelConfig,
}

/// Either a local path or a URL.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub path: Option<PathBuf>,
    pub url: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    pub dir: PathBuf,
}

impl Default for StoreSection {
    fn default() -> Self {
        StoreSection {
            dir: "canopy-store".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub bind: String,
}

impl Default for ServerSection {
    fn default() -> Self {
        ServerSection {
            bind: "127.0.0.1:8080".into(),
        }
    }
}

impl CanopyConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: CanopyConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.model.checkpoint.as_mut() {
            fix(p);
        }
        if let Some(p) = self.tiles.path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.cadastral.path.as_mut() {
            fix(p);
        }
        fix(&mut self.store.dir);
    }

    pub fn tile_source(&self) -> anyhow::Result<Arc<dyn TileSource>> {
        match (&self.tiles.path, &self.tiles.url) {
            (Some(p), None) => Ok(Arc::new(DirTileSource::new(p))),
            (None, Some(u)) => Ok(Arc::new(HttpTileSource::new(u)?)),
            _ => bail!("configure exactly one of tiles.path or tiles.url"),
        }
    }

    pub fn cadastral_provider(&self) -> anyhow::Result<Arc<dyn CadastralProvider>> {
        match (&self.cadastral.path, &self.cadastral.url) {
            (Some(p), None) => Ok(Arc::new(FixtureProvider::from_path(p)?)),
            (None, Some(u)) => Ok(Arc::new(RemoteProvider::new(u))),
            _ => bail!("configure exactly one of cadastral.path or cadastral.url"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults_and_rebases_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("canopy.toml");
        std::fs::write(
            &path,
            "[model]\ncheckpoint = \"m.ckpt\"\n[detect]\nzoom = 17\n[tiling]\ntile_size = 256\noverlap = 64\n[train]\nbatch_size = 4\n",
        )
        .unwrap();
        let cfg = CanopyConfig::load(&path).unwrap();
        assert_eq!(cfg.model.checkpoint.unwrap(), dir.path().join("m.ckpt"));
        assert_eq!(cfg.detect.zoom, 17);
        assert_eq!(cfg.detect.match_radius_m, 3.0);
        assert_eq!(cfg.tiling.tile_size, 256);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.train.patience, 10);
        assert_eq!(cfg.store.dir, dir.path().join("canopy-store"));
        std::fs::write(&path, "[detect]\nzom = 3\n").unwrap();
        assert!(CanopyConfig::load(&path).is_err());
    }
}
