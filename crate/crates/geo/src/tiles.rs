//! Imagery tile sources addressed by `z/x/y` and window stitching.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use canopy_core::datapipe::Raster;

use crate::error::{GeoError, Result};
use crate::mercator::{PixelRect, TileAddress};

/// Slippy-map tile side used by web basemaps.
pub const TILE_PX: usize = 256;

pub trait TileSource: Send + Sync {
    /// Side of each square tile in pixels.
    fn tile_size(&self) -> usize;

    fn fetch(&self, addr: TileAddress) -> Result<Raster>;
}

/// Reads `{root}/{z}/{x}/{y}.png`.
#[derive(Clone, Debug)]
pub struct DirTileSource {
    root: PathBuf,
    tile_px: usize,
}

impl DirTileSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirTileSource {
            root: root.into(),
            tile_px: TILE_PX,
        }
    }

    pub fn path(&self, a: TileAddress) -> PathBuf {
        tile_path(&self.root, a)
    }
}

fn tile_path(root: &Path, a: TileAddress) -> PathBuf {
    root.join(a.z.to_string())
        .join(a.x.to_string())
        .join(format!("{}.png", a.y))
}

fn check_size(addr: TileAddress, r: Raster, px: usize) -> Result<Raster> {
    if r.width() != px || r.height() != px {
        return Err(GeoError::Tile {
            addr,
            reason: format!(
                "expected {px}×{px} pixels, got {}×{}",
                r.width(),
                r.height()
            ),
        });
    }
    Ok(r)
}

impl TileSource for DirTileSource {
    fn tile_size(&self) -> usize {
        self.tile_px
    }

    fn fetch(&self, addr: TileAddress) -> Result<Raster> {
        let path = self.path(addr);
        let bytes = std::fs::read(&path).map_err(|e| GeoError::Tile {
            addr,
            reason: format!("{}: {e}", path.display()),
        })?;
        let r = Raster::decode_png(&bytes).map_err(|e| GeoError::Tile {
            addr,
            reason: e.to_string(),
        })?;
        check_size(addr, r, self.tile_px)
    }
}

/// Fetches PNG tiles from a URL template containing `{z}`, `{x}` and `{y}`.
pub struct HttpTileSource {
    template: String,
    agent: ureq::Agent,
    tile_px: usize,
}

impl HttpTileSource {
    pub fn new(template: &str) -> Result<Self> {
        if !["{z}", "{x}", "{y}"].iter().all(|k| template.contains(k)) {
            return Err(GeoError::Document(format!(
                "tile URL template `{template}` needs {{z}}, {{x}} and {{y}}"
            )));
        }
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build();
        Ok(HttpTileSource {
            template: template.to_string(),
            agent: config.into(),
            tile_px: TILE_PX,
        })
    }

    pub fn url(&self, a: TileAddress) -> String {
        self.template
            .replace("{z}", &a.z.to_string())
            .replace("{x}", &a.x.to_string())
            .replace("{y}", &a.y.to_string())
    }
}

impl TileSource for HttpTileSource {
    fn tile_size(&self) -> usize {
        self.tile_px
    }

    fn fetch(&self, addr: TileAddress) -> Result<Raster> {
        let fail = |reason: String| GeoError::Tile { addr, reason };
        let mut resp = self
            .agent
            .get(&self.url(addr))
            .call()
            .map_err(|e| fail(e.to_string()))?;
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(16 << 20)
            .read_to_vec()
            .map_err(|e| fail(e.to_string()))?;
        let r = Raster::decode_png(&bytes).map_err(|e| fail(e.to_string()))?;
        check_size(addr, r, self.tile_px)
    }
}

/// Tiles held in memory; addresses not present fail to fetch.
#[derive(Clone, Debug, Default)]
pub struct MemoryTileSource {
    tiles: BTreeMap<TileAddress, Raster>,
    tile_px: usize,
}

impl MemoryTileSource {
    pub fn new(tile_px: usize) -> Self {
        MemoryTileSource {
            tiles: BTreeMap::new(),
            tile_px,
        }
    }

    /// Cuts `image` into tiles; `rect` must be tile-aligned and match the
    /// image size.
    pub fn from_raster(rect: PixelRect, image: &Raster, tile_px: usize) -> Result<Self> {
        let t = tile_px as u64;
        if rect.x % t != 0
            || rect.y % t != 0
            || rect.width % tile_px != 0
            || rect.height % tile_px != 0
        {
            return Err(GeoError::InvalidViewport(format!(
                "{rect:?} is not aligned to {tile_px}-pixel tiles"
            )));
        }
        if (image.width(), image.height()) != (rect.width, rect.height) {
            return Err(GeoError::InvalidViewport(format!(
                "image is {}×{} but the window is {}×{}",
                image.width(),
                image.height(),
                rect.width,
                rect.height
            )));
        }
        let mut src = MemoryTileSource::new(tile_px);
        for a in rect.tiles(tile_px) {
            let x = (a.x as u64 * t - rect.x) as usize;
            let y = (a.y as u64 * t - rect.y) as usize;
            src.insert(a, image.crop_padded(x, y, tile_px, tile_px));
        }
        Ok(src)
    }

    pub fn insert(&mut self, addr: TileAddress, tile: Raster) {
        self.tiles.insert(addr, tile);
    }

    pub fn remove(&mut self, addr: TileAddress) -> Option<Raster> {
        self.tiles.remove(&addr)
    }

    pub fn addresses(&self) -> impl Iterator<Item = &TileAddress> {
        self.tiles.keys()
    }

    /// Writes every tile as `{root}/{z}/{x}/{y}.png`.
    pub fn write_dir(&self, root: &Path) -> Result<()> {
        for (&a, tile) in &self.tiles {
            let path = tile_path(root, a);
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| GeoError::io(dir, e))?;
            }
            tile.save_png(&path)?;
        }
        Ok(())
    }
}

impl TileSource for MemoryTileSource {
    fn tile_size(&self) -> usize {
        self.tile_px
    }

    fn fetch(&self, addr: TileAddress) -> Result<Raster> {
        self.tiles.get(&addr).cloned().ok_or(GeoError::Tile {
            addr,
            reason: "not in tile set".into(),
        })
    }
}

/// Stitches the tiles under `rect` into one raster of the window's size.
/// Every tile is attempted; failures are reported together.
pub fn fetch_rect(source: &dyn TileSource, rect: &PixelRect) -> Result<Raster> {
    let t = source.tile_size();
    let mut out = Raster::new(rect.width, rect.height);
    let mut missing = Vec::new();
    for a in rect.tiles(t) {
        match source.fetch(a) {
            Ok(tile) => {
                // Tile origin relative to the window; may be negative.
                let ox = a.x as i64 * t as i64 - rect.x as i64;
                let oy = a.y as i64 * t as i64 - rect.y as i64;
                let (sx, sy) = ((-ox).max(0) as usize, (-oy).max(0) as usize);
                let part = tile.crop_padded(sx, sy, t - sx, t - sy);
                out.paste(&part, ox.max(0) as usize, oy.max(0) as usize);
            }
            Err(_) => missing.push(a),
        }
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(GeoError::MissingTiles { missing })
    }
}
