//! Geospatial layer: Web-Mercator tile math, polygons and clipping,
//! cadastral providers, imagery tile sources and synthetic orchard
//! fixtures.

pub mod cadastral;
pub mod error;
pub mod fixture;
pub mod mercator;
pub mod polygon;
pub mod tiles;

pub use cadastral::{Block, CadastralProvider, Community, FixtureProvider, Parcel, RemoteProvider};
pub use error::{GeoError, Result};
pub use mercator::{GeoPoint, PixelRect, TileAddress, Viewport};
pub use polygon::{chunk_polygon, clip_detections, point_in_polygon, ClipOutcome, GeoPolygon};
pub use tiles::{fetch_rect, DirTileSource, HttpTileSource, MemoryTileSource, TileSource, TILE_PX};
