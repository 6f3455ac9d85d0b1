//! Cadastral hierarchy (community → block → parcel) behind a provider
//! interface, with a GeoJSON fixture backend and an HTTP client backend.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{GeoError, Result};
use crate::polygon::GeoPolygon;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Community {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub polygon: GeoPolygon,
}

/// Registered block; a block without its own feature has no polygon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub community: String,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygon: Option<GeoPolygon>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parcel {
    pub community: String,
    pub block: String,
    pub parcel: String,
    pub polygon: GeoPolygon,
}

/// Read access to the cadastral hierarchy. Implementations are shared
/// across request handlers.
pub trait CadastralProvider: Send + Sync {
    fn list_communities(&self) -> Result<Vec<String>>;
    fn get_community(&self, id: &str) -> Result<Community>;
    fn list_blocks(&self, community: &str) -> Result<Vec<String>>;
    fn get_block(&self, community: &str, block: &str) -> Result<Block>;
    fn list_parcels(&self, community: &str, block: &str) -> Result<Vec<String>>;
    fn get_parcel(&self, community: &str, block: &str, parcel: &str) -> Result<Parcel>;
}

fn not_found(kind: &'static str, id: String) -> GeoError {
    GeoError::NotFound { kind, id }
}

/// Provider over one GeoJSON `FeatureCollection`. Each feature carries a
/// `Polygon` geometry and string properties `level` (`community`, `block`
/// or `parcel`), `community`, and for lower levels `block` and `parcel`.
/// The whole document is parsed and validated up front.
#[derive(Clone, Debug, Default)]
pub struct FixtureProvider {
    communities: BTreeMap<String, Community>,
    blocks: BTreeMap<(String, String), Block>,
    parcels: BTreeMap<(String, String, String), Parcel>,
}

impl FixtureProvider {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GeoError::io(path, e))?;
        Self::from_geojson(&serde_json::from_str(&text)?)
    }

    pub fn from_geojson(doc: &Value) -> Result<Self> {
        if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
            return Err(GeoError::Document(
                "expected a GeoJSON FeatureCollection".into(),
            ));
        }
        let features = doc
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| GeoError::Document("FeatureCollection without `features`".into()))?;
        let mut p = FixtureProvider::default();
        for (i, f) in features.iter().enumerate() {
            p.insert_feature(i, f)?;
        }
        for (c, b) in p
            .parcels
            .keys()
            .map(|(c, b, _)| (c.clone(), b.clone()))
            .collect::<Vec<_>>()
        {
            if !p.communities.contains_key(&c) {
                return Err(GeoError::Document(format!(
                    "parcel block `{c}/{b}` references unknown community `{c}`"
                )));
            }
            p.blocks.entry((c.clone(), b.clone())).or_insert(Block {
                community: c,
                id: b,
                polygon: None,
            });
        }
        Ok(p)
    }

    fn insert_feature(&mut self, index: usize, f: &Value) -> Result<()> {
        let props = f.get("properties").cloned().unwrap_or(Value::Null);
        let prop = |k: &str| {
            props.get(k).and_then(|v| {
                v.as_str()
                    .map(str::to_string)
                    .or_else(|| v.as_i64().map(|n| n.to_string()))
            })
        };
        let (community, block, parcel) = (prop("community"), prop("block"), prop("parcel"));
        let fid = f
            .get("id")
            .and_then(|v| {
                v.as_str()
                    .map(str::to_string)
                    .or_else(|| v.as_i64().map(|n| n.to_string()))
            })
            .unwrap_or_else(|| {
                let parts: Vec<_> = [&community, &block, &parcel]
                    .into_iter()
                    .flatten()
                    .cloned()
                    .collect();
                if parts.is_empty() {
                    format!("#{index}")
                } else {
                    parts.join("/")
                }
            });
        let missing = |k: &str| GeoError::Document(format!("feature `{fid}` lacks property `{k}`"));
        let level = prop("level").ok_or_else(|| missing("level"))?;
        let geometry = f
            .get("geometry")
            .ok_or_else(|| GeoError::invalid_polygon(Some(&fid), "missing geometry"))?;
        let polygon = GeoPolygon::from_geometry(geometry, Some(&fid))?;
        let community = community.ok_or_else(|| missing("community"))?;
        let duplicate = || GeoError::Document(format!("duplicate {level} feature `{fid}`"));
        match level.as_str() {
            "community" => {
                let c = Community {
                    id: community.clone(),
                    name: prop("name"),
                    polygon,
                };
                if self.communities.insert(community, c).is_some() {
                    return Err(duplicate());
                }
            }
            "block" => {
                let block = block.ok_or_else(|| missing("block"))?;
                let b = Block {
                    community: community.clone(),
                    id: block.clone(),
                    polygon: Some(polygon),
                };
                if self.blocks.insert((community, block), b).is_some() {
                    return Err(duplicate());
                }
            }
            "parcel" => {
                let block = block.ok_or_else(|| missing("block"))?;
                let parcel = parcel.ok_or_else(|| missing("parcel"))?;
                let key = (community.clone(), block.clone(), parcel.clone());
                let p = Parcel {
                    community,
                    block,
                    parcel,
                    polygon,
                };
                if self.parcels.insert(key, p).is_some() {
                    return Err(duplicate());
                }
            }
            other => {
                return Err(GeoError::Document(format!(
                    "feature `{fid}` has unknown level `{other}`"
                )))
            }
        }
        Ok(())
    }

    fn require_community(&self, c: &str) -> Result<()> {
        if self.communities.contains_key(c) {
            Ok(())
        } else {
            Err(not_found("community", c.to_string()))
        }
    }
}

impl CadastralProvider for FixtureProvider {
    fn list_communities(&self) -> Result<Vec<String>> {
        Ok(self.communities.keys().cloned().collect())
    }

    fn get_community(&self, id: &str) -> Result<Community> {
        self.communities
            .get(id)
            .cloned()
            .ok_or_else(|| not_found("community", id.to_string()))
    }

    fn list_blocks(&self, community: &str) -> Result<Vec<String>> {
        self.require_community(community)?;
        Ok(self
            .blocks
            .keys()
            .filter(|(c, _)| c == community)
            .map(|(_, b)| b.clone())
            .collect())
    }

    fn get_block(&self, community: &str, block: &str) -> Result<Block> {
        self.blocks
            .get(&(community.to_string(), block.to_string()))
            .cloned()
            .ok_or_else(|| not_found("block", format!("{community}/{block}")))
    }

    fn list_parcels(&self, community: &str, block: &str) -> Result<Vec<String>> {
        self.get_block(community, block)?;
        Ok(self
            .parcels
            .keys()
            .filter(|(c, b, _)| c == community && b == block)
            .map(|(_, _, p)| p.clone())
            .collect())
    }

    fn get_parcel(&self, community: &str, block: &str, parcel: &str) -> Result<Parcel> {
        self.parcels
            .get(&(community.to_string(), block.to_string(), parcel.to_string()))
            .cloned()
            .ok_or_else(|| not_found("parcel", format!("{community}/{block}/{parcel}")))
    }
}

/// Builds a GeoJSON feature in the layout read by [`FixtureProvider`].
pub fn cadastral_feature(
    level: &str,
    community: &str,
    block: Option<&str>,
    parcel: Option<&str>,
    polygon: &GeoPolygon,
) -> Value {
    let mut props = json!({"level": level, "community": community});
    if let Some(b) = block {
        props["block"] = json!(b);
    }
    if let Some(p) = parcel {
        props["parcel"] = json!(p);
    }
    json!({"type": "Feature", "properties": props, "geometry": polygon.to_geometry()})
}

pub fn feature_collection(features: Vec<Value>) -> Value {
    json!({"type": "FeatureCollection", "features": features})
}

/// Client for a cadastral HTTP service exposing
///
/// ```text
/// GET {base}/communities                                   -> ["id", ...]
/// GET {base}/communities/{c}                               -> Feature
/// GET {base}/communities/{c}/blocks                        -> ["id", ...]
/// GET {base}/communities/{c}/blocks/{b}                    -> Feature
/// GET {base}/communities/{c}/blocks/{b}/parcels            -> ["id", ...]
/// GET {base}/communities/{c}/blocks/{b}/parcels/{p}        -> Feature
/// ```
///
/// A 404 maps to not-found. Successful responses are cached per URL.
pub struct RemoteProvider {
    base: String,
    agent: ureq::Agent,
    cache: Mutex<HashMap<String, Value>>,
}

impl RemoteProvider {
    pub fn new(base: &str) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build();
        RemoteProvider {
            base: base.trim_end_matches('/').to_string(),
            agent: config.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn get(&self, path: &[&str], kind: &'static str, id: String) -> Result<Value> {
        let url = path.iter().fold(self.base.clone(), |mut u, seg| {
            u.push('/');
            u.push_str(&percent_encode(seg));
            u
        });
        if let Some(v) = self.cache.lock().expect("cache lock").get(&url) {
            return Ok(v.clone());
        }
        let v: Value = match self.agent.get(&url).call() {
            Ok(mut resp) => {
                let text = resp
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| GeoError::Remote(format!("{url}: {e}")))?;
                serde_json::from_str(&text).map_err(|e| GeoError::Remote(format!("{url}: {e}")))?
            }
            Err(ureq::Error::StatusCode(404)) => return Err(not_found(kind, id)),
            Err(e) => return Err(GeoError::Remote(format!("{url}: {e}"))),
        };
        self.cache
            .lock()
            .expect("cache lock")
            .insert(url, v.clone());
        Ok(v)
    }

    fn ids(v: Value) -> Result<Vec<String>> {
        serde_json::from_value(v).map_err(|e| GeoError::Remote(format!("expected an id list: {e}")))
    }

    fn polygon(v: &Value, fid: &str) -> Result<GeoPolygon> {
        let geometry = v.get("geometry").unwrap_or(v);
        GeoPolygon::from_geometry(geometry, Some(fid))
    }
}

impl CadastralProvider for RemoteProvider {
    fn list_communities(&self) -> Result<Vec<String>> {
        Self::ids(self.get(&["communities"], "community list", String::new())?)
    }

    fn get_community(&self, id: &str) -> Result<Community> {
        let v = self.get(&["communities", id], "community", id.to_string())?;
        let name = v
            .pointer("/properties/name")
            .and_then(Value::as_str)
            .map(str::to_string);
        Ok(Community {
            id: id.to_string(),
            name,
            polygon: Self::polygon(&v, id)?,
        })
    }

    fn list_blocks(&self, community: &str) -> Result<Vec<String>> {
        Self::ids(self.get(
            &["communities", community, "blocks"],
            "community",
            community.to_string(),
        )?)
    }

    fn get_block(&self, community: &str, block: &str) -> Result<Block> {
        let fid = format!("{community}/{block}");
        let v = self.get(
            &["communities", community, "blocks", block],
            "block",
            fid.clone(),
        )?;
        let polygon = match v.get("geometry") {
            Some(Value::Null) | None => None,
            Some(g) => Some(GeoPolygon::from_geometry(g, Some(&fid))?),
        };
        Ok(Block {
            community: community.to_string(),
            id: block.to_string(),
            polygon,
        })
    }

    fn list_parcels(&self, community: &str, block: &str) -> Result<Vec<String>> {
        Self::ids(self.get(
            &["communities", community, "blocks", block, "parcels"],
            "block",
            format!("{community}/{block}"),
        )?)
    }

    fn get_parcel(&self, community: &str, block: &str, parcel: &str) -> Result<Parcel> {
        let fid = format!("{community}/{block}/{parcel}");
        let v = self.get(
            &["communities", community, "blocks", block, "parcels", parcel],
            "parcel",
            fid.clone(),
        )?;
        Ok(Parcel {
            community: community.to_string(),
            block: block.to_string(),
            parcel: parcel.to_string(),
            polygon: Self::polygon(&v, &fid)?,
        })
    }
}

fn percent_encode(seg: &str) -> String {
    let mut out = String::with_capacity(seg.len());
    for b in seg.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use canopy_core::BBox;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> GeoPolygon {
        GeoPolygon::rectangle(&BBox::new(x0, y0, x1, y1).unwrap())
    }

    pub(crate) fn fixture_doc() -> Value {
        feature_collection(vec![
            cadastral_feature(
                "community",
                "beit-ula",
                None,
                None,
                &rect(35.0, 31.0, 35.1, 31.1),
            ),
            cadastral_feature(
                "community",
                "tarqumiya",
                None,
                None,
                &rect(35.1, 31.0, 35.2, 31.1),
            ),
            cadastral_feature(
                "block",
                "beit-ula",
                Some("3"),
                None,
                &rect(35.0, 31.0, 35.05, 31.05),
            ),
            cadastral_feature(
                "parcel",
                "beit-ula",
                Some("3"),
                Some("17"),
                &rect(35.0, 31.0, 35.01, 31.01),
            ),
            cadastral_feature(
                "parcel",
                "beit-ula",
                Some("3"),
                Some("18"),
                &rect(35.01, 31.0, 35.02, 31.01),
            ),
            cadastral_feature(
                "parcel",
                "tarqumiya",
                Some("1"),
                Some("2"),
                &rect(35.1, 31.0, 35.11, 31.01),
            ),
        ])
    }

    #[test]
    fn fixture_hierarchy() {
        let p = FixtureProvider::from_geojson(&fixture_doc()).unwrap();
        assert_eq!(p.list_communities().unwrap(), ["beit-ula", "tarqumiya"]);
        assert_eq!(p.list_blocks("beit-ula").unwrap(), ["3"]);
        assert!(p.get_block("beit-ula", "3").unwrap().polygon.is_some());
        assert!(p.get_block("tarqumiya", "1").unwrap().polygon.is_none());
        assert_eq!(p.list_parcels("beit-ula", "3").unwrap(), ["17", "18"]);
        let parcel = p.get_parcel("beit-ula", "3", "17").unwrap();
        assert_eq!(
            parcel.polygon.exterior.first(),
            parcel.polygon.exterior.last()
        );
        parcel.polygon.validate(None).unwrap();
        assert!(matches!(
            p.get_parcel("beit-ula", "3", "99"),
            Err(GeoError::NotFound { kind: "parcel", .. })
        ));
        assert!(matches!(
            p.list_blocks("nowhere"),
            Err(GeoError::NotFound { .. })
        ));
    }

    #[test]
    fn malformed_feature_reports_id() {
        let mut doc = fixture_doc();
        doc["features"][3]["geometry"]["coordinates"][0]
            .as_array_mut()
            .unwrap()
            .pop();
        let e = FixtureProvider::from_geojson(&doc).unwrap_err();
        assert!(matches!(e, GeoError::InvalidPolygon { .. }));
        assert!(e.to_string().contains("beit-ula/3/17"), "{e}");
    }

    #[test]
    fn encodes_path_segments() {
        assert_eq!(percent_encode("a b/ç"), "a%20b%2F%C3%A7");
    }
}
