//! Planar polygon operations in lon/lat degrees.
//!
//! Parcels and communities span at most a few kilometers, so edges are
//! treated as straight lines in degree space.

use canopy_core::postprocess::Detection;
use canopy_core::BBox;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

use crate::error::{GeoError, Result};
use crate::mercator::GeoPoint;

/// Polygon with one closed exterior ring and optional closed holes.
///
/// Serializes as a GeoJSON `Polygon` geometry; deserialization validates.
#[derive(Clone, Debug, PartialEq)]
pub struct GeoPolygon {
    pub exterior: Vec<GeoPoint>,
    pub holes: Vec<Vec<GeoPoint>>,
}

impl Serialize for GeoPolygon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_geometry().serialize(s)
    }
}

impl<'de> Deserialize<'de> for GeoPolygon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        GeoPolygon::from_geometry(&v, None).map_err(serde::de::Error::custom)
    }
}

impl GeoPolygon {
    /// Builds and validates a polygon; `feature` names the source feature in
    /// error messages.
    pub fn new(
        exterior: Vec<GeoPoint>,
        holes: Vec<Vec<GeoPoint>>,
        feature: Option<&str>,
    ) -> Result<Self> {
        let p = GeoPolygon { exterior, holes };
        p.validate(feature)?;
        Ok(p)
    }

    /// GeoJSON `Polygon` geometry object.
    pub fn to_geometry(&self) -> Value {
        let ring = |r: &[GeoPoint]| r.iter().map(|p| [p.lon, p.lat]).collect::<Vec<_>>();
        let coords: Vec<_> = self.rings().map(ring).collect();
        json!({"type": "Polygon", "coordinates": coords})
    }

    /// Parses and validates a GeoJSON `Polygon` geometry.
    pub fn from_geometry(v: &Value, feature: Option<&str>) -> Result<Self> {
        let bad = |reason: &str| GeoError::invalid_polygon(feature, reason);
        if v.get("type").and_then(Value::as_str) != Some("Polygon") {
            return Err(bad("geometry type must be `Polygon`"));
        }
        let rings = v
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing `coordinates` array"))?;
        let mut parsed = Vec::with_capacity(rings.len());
        for ring in rings {
            let pts = ring.as_array().ok_or_else(|| bad("ring is not an array"))?;
            let ring = pts
                .iter()
                .map(|p| match p.as_array().map(Vec::as_slice) {
                    Some([lon, lat, ..]) => match (lon.as_f64(), lat.as_f64()) {
                        (Some(lon), Some(lat)) => Ok(GeoPoint { lon, lat }),
                        _ => Err(bad("position is not numeric")),
                    },
                    _ => Err(bad("position needs [lon, lat]")),
                })
                .collect::<Result<Vec<_>>>()?;
            parsed.push(ring);
        }
        if parsed.is_empty() {
            return Err(bad("polygon has no rings"));
        }
        let exterior = parsed.remove(0);
        GeoPolygon::new(exterior, parsed, feature)
    }

    /// Axis-aligned rectangle as a polygon (counter-clockwise, closed).
    pub fn rectangle(b: &BBox) -> Self {
        let c = |lon, lat| GeoPoint { lon, lat };
        GeoPolygon {
            exterior: vec![
                c(b.x_min, b.y_min),
                c(b.x_max, b.y_min),
                c(b.x_max, b.y_max),
                c(b.x_min, b.y_max),
                c(b.x_min, b.y_min),
            ],
            holes: Vec::new(),
        }
    }

    /// Checks ring closure, vertex count, finite coordinates, non-zero area
    /// and absence of self-intersections within each ring.
    pub fn validate(&self, feature: Option<&str>) -> Result<()> {
        validate_ring(&self.exterior, "exterior ring", feature)?;
        for (i, h) in self.holes.iter().enumerate() {
            validate_ring(h, &format!("hole {i}"), feature)?;
        }
        Ok(())
    }

    pub fn rings(&self) -> impl Iterator<Item = &[GeoPoint]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }

    /// `[min_lon, min_lat, max_lon, max_lat]` of the exterior ring.
    pub fn bbox(&self) -> BBox {
        let mut b = BBox {
            x_min: f64::INFINITY,
            y_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for p in &self.exterior {
            b.x_min = b.x_min.min(p.lon);
            b.y_min = b.y_min.min(p.lat);
            b.x_max = b.x_max.max(p.lon);
            b.y_max = b.y_max.max(p.lat);
        }
        b
    }

    /// Whether the rectangle shares any point with the polygon's area
    /// (boundary included).
    pub fn intersects_rect(&self, r: &BBox) -> bool {
        let corners = [
            GeoPoint {
                lon: r.x_min,
                lat: r.y_min,
            },
            GeoPoint {
                lon: r.x_max,
                lat: r.y_min,
            },
            GeoPoint {
                lon: r.x_max,
                lat: r.y_max,
            },
            GeoPoint {
                lon: r.x_min,
                lat: r.y_max,
            },
        ];
        if corners.iter().any(|&c| point_in_polygon(c, self)) {
            return true;
        }
        let inside_rect = |p: &GeoPoint| {
            p.lon >= r.x_min && p.lon <= r.x_max && p.lat >= r.y_min && p.lat <= r.y_max
        };
        if self.rings().flatten().any(inside_rect) {
            return true;
        }
        let rect_edges = [
            (corners[0], corners[1]),
            (corners[1], corners[2]),
            (corners[2], corners[3]),
            (corners[3], corners[0]),
        ];
        self.rings().any(|ring| {
            ring.windows(2).any(|e| {
                rect_edges
                    .iter()
                    .any(|&(a, b)| segments_intersect(e[0], e[1], a, b))
            })
        })
    }
}

fn validate_ring(ring: &[GeoPoint], what: &str, feature: Option<&str>) -> Result<()> {
    let err = |reason: String| GeoError::invalid_polygon(feature, format!("{what}: {reason}"));
    if ring.len() < 4 {
        return Err(err(format!(
            "{} positions, need at least 4 (closed triangle)",
            ring.len()
        )));
    }
    if ring
        .iter()
        .any(|p| !p.lon.is_finite() || !p.lat.is_finite())
    {
        return Err(err("non-finite coordinate".into()));
    }
    if ring.first() != ring.last() {
        return Err(err("ring is not closed".into()));
    }
    if signed_area(ring).abs() == 0.0 {
        return Err(err("ring has zero area".into()));
    }
    let n = ring.len() - 1;
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return Err(err(format!("edges {i} and {j} intersect")));
            }
        }
    }
    Ok(())
}

/// Shoelace area; positive for counter-clockwise rings.
pub fn signed_area(ring: &[GeoPoint]) -> f64 {
    ring.windows(2)
        .map(|w| w[0].lon * w[1].lat - w[1].lon * w[0].lat)
        .sum::<f64>()
        / 2.0
}

fn cross(o: GeoPoint, a: GeoPoint, b: GeoPoint) -> f64 {
    (a.lon - o.lon) * (b.lat - o.lat) - (a.lat - o.lat) * (b.lon - o.lon)
}

fn on_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> bool {
    let scale = (b.lon - a.lon).abs().max((b.lat - a.lat).abs()).max(1e-300);
    cross(a, b, p).abs() <= 1e-12 * scale * scale
        && p.lon >= a.lon.min(b.lon)
        && p.lon <= a.lon.max(b.lon)
        && p.lat >= a.lat.min(b.lat)
        && p.lat <= a.lat.max(b.lat)
}

/// Closed-segment intersection test (touching counts).
pub fn segments_intersect(a: GeoPoint, b: GeoPoint, c: GeoPoint, d: GeoPoint) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

/// Even-odd ray casting toward +lon; points on any ring boundary count as
/// inside.
fn ring_crossings(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    let mut inside = false;
    for e in ring.windows(2) {
        let (a, b) = (e[0], e[1]);
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
            if p.lon < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Point-in-polygon with holes excluded; boundary points are inside.
pub fn point_in_polygon(p: GeoPoint, poly: &GeoPolygon) -> bool {
    if poly
        .rings()
        .any(|r| r.windows(2).any(|e| on_segment(p, e[0], e[1])))
    {
        return true;
    }
    ring_crossings(p, &poly.exterior) && !poly.holes.iter().any(|h| ring_crossings(p, h))
}

/// Result of clipping detections to a polygon.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipOutcome {
    pub kept: Vec<Detection>,
    pub dropped: usize,
}

/// Keeps detections whose geographic box center lies in `poly`.
pub fn clip_detections(dets: Vec<Detection>, poly: &GeoPolygon) -> ClipOutcome {
    let total = dets.len();
    let kept: Vec<Detection> = dets
        .into_iter()
        .filter(|d| {
            let (lon, lat) = d.bbox.center();
            point_in_polygon(GeoPoint { lon, lat }, poly)
        })
        .collect();
    ClipOutcome {
        dropped: total - kept.len(),
        kept,
    }
}

/// Regular grid of `size`-degree cells anchored at the polygon's north-west
/// bounding-box corner, keeping cells that intersect the polygon, in
/// row-major order (north to south, west to east).
pub fn chunk_polygon(poly: &GeoPolygon, size: f64) -> Result<Vec<BBox>> {
    if !(size > 0.0 && size.is_finite()) {
        return Err(GeoError::InvalidViewport(format!(
            "chunk size {size} must be positive"
        )));
    }
    let b = poly.bbox();
    // A span that is a whole number of cells up to rounding gets no sliver
    // cell; the last row and column reach the box edge instead.
    let count = |span: f64| (((span / size) - 1e-9).ceil() as usize).max(1);
    let (cols, rows) = (count(b.width()), count(b.height()));
    let mut out = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let cell = BBox {
                x_min: b.x_min + c as f64 * size,
                x_max: if c + 1 == cols {
                    b.x_max.max(b.x_min + cols as f64 * size)
                } else {
                    b.x_min + (c + 1) as f64 * size
                },
                y_max: b.y_max - r as f64 * size,
                y_min: if r + 1 == rows {
                    b.y_min.min(b.y_max - rows as f64 * size)
                } else {
                    b.y_max - (r + 1) as f64 * size
                },
            };
            if poly.intersects_rect(&cell) {
                out.push(cell);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use canopy_core::postprocess::Frame;

    fn ring(pts: &[(f64, f64)]) -> Vec<GeoPoint> {
        let mut v: Vec<GeoPoint> = pts
            .iter()
            .map(|&(lon, lat)| GeoPoint { lon, lat })
            .collect();
        v.push(v[0]);
        v
    }

    fn square(x0: f64, y0: f64, s: f64) -> GeoPolygon {
        GeoPolygon::new(
            ring(&[(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)]),
            vec![],
            None,
        )
        .unwrap()
    }

    fn geo_det(lon: f64, lat: f64) -> Detection {
        let mut d = Detection::pixel(
            BBox::new(lon - 0.01, lat - 0.01, lon + 0.01, lat + 0.01).unwrap(),
            0.9,
            1.0,
            8,
        );
        d.frame = Frame::Geo;
        d
    }

    #[test]
    fn point_examples() {
        let sq = square(0.0, 0.0, 1.0);
        let p = |lon, lat| GeoPoint { lon, lat };
        assert!(point_in_polygon(p(0.5, 0.5), &sq));
        assert!(!point_in_polygon(p(1.5, 0.5), &sq));
        assert!(point_in_polygon(p(1.0, 0.5), &sq));
        assert!(point_in_polygon(p(0.0, 0.0), &sq));
        let holed = GeoPolygon::new(
            sq.exterior.clone(),
            vec![ring(&[
                (0.25, 0.25),
                (0.75, 0.25),
                (0.75, 0.75),
                (0.25, 0.75),
            ])],
            None,
        )
        .unwrap();
        assert!(!point_in_polygon(p(0.5, 0.5), &holed));
        assert!(point_in_polygon(p(0.1, 0.5), &holed));
        assert!(point_in_polygon(p(0.25, 0.5), &holed));
    }

    #[test]
    fn validation() {
        let open = vec![
            GeoPoint { lon: 0.0, lat: 0.0 },
            GeoPoint { lon: 1.0, lat: 0.0 },
            GeoPoint { lon: 1.0, lat: 1.0 },
            GeoPoint { lon: 0.0, lat: 1.0 },
        ];
        let e = GeoPolygon::new(open, vec![], Some("p-7")).unwrap_err();
        assert!(
            e.to_string().contains("p-7") && e.to_string().contains("not closed"),
            "{e}"
        );
        let bowtie = ring(&[(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]);
        assert!(GeoPolygon::new(bowtie, vec![], None).is_err());
        assert!(GeoPolygon::new(ring(&[(0.0, 0.0), (1.0, 0.0)]), vec![], None).is_err());
        let flat = ring(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        assert!(GeoPolygon::new(flat, vec![], None).is_err());
    }

    #[test]
    fn clip_examples() {
        let sq = square(0.0, 0.0, 1.0);
        let inside = vec![geo_det(0.2, 0.2), geo_det(0.8, 0.5)];
        let out = clip_detections(inside.clone(), &sq);
        assert_eq!((out.kept, out.dropped), (inside, 0));
        // Boxes straddling the east edge: only centers left of it stay.
        let straddle = vec![geo_det(0.995, 0.5), geo_det(1.005, 0.5)];
        let out = clip_detections(straddle.clone(), &sq);
        assert_eq!((out.kept, out.dropped), (vec![straddle[0].clone()], 1));
        let far = clip_detections(vec![geo_det(5.0, 5.0)], &sq);
        assert!(far.kept.is_empty());
    }

    #[test]
    fn chunk_examples() {
        let sq = square(0.0, 0.0, 1.0);
        assert_eq!(chunk_polygon(&sq, 5.0).unwrap().len(), 1);
        let cells = chunk_polygon(&sq, 0.5).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0].to_array(), [0.0, 0.5, 0.5, 1.0]);
        assert_eq!(cells[3].to_array(), [0.5, 0.0, 1.0, 0.5]);
        // L shape: the north-east cell of a 2×2 grid is not covered.
        let l = GeoPolygon::new(
            ring(&[
                (0.0, 0.0),
                (2.0, 0.0),
                (2.0, 0.9),
                (0.9, 0.9),
                (0.9, 2.0),
                (0.0, 2.0),
            ]),
            vec![],
            None,
        )
        .unwrap();
        let cells = chunk_polygon(&l, 1.0).unwrap();
        assert_eq!(cells.len(), 3);
        assert!(!cells.iter().any(|c| c.x_min == 1.0 && c.y_min == 1.0));
        assert!(chunk_polygon(&sq, 0.0).is_err());
    }

    #[test]
    fn geojson_round_trip() {
        let sq = square(34.0, 31.0, 0.5);
        let text = serde_json::to_string(&sq).unwrap();
        assert!(
            text.starts_with(r#"{"coordinates":[[[34.0,31.0]"#),
            "{text}"
        );
        let back: GeoPolygon = serde_json::from_str(&text).unwrap();
        assert_eq!(back, sq);
        let open = json!({"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1]]]});
        let e = GeoPolygon::from_geometry(&open, Some("c-1")).unwrap_err();
        assert!(e.to_string().contains("c-1"));
        assert!(serde_json::from_value::<GeoPolygon>(
            json!({"type": "Point", "coordinates": [0, 0]})
        )
        .is_err());
    }
}
