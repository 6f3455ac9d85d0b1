//! Area specifications: what a detection run covers.

use std::fmt;
use std::str::FromStr;

use canopy_geo::Viewport;
use serde::{Deserialize, Serialize};

use crate::error::AppError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AreaSpec {
    Viewport(Viewport),
    Parcel {
        community: String,
        block: String,
        parcel: String,
    },
    Community {
        community: String,
    },
}

/// Compact key used in report queries:
/// `viewport:min_lon,min_lat,max_lon,max_lat@zoom`, `parcel:c/b/p` or
/// `community:c`.
impl fmt::Display for AreaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AreaSpec::Viewport(v) => write!(
                f,
                "viewport:{},{},{},{}@{}",
                v.min_lon, v.min_lat, v.max_lon, v.max_lat, v.zoom
            ),
            AreaSpec::Parcel {
                community,
                block,
                parcel,
            } => write!(f, "parcel:{community}/{block}/{parcel}"),
            AreaSpec::Community { community } => write!(f, "community:{community}"),
        }
    }
}

impl FromStr for AreaSpec {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self, AppError> {
        let bad = || AppError::BadRequest(format!("unrecognized area `{s}`"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "viewport" => {
                let (coords, zoom) = rest.split_once('@').ok_or_else(bad)?;
                let c: Vec<f64> = coords
                    .split(',')
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad())?;
                let [min_lon, min_lat, max_lon, max_lat] = c[..] else {
                    return Err(bad());
                };
                let zoom = zoom.parse().map_err(|_| bad())?;
                Ok(AreaSpec::Viewport(Viewport {
                    min_lon,
                    min_lat,
                    max_lon,
                    max_lat,
                    zoom,
                }))
            }
            "parcel" => match rest.split('/').collect::<Vec<_>>()[..] {
                [c, b, p] if !c.is_empty() && !b.is_empty() && !p.is_empty() => {
                    Ok(AreaSpec::Parcel {
                        community: c.into(),
                        block: b.into(),
                        parcel: p.into(),
                    })
                }
                _ => Err(bad()),
            },
            "community" if !rest.is_empty() => Ok(AreaSpec::Community {
                community: rest.into(),
            }),
            _ => Err(bad()),
        }
    }
}
