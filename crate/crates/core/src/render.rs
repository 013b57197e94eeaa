//! Static SVG choropleths.
//!
//! Output bytes depend only on the inputs: coordinates are printed with fixed
//! precision and elements are emitted in precinct order.

use std::fmt::Write;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::fixtures::{GRID_COL, GRID_ROW};
use crate::io::feature_id;
use crate::model::{Label, PrecinctField, PrecinctMap};

const CELL: f64 = 20.0;
const POLYGON_WIDTH: f64 = 600.0;
const MISSING: &str = "#bdbdbd";
const MID: (u8, u8, u8) = (0xf7, 0xf7, 0xf7);
const NEGATIVE: (u8, u8, u8) = (0xb2, 0x18, 0x2b);
const POSITIVE: (u8, u8, u8) = (0x21, 0x66, 0xac);
const SEQ_LOW: (u8, u8, u8) = (0xf7, 0xfb, 0xff);
const SEQ_HIGH: (u8, u8, u8) = (0x08, 0x30, 0x6b);

/// Precinct shapes in map order.
#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    /// Unit squares at integer (row, col) positions.
    Grid { cells: Vec<(usize, usize)> },
    /// Rings of each precinct in source coordinates (y up).
    Polygons { rings: Vec<Vec<Vec<(f64, f64)>>> },
}

impl Geometry {
    /// Unit-square geometry from `grid_row` / `grid_col` columns, if present.
    pub fn from_grid_columns(map: &PrecinctMap) -> Option<Geometry> {
        let rows = map.column(GRID_ROW)?;
        let cols = map.column(GRID_COL)?;
        Some(Geometry::Grid {
            cells: rows.iter().zip(cols).map(|(&r, &c)| (r as usize, c as usize)).collect(),
        })
    }

    /// Polygon and MultiPolygon features matched to precincts by id.
    /// Precincts without a feature are left without shape.
    pub fn from_geojson(map: &PrecinctMap, collection: &Value) -> Result<Geometry> {
        let features = collection
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::invalid("GeoJSON input has no \"features\" array"))?;
        let mut rings = vec![Vec::new(); map.len()];
        for feature in features {
            let Some(v) = feature_id(feature).and_then(|id| map.index_of(&id)) else {
                continue;
            };
            let geometry = feature.get("geometry").unwrap_or(&Value::Null);
            let coords = geometry.get("coordinates").unwrap_or(&Value::Null);
            let polygons: Vec<&Value> = match geometry.get("type").and_then(Value::as_str) {
                Some("Polygon") => vec![coords],
                Some("MultiPolygon") => coords.as_array().map(|a| a.iter().collect()).unwrap_or_default(),
                _ => continue,
            };
            for polygon in polygons {
                for ring in polygon.as_array().into_iter().flatten() {
                    let points = ring
                        .as_array()
                        .into_iter()
                        .flatten()
                        .filter_map(|p| Some((p.get(0)?.as_f64()?, p.get(1)?.as_f64()?)))
                        .collect::<Vec<_>>();
                    if points.len() >= 3 {
                        rings[v].push(points);
                    }
                }
            }
        }
        Ok(Geometry::Polygons { rings })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Palette {
    /// Centered at zero; `limit` defaults to the field's largest magnitude.
    Diverging { limit: Option<f64> },
    /// Defaults to the field's range.
    Sequential { min: Option<f64>, max: Option<f64> },
}

fn mix(a: (u8, u8, u8), b: (u8, u8, u8), t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let ch = |x: u8, y: u8| (x as f64 + (y as f64 - x as f64) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", ch(a.0, b.0), ch(a.1, b.1), ch(a.2, b.2))
}

struct Scale {
    palette: Palette,
    lo: f64,
    hi: f64,
}

impl Scale {
    fn new(palette: Palette, field: &PrecinctField) -> Self {
        let present = || field.values().iter().flatten().copied();
        match palette {
            Palette::Diverging { limit } => {
                let l = limit.unwrap_or_else(|| field.max_abs());
                Scale { palette, lo: -l, hi: l }
            }
            Palette::Sequential { min, max } => Scale {
                palette,
                lo: min.unwrap_or_else(|| present().fold(f64::INFINITY, f64::min)),
                hi: max.unwrap_or_else(|| present().fold(f64::NEG_INFINITY, f64::max)),
            },
        }
    }

    fn color(&self, x: Option<f64>) -> String {
        let Some(x) = x else {
            return MISSING.to_string();
        };
        match self.palette {
            Palette::Diverging { .. } => {
                if self.hi <= 0.0 || x == 0.0 {
                    mix(MID, MID, 0.0)
                } else if x > 0.0 {
                    mix(MID, POSITIVE, x / self.hi)
                } else {
                    mix(MID, NEGATIVE, x / self.lo)
                }
            }
            Palette::Sequential { .. } => {
                let span = self.hi - self.lo;
                let t = if span > 0.0 { (x - self.lo) / span } else { 0.5 };
                mix(SEQ_LOW, SEQ_HIGH, t)
            }
        }
    }
}

/// Renders `field` over `geometry`. Selected precincts get a 45° hatch;
/// `borders` draws heavy lines between precincts with different labels
/// (grid geometry only).
pub fn render_svg(
    map: &PrecinctMap,
    geometry: &Geometry,
    field: &PrecinctField,
    selection: Option<&[bool]>,
    borders: Option<&[Label]>,
    palette: Palette,
) -> String {
    assert_eq!(field.len(), map.len());
    let scale = Scale::new(palette, field);
    let selected = |v: usize| selection.is_some_and(|s| s[v]);
    let mut body = String::new();
    let (width, height) = match geometry {
        Geometry::Grid { cells } => {
            let rows = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
            let cols = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
            for (v, &(r, c)) in cells.iter().enumerate() {
                let (x, y) = (c as f64 * CELL, r as f64 * CELL);
                let _ = writeln!(
                    body,
                    r##"<rect x="{x:.2}" y="{y:.2}" width="{CELL:.2}" height="{CELL:.2}" fill="{}" stroke="#ffffff" stroke-width="0.5"/>"##,
                    scale.color(field.get(v))
                );
                if selected(v) {
                    let _ = writeln!(
                        body,
                        r##"<rect x="{x:.2}" y="{y:.2}" width="{CELL:.2}" height="{CELL:.2}" fill="url(#hatch)"/>"##
                    );
                }
            }
            if let Some(labels) = borders {
                for e in map.edges() {
                    if labels[e.a] == labels[e.b] {
                        continue;
                    }
                    let ((ra, ca), (rb, cb)) = (cells[e.a], cells[e.b]);
                    let (x1, y1, x2, y2) = if ra == rb {
                        let x = ca.max(cb) as f64 * CELL;
                        (x, ra as f64 * CELL, x, (ra + 1) as f64 * CELL)
                    } else {
                        let y = ra.max(rb) as f64 * CELL;
                        (ca as f64 * CELL, y, (ca + 1) as f64 * CELL, y)
                    };
                    let _ = writeln!(
                        body,
                        r##"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="#000000" stroke-width="2"/>"##
                    );
                }
            }
            (cols as f64 * CELL, rows as f64 * CELL)
        }
        Geometry::Polygons { rings } => {
            let points = rings.iter().flatten().flatten();
            let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &(x, y) in points {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
            let span = (x1 - x0).max(f64::MIN_POSITIVE);
            let k = POLYGON_WIDTH / span;
            let height = ((y1 - y0) * k).max(1.0);
            for (v, shape) in rings.iter().enumerate() {
                if shape.is_empty() {
                    continue;
                }
                let mut d = String::new();
                for ring in shape {
                    for (i, &(x, y)) in ring.iter().enumerate() {
                        let _ = write!(d, "{}{:.2} {:.2} ", if i == 0 { "M" } else { "L" }, (x - x0) * k, (y1 - y) * k);
                    }
                    d.push_str("Z ");
                }
                let d = d.trim_end();
                let _ = writeln!(
                    body,
                    r##"<path d="{d}" fill="{}" fill-rule="evenodd" stroke="#ffffff" stroke-width="0.5"/>"##,
                    scale.color(field.get(v))
                );
                if selected(v) {
                    let _ = writeln!(body, r##"<path d="{d}" fill="url(#hatch)" fill-rule="evenodd"/>"##);
                }
            }
            (POLYGON_WIDTH, height)
        }
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.2}" height="{height:.2}" viewBox="0 0 {width:.2} {height:.2}">"#
    );
    let _ = writeln!(svg, "<desc>scale {:.6} .. {:.6}</desc>", scale.lo, scale.hi);
    svg.push_str(
        "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\" patternTransform=\"rotate(45)\">\
         <line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" stroke=\"#000000\" stroke-width=\"1.5\"/></pattern></defs>\n",
    );
    svg.push_str(&body);
    svg.push_str("</svg>\n");
    svg
}
