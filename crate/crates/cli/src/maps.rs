//! GeoJSON joins and SVG choropleths.

use std::fmt::Write as _;

use serde_json::{json, Value};
use vaxmap::config::MapConfig;
use vaxmap::inference::Summary;
use vaxmap::{AdjacencyGraph, Error, Field, Result};

/// One mapped quantity, cell-indexed (`t * n_units + unit`).
pub struct Statistic {
    pub name: &'static str,
    pub diverging: bool,
    pub mean: Vec<Option<f64>>,
    pub sd: Vec<Option<f64>>,
}

/// Profile-averaged coverage followed by the four effect fields.
pub fn statistics(summary: &Summary) -> Vec<Statistic> {
    let mut out = vec![Statistic {
        name: "pi",
        diverging: false,
        mean: summary.cells.iter().map(|c| c.marginal.map(|m| m.mean)).collect(),
        sd: summary.cells.iter().map(|c| c.marginal.map(|m| m.sd)).collect(),
    }];
    for f in Field::ALL {
        out.push(Statistic {
            name: f.name(),
            diverging: true,
            mean: summary.cells.iter().map(|c| Some(c.gamma[f.index()].mean)).collect(),
            sd: summary.cells.iter().map(|c| Some(c.gamma[f.index()].sd)).collect(),
        });
    }
    out
}

fn feature_id(feature: &Value, id_property: &str) -> Option<String> {
    match feature.get("properties")?.get(id_property)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn features(collection: &Value) -> Result<&Vec<Value>> {
    collection
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Schema("geojson: expected a FeatureCollection with a `features` array".into()))
}

/// Adds `<stat>_mean_<year>` and `<stat>_sd_<year>` properties to every feature whose id
/// names a unit. Returns the number of features left unmatched.
pub fn join(
    collection: &mut Value,
    id_property: &str,
    graph: &AdjacencyGraph,
    years: &[i32],
    stats: &[Statistic],
    vaccine: &str,
    hash: &str,
) -> Result<usize> {
    features(collection)?;
    let n = graph.n_units();
    let mut unmatched = 0;
    let mut matched = 0;
    for feature in collection["features"].as_array_mut().expect("checked above") {
        let Some(unit) = feature_id(feature, id_property).and_then(|id| graph.unit_index(&id)) else {
            unmatched += 1;
            continue;
        };
        matched += 1;
        let props = feature["properties"].as_object_mut().expect("feature_id found an object");
        props.insert("vaccine".into(), json!(vaccine));
        for s in stats {
            for (t, year) in years.iter().enumerate() {
                props.insert(format!("{}_mean_{year}", s.name), json!(s.mean[t * n + unit]));
                props.insert(format!("{}_sd_{year}", s.name), json!(s.sd[t * n + unit]));
            }
        }
    }
    if matched == 0 {
        return Err(Error::Schema(format!("geojson: no feature has a `{id_property}` matching a unit id")));
    }
    collection.as_object_mut().expect("FeatureCollection is an object").insert("config_hash".into(), json!(hash));
    Ok(unmatched)
}

type Ring = Vec<(f64, f64)>;

fn ring(value: &Value) -> Result<Ring> {
    let bad = || Error::Schema("geojson: malformed coordinates".into());
    value
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|p| {
            let x = p.get(0).and_then(Value::as_f64).ok_or_else(bad)?;
            let y = p.get(1).and_then(Value::as_f64).ok_or_else(bad)?;
            Ok((x, y))
        })
        .collect()
}

fn polygon_rings(value: &Value) -> Result<Vec<Ring>> {
    value.as_array().ok_or_else(|| Error::Schema("geojson: malformed polygon".into()))?.iter().map(ring).collect()
}

fn rings(geometry: &Value) -> Result<Vec<Ring>> {
    if geometry.is_null() {
        return Ok(Vec::new());
    }
    let coords = &geometry["coordinates"];
    match geometry["type"].as_str() {
        Some("Polygon") => polygon_rings(coords),
        Some("MultiPolygon") => {
            let polys = coords.as_array().ok_or_else(|| Error::Schema("geojson: malformed multipolygon".into()))?;
            Ok(polys.iter().map(polygon_rings).collect::<Result<Vec<_>>>()?.concat())
        }
        other => Err(Error::Schema(format!("geojson: unsupported geometry type {other:?}"))),
    }
}

/// Unit polygons keyed by unit index; features without a matching id are skipped.
pub struct UnitShapes {
    shapes: Vec<(usize, Vec<Ring>)>,
    bounds: [f64; 4],
}

impl UnitShapes {
    pub fn from_geojson(collection: &Value, id_property: &str, graph: &AdjacencyGraph) -> Result<Self> {
        let mut shapes = Vec::new();
        let mut bounds = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for feature in features(collection)? {
            let Some(unit) = feature_id(feature, id_property).and_then(|id| graph.unit_index(&id)) else {
                continue;
            };
            let rs = rings(&feature["geometry"])?;
            for &(x, y) in rs.iter().flatten() {
                bounds = [bounds[0].min(x), bounds[1].min(y), bounds[2].max(x), bounds[3].max(y)];
            }
            shapes.push((unit, rs));
        }
        if !bounds.iter().all(|v| v.is_finite()) {
            return Err(Error::Schema("geojson: no polygons for any unit".into()));
        }
        Ok(UnitShapes { shapes, bounds })
    }
}

/// Colour classes between consecutive bin edges. Values outside the edges take the end classes.
pub struct Scale {
    edges: Vec<f64>,
    colours: Vec<String>,
}

fn mix(a: [u8; 3], b: [u8; 3], s: f64) -> String {
    let c: Vec<u8> = (0..3).map(|i| (a[i] as f64 + (b[i] as f64 - a[i] as f64) * s).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

impl Scale {
    /// Light to dark blue.
    pub fn sequential(edges: &[f64]) -> Self {
        let n = edges.len() - 1;
        let colours = (0..n)
            .map(|i| mix([247, 251, 255], [8, 48, 107], if n == 1 { 1.0 } else { i as f64 / (n - 1) as f64 }))
            .collect();
        Scale { edges: edges.to_vec(), colours }
    }

    /// Red below zero, blue above, white at zero; intensity grows with the class midpoint.
    pub fn diverging(edges: &[f64]) -> Self {
        let reach = edges.iter().fold(0.0f64, |m, e| m.max(e.abs())).max(f64::MIN_POSITIVE);
        let colours = edges
            .windows(2)
            .map(|w| {
                let s = ((w[0] + w[1]) / 2.0 / reach).clamp(-1.0, 1.0);
                if s < 0.0 {
                    mix([247, 247, 247], [178, 24, 43], -s)
                } else {
                    mix([247, 247, 247], [33, 102, 172], s)
                }
            })
            .collect();
        Scale { edges: edges.to_vec(), colours }
    }

    pub fn class(&self, v: f64) -> usize {
        let n = self.colours.len();
        self.edges.partition_point(|&e| e <= v).saturating_sub(1).min(n - 1)
    }

    pub fn colour(&self, v: Option<f64>) -> &str {
        match v {
            Some(v) if v.is_finite() => &self.colours[self.class(v)],
            _ => NO_DATA,
        }
    }
}

const NO_DATA: &str = "#cccccc";
const MAP_WIDTH: f64 = 640.0;
const MARGIN: f64 = 10.0;
const TITLE_HEIGHT: f64 = 30.0;
const LEGEND_WIDTH: f64 = 170.0;

/// One choropleth: `values` is unit-indexed.
pub fn render(shapes: &UnitShapes, values: &[Option<f64>], scale: &Scale, title: &str, hash: &str) -> String {
    let [x0, y0, x1, y1] = shapes.bounds;
    let span_x = (x1 - x0).max(f64::MIN_POSITIVE);
    let span_y = (y1 - y0).max(f64::MIN_POSITIVE);
    let k = MAP_WIDTH / span_x;
    let map_height = (span_y * k).max(1.0);
    let legend_height = 18.0 * (scale.colours.len() + 1) as f64;
    let width = MAP_WIDTH + LEGEND_WIDTH + 3.0 * MARGIN;
    let height = TITLE_HEIGHT + map_height.max(legend_height) + 2.0 * MARGIN;
    let px = |x: f64| MARGIN + (x - x0) * k;
    let py = |y: f64| TITLE_HEIGHT + MARGIN + (y1 - y) * k;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(svg, "<!-- config_hash: {hash} -->");
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="20" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(svg, r##"<g stroke="#555555" stroke-width="0.5" fill-rule="evenodd">"##);
    for (unit, rs) in &shapes.shapes {
        let mut d = String::new();
        for r in rs {
            for (i, &(x, y)) in r.iter().enumerate() {
                let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, px(x), py(y));
            }
            d.push_str("Z ");
        }
        let _ = writeln!(svg, r#"<path d="{}" fill="{}"/>"#, d.trim_end(), scale.colour(values[*unit]));
    }
    let _ = writeln!(svg, "</g>");

    let lx = 2.0 * MARGIN + MAP_WIDTH;
    let mut ly = TITLE_HEIGHT + MARGIN;
    let _ = writeln!(svg, r#"<g font-family="sans-serif" font-size="11">"#);
    for (i, c) in scale.colours.iter().enumerate().rev() {
        let label = format!("{} to {}", scale.edges[i], scale.edges[i + 1]);
        let _ = writeln!(svg, r##"<rect x="{lx}" y="{ly}" width="14" height="14" fill="{c}" stroke="#555555" stroke-width="0.5"/>"##);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{label}</text>"#, lx + 20.0, ly + 11.0);
        ly += 18.0;
    }
    let _ = writeln!(svg, r##"<rect x="{lx}" y="{ly}" width="14" height="14" fill="{NO_DATA}" stroke="#555555" stroke-width="0.5"/>"##);
    let _ = writeln!(svg, r#"<text x="{}" y="{}">no data</text>"#, lx + 20.0, ly + 11.0);
    let _ = writeln!(svg, "</g>\n</svg>");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Unit-indexed slice of a cell-indexed statistic for wave `t`.
pub fn wave_values(values: &[Option<f64>], n_units: usize, t: usize) -> Vec<Option<f64>> {
    values[t * n_units..(t + 1) * n_units].to_vec()
}

/// Renders every (year, statistic) map. Returns `(file name, svg)` pairs.
pub fn render_all(
    shapes: &UnitShapes,
    stats: &[Statistic],
    years: &[i32],
    n_units: usize,
    vaccine: &str,
    bins: &MapConfig,
    hash: &str,
) -> Vec<(String, String)> {
    let sequential = Scale::sequential(&bins.pi_bins);
    let diverging = Scale::diverging(&bins.gamma_bins);
    let mut out = Vec::new();
    for s in stats {
        let scale = if s.diverging { &diverging } else { &sequential };
        for (t, year) in years.iter().enumerate() {
            let title = format!("{vaccine} {year}: posterior mean {}", s.name);
            let values = wave_values(&s.mean, n_units, t);
            out.push((format!("{vaccine}_{year}_{}.svg", s.name), render(shapes, &values, scale, &title, hash)));
        }
    }
    out
}
