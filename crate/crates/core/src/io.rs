//! CSV and JSON formats.
//!
//! * attributes: `id,population,area,exterior_boundary_length[,votes_dem,votes_rep,region,...]`
//! * edges: `id_a,id_b,shared_boundary_length`
//! * assignment matrix: `id,plan_1,...,plan_n[,enacted]`
//! * fields: `id,value`, missing values as empty cells
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write followed by a load reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{Column, Edge, Ensemble, Label, Plan, PrecinctField, PrecinctMap};

pub const REGION_COLUMN: &str = "region";
pub const ENACTED_COLUMN: &str = "enacted";

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn header_position(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

/// Loads and validates a precinct map from an attributes CSV and an edges CSV.
pub fn load_map(attributes: &Path, edges: &Path) -> Result<PrecinctMap> {
    let mut reader = open_reader(attributes)?;
    let headers = reader.headers().map_err(|e| csv_error(attributes, e))?.clone();
    let id_col = header_position(&headers, "id")
        .ok_or_else(|| parse_error(attributes, 1, "missing \"id\" column"))?;
    let region_col = header_position(&headers, REGION_COLUMN);
    let value_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != id_col && Some(i) != region_col)
        .map(|(i, h)| (i, h.trim().to_string()))
        .collect();

    let mut ids = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); value_cols.len()];
    let mut regions = region_col.map(|_| Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(attributes, e))?;
        let line = record_line(&record);
        ids.push(record[id_col].trim().to_string());
        for (slot, (i, name)) in values.iter_mut().zip(&value_cols) {
            let cell = record[*i].trim();
            let x: f64 = cell
                .parse()
                .map_err(|_| parse_error(attributes, line, format!("column \"{name}\": cannot parse \"{cell}\" as a number")))?;
            slot.push(x);
        }
        if let (Some(col), Some(out)) = (region_col, regions.as_mut()) {
            let cell = record[col].trim();
            let q: i64 = cell
                .parse()
                .map_err(|_| parse_error(attributes, line, format!("region label \"{cell}\" is not an integer")))?;
            out.push(q);
        }
    }
    let columns = value_cols
        .into_iter()
        .zip(values)
        .map(|((_, name), values)| Column { name, values })
        .collect();

    let lookup: std::collections::HashMap<&str, usize> =
        ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut reader = open_reader(edges)?;
    let headers = reader.headers().map_err(|e| csv_error(edges, e))?.clone();
    let cols: Vec<usize> = ["id_a", "id_b", "shared_boundary_length"]
        .iter()
        .map(|name| {
            header_position(&headers, name)
                .ok_or_else(|| parse_error(edges, 1, format!("missing \"{name}\" column")))
        })
        .collect::<Result<_>>()?;
    let mut edge_list = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(edges, e))?;
        let line = record_line(&record);
        let endpoint = |k: usize| -> Result<usize> {
            let id = record[cols[k]].trim();
            lookup
                .get(id)
                .copied()
                .ok_or_else(|| parse_error(edges, line, format!("unknown precinct id \"{id}\"")))
        };
        let a = endpoint(0)?;
        let b = endpoint(1)?;
        let cell = record[cols[2]].trim();
        let shared_length: f64 = cell
            .parse()
            .map_err(|_| parse_error(edges, line, format!("cannot parse \"{cell}\" as a length")))?;
        edge_list.push(Edge { a, b, shared_length });
    }
    drop(lookup);
    PrecinctMap::new(ids, columns, edge_list, regions)
}

pub fn write_map(map: &PrecinctMap, attributes: &Path, edges: &Path) -> Result<()> {
    let mut out = create(attributes)?;
    let write = |out: &mut BufWriter<File>, s: &str| out.write_all(s.as_bytes()).map_err(|e| Error::io(attributes, e));
    let mut header = String::from("id");
    for c in map.columns() {
        header.push(',');
        header.push_str(&c.name);
    }
    if map.regions().is_some() {
        header.push_str(",region");
    }
    header.push('\n');
    write(&mut out, &header)?;
    for (v, id) in map.ids().iter().enumerate() {
        let mut line = id.clone();
        for c in map.columns() {
            line.push(',');
            line.push_str(&c.values[v].to_string());
        }
        if let Some(q) = map.regions() {
            line.push(',');
            line.push_str(&q[v].to_string());
        }
        line.push('\n');
        write(&mut out, &line)?;
    }
    out.flush().map_err(|e| Error::io(attributes, e))?;

    let mut out = create(edges)?;
    let mut body = String::from("id_a,id_b,shared_boundary_length\n");
    for e in map.edges() {
        body.push_str(&format!("{},{},{}\n", map.ids()[e.a], map.ids()[e.b], e.shared_length));
    }
    out.write_all(body.as_bytes()).map_err(|e| Error::io(edges, e))?;
    out.flush().map_err(|e| Error::io(edges, e))
}

/// An assignment matrix split into the ensemble and an optional comparison plan.
#[derive(Debug, Clone)]
pub struct LoadedPlans {
    pub ensemble: Ensemble,
    pub enacted: Option<Plan>,
    pub plan_names: Vec<String>,
}

/// Loads an assignment matrix. The column named `enacted_column` (or
/// `enacted` when `None`) is held out as the comparison plan; every other
/// non-`id` column is an ensemble plan.
pub fn load_ensemble(map: Arc<PrecinctMap>, path: &Path, enacted_column: Option<&str>) -> Result<LoadedPlans> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let id_col = header_position(&headers, "id").ok_or_else(|| parse_error(path, 1, "missing \"id\" column"))?;
    let enacted_name = enacted_column.unwrap_or(ENACTED_COLUMN);
    let enacted_col = header_position(&headers, enacted_name);
    if enacted_column.is_some() && enacted_col.is_none() {
        return Err(parse_error(path, 1, format!("no column named \"{enacted_name}\"")));
    }
    let plan_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != id_col && Some(i) != enacted_col)
        .collect();
    if plan_cols.is_empty() {
        return Err(parse_error(path, 1, "assignment matrix has no plan columns"));
    }
    let plan_names = plan_cols.iter().map(|&i| headers[i].trim().to_string()).collect();

    let v_count = map.len();
    let n = plan_cols.len();
    let mut labels = vec![0 as Label; n * v_count];
    let mut enacted = enacted_col.map(|_| vec![0 as Label; v_count]);
    let mut filled = vec![false; v_count];
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        rows += 1;
        let id = record[id_col].trim();
        let v = map
            .index_of(id)
            .ok_or_else(|| parse_error(path, line, format!("unknown precinct id \"{id}\"")))?;
        if std::mem::replace(&mut filled[v], true) {
            return Err(parse_error(path, line, format!("precinct \"{id}\" listed twice")));
        }
        let parse = |col: usize| -> Result<Label> {
            let cell = record[col].trim();
            match cell.parse::<Label>() {
                Ok(l) if l >= 1 => Ok(l),
                _ => Err(parse_error(
                    path,
                    line,
                    format!("column \"{}\": invalid district label \"{cell}\"", &headers[col]),
                )),
            }
        };
        for (i, &col) in plan_cols.iter().enumerate() {
            labels[i * v_count + v] = parse(col)?;
        }
        if let (Some(col), Some(e)) = (enacted_col, enacted.as_mut()) {
            e[v] = parse(col)?;
        }
    }
    if rows != v_count {
        return Err(Error::invalid(format!(
            "{}: assignment matrix has {rows} rows, map has {v_count} precincts",
            path.display()
        )));
    }
    let d = labels.iter().copied().max().unwrap_or(1) as usize;
    let ensemble = Ensemble::new(map, d, labels)?;
    let enacted = enacted
        .map(|e| Plan::new(e, d as Label).map_err(|err| Error::invalid(format!("{enacted_name}: {err}"))))
        .transpose()?;
    Ok(LoadedPlans {
        ensemble,
        enacted,
        plan_names,
    })
}

pub fn write_ensemble(ensemble: &Ensemble, enacted: Option<&Plan>, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let mut header = String::from("id");
    for i in 1..=ensemble.len() {
        header.push_str(&format!(",plan_{i}"));
    }
    if enacted.is_some() {
        header.push_str(",enacted");
    }
    header.push('\n');
    out.write_all(header.as_bytes()).map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    for (v, id) in ensemble.map().ids().iter().enumerate() {
        line.clear();
        line.push_str(id);
        for plan in ensemble.plans() {
            line.push(',');
            line.push_str(&plan.labels()[v].to_string());
        }
        if let Some(p) = enacted {
            line.push(',');
            line.push_str(&p.labels()[v].to_string());
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn format_value(x: Option<f64>) -> String {
    x.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_field(map: &PrecinctMap, field: &PrecinctField, path: &Path) -> Result<()> {
    let mut body = String::from("id,value\n");
    for (id, x) in map.ids().iter().zip(field.values()) {
        body.push_str(id);
        body.push(',');
        body.push_str(&format_value(*x));
        body.push('\n');
    }
    write_text(path, &body)
}

/// Reads an `id,value` field CSV in any row order; absent precincts are missing.
pub fn read_field(map: &PrecinctMap, path: &Path) -> Result<PrecinctField> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let id_col = header_position(&headers, "id").ok_or_else(|| parse_error(path, 1, "missing \"id\" column"))?;
    let value_col = header_position(&headers, "value")
        .or_else(|| header_position(&headers, "pvalue"))
        .ok_or_else(|| parse_error(path, 1, "missing \"value\" column"))?;
    let mut values = vec![None; map.len()];
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        let id = record[id_col].trim();
        let v = map
            .index_of(id)
            .ok_or_else(|| parse_error(path, line, format!("unknown precinct id \"{id}\"")))?;
        let cell = record[value_col].trim();
        if !cell.is_empty() {
            values[v] = Some(
                cell.parse()
                    .map_err(|_| parse_error(path, line, format!("cannot parse \"{cell}\" as a number")))?,
            );
        }
    }
    Ok(PrecinctField::new(values))
}

/// Reads the `selected` column of a selection CSV.
pub fn read_selection(map: &PrecinctMap, path: &Path) -> Result<Vec<bool>> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let id_col = header_position(&headers, "id").ok_or_else(|| parse_error(path, 1, "missing \"id\" column"))?;
    let sel_col = header_position(&headers, "selected")
        .ok_or_else(|| parse_error(path, 1, "missing \"selected\" column"))?;
    let mut selected = vec![false; map.len()];
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        let id = record[id_col].trim();
        let v = map
            .index_of(id)
            .ok_or_else(|| parse_error(path, line, format!("unknown precinct id \"{id}\"")))?;
        selected[v] = match record[sel_col].trim() {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(parse_error(path, line, format!("invalid selection flag \"{other}\""))),
        };
    }
    Ok(selected)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_error(path, e.line() as u64, e.to_string()))
}

/// Precinct id carried by a GeoJSON feature: `properties.id`, else the feature `id`.
pub(crate) fn feature_id(feature: &Value) -> Option<String> {
    let raw = feature
        .get("properties")
        .and_then(|p| p.get("id"))
        .or_else(|| feature.get("id"))?;
    match raw {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Copies a GeoJSON feature collection, adding `property` with the field
/// value of each feature's precinct (null when missing or unmatched).
pub fn join_geojson(map: &PrecinctMap, field: &PrecinctField, collection: &Value, property: &str) -> Result<Value> {
    let mut out = collection.clone();
    let features = out
        .get_mut("features")
        .and_then(Value::as_array_mut)
        .ok_or_else(|| Error::invalid("GeoJSON input has no \"features\" array"))?;
    for feature in features {
        let value = feature_id(feature)
            .and_then(|id| map.index_of(&id))
            .and_then(|v| field.get(v))
            .and_then(serde_json::Number::from_f64)
            .map_or(Value::Null, Value::Number);
        let properties = feature
            .as_object_mut()
            .ok_or_else(|| Error::invalid("GeoJSON feature is not an object"))?
            .entry("properties")
            .or_insert_with(|| Value::Object(Default::default()));
        match properties {
            Value::Object(props) => {
                props.insert(property.to_string(), value);
            }
            Value::Null => {
                let mut props = serde_json::Map::new();
                props.insert(property.to_string(), value);
                *properties = Value::Object(props);
            }
            _ => return Err(Error::invalid("GeoJSON feature properties are not an object")),
        }
    }
    Ok(out)
}
