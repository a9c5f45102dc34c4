//! CSV formats for R-D samples, feature vectors, labels and predictions.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle is lossless and reruns produce identical bytes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use crate::classifier::{FeatureVector, LabeledFeature};
use crate::error::{Error, Result};
use crate::rd_model::{OperatingPointGrid, RdSample};

pub const RD_HEADER: [&str; 4] = ["chunk_id", "q", "rate_kbps", "quality_db"];

fn csv_err(line: u64, message: impl Into<String>) -> Error {
    Error::Csv {
        line,
        message: message.into(),
    }
}

fn from_csv(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    csv_err(line, e.to_string())
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_f64(field: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| {
        csv_err(
            line,
            format!("column {column}: cannot parse {field:?} as a number"),
        )
    })?;
    if !v.is_finite() {
        return Err(csv_err(
            line,
            format!("column {column}: non-finite value {field:?}"),
        ));
    }
    Ok(v)
}

fn header<R: Read>(rdr: &mut csv::Reader<R>) -> Result<Vec<String>> {
    let h = rdr.headers().map_err(from_csv)?;
    if h.is_empty() || (h.len() == 1 && h[0].is_empty()) {
        return Err(csv_err(1, "missing header"));
    }
    Ok(h.iter().map(str::to_owned).collect())
}

/// Reads long-format R-D measurements. The grid is the sorted set of distinct
/// `q` values; every chunk must have exactly one row per grid point. Chunks
/// keep the order of their first appearance.
pub fn read_rd_samples<R: Read>(input: R) -> Result<(OperatingPointGrid, Vec<RdSample>)> {
    let mut rdr = reader(input);
    let h = header(&mut rdr)?;
    if h != RD_HEADER {
        return Err(csv_err(
            1,
            format!(
                "expected header {}, got {}",
                RD_HEADER.join(","),
                h.join(",")
            ),
        ));
    }
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(f64, f64, f64)>> = HashMap::new();
    let mut q_values: Vec<f64> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(from_csv)?;
        let line = line_of(&record);
        let id = record[0].to_owned();
        if id.is_empty() {
            return Err(csv_err(line, "empty chunk_id"));
        }
        let q = parse_f64(&record[1], line, "q")?;
        let rate = parse_f64(&record[2], line, "rate_kbps")?;
        let quality = parse_f64(&record[3], line, "quality_db")?;
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        let points = rows.entry(id).or_default();
        if points.iter().any(|p| p.0 == q) {
            return Err(csv_err(
                line,
                format!("duplicate row for chunk {} at q = {q}", &record[0]),
            ));
        }
        points.push((q, rate, quality));
        q_values.push(q);
    }
    if order.is_empty() {
        return Err(csv_err(1, "no data rows"));
    }
    q_values.sort_by(f64::total_cmp);
    q_values.dedup();
    let grid = OperatingPointGrid::new(q_values)?;

    let mut samples = Vec::with_capacity(order.len());
    for id in order {
        let mut points = rows.remove(&id).expect("id was recorded");
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.len() != grid.len() {
            let have: Vec<f64> = points.iter().map(|p| p.0).collect();
            let missing: Vec<String> = grid
                .points()
                .iter()
                .filter(|q| !have.contains(q))
                .map(|q| q.to_string())
                .collect();
            return Err(Error::Ingestion {
                chunk_id: id,
                reason: format!("missing grid points q = {}", missing.join(", ")),
            });
        }
        let rates = points.iter().map(|p| p.1).collect();
        let qualities = points.iter().map(|p| p.2).collect();
        samples.push(RdSample::new(id, rates, qualities, &grid)?);
    }
    Ok((grid, samples))
}

pub fn write_rd_samples<W: Write>(
    output: W,
    grid: &OperatingPointGrid,
    samples: &[RdSample],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record(RD_HEADER).map_err(from_csv)?;
    for s in samples {
        if s.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                actual: s.len(),
            });
        }
        for (j, &q) in grid.points().iter().enumerate() {
            w.write_record([
                s.chunk_id.clone(),
                q.to_string(),
                s.rates[j].to_string(),
                s.qualities[j].to_string(),
            ])
            .map_err(from_csv)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `chunk_id,f0,f1,...`. All rows must have the header's width.
pub fn read_features<R: Read>(input: R) -> Result<Vec<FeatureVector>> {
    let mut rdr = reader(input);
    let h = header(&mut rdr)?;
    if h[0] != "chunk_id" || h.len() < 2 {
        return Err(csv_err(1, "expected header chunk_id,f0,f1,..."));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(from_csv)?;
        let line = line_of(&record);
        let id = record[0].to_owned();
        if !seen.insert(id.clone()) {
            return Err(csv_err(line, format!("duplicate chunk_id {id}")));
        }
        let values = record
            .iter()
            .zip(&h)
            .skip(1)
            .map(|(field, col)| parse_f64(field, line, col))
            .collect::<Result<Vec<_>>>()?;
        out.push(FeatureVector::new(id, values));
    }
    if out.is_empty() {
        return Err(csv_err(1, "no data rows"));
    }
    Ok(out)
}

pub fn write_features<W: Write>(output: W, features: &[FeatureVector]) -> Result<()> {
    let dim = features.first().map_or(0, |f| f.values.len());
    let mut w = csv::Writer::from_writer(output);
    let mut head = vec!["chunk_id".to_owned()];
    head.extend((0..dim).map(|i| format!("f{i}")));
    w.write_record(&head).map_err(from_csv)?;
    for f in features {
        if f.values.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: f.values.len(),
            });
        }
        let mut row = vec![f.chunk_id.clone()];
        row.extend(f.values.iter().map(f64::to_string));
        w.write_record(&row).map_err(from_csv)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a two-column `chunk_id,<name>` file of non-negative integer labels.
pub fn read_labels<R: Read>(input: R) -> Result<Vec<(String, usize)>> {
    let mut rdr = reader(input);
    let h = header(&mut rdr)?;
    if h.len() != 2 || h[0] != "chunk_id" {
        return Err(csv_err(1, "expected a two-column header chunk_id,<label>"));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(from_csv)?;
        let line = line_of(&record);
        let id = record[0].to_owned();
        if !seen.insert(id.clone()) {
            return Err(csv_err(line, format!("duplicate chunk_id {id}")));
        }
        let label: usize = record[1].parse().map_err(|_| {
            csv_err(
                line,
                format!("column {}: {:?} is not a cluster id", h[1], &record[1]),
            )
        })?;
        out.push((id, label));
    }
    Ok(out)
}

pub fn write_labels<W: Write>(output: W, column: &str, labels: &[(String, usize)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record(["chunk_id", column]).map_err(from_csv)?;
    for (id, l) in labels {
        w.write_record([id.as_str(), &l.to_string()])
            .map_err(from_csv)?;
    }
    w.flush()?;
    Ok(())
}

/// Pairs features with labels by chunk id, in feature order. Any id present
/// on one side only is an error listing every such id.
pub fn join_labels(
    features: &[FeatureVector],
    labels: &[(String, usize)],
) -> Result<Vec<LabeledFeature>> {
    let by_id: BTreeMap<&str, usize> = labels.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    let feature_ids: HashSet<&str> = features.iter().map(|f| f.chunk_id.as_str()).collect();
    let mut unmatched: Vec<String> = features
        .iter()
        .filter(|f| !by_id.contains_key(f.chunk_id.as_str()))
        .map(|f| f.chunk_id.clone())
        .collect();
    unmatched.extend(
        by_id
            .keys()
            .filter(|id| !feature_ids.contains(*id))
            .map(|id| id.to_string()),
    );
    if !unmatched.is_empty() {
        return Err(Error::MissingChunks(unmatched));
    }
    Ok(features
        .iter()
        .map(|f| (f.clone(), by_id[f.chunk_id.as_str()]))
        .collect())
}
