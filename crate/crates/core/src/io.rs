//! On-disk formats: the graph CSV, the binary matrix container, basis
//! and model files, and the evaluation result tables.
//!
//! Numeric payloads are stored as little-endian IEEE-754 doubles so
//! every value round-trips bit-exactly; human-facing tables are RFC-4180
//! CSV with a header row.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{RegretStats, SuiteReport};
use crate::grid::TimeGrid;
use crate::lowrank::{Provenance, SpatialBasis};
use crate::network::{RoadNetwork, Segment};
use crate::predictors::{CycleConfig, CycleModel};
use crate::traffic::TrafficMatrix;

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), msg: msg.into() }
}

// ---------------------------------------------------------------------------
// Graph file
// ---------------------------------------------------------------------------

/// Write a network as UTF-8 text: one `edge_id,from,to,segment_row` line
/// per edge, with a commented header.
pub fn write_graph(path: &Path, network: &RoadNetwork) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# edge_id,from,to,segment_row")?;
    for s in network.segments() {
        writeln!(w, "{},{},{},{}", s.edge_id, s.from, s.to, s.segment_row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a graph file. Lines starting with `#` and blank lines are
/// skipped; everything else must be four comma-separated integers.
pub fn read_graph(path: &Path) -> Result<RoadNetwork> {
    let text = std::fs::read_to_string(path)?;
    let mut segments = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(format_err(
                path,
                format!("line {}: expected 4 fields, got {}", lineno + 1, fields.len()),
            ));
        }
        let parse = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| format_err(path, format!("line {}: bad integer {s:?}", lineno + 1)))
        };
        segments.push(Segment {
            edge_id: parse(fields[0])?,
            from: parse(fields[1])?,
            to: parse(fields[2])?,
            segment_row: parse(fields[3])?,
        });
    }
    RoadNetwork::new(segments)
}

// ---------------------------------------------------------------------------
// Binary container plumbing
// ---------------------------------------------------------------------------

/// Write one `[u64 LE header length][JSON header][payload]` container.
fn write_container<H: Serialize>(path: &Path, header: &H, payload: &[u8]) -> Result<()> {
    let header_bytes = serde_json::to_vec(header)
        .map_err(|e| format_err(path, format!("encoding header: {e}")))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

/// Read a container back: parsed header plus raw payload bytes.
fn read_container<H: for<'de> Deserialize<'de>>(path: &Path) -> Result<(H, Vec<u8>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(format_err(path, "file shorter than the length prefix"));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() < header_len {
        return Err(format_err(path, "header length exceeds the file size"));
    }
    let header = serde_json::from_slice(&body[..header_len])
        .map_err(|e| format_err(path, format!("parsing header: {e}")))?;
    Ok((header, body[header_len..].to_vec()))
}

fn push_f64s<'a>(buf: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decode `count` doubles starting at `*offset`, advancing it.
fn take_f64s(path: &Path, payload: &[u8], offset: &mut usize, count: usize) -> Result<Vec<f64>> {
    let need = count * 8;
    let end = *offset + need;
    if payload.len() < end {
        return Err(format_err(path, "payload truncated"));
    }
    let out = payload[*offset..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    *offset = end;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Matrix container
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MatrixHeader {
    m: usize,
    n: usize,
    start_epoch: i64,
    resolution: u32,
    byte_order: String,
    layout: String,
}

const BYTE_ORDER: &str = "little";
const LAYOUT: &str = "row-major-f64";

/// Write a traffic matrix: JSON header, row-major doubles, then the
/// observation mask packed 8 cells per byte (row-major, LSB first).
pub fn write_matrix(path: &Path, matrix: &TrafficMatrix) -> Result<()> {
    let (m, n) = (matrix.m(), matrix.n());
    let header = MatrixHeader {
        m,
        n,
        start_epoch: matrix.grid.start_epoch,
        resolution: matrix.grid.resolution,
        byte_order: BYTE_ORDER.into(),
        layout: LAYOUT.into(),
    };
    let mut payload = Vec::with_capacity(m * n * 8 + (m * n).div_ceil(8));
    push_f64s(&mut payload, matrix.values.iter());
    let mut byte = 0u8;
    for (cell, &observed) in matrix.mask.iter().enumerate() {
        if observed {
            byte |= 1 << (cell % 8);
        }
        if cell % 8 == 7 {
            payload.push(byte);
            byte = 0;
        }
    }
    if (m * n) % 8 != 0 {
        payload.push(byte);
    }
    write_container(path, &header, &payload)
}

/// Read a matrix container written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<TrafficMatrix> {
    let (header, payload): (MatrixHeader, _) = read_container(path)?;
    if header.byte_order != BYTE_ORDER || header.layout != LAYOUT {
        return Err(format_err(
            path,
            format!("unsupported encoding {}/{}", header.byte_order, header.layout),
        ));
    }
    let (m, n) = (header.m, header.n);
    let mut offset = 0;
    let values = take_f64s(path, &payload, &mut offset, m * n)?;
    let mask_bytes = (m * n).div_ceil(8);
    if payload.len() < offset + mask_bytes {
        return Err(format_err(path, "mask truncated"));
    }
    let mask_bits = &payload[offset..offset + mask_bytes];
    let mask = Array2::from_shape_fn((m, n), |(r, j)| {
        let cell = r * n + j;
        mask_bits[cell / 8] & (1 << (cell % 8)) != 0
    });
    let values = Array2::from_shape_vec((m, n), values)
        .map_err(|e| format_err(path, format!("reshaping values: {e}")))?;
    TrafficMatrix::new(values, mask, TimeGrid::new(header.start_epoch, header.resolution, n))
}

/// Import a matrix from CSV: one row per segment, one column per
/// interval, empty cells missing. The time axis is supplied by the
/// caller since the CSV carries no epoch information.
pub fn read_matrix_csv(path: &Path, start_epoch: i64, resolution: u32) -> Result<TrafficMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| format_err(path, e.to_string()))?;
    let mut values_rows: Vec<Vec<f64>> = Vec::new();
    let mut mask_rows: Vec<Vec<bool>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let mut values = Vec::with_capacity(record.len());
        let mut mask = Vec::with_capacity(record.len());
        for (j, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() {
                values.push(0.0);
                mask.push(false);
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    format_err(
                        path,
                        format!("row {}, column {}: bad number {field:?}", r + 1, j + 1),
                    )
                })?;
                values.push(v);
                mask.push(true);
            }
        }
        values_rows.push(values);
        mask_rows.push(mask);
    }
    if values_rows.is_empty() {
        return Err(format_err(path, "no rows"));
    }
    let n = values_rows[0].len();
    let m = values_rows.len();
    let values = Array2::from_shape_fn((m, n), |(r, j)| values_rows[r][j]);
    let mask = Array2::from_shape_fn((m, n), |(r, j)| mask_rows[r][j]);
    TrafficMatrix::new(values, mask, TimeGrid::new(start_epoch, resolution, n))
}

/// Import raw (unaligned) recordings: CSV rows
/// `segment_id,timestamp_seconds,travel_seconds`, in any row order.
/// Samples are grouped per segment and sorted by timestamp; duplicate
/// timestamps within a segment are rejected.
pub fn read_raw_series_csv(path: &Path) -> Result<Vec<crate::preprocess::RawSeries>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| format_err(path, e.to_string()))?;
    let mut by_segment: std::collections::BTreeMap<usize, Vec<(f64, f64)>> =
        std::collections::BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        if record.len() != 3 {
            return Err(format_err(
                path,
                format!("row {}: expected 3 fields, got {}", i + 1, record.len()),
            ));
        }
        let segment: usize = record[0].trim().parse().map_err(|_| {
            format_err(path, format!("row {}: bad segment id {:?}", i + 1, &record[0]))
        })?;
        let number = |j: usize| -> Result<f64> {
            let v: f64 = record[j].trim().parse().map_err(|_| {
                format_err(path, format!("row {}: bad number {:?}", i + 1, &record[j]))
            })?;
            if !v.is_finite() {
                return Err(format_err(path, format!("row {}: non-finite value {v}", i + 1)));
            }
            Ok(v)
        };
        let (ts, value) = (number(1)?, number(2)?);
        by_segment.entry(segment).or_default().push((ts, value));
    }
    by_segment
        .into_iter()
        .map(|(segment, mut samples)| {
            samples.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite timestamps"));
            crate::preprocess::RawSeries::new(segment, samples)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Basis and model files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct BasisHeader {
    kind: String,
    m: usize,
    k: usize,
    n_singular: usize,
    trained_on: Provenance,
}

const BASIS_KIND: &str = "spatial_basis";

pub fn write_basis(path: &Path, basis: &SpatialBasis) -> Result<()> {
    let header = BasisHeader {
        kind: BASIS_KIND.into(),
        m: basis.u_bar.nrows(),
        k: basis.k,
        n_singular: basis.singular_values.len(),
        trained_on: basis.trained_on.clone(),
    };
    let mut payload = Vec::new();
    push_f64s(&mut payload, basis.u_bar.iter());
    push_f64s(&mut payload, basis.singular_values.iter());
    write_container(path, &header, &payload)
}

pub fn read_basis(path: &Path) -> Result<SpatialBasis> {
    let (header, payload): (BasisHeader, _) = read_container(path)?;
    if header.kind != BASIS_KIND {
        return Err(format_err(path, format!("expected a basis file, found {:?}", header.kind)));
    }
    let mut offset = 0;
    let u = take_f64s(path, &payload, &mut offset, header.m * header.k)?;
    let sv = take_f64s(path, &payload, &mut offset, header.n_singular)?;
    Ok(SpatialBasis {
        u_bar: Array2::from_shape_vec((header.m, header.k), u)
            .map_err(|e| format_err(path, format!("reshaping basis: {e}")))?,
        singular_values: Array1::from_vec(sv),
        k: header.k,
        trained_on: header.trained_on,
    })
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    kind: String,
    m: usize,
    k: usize,
    l: usize,
    cycle_period: u64,
    resolution: u32,
    anchor_epoch: i64,
    n_singular: usize,
    trained_on: Provenance,
}

const MODEL_KIND: &str = "cycle_model";

pub fn write_model(path: &Path, model: &CycleModel) -> Result<()> {
    let l = model.cfg.intervals_per_cycle();
    let header = ModelHeader {
        kind: MODEL_KIND.into(),
        m: model.basis.u_bar.nrows(),
        k: model.basis.u_bar.ncols(),
        l,
        cycle_period: model.cfg.cycle_period,
        resolution: model.cfg.resolution,
        anchor_epoch: model.cfg.anchor_epoch,
        n_singular: model.basis.singular_values.len(),
        trained_on: model.basis.trained_on.clone(),
    };
    let mut payload = Vec::new();
    push_f64s(&mut payload, model.basis.u_bar.iter());
    push_f64s(&mut payload, model.basis.singular_values.iter());
    push_f64s(&mut payload, model.alphas.iter());
    for &c in &model.cycles_seen {
        payload.extend_from_slice(&c.to_le_bytes());
    }
    write_container(path, &header, &payload)
}

pub fn read_model(path: &Path) -> Result<CycleModel> {
    let (header, payload): (ModelHeader, _) = read_container(path)?;
    if header.kind != MODEL_KIND {
        return Err(format_err(path, format!("expected a model file, found {:?}", header.kind)));
    }
    let mut offset = 0;
    let u = take_f64s(path, &payload, &mut offset, header.m * header.k)?;
    let sv = take_f64s(path, &payload, &mut offset, header.n_singular)?;
    let alphas = take_f64s(path, &payload, &mut offset, header.l * header.k)?;
    let counts_bytes = header.l * 8;
    if payload.len() < offset + counts_bytes {
        return Err(format_err(path, "cycle counters truncated"));
    }
    let cycles_seen: Vec<u64> = payload[offset..offset + counts_bytes]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let basis = SpatialBasis {
        u_bar: Array2::from_shape_vec((header.m, header.k), u)
            .map_err(|e| format_err(path, format!("reshaping basis: {e}")))?,
        singular_values: Array1::from_vec(sv),
        k: header.k,
        trained_on: header.trained_on,
    };
    Ok(CycleModel {
        basis,
        cfg: CycleConfig::new(header.cycle_period, header.resolution, header.anchor_epoch)?,
        alphas: Array2::from_shape_vec((header.l, header.k), alphas)
            .map_err(|e| format_err(path, format!("reshaping coefficients: {e}")))?,
        cycles_seen,
    })
}

// ---------------------------------------------------------------------------
// Evaluation tables
// ---------------------------------------------------------------------------

/// `regret_samples.csv`: one evaluated (query, predictor) pair per row.
pub fn write_regret_samples(path: &Path, report: &SuiteReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    w.write_record([
        "predictor",
        "origin",
        "destination",
        "departure_epoch",
        "t_pred_seconds",
        "t_rt_seconds",
        "regret_seconds",
        "hop_length",
        "hour",
        "weekday",
        "workday",
        "direction",
    ])
    .map_err(|e| format_err(path, e.to_string()))?;
    for pr in &report.per_predictor {
        for s in &pr.samples {
            w.write_record([
                s.predictor.clone(),
                s.query.origin.to_string(),
                s.query.destination.to_string(),
                s.query.departure.to_string(),
                s.t_pred.to_string(),
                s.t_rt.to_string(),
                s.regret.to_string(),
                s.hop_length.to_string(),
                s.keys.hour.to_string(),
                s.keys.weekday.to_string(),
                s.keys.workday.to_string(),
                s.keys.direction.as_str().to_string(),
            ])
            .map_err(|e| format_err(path, e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct QuantileOut {
    alpha: f64,
    regret_seconds: f64,
}

#[derive(Serialize)]
struct StatsSummaryOut {
    count: usize,
    mean_regret_seconds: f64,
    upper_quantiles: Vec<QuantileOut>,
}

impl StatsSummaryOut {
    fn from(stats: &RegretStats) -> Self {
        StatsSummaryOut {
            count: stats.count,
            mean_regret_seconds: stats.mean,
            upper_quantiles: stats
                .quantiles
                .iter()
                .map(|&(alpha, q)| QuantileOut { alpha, regret_seconds: q })
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct PredictorStatsOut {
    name: String,
    errors: usize,
    overall: StatsSummaryOut,
    by_hour: std::collections::BTreeMap<String, StatsSummaryOut>,
    by_weekday: std::collections::BTreeMap<String, StatsSummaryOut>,
    by_workday: std::collections::BTreeMap<String, StatsSummaryOut>,
    by_direction: std::collections::BTreeMap<String, StatsSummaryOut>,
}

#[derive(Serialize)]
struct StatsOut {
    n_queries: usize,
    benchmark_errors: usize,
    predictors: Vec<PredictorStatsOut>,
}

/// `stats.json`: per-predictor means and upper quantiles (seconds),
/// overall and per partition.
pub fn write_stats_json(path: &Path, report: &SuiteReport) -> Result<()> {
    let out = StatsOut {
        n_queries: report.n_queries,
        benchmark_errors: report.benchmark_errors.len(),
        predictors: report
            .per_predictor
            .iter()
            .map(|pr| PredictorStatsOut {
                name: pr.name.clone(),
                errors: pr.errors.len(),
                overall: StatsSummaryOut::from(&pr.stats),
                by_hour: pr
                    .by_hour
                    .iter()
                    .map(|(k, v)| (k.to_string(), StatsSummaryOut::from(v)))
                    .collect(),
                by_weekday: pr
                    .by_weekday
                    .iter()
                    .map(|(k, v)| (k.to_string(), StatsSummaryOut::from(v)))
                    .collect(),
                by_workday: pr
                    .by_workday
                    .iter()
                    .map(|(k, v)| {
                        (
                            if *k { "workday" } else { "restday" }.to_string(),
                            StatsSummaryOut::from(v),
                        )
                    })
                    .collect(),
                by_direction: pr
                    .by_direction
                    .iter()
                    .map(|(k, v)| (k.as_str().to_string(), StatsSummaryOut::from(v)))
                    .collect(),
            })
            .collect(),
    };
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, &out)
        .map_err(|e| format_err(path, format!("encoding stats: {e}")))?;
    Ok(())
}

/// `ccdf_<predictor>.csv` files, one per predictor, written into `dir`.
/// Returns the paths written.
pub fn write_ccdf_csvs(dir: &Path, report: &SuiteReport) -> Result<Vec<std::path::PathBuf>> {
    let mut paths = Vec::new();
    for pr in &report.per_predictor {
        let path = dir.join(format!("ccdf_{}.csv", pr.name));
        let mut w = csv::Writer::from_path(&path).map_err(|e| format_err(&path, e.to_string()))?;
        w.write_record(["regret_seconds", "exceedance_probability"])
            .map_err(|e| format_err(&path, e.to_string()))?;
        let curve = &pr.stats.ccdf;
        for (v, e) in curve.support.iter().zip(&curve.exceedance) {
            w.write_record([v.to_string(), e.to_string()])
                .map_err(|e| format_err(&path, e.to_string()))?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

/// `hopquantiles.csv`: q^up(0.10) per hop-length bin per predictor; bins
/// below the sample threshold were already suppressed upstream.
pub fn write_hop_quantiles(path: &Path, report: &SuiteReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    w.write_record(["predictor", "hop_length", "count", "q10_regret_seconds"])
        .map_err(|e| format_err(path, e.to_string()))?;
    for pr in &report.per_predictor {
        for (hop, bin) in &pr.hop_quantiles {
            w.write_record([
                pr.name.clone(),
                hop.to_string(),
                bin.count.to_string(),
                bin.q10.to_string(),
            ])
            .map_err(|e| format_err(path, e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Convenience: write all four evaluation outputs into `dir`.
pub fn write_evaluation_outputs(dir: &Path, report: &SuiteReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_regret_samples(&dir.join("regret_samples.csv"), report)?;
    write_stats_json(&dir.join("stats.json"), report)?;
    write_ccdf_csvs(dir, report)?;
    write_hop_quantiles(&dir.join("hopquantiles.csv"), report)?;
    Ok(())
}
