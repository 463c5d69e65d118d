//! On-disk metatask layout.
//!
//! ```text
//! <dir>/meta.json                 metadata, schema, folds, roster
//! <dir>/dataset.csv               features + target, header row
//! <dir>/predictions/run_<id>.csv  instance_index,prediction,confidence.<label>...
//! ```
//!
//! Floats are written in shortest round-trip form so that save/load is exact.
//! Missing feature values are empty CSV fields.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{BaseModelRun, BuildInfo, Cell, FeatureKind, FeatureSpec, Metatask, ModelError};
use crate::parser::DiscrepancyClass;

const FORMAT_VERSION: u32 = 1;
const META_FILE: &str = "meta.json";
const DATASET_FILE: &str = "dataset.csv";
const PREDICTIONS_DIR: &str = "predictions";

#[derive(Serialize, Deserialize)]
struct MetaFile {
    format_version: u32,
    task_id: u64,
    dataset_name: String,
    target_name: String,
    class_labels: Vec<String>,
    n_instances: usize,
    n_folds: usize,
    features: Vec<FeatureSpec>,
    fold_of_instance: Vec<usize>,
    build_info: BuildInfo,
    base_models: Vec<RosterEntry>,
}

#[derive(Serialize, Deserialize)]
struct RosterEntry {
    run_id: u64,
    flow_id: u64,
    flow_name: String,
    setup_id: u64,
    metric_score: f64,
    corrupted: bool,
    repaired: bool,
    discrepancy_counts: BTreeMap<DiscrepancyClass, usize>,
    /// Instances whose class is not `consistent`, grouped by class.
    discrepancies: BTreeMap<DiscrepancyClass, Vec<usize>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(file: &Path, row: Option<usize>, message: impl Into<String>) -> ModelError {
    ModelError::Parse {
        file: file.to_path_buf(),
        row,
        message: message.into(),
    }
}

pub(crate) fn fmt_f64(x: f64) -> String {
    // Display is the shortest representation that parses back to the same bits.
    format!("{x}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, ModelError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn csv_error(path: &Path, e: csv::Error) -> ModelError {
    let row = e.position().map(|p| p.line() as usize);
    parse_err(path, row, e.to_string())
}

pub fn prediction_file_name(run_id: u64) -> String {
    format!("run_{run_id}.csv")
}

/// Writes `m` into `dir`, replacing whatever was there. The directory is
/// assembled next to the target and renamed into place, so a failure leaves
/// no partial output behind.
pub fn save_metatask(m: &Metatask, dir: &Path) -> Result<(), ModelError> {
    m.validate()?;
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(io_err(&parent))?;
    let staging = tempfile::Builder::new()
        .prefix(".metatask-staging-")
        .tempdir_in(&parent)
        .map_err(io_err(&parent))?;
    write_contents(m, staging.path())?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    let staged = staging.keep();
    if let Err(e) = fs::rename(&staged, dir) {
        let _ = fs::remove_dir_all(&staged);
        return Err(io_err(dir)(e));
    }
    Ok(())
}

fn write_contents(m: &Metatask, dir: &Path) -> Result<(), ModelError> {
    let meta = MetaFile {
        format_version: FORMAT_VERSION,
        task_id: m.task_id,
        dataset_name: m.dataset_name.clone(),
        target_name: m.target_name.clone(),
        class_labels: m.class_labels.clone(),
        n_instances: m.n_instances(),
        n_folds: m.n_folds,
        features: m.features.clone(),
        fold_of_instance: m.fold_of_instance.clone(),
        build_info: m.build_info.clone(),
        base_models: m
            .base_models
            .iter()
            .map(|bm| {
                let mut discrepancies: BTreeMap<DiscrepancyClass, Vec<usize>> = BTreeMap::new();
                for (i, d) in bm.discrepancy.iter().enumerate() {
                    if *d != DiscrepancyClass::Consistent {
                        discrepancies.entry(*d).or_default().push(i);
                    }
                }
                RosterEntry {
                    run_id: bm.run_id,
                    flow_id: bm.flow_id,
                    flow_name: bm.flow_name.clone(),
                    setup_id: bm.setup_id,
                    metric_score: bm.metric_score,
                    corrupted: bm.corrupted,
                    repaired: bm.repaired(),
                    discrepancy_counts: bm.discrepancy_counts(),
                    discrepancies,
                }
            })
            .collect(),
    };
    let meta_path = dir.join(META_FILE);
    let mut json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    json.push('\n');
    fs::write(&meta_path, json).map_err(io_err(&meta_path))?;

    let data_path = dir.join(DATASET_FILE);
    let mut w = csv_writer(&data_path)?;
    let mut header: Vec<&str> = m.features.iter().map(|f| f.name.as_str()).collect();
    header.push(&m.target_name);
    w.write_record(&header)
        .map_err(|e| csv_error(&data_path, e))?;
    for (row, &y) in m.instances.iter().zip(&m.ground_truth) {
        let mut record: Vec<String> = row
            .iter()
            .map(|c| match c {
                Cell::Missing => String::new(),
                Cell::Number(x) => fmt_f64(*x),
                Cell::Text(s) => s.clone(),
            })
            .collect();
        record.push(m.class_labels[y].clone());
        w.write_record(&record)
            .map_err(|e| csv_error(&data_path, e))?;
    }
    w.flush().map_err(io_err(&data_path))?;

    let pred_dir = dir.join(PREDICTIONS_DIR);
    fs::create_dir_all(&pred_dir).map_err(io_err(&pred_dir))?;
    let mut header = vec!["instance_index".to_string(), "prediction".to_string()];
    header.extend(m.class_labels.iter().map(|l| format!("confidence.{l}")));
    for bm in &m.base_models {
        let path = pred_dir.join(prediction_file_name(bm.run_id));
        let mut w = csv_writer(&path)?;
        w.write_record(&header).map_err(|e| csv_error(&path, e))?;
        for (i, (&p, conf)) in bm.predictions.iter().zip(bm.confidences.rows()).enumerate() {
            let mut record = vec![i.to_string(), m.class_labels[p].clone()];
            record.extend(conf.iter().map(|&x| fmt_f64(x)));
            w.write_record(&record).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    Ok(())
}

/// Reads a metatask directory and re-validates every invariant.
pub fn load_metatask(dir: &Path) -> Result<Metatask, ModelError> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: MetaFile = serde_json::from_str(&text)
        .map_err(|e| parse_err(&meta_path, Some(e.line()), e.to_string()))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(parse_err(
            &meta_path,
            None,
            format!("unsupported format_version {}", meta.format_version),
        ));
    }
    let label_index = |label: &str| meta.class_labels.iter().position(|l| l == label);

    let data_path = dir.join(DATASET_FILE);
    let mut rdr = csv::ReaderBuilder::new()
        .from_path(&data_path)
        .map_err(|e| csv_error(&data_path, e))?;
    let header = rdr.headers().map_err(|e| csv_error(&data_path, e))?.clone();
    let expected: Vec<&str> = meta
        .features
        .iter()
        .map(|f| f.name.as_str())
        .chain(std::iter::once(meta.target_name.as_str()))
        .collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(parse_err(
            &data_path,
            Some(1),
            "header does not match feature schema + target",
        ));
    }
    let mut instances = Vec::with_capacity(meta.n_instances);
    let mut ground_truth = Vec::with_capacity(meta.n_instances);
    for (r, record) in rdr.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| csv_error(&data_path, e))?;
        let mut row = Vec::with_capacity(meta.features.len());
        for (f, raw) in meta.features.iter().zip(record.iter()) {
            row.push(parse_cell(f, raw).map_err(|m| parse_err(&data_path, Some(line), m))?);
        }
        let target = &record[meta.features.len()];
        let y = label_index(target).ok_or_else(|| {
            parse_err(
                &data_path,
                Some(line),
                format!("target label {target:?} not in class_labels"),
            )
        })?;
        instances.push(row);
        ground_truth.push(y);
    }
    let n = instances.len();
    if n != meta.n_instances {
        return Err(parse_err(
            &data_path,
            None,
            format!("{n} rows, meta.json declares {}", meta.n_instances),
        ));
    }

    let mut base_models = Vec::with_capacity(meta.base_models.len());
    for entry in meta.base_models {
        let path = dir
            .join(PREDICTIONS_DIR)
            .join(prediction_file_name(entry.run_id));
        let (predictions, mut confidences) = read_prediction_csv(&path, &meta.class_labels, n)?;
        let mut discrepancy = vec![DiscrepancyClass::Consistent; n];
        for (class, rows) in &entry.discrepancies {
            for &i in rows {
                if i >= n {
                    return Err(parse_err(
                        &meta_path,
                        None,
                        format!("run {}: discrepancy index {i} out of range", entry.run_id),
                    ));
                }
                discrepancy[i] = *class;
            }
        }
        if entry.repaired {
            for (i, d) in discrepancy.iter().enumerate() {
                if !d.is_repaired() {
                    continue;
                }
                let mut row = confidences.row_mut(i);
                let sum: f64 = row.sum();
                if sum > 0.0 && (sum - 1.0).abs() > 1e-12 {
                    row.mapv_inplace(|v| v / sum);
                }
            }
        }
        base_models.push(BaseModelRun {
            run_id: entry.run_id,
            flow_id: entry.flow_id,
            flow_name: entry.flow_name,
            setup_id: entry.setup_id,
            metric_score: entry.metric_score,
            predictions,
            confidences,
            discrepancy,
            corrupted: entry.corrupted,
        });
    }

    let m = Metatask {
        task_id: meta.task_id,
        dataset_name: meta.dataset_name,
        target_name: meta.target_name,
        class_labels: meta.class_labels,
        features: meta.features,
        instances,
        ground_truth,
        fold_of_instance: meta.fold_of_instance,
        n_folds: meta.n_folds,
        base_models,
        build_info: meta.build_info,
    };
    m.validate()?;
    Ok(m)
}

fn parse_cell(f: &FeatureSpec, raw: &str) -> Result<Cell, String> {
    if raw.is_empty() {
        return Ok(Cell::Missing);
    }
    match f.kind {
        FeatureKind::Numeric => raw
            .parse::<f64>()
            .map(Cell::Number)
            .map_err(|_| format!("feature {:?}: {raw:?} is not numeric", f.name)),
        FeatureKind::Categorical => Ok(Cell::Text(raw.to_string())),
    }
}

fn read_prediction_csv(
    path: &Path,
    class_labels: &[String],
    n: usize,
) -> Result<(Vec<usize>, Array2<f64>), ModelError> {
    let mut rdr = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut expected = vec!["instance_index".to_string(), "prediction".to_string()];
    expected.extend(class_labels.iter().map(|l| format!("confidence.{l}")));
    if header.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>()
    {
        return Err(parse_err(
            path,
            Some(1),
            "unexpected prediction file header",
        ));
    }
    let c = class_labels.len();
    let mut predictions = vec![usize::MAX; n];
    let mut confidences = Array2::zeros((n, c));
    for (r, record) in rdr.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        let i: usize = record[0].parse().map_err(|_| {
            parse_err(
                path,
                Some(line),
                format!("bad instance_index {:?}", &record[0]),
            )
        })?;
        if i >= n {
            return Err(parse_err(
                path,
                Some(line),
                format!("instance_index {i} out of range"),
            ));
        }
        if predictions[i] != usize::MAX {
            return Err(parse_err(
                path,
                Some(line),
                format!("duplicate instance_index {i}"),
            ));
        }
        predictions[i] = class_labels
            .iter()
            .position(|l| l == &record[1])
            .ok_or_else(|| {
                parse_err(
                    path,
                    Some(line),
                    format!("prediction {:?} not in class_labels", &record[1]),
                )
            })?;
        for k in 0..c {
            confidences[[i, k]] = record[2 + k].parse().map_err(|_| {
                parse_err(
                    path,
                    Some(line),
                    format!("bad confidence {:?}", &record[2 + k]),
                )
            })?;
        }
    }
    if let Some(gap) = predictions.iter().position(|&p| p == usize::MAX) {
        return Err(parse_err(
            path,
            None,
            format!("missing instance_index {gap}"),
        ));
    }
    Ok((predictions, confidences))
}
