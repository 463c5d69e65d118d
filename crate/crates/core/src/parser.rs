//! OpenML run prediction files: format detection, discrepancy classification
//! and repair.
//!
//! A prediction row is *discrepant* when its predicted label is not the class
//! with the highest confidence. Some discrepancies are fixable (rounding
//! noise, rows that do not sum to one, runs whose confidences carry no
//! information at all); the rest are tagged `unexplainable` and mark the whole
//! run as corrupted.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::arff::{self, ArffError};
use crate::model::ClassIdx;

/// Rows whose sum deviates from one by more than this are rescaled by `repair`.
pub const REPAIRED_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("unsupported prediction file layout ({reason}); columns: {}", columns.join(", "))]
    UnsupportedFormat {
        columns: Vec<String>,
        reason: String,
    },
    #[error("prediction file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Arff(#[from] ArffError),
    #[error("prediction CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyClass {
    Consistent,
    PrecisionFixed,
    Renormalized,
    NonrepresentativeFixed,
    Unexplainable,
}

impl DiscrepancyClass {
    /// Whether `repair` rewrites rows of this class.
    pub fn is_repaired(self) -> bool {
        matches!(
            self,
            DiscrepancyClass::PrecisionFixed
                | DiscrepancyClass::Renormalized
                | DiscrepancyClass::NonrepresentativeFixed
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DiscrepancyClass::Consistent => "consistent",
            DiscrepancyClass::PrecisionFixed => "precision_fixed",
            DiscrepancyClass::Renormalized => "renormalized",
            DiscrepancyClass::NonrepresentativeFixed => "nonrepresentative_fixed",
            DiscrepancyClass::Unexplainable => "unexplainable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub row_id: usize,
    pub fold: Option<usize>,
    pub predicted: ClassIdx,
    /// One value per class label, in `class_labels` order.
    pub confidence: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub eps_sum: f64,
    pub eps_tie: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            eps_sum: 1e-6,
            eps_tie: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepairPolicy {
    pub tolerances: Tolerances,
    /// Detect runs whose confidences are meaningless and rebuild them from
    /// the predictions. Requires ground truth.
    pub detect_nonrepresentative: bool,
}

impl Default for RepairPolicy {
    fn default() -> Self {
        RepairPolicy {
            tolerances: Tolerances::default(),
            detect_nonrepresentative: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    RowId,
    Fold,
    Repeat,
    Prediction,
    Confidence(ClassIdx),
    Ignored,
}

fn column_role(name: &str, class_labels: &[String]) -> Result<Role, String> {
    let lower = name.trim().to_ascii_lowercase();
    match lower.as_str() {
        "row_id" => return Ok(Role::RowId),
        "fold" => return Ok(Role::Fold),
        "repeat" => return Ok(Role::Repeat),
        "prediction" | "pred" => return Ok(Role::Prediction),
        _ => {}
    }
    let trimmed = name.trim();
    for prefix in ["confidence.", "confidence_"] {
        if trimmed.len() > prefix.len() && trimmed[..prefix.len()].eq_ignore_ascii_case(prefix) {
            let label = &trimmed[prefix.len()..];
            return class_labels
                .iter()
                .position(|l| l == label)
                .map(Role::Confidence)
                .ok_or_else(|| format!("confidence column for unknown label {label:?}"));
        }
    }
    Ok(Role::Ignored)
}

struct Layout {
    roles: Vec<Role>,
    row_id: usize,
    prediction: usize,
    confidence: Vec<usize>,
}

fn detect_layout(columns: &[String], class_labels: &[String]) -> Result<Layout, ParseError> {
    let unsupported = |reason: String| ParseError::UnsupportedFormat {
        columns: columns.to_vec(),
        reason,
    };
    let roles = columns
        .iter()
        .map(|c| column_role(c, class_labels))
        .collect::<Result<Vec<_>, _>>()
        .map_err(unsupported)?;
    let find = |role: Role| roles.iter().position(|r| *r == role);
    let row_id = find(Role::RowId).ok_or_else(|| unsupported("no row_id column".into()))?;
    let prediction =
        find(Role::Prediction).ok_or_else(|| unsupported("no prediction column".into()))?;
    let mut confidence = Vec::with_capacity(class_labels.len());
    for (k, label) in class_labels.iter().enumerate() {
        let hits: Vec<usize> = roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == Role::Confidence(k))
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [one] => confidence.push(*one),
            [] => return Err(unsupported(format!("no confidence column for {label:?}"))),
            _ => {
                return Err(unsupported(format!(
                    "several confidence columns for {label:?}"
                )))
            }
        }
    }
    Ok(Layout {
        roles,
        row_id,
        prediction,
        confidence,
    })
}

fn parse_index(text: &str, what: &str, line: usize) -> Result<usize, ParseError> {
    let value: f64 = text.trim().parse().map_err(|_| ParseError::Format {
        line,
        message: format!("{what} {text:?} is not a number"),
    })?;
    if value < 0.0 || value.fract() != 0.0 || !value.is_finite() {
        return Err(ParseError::Format {
            line,
            message: format!("{what} {text:?} is not a non-negative integer"),
        });
    }
    Ok(value as usize)
}

/// A data line number and its cells (`None` for missing).
type Record = (usize, Vec<Option<String>>);

/// Parses an OpenML prediction file (ARFF or CSV) into one row per
/// instance, sorted by `row_id`. Only the first repeat is kept.
pub fn parse_prediction_file(
    bytes: &[u8],
    class_labels: &[String],
) -> Result<Vec<PredictionRow>, ParseError> {
    // (line, cells) pairs in a common textual form
    let (columns, records): (Vec<String>, Vec<Record>) = if arff::looks_like_arff(bytes) {
        let doc = arff::parse(bytes)?;
        let columns = doc.attributes.iter().map(|a| a.name.clone()).collect();
        let records = doc
            .rows
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let cells = row
                    .into_iter()
                    .map(|v| match v {
                        arff::Value::Missing => None,
                        other => Some(other.to_string()),
                    })
                    .collect();
                (i + 1, cells)
            })
            .collect();
        (columns, records)
    } else {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(bytes);
        let columns = rdr.headers()?.iter().map(str::to_string).collect();
        let mut records = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let cells = rec
                .iter()
                .map(|c| (!c.is_empty() && c != "?").then(|| c.to_string()))
                .collect();
            records.push((i + 2, cells));
        }
        (columns, records)
    };

    let layout = detect_layout(&columns, class_labels)?;
    let repeat_col = layout.roles.iter().position(|r| *r == Role::Repeat);
    let fold_col = layout.roles.iter().position(|r| *r == Role::Fold);

    let mut by_repeat: HashMap<usize, Vec<PredictionRow>> = HashMap::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    for (line, cells) in records {
        if cells.len() != columns.len() {
            return Err(ParseError::Format {
                line,
                message: format!("{} cells, header has {}", cells.len(), columns.len()),
            });
        }
        let required = |col: usize, what: &str| {
            cells[col].as_deref().ok_or_else(|| ParseError::Format {
                line,
                message: format!("missing {what}"),
            })
        };
        let row_id = parse_index(required(layout.row_id, "row_id")?, "row_id", line)?;
        let repeat = match repeat_col {
            Some(c) => parse_index(required(c, "repeat")?, "repeat", line)?,
            None => 0,
        };
        let fold = match fold_col {
            Some(c) => Some(parse_index(required(c, "fold")?, "fold", line)?),
            None => None,
        };
        let label = required(layout.prediction, "prediction")?;
        let predicted = class_labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| ParseError::Format {
                line,
                message: format!("predicted label {label:?} not among class labels"),
            })?;
        let mut confidence = Vec::with_capacity(class_labels.len());
        for &col in &layout.confidence {
            let raw = required(col, &format!("value for {}", columns[col]))?;
            let v: f64 = raw.parse().map_err(|_| ParseError::Format {
                line,
                message: format!("confidence {raw:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(ParseError::Format {
                    line,
                    message: format!("confidence {raw:?} is not finite"),
                });
            }
            confidence.push(v);
        }
        if let Some(first) = seen.insert((repeat, row_id), line) {
            return Err(ParseError::Format {
                line,
                message: format!(
                    "row_id {row_id} appears twice in repeat {repeat} (first on line {first})"
                ),
            });
        }
        by_repeat.entry(repeat).or_default().push(PredictionRow {
            row_id,
            fold,
            predicted,
            confidence,
        });
    }
    let first_repeat = by_repeat.keys().min().copied();
    if by_repeat.len() > 1 {
        log::warn!(
            "prediction file holds {} repeats; keeping repeat {}",
            by_repeat.len(),
            first_repeat.unwrap_or(0)
        );
    }
    let mut rows = first_repeat
        .and_then(|r| by_repeat.remove(&r))
        .unwrap_or_default();
    rows.sort_by_key(|r| r.row_id);
    Ok(rows)
}

fn within_tie(max: f64, value: f64, eps_tie: f64) -> bool {
    // a few ulps of slack so that decimal inputs exactly eps_tie apart still count
    max - value <= eps_tie + 4.0 * f64::EPSILON * max.abs()
}

fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Classification plus the repaired confidence row, if the row changes.
fn analyze(
    row: &PredictionRow,
    tol: &Tolerances,
    run_degenerate: bool,
) -> (DiscrepancyClass, Option<Vec<f64>>) {
    let conf = &row.confidence;
    let p = row.predicted;
    let one_hot = || {
        let mut v = vec![0.0; conf.len()];
        v[p] = 1.0;
        v
    };
    let fallback = || {
        if run_degenerate {
            (DiscrepancyClass::NonrepresentativeFixed, Some(one_hot()))
        } else {
            (DiscrepancyClass::Unexplainable, None)
        }
    };
    let sum: f64 = conf.iter().sum();
    if p >= conf.len() || !sum.is_finite() || sum <= 0.0 || conf.iter().any(|&v| v < 0.0) {
        return fallback();
    }
    let needs_rescale = (sum - 1.0).abs() > REPAIRED_SUM_TOLERANCE;
    let work: Vec<f64> = if needs_rescale {
        conf.iter().map(|v| v / sum).collect()
    } else {
        conf.clone()
    };
    let top = first_argmax(&work);
    if work[p] == work[top] {
        let class = if (sum - 1.0).abs() > tol.eps_sum {
            DiscrepancyClass::Renormalized
        } else {
            DiscrepancyClass::Consistent
        };
        return (class, needs_rescale.then_some(work));
    }
    if within_tie(work[top], work[p], tol.eps_tie) {
        let mut fixed = work;
        fixed.swap(p, top);
        return (DiscrepancyClass::PrecisionFixed, Some(fixed));
    }
    fallback()
}

/// Row-level classification, ignoring run-level degeneracy.
pub fn classify_discrepancy(row: &PredictionRow, tol: &Tolerances) -> DiscrepancyClass {
    analyze(row, tol, false).0
}

/// Classification of a row belonging to a run already known to be degenerate
/// (or not).
pub fn classify_in_run(
    row: &PredictionRow,
    tol: &Tolerances,
    run_degenerate: bool,
) -> DiscrepancyClass {
    analyze(row, tol, run_degenerate).0
}

/// A run is degenerate when most rows disagree with their own prediction
/// while the predictions themselves beat the majority-class baseline.
pub fn is_degenerate_run(
    rows: &[PredictionRow],
    ground_truth: &[ClassIdx],
    tol: &Tolerances,
) -> bool {
    if rows.is_empty() {
        return false;
    }
    let mismatches = rows
        .iter()
        .filter(|r| analyze(r, tol, false).0 == DiscrepancyClass::Unexplainable)
        .count();
    if 2 * mismatches <= rows.len() {
        return false;
    }
    let labelled: Vec<(ClassIdx, ClassIdx)> = rows
        .iter()
        .filter_map(|r| ground_truth.get(r.row_id).map(|&y| (r.predicted, y)))
        .collect();
    if labelled.is_empty() {
        return false;
    }
    let correct = labelled.iter().filter(|(p, y)| p == y).count();
    let mut freq: HashMap<ClassIdx, usize> = HashMap::new();
    for (_, y) in &labelled {
        *freq.entry(*y).or_insert(0) += 1;
    }
    let majority = freq.values().copied().max().unwrap_or(0);
    correct > majority
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairOutcome {
    pub rows: Vec<PredictionRow>,
    pub classes: Vec<DiscrepancyClass>,
    pub corrupted: bool,
    pub degenerate_run: bool,
}

/// Repairs fixable discrepancies of one run. `ground_truth` is indexed by
/// `row_id` and only used for degenerate-run detection.
pub fn repair(
    rows: &[PredictionRow],
    ground_truth: Option<&[ClassIdx]>,
    policy: &RepairPolicy,
) -> RepairOutcome {
    let tol = &policy.tolerances;
    let degenerate_run = policy.detect_nonrepresentative
        && ground_truth.is_some_and(|gt| is_degenerate_run(rows, gt, tol));
    let mut out = Vec::with_capacity(rows.len());
    let mut classes = Vec::with_capacity(rows.len());
    for row in rows {
        let (class, fixed) = analyze(row, tol, degenerate_run);
        let mut row = row.clone();
        if let Some(conf) = fixed {
            row.confidence = conf;
        }
        out.push(row);
        classes.push(class);
    }
    let corrupted = classes.contains(&DiscrepancyClass::Unexplainable);
    RepairOutcome {
        rows: out,
        classes,
        corrupted,
        degenerate_run,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn row(pred: usize, conf: &[f64]) -> PredictionRow {
        PredictionRow {
            row_id: 0,
            fold: None,
            predicted: pred,
            confidence: conf.to_vec(),
        }
    }

    #[test]
    fn csv_with_prediction_and_dot_columns() {
        let text = "row_id,fold,prediction,confidence.yes,confidence.no\n1,0,no,0.2,0.8\n0,1,yes,0.9,0.1\n";
        let rows = parse_prediction_file(text.as_bytes(), &labels(&["no", "yes"])).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].row_id, 0);
        assert_eq!(rows[0].predicted, 1);
        assert_eq!(rows[0].confidence, vec![0.1, 0.9]);
        assert_eq!(rows[1].fold, Some(0));
    }

    #[test]
    fn pred_and_underscore_variants_parse_identically() {
        let a = "row_id,fold,prediction,confidence.yes,confidence.no\n0,0,yes,0.9,0.1\n";
        let b = "row_id,fold,pred,confidence_yes,confidence_no\n0,0,yes,0.9,0.1\n";
        let l = labels(&["no", "yes"]);
        assert_eq!(
            parse_prediction_file(a.as_bytes(), &l).unwrap(),
            parse_prediction_file(b.as_bytes(), &l).unwrap()
        );
    }

    #[test]
    fn arff_with_repeat_fold_row_id() {
        let text = "@relation openml_task_1_predictions\n@attribute repeat numeric\n@attribute fold numeric\n@attribute row_id numeric\n@attribute confidence.no numeric\n@attribute confidence.yes numeric\n@attribute prediction {no,yes}\n@attribute correct {no,yes}\n@data\n0,0,1,0.3,0.7,yes,yes\n0,1,0,0.6,0.4,no,no\n";
        let rows = parse_prediction_file(text.as_bytes(), &labels(&["no", "yes"])).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].row_id, 1);
        assert_eq!(rows[1].fold, Some(0));
        assert_eq!(rows[1].predicted, 1);
    }

    #[test]
    fn unknown_label_column_is_unsupported() {
        let text = "row_id,prediction,confidence.no,confidence.yes,confidence.maybe\n0,no,1,0,0\n";
        let err = parse_prediction_file(text.as_bytes(), &labels(&["no", "yes"])).unwrap_err();
        match err {
            ParseError::UnsupportedFormat { columns, reason } => {
                assert_eq!(columns.len(), 5);
                assert!(reason.contains("maybe"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_prediction_column_is_unsupported() {
        let text = "row_id,label,confidence.no,confidence.yes\n0,no,1,0\n";
        let err = parse_prediction_file(text.as_bytes(), &labels(&["no", "yes"])).unwrap_err();
        assert!(err.to_string().contains("row_id, label"), "{err}");
    }

    #[test]
    fn duplicate_row_id_is_a_format_error() {
        let text = "row_id,prediction,confidence.no,confidence.yes\n0,no,1,0\n0,yes,0,1\n";
        let err = parse_prediction_file(text.as_bytes(), &labels(&["no", "yes"])).unwrap_err();
        assert!(matches!(err, ParseError::Format { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn later_repeats_are_dropped() {
        let text = "repeat,fold,row_id,prediction,confidence.no,confidence.yes\n1,0,0,no,1,0\n0,0,0,yes,0,1\n";
        let rows = parse_prediction_file(text.as_bytes(), &labels(&["no", "yes"])).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].predicted, 1);
    }

    #[test]
    fn classification_examples() {
        let tol = Tolerances::default();
        assert_eq!(
            classify_discrepancy(&row(0, &[0.4999999995, 0.5000000005]), &tol),
            DiscrepancyClass::PrecisionFixed
        );
        assert_eq!(
            classify_discrepancy(&row(0, &[0.7, 0.3]), &tol),
            DiscrepancyClass::Consistent
        );
        assert_eq!(
            classify_discrepancy(&row(0, &[0.1, 0.9]), &tol),
            DiscrepancyClass::Unexplainable
        );
        assert_eq!(
            classify_discrepancy(&row(0, &[0.58, 0.4]), &tol),
            DiscrepancyClass::Renormalized
        );
        assert_eq!(
            classify_in_run(&row(0, &[0.1, 0.9]), &tol, true),
            DiscrepancyClass::NonrepresentativeFixed
        );
        // exact ties favour the prediction
        assert_eq!(
            classify_discrepancy(&row(1, &[0.5, 0.5]), &tol),
            DiscrepancyClass::Consistent
        );
    }

    #[test]
    fn consistency_does_not_depend_on_eps() {
        for eps in [0.0, 1e-12, 1e-3, 0.4] {
            let tol = Tolerances {
                eps_sum: eps,
                eps_tie: eps,
            };
            assert_eq!(
                classify_discrepancy(&row(1, &[0.25, 0.75]), &tol),
                DiscrepancyClass::Consistent
            );
        }
    }

    #[test]
    fn repair_examples() {
        let policy = RepairPolicy::default();
        let good = vec![row(0, &[0.7, 0.3]), row(1, &[0.2, 0.8])];
        let out = repair(&good, None, &policy);
        assert_eq!(out.rows, good);
        assert!(!out.corrupted);

        let renorm = repair(&[row(0, &[0.58, 0.4])], None, &policy);
        assert_eq!(renorm.classes, vec![DiscrepancyClass::Renormalized]);
        let s: f64 = renorm.rows[0].confidence.iter().sum();
        assert!((s - 1.0).abs() <= 1e-12);

        let prec = repair(&[row(0, &[0.4999999995, 0.5000000005])], None, &policy);
        assert_eq!(prec.rows[0].confidence, vec![0.5000000005, 0.4999999995]);
    }

    #[test]
    fn one_bad_row_corrupts_run_but_others_are_repaired() {
        let mut rows: Vec<PredictionRow> = (0..500)
            .map(|i| PredictionRow {
                row_id: i,
                fold: None,
                predicted: 0,
                confidence: vec![0.6, 0.39],
            })
            .collect();
        rows[17].confidence = vec![0.1, 0.9];
        let out = repair(&rows, None, &RepairPolicy::default());
        assert!(out.corrupted);
        assert_eq!(out.classes[17], DiscrepancyClass::Unexplainable);
        assert_eq!(out.rows[17], rows[17]);
        assert_eq!(out.classes[0], DiscrepancyClass::Renormalized);
    }

    #[test]
    fn degenerate_run_is_rebuilt_from_predictions() {
        // predictions perfect, confidences inverted on every row
        let gt: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let rows: Vec<PredictionRow> = gt
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let mut c = [0.8, 0.8];
                c[y] = 0.2;
                PredictionRow {
                    row_id: i,
                    fold: None,
                    predicted: y,
                    confidence: c.iter().map(|v| v / 1.0).collect::<Vec<_>>(),
                }
            })
            .map(|mut r| {
                let s: f64 = r.confidence.iter().sum();
                r.confidence.iter_mut().for_each(|v| *v /= s);
                r
            })
            .collect();
        let out = repair(&rows, Some(&gt), &RepairPolicy::default());
        assert!(out.degenerate_run);
        assert!(!out.corrupted);
        assert!(out
            .classes
            .iter()
            .all(|c| *c == DiscrepancyClass::NonrepresentativeFixed));
        assert_eq!(out.rows[3].confidence, vec![0.0, 1.0]);

        // without ground truth the same run is unexplainable
        assert!(repair(&rows, None, &RepairPolicy::default()).corrupted);
    }
}
