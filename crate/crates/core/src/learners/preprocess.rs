use std::ops::Range;

use ndarray::{Array2, Axis};

use crate::model::{Cell, FeatureKind, FeatureSpec};

/// Value substituted for missing numeric cells.
pub const MISSING_NUMERIC_FILL: f64 = -1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedFeatures {
    /// `n × D` design matrix.
    pub matrix: Array2<f64>,
    /// Output column span of each original feature.
    pub encoding_map: Vec<Range<usize>>,
}

impl PreprocessedFeatures {
    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn width(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> PreprocessedFeatures {
        PreprocessedFeatures {
            matrix: self.matrix.select(Axis(0), rows),
            encoding_map: self.encoding_map.clone(),
        }
    }
}

fn width_of(f: &FeatureSpec) -> usize {
    match f.kind {
        FeatureKind::Numeric => 1,
        // categories + one "missing" indicator
        FeatureKind::Categorical => f.categories.len() + 1,
    }
}

/// One-hot encodes categorical features and fills missing values.
///
/// Numeric features map to one column (missing → -1). Categorical features
/// map to one column per category plus a trailing missing-indicator column;
/// unknown categories leave the whole block at zero.
pub fn preprocess(instances: &[Vec<Cell>], schema: &[FeatureSpec]) -> PreprocessedFeatures {
    let mut encoding_map = Vec::with_capacity(schema.len());
    let mut width = 0;
    for f in schema {
        let w = width_of(f);
        encoding_map.push(width..width + w);
        width += w;
    }
    let mut matrix = Array2::zeros((instances.len(), width));
    for (i, row) in instances.iter().enumerate() {
        for ((f, span), cell) in schema.iter().zip(&encoding_map).zip(row) {
            match f.kind {
                FeatureKind::Numeric => {
                    matrix[[i, span.start]] = match cell {
                        Cell::Number(x) if x.is_finite() => *x,
                        Cell::Text(s) => s
                            .trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|x| x.is_finite())
                            .unwrap_or(MISSING_NUMERIC_FILL),
                        _ => MISSING_NUMERIC_FILL,
                    };
                }
                FeatureKind::Categorical => {
                    let text = match cell {
                        Cell::Missing => {
                            matrix[[i, span.end - 1]] = 1.0;
                            continue;
                        }
                        Cell::Text(s) => s.clone(),
                        Cell::Number(x) => format!("{x}"),
                    };
                    if let Some(k) = f.categories.iter().position(|c| *c == text) {
                        matrix[[i, span.start + k]] = 1.0;
                    }
                }
            }
        }
    }
    PreprocessedFeatures {
        matrix,
        encoding_map,
    }
}
