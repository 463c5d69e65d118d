//! Benchmark curation: configuration dedup, base-model filters and the
//! per-metatask acceptance rules (roster size and VBA-SBA gap).

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use log::info;
use serde::Serialize;

use crate::metrics::{self, Metric, MetricError};
use crate::model::{BenchmarkSpec, Metatask};
use crate::openml::RunSummary;

#[derive(Debug, thiserror::Error)]
pub enum CurationError {
    #[error("metatask {0} has no base models")]
    EmptyRoster(u64),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Identity of a configuration: two runs with equal keys are duplicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DedupKey {
    pub flow_id: u64,
    pub setup_id: u64,
}

impl From<&RunSummary> for DedupKey {
    fn from(r: &RunSummary) -> Self {
        DedupKey {
            flow_id: r.flow_id,
            setup_id: r.setup_id,
        }
    }
}

/// Keeps the first run of every configuration, preserving order.
pub fn dedup_runs(runs: &[RunSummary]) -> Vec<RunSummary> {
    let mut seen = HashSet::new();
    runs.iter()
        .filter(|r| seen.insert(DedupKey::from(*r)))
        .cloned()
        .collect()
}

/// Removes base models whose full-task AUROC is at most 0.5. Models whose
/// AUROC is undefined carry no evidence either way and are kept.
pub fn filter_worse_than_random(m: &Metatask) -> Metatask {
    let pm = m.full_matrix();
    let keep: Vec<bool> = (0..pm.n_models())
        .map(|b| match metrics::model_score(&pm, b, Metric::Auroc) {
            Ok(s) => s > 0.5,
            Err(_) => true,
        })
        .collect();
    let mut it = keep.into_iter();
    m.retain_base_models(|_| it.next().unwrap_or(true))
}

pub fn filter_corrupted(m: &Metatask) -> Metatask {
    m.retain_base_models(|bm| !bm.corrupted)
}

/// `metric(VBA) - metric(SBA)` over all instances of the metatask.
pub fn vba_sba_gap(m: &Metatask, metric: Metric) -> Result<f64, CurationError> {
    if m.base_models.is_empty() {
        return Err(CurationError::EmptyRoster(m.task_id));
    }
    let pm = m.full_matrix();
    let (vba_pred, vba_conf) = metrics::vba_rows(&pm);
    let vba = metric.score(&pm.ground_truth, &vba_pred, vba_conf.view())?;
    let sba = metrics::model_score(&pm, metrics::sba_index(&pm, metric)?, metric)?;
    Ok(vba - sba)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    MinBaseModels,
    VbaSbaGap,
    GapUndefined,
}

impl RejectionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectionReason::MinBaseModels => "min_base_models",
            RejectionReason::VbaSbaGap => "vba_sba_gap",
            RejectionReason::GapUndefined => "gap_undefined",
        }
    }
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub task_id: u64,
    pub reason: RejectionReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct CurationOutcome {
    pub kept: Vec<Metatask>,
    pub rejections: Vec<Rejection>,
}

/// Applies the base-model filters, then rejects metatasks with too few base
/// models or too small a VBA-SBA gap.
pub fn curate(metatasks: Vec<Metatask>, spec: &BenchmarkSpec) -> CurationOutcome {
    let metric: Metric = spec.metric.parse().unwrap_or_default();
    let mut out = CurationOutcome::default();
    for mut m in metatasks {
        let before = m.base_models.len();
        if spec.drop_corrupted {
            m = filter_corrupted(&m);
        }
        let after_corrupt = m.base_models.len();
        if spec.drop_worse_than_random {
            m = filter_worse_than_random(&m);
        }
        info!(
            "task {}: {} base models, {} corrupted, {} worse than random",
            m.task_id,
            before,
            before - after_corrupt,
            after_corrupt - m.base_models.len()
        );
        let count = m.base_models.len();
        if count < spec.min_base_models.max(1) {
            out.rejections.push(Rejection {
                task_id: m.task_id,
                reason: RejectionReason::MinBaseModels,
                detail: format!("{count} base models < {}", spec.min_base_models.max(1)),
            });
            continue;
        }
        match vba_sba_gap(&m, metric) {
            Ok(gap) if gap >= spec.gap_threshold => out.kept.push(m),
            Ok(gap) => out.rejections.push(Rejection {
                task_id: m.task_id,
                reason: RejectionReason::VbaSbaGap,
                detail: format!("gap {gap} < {}", spec.gap_threshold),
            }),
            Err(e) => out.rejections.push(Rejection {
                task_id: m.task_id,
                reason: RejectionReason::GapUndefined,
                detail: e.to_string(),
            }),
        }
    }
    for r in &out.rejections {
        info!("rejected task {}: {} ({})", r.task_id, r.reason, r.detail);
    }
    out
}

pub fn write_rejections_csv(path: &Path, rejections: &[Rejection]) -> Result<(), CurationError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(["task_id", "reason", "detail"])?;
    for r in rejections {
        w.write_record([
            r.task_id.to_string(),
            r.reason.to_string(),
            r.detail.clone(),
        ])?;
    }
    w.flush().map_err(|source| CurationError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_spec_json(path: &Path, spec: &BenchmarkSpec) -> Result<(), CurationError> {
    let mut text = serde_json::to_string_pretty(spec)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| CurationError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_spec_json(path: &Path) -> Result<BenchmarkSpec, CurationError> {
    let text = std::fs::read_to_string(path).map_err(|source| CurationError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_metatask;
    use crate::model::BaseModelRun;
    use crate::parser::DiscrepancyClass;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn run(run_id: u64, flow_id: u64, setup_id: u64, v: f64) -> RunSummary {
        RunSummary {
            run_id,
            flow_id,
            flow_name: format!("f{flow_id}"),
            setup_id,
            metric_value: v,
            prediction_file_url: None,
        }
    }

    #[test]
    fn dedup_keeps_best() {
        let runs = vec![run(1, 1, 1, 0.9), run(2, 1, 1, 0.8), run(3, 1, 2, 0.7)];
        let d = dedup_runs(&runs);
        assert_eq!(d.iter().map(|r| r.run_id).collect::<Vec<_>>(), vec![1, 3]);
        let distinct = vec![run(1, 1, 1, 0.9), run(2, 2, 1, 0.8)];
        assert_eq!(dedup_runs(&distinct), distinct);
    }

    proptest! {
        #[test]
        fn dedup_idempotent(keys in prop::collection::vec((0u64..4, 0u64..4), 0..30)) {
            let runs: Vec<RunSummary> = keys.iter().enumerate()
                .map(|(i, &(f, s))| run(i as u64, f, s, 1.0 - i as f64 / 100.0))
                .collect();
            let once = dedup_runs(&runs);
            prop_assert!(once.len() <= runs.len());
            prop_assert_eq!(dedup_runs(&once), once.clone());
            let keys: HashSet<DedupKey> = once.iter().map(DedupKey::from).collect();
            prop_assert_eq!(keys.len(), once.len());
        }
    }

    /// Binary model whose class-1 confidence is `scores`.
    fn model(run_id: u64, scores: &[f64], corrupted: bool) -> BaseModelRun {
        let n = scores.len();
        let conf = Array2::from_shape_fn(
            (n, 2),
            |(i, c)| if c == 1 { scores[i] } else { 1.0 - scores[i] },
        );
        BaseModelRun {
            run_id,
            flow_id: run_id,
            flow_name: format!("m{run_id}"),
            setup_id: run_id,
            metric_score: 0.5,
            predictions: scores.iter().map(|&s| usize::from(s > 0.5)).collect(),
            confidences: conf,
            discrepancy: vec![DiscrepancyClass::Consistent; n],
            corrupted,
        }
    }

    fn with_models(models: Vec<BaseModelRun>) -> Metatask {
        let mut m = tiny_metatask();
        // tiny_metatask ground truth is [0, 1, 0, 1]
        m.base_models = models;
        m
    }

    #[test]
    fn worse_than_random_boundary() {
        // AUROC 0.5 exactly: one pair ordered, one inverted.
        let m = with_models(vec![
            model(1, &[0.2, 0.8, 0.3, 0.9], false),
            model(2, &[0.6, 0.7, 0.4, 0.3], false),
            model(3, &[0.8, 0.2, 0.9, 0.3], false),
        ]);
        let pm = m.full_matrix();
        assert_eq!(metrics::model_score(&pm, 1, Metric::Auroc).unwrap(), 0.5);
        let kept = filter_worse_than_random(&m);
        assert_eq!(
            kept.base_models
                .iter()
                .map(|b| b.run_id)
                .collect::<Vec<_>>(),
            vec![1]
        );
    }

    #[test]
    fn corrupted_filter() {
        let m = with_models(vec![
            model(1, &[0.2, 0.8, 0.3, 0.9], true),
            model(2, &[0.2, 0.8, 0.3, 0.9], false),
        ]);
        assert_eq!(filter_corrupted(&m).base_models.len(), 1);
        let clean = with_models(vec![model(2, &[0.2, 0.8, 0.3, 0.9], false)]);
        assert_eq!(filter_corrupted(&clean), clean);
        let all = with_models(vec![model(1, &[0.2, 0.8, 0.3, 0.9], true)]);
        assert!(filter_corrupted(&all).base_models.is_empty());
    }

    #[test]
    fn filters_commute() {
        let m = with_models(vec![
            model(1, &[0.2, 0.8, 0.3, 0.9], true),
            model(2, &[0.8, 0.2, 0.9, 0.3], false),
            model(3, &[0.2, 0.8, 0.3, 0.9], false),
            model(4, &[0.8, 0.2, 0.9, 0.3], true),
        ]);
        assert_eq!(
            filter_corrupted(&filter_worse_than_random(&m)),
            filter_worse_than_random(&filter_corrupted(&m))
        );
    }

    /// Brute force: try every model at every instance for the VBA, every
    /// model for the SBA.
    fn brute_gap(m: &Metatask) -> f64 {
        let pm = m.full_matrix();
        let k = pm.n_instances();
        let mut conf = Array2::zeros((k, 2));
        for i in 0..k {
            let y = pm.ground_truth[i];
            let mut best = (f64::NEG_INFINITY, 0);
            for b in 0..pm.n_models() {
                if pm.confidences[[i, b, y]] > best.0 {
                    best = (pm.confidences[[i, b, y]], b);
                }
            }
            for c in 0..2 {
                conf[[i, c]] = pm.confidences[[i, best.1, c]];
            }
        }
        let vba = metrics::auroc(&pm.ground_truth, conf.view()).unwrap();
        let sba = (0..pm.n_models())
            .map(|b| metrics::auroc(&pm.ground_truth, pm.model_confidences(b)).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        vba - sba
    }

    #[test]
    fn gap_examples() {
        let single = with_models(vec![model(1, &[0.6, 0.7, 0.4, 0.3], false)]);
        assert_eq!(vba_sba_gap(&single, Metric::Auroc).unwrap(), 0.0);
        let dup = with_models(vec![
            model(1, &[0.6, 0.7, 0.4, 0.3], false),
            model(2, &[0.6, 0.7, 0.4, 0.3], false),
        ]);
        assert_eq!(vba_sba_gap(&dup, Metric::Auroc).unwrap(), 0.0);
        // Model 1 is right on instances 0-1, model 2 on instances 2-3.
        let complementary = with_models(vec![
            model(1, &[0.1, 0.9, 0.6, 0.4], false),
            model(2, &[0.6, 0.4, 0.1, 0.9], false),
        ]);
        let gap = vba_sba_gap(&complementary, Metric::Auroc).unwrap();
        assert!(gap > 0.0);
        assert!((gap - brute_gap(&complementary)).abs() < 1e-12);
        assert!(vba_sba_gap(&with_models(vec![]), Metric::Auroc).is_err());
    }

    #[test]
    fn curate_rules() {
        let complementary = with_models(vec![
            model(1, &[0.1, 0.9, 0.6, 0.4], false),
            model(2, &[0.6, 0.4, 0.1, 0.9], false),
            model(3, &[0.1, 0.9, 0.6, 0.4], true),
        ]);
        let mut no_gap = with_models(vec![
            model(1, &[0.2, 0.8, 0.3, 0.9], false),
            model(2, &[0.2, 0.8, 0.3, 0.9], false),
        ]);
        no_gap.task_id = 2;
        let spec = BenchmarkSpec {
            min_base_models: 2,
            ..BenchmarkSpec::default()
        };
        let out = curate(vec![complementary.clone(), no_gap.clone()], &spec);
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.kept[0].base_models.len(), 2);
        assert_eq!(out.rejections.len(), 1);
        assert_eq!(out.rejections[0].reason, RejectionReason::VbaSbaGap);

        let strict = BenchmarkSpec {
            min_base_models: 3,
            ..BenchmarkSpec::default()
        };
        let out = curate(vec![complementary.clone()], &strict);
        assert_eq!(out.rejections[0].reason, RejectionReason::MinBaseModels);

        let vacuous = BenchmarkSpec {
            min_base_models: 1,
            gap_threshold: 0.0,
            ..BenchmarkSpec::default()
        };
        let out = curate(vec![complementary, no_gap], &vacuous);
        assert_eq!(out.kept.len(), 2);
        assert!(out.rejections.is_empty());
    }

    #[test]
    fn spec_and_rejections_files() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = BenchmarkSpec {
            task_ids: vec![3, 1],
            ..BenchmarkSpec::default()
        };
        let p = tmp.path().join("benchmark_spec.json");
        write_spec_json(&p, &spec).unwrap();
        assert_eq!(read_spec_json(&p).unwrap(), spec);
        let r = tmp.path().join("rejections.csv");
        write_rejections_csv(
            &r,
            &[Rejection {
                task_id: 3,
                reason: RejectionReason::MinBaseModels,
                detail: "9 base models < 10".into(),
            }],
        )
        .unwrap();
        assert_eq!(
            std::fs::read_to_string(r).unwrap(),
            "task_id,reason,detail\n3,min_base_models,9 base models < 10\n"
        );
    }
}
