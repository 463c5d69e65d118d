//! Results CSV and closed-gap aggregation.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{Read, Write};

use log::warn;

use super::{FoldRun, HarnessError};
use crate::ensemble::TechniqueId;
use crate::metrics::{closed_gap, Metric};

/// Results CSV header.
pub const RESULTS_COLUMNS: [&str; 12] = [
    "task_id",
    "dataset_name",
    "fold",
    "technique",
    "metric",
    "score",
    "valid",
    "reason",
    "seed",
    "meta_train_size",
    "meta_test_size",
    "n_instances",
];

pub fn write_results_csv<W: Write>(out: W, runs: &[FoldRun]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(RESULTS_COLUMNS)?;
    for r in runs {
        w.write_record([
            r.task_id.to_string(),
            r.dataset_name.clone(),
            r.fold.to_string(),
            r.technique.token().to_string(),
            r.metric.name().to_string(),
            r.score.map(|s| s.to_string()).unwrap_or_default(),
            r.valid().to_string(),
            r.reason.clone(),
            r.seed.to_string(),
            r.meta_train_size.to_string(),
            r.meta_test_size.to_string(),
            r.n_instances.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<FoldRun>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut pos = HashMap::new();
    for col in RESULTS_COLUMNS {
        let at = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| HarnessError::MissingColumn(col.to_string()))?;
        pos.insert(col, at);
    }
    let mut runs = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let field = |c: &str| rec.get(pos[c]).unwrap_or("");
        let bad = |c: &str, e: &dyn std::fmt::Display| HarnessError::BadValue {
            line,
            message: format!("{c}: {e}"),
        };
        macro_rules! num {
            ($c:expr) => {
                field($c).parse().map_err(|e| bad($c, &e))?
            };
        }
        let valid: bool = num!("valid");
        let score = if valid {
            let s: f64 = num!("score");
            Some(s)
        } else {
            None
        };
        runs.push(FoldRun {
            task_id: num!("task_id"),
            dataset_name: field("dataset_name").to_string(),
            fold: num!("fold"),
            technique: field("technique")
                .parse()
                .map_err(|e| bad("technique", &e))?,
            metric: field("metric")
                .parse::<Metric>()
                .map_err(|e| bad("metric", &e))?,
            score,
            reason: field("reason").to_string(),
            seed: num!("seed"),
            meta_train_size: num!("meta_train_size"),
            meta_test_size: num!("meta_test_size"),
            n_instances: num!("n_instances"),
        });
    }
    Ok(runs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TechniqueStats {
    pub mean: f64,
    pub std: f64,
    pub n_valid: usize,
    pub n_invalid: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSummary {
    pub task_id: u64,
    pub dataset_name: String,
    pub n_instances: usize,
    pub scores: BTreeMap<TechniqueId, TechniqueStats>,
    /// Fold scores per technique, in fold order (invalid folds omitted).
    pub fold_scores: BTreeMap<TechniqueId, Vec<(usize, f64)>>,
    /// Empty when the task could not be normalized.
    pub closed_gap: BTreeMap<TechniqueId, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub name: String,
    pub n_tasks: usize,
    /// Mean and standard deviation of the closed gap over tasks.
    pub gap: BTreeMap<TechniqueId, (f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub metric: Metric,
    pub min_instances: usize,
    /// Techniques present in the results, in report column order.
    pub techniques: Vec<TechniqueId>,
    pub tasks: Vec<TaskSummary>,
    pub strata: Vec<Stratum>,
    pub excluded: Vec<(u64, String)>,
    pub invalid_folds: usize,
}

/// Mean and sample standard deviation (0 for fewer than two values).
fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-task means over valid folds, closed gaps against the task's SBA and
/// VBA means, and their mean and spread over all tasks and over tasks with at
/// least `min_instances` instances.
pub fn aggregate(runs: &[FoldRun], min_instances: usize) -> BenchmarkReport {
    let metric = runs.first().map(|r| r.metric).unwrap_or_default();
    let present: std::collections::BTreeSet<TechniqueId> =
        runs.iter().map(|r| r.technique).collect();
    let techniques: Vec<TechniqueId> = TechniqueId::ALL
        .into_iter()
        .filter(|t| present.contains(t))
        .collect();

    let mut by_task: BTreeMap<u64, Vec<&FoldRun>> = BTreeMap::new();
    for r in runs {
        by_task.entry(r.task_id).or_default().push(r);
    }
    let mut tasks = Vec::new();
    let mut excluded = Vec::new();
    for (task_id, task_runs) in by_task {
        let mut fold_scores: BTreeMap<TechniqueId, Vec<(usize, f64)>> = BTreeMap::new();
        let mut invalid: BTreeMap<TechniqueId, usize> = BTreeMap::new();
        for r in &task_runs {
            match r.score {
                Some(s) => fold_scores
                    .entry(r.technique)
                    .or_default()
                    .push((r.fold, s)),
                None => *invalid.entry(r.technique).or_default() += 1,
            }
        }
        for v in fold_scores.values_mut() {
            v.sort_by_key(|(f, _)| *f);
        }
        let mut scores = BTreeMap::new();
        for &t in &techniques {
            let vals: Vec<f64> = fold_scores
                .get(&t)
                .map(|v| v.iter().map(|x| x.1).collect())
                .unwrap_or_default();
            let n_invalid = invalid.get(&t).copied().unwrap_or(0);
            if vals.is_empty() && n_invalid == 0 {
                continue;
            }
            let (mean, std) = mean_std(&vals);
            scores.insert(
                t,
                TechniqueStats {
                    mean,
                    std,
                    n_valid: vals.len(),
                    n_invalid,
                },
            );
        }
        let valid_mean = |t| {
            scores
                .get(&t)
                .filter(|s: &&TechniqueStats| s.n_valid > 0)
                .map(|s| s.mean)
        };
        let mut gaps = BTreeMap::new();
        match (
            valid_mean(TechniqueId::DcsSba),
            valid_mean(TechniqueId::DcsVba),
        ) {
            (Some(sba), Some(vba)) => {
                for (&t, s) in &scores {
                    if s.n_valid == 0 {
                        continue;
                    }
                    match closed_gap(s.mean, sba, vba) {
                        // adding 0.0 turns -0.0 into 0.0
                        Ok(g) => {
                            gaps.insert(t, g + 0.0);
                        }
                        Err(e) => {
                            gaps.clear();
                            excluded.push((task_id, e.to_string()));
                            break;
                        }
                    }
                }
            }
            _ => excluded.push((task_id, "no valid SBA or VBA folds".to_string())),
        }
        let first = task_runs[0];
        tasks.push(TaskSummary {
            task_id,
            dataset_name: first.dataset_name.clone(),
            n_instances: first.n_instances,
            scores,
            fold_scores,
            closed_gap: gaps,
        });
    }
    for (t, reason) in &excluded {
        warn!("task {t} excluded from the closed-gap summary: {reason}");
    }
    let stratum = |name: String, min_n: usize| {
        let members: Vec<&TaskSummary> = tasks
            .iter()
            .filter(|t| t.n_instances >= min_n && !t.closed_gap.is_empty())
            .collect();
        let gap = techniques
            .iter()
            .filter_map(|&tech| {
                let vals: Vec<f64> = members
                    .iter()
                    .filter_map(|t| t.closed_gap.get(&tech).copied())
                    .collect();
                (!vals.is_empty()).then(|| (tech, mean_std(&vals)))
            })
            .collect();
        Stratum {
            name,
            n_tasks: members.len(),
            gap,
        }
    };
    let strata = vec![
        stratum("All Datasets".to_string(), 0),
        stratum(format!("Datasets with n >= {min_instances}"), min_instances),
    ];
    BenchmarkReport {
        metric,
        min_instances,
        techniques,
        tasks,
        strata,
        excluded,
        invalid_folds: runs.iter().filter(|r| !r.valid()).count(),
    }
}

fn cell(v: Option<(f64, f64)>) -> String {
    match v {
        Some((m, s)) => format!("{m:.3} (±{s:.3})"),
        None => "-".to_string(),
    }
}

pub fn render_markdown(report: &BenchmarkReport) -> String {
    let mut out = String::new();
    let labels: Vec<&str> = report.techniques.iter().map(|t| t.label()).collect();
    let _ = writeln!(out, "## Closed gap ({})\n", report.metric);
    let _ = writeln!(out, "| Stratum | Tasks | {} |", labels.join(" | "));
    let _ = writeln!(out, "|---|---|{}", "---|".repeat(labels.len()));
    for s in &report.strata {
        let cells: Vec<String> = report
            .techniques
            .iter()
            .map(|t| cell(s.gap.get(t).copied()))
            .collect();
        let _ = writeln!(
            out,
            "| {} | {} | {} |",
            s.name,
            s.n_tasks,
            cells.join(" | ")
        );
    }
    let _ = writeln!(out, "\n## Mean {} per task\n", report.metric);
    let _ = writeln!(out, "| Task | Dataset | n | {} |", labels.join(" | "));
    let _ = writeln!(out, "|---|---|---|{}", "---|".repeat(labels.len()));
    for t in &report.tasks {
        let cells: Vec<String> = report
            .techniques
            .iter()
            .map(|tech| {
                cell(
                    t.scores
                        .get(tech)
                        .filter(|s| s.n_valid > 0)
                        .map(|s| (s.mean, s.std)),
                )
            })
            .collect();
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            t.task_id,
            t.dataset_name,
            t.n_instances,
            cells.join(" | ")
        );
    }
    let _ = writeln!(out, "\nInvalid folds: {}", report.invalid_folds);
    for (task, reason) in &report.excluded {
        let _ = writeln!(out, "Excluded task {task}: {reason}");
    }
    out
}

pub fn render_csv(report: &BenchmarkReport) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let _ = w.write_record([
        "stratum",
        "technique",
        "n_tasks",
        "mean_closed_gap",
        "std_closed_gap",
    ]);
    for s in &report.strata {
        for t in &report.techniques {
            if let Some((m, sd)) = s.gap.get(t) {
                let _ = w.write_record([
                    s.name.clone(),
                    t.label().to_string(),
                    s.n_tasks.to_string(),
                    m.to_string(),
                    sd.to_string(),
                ]);
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("CSV output is UTF-8")
}

/// Quartiles by linear interpolation on sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// One panel per task with a box plot of fold scores per technique.
pub fn render_svg(report: &BenchmarkReport) -> String {
    const PANEL_W: f64 = 60.0;
    const PANEL_H: f64 = 200.0;
    const LEFT: f64 = 50.0;
    const TOP: f64 = 30.0;
    const GAP: f64 = 70.0;
    let n_tech = report.techniques.len().max(1) as f64;
    let width = LEFT + PANEL_W * n_tech + 20.0;
    let height = TOP + (PANEL_H + GAP) * report.tasks.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    for (p, task) in report.tasks.iter().enumerate() {
        let y0 = TOP + p as f64 * (PANEL_H + GAP);
        let all: Vec<f64> = task.fold_scores.values().flatten().map(|x| x.1).collect();
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        };
        let ys = |v: f64| y0 + PANEL_H - (v - lo) / (hi - lo) * PANEL_H;
        let _ = writeln!(
            out,
            r#"<text x="{LEFT}" y="{:.1}">task {} ({})</text>"#,
            y0 - 8.0,
            task.task_id,
            escape(&task.dataset_name)
        );
        let _ = writeln!(
            out,
            r##"<rect x="{LEFT}" y="{y0:.1}" width="{:.1}" height="{PANEL_H}" fill="none" stroke="#999"/>"##,
            PANEL_W * n_tech
        );
        let _ = writeln!(out, r#"<text x="4" y="{:.1}">{hi:.3}</text>"#, y0 + 10.0);
        let _ = writeln!(out, r#"<text x="4" y="{:.1}">{lo:.3}</text>"#, y0 + PANEL_H);
        for (j, tech) in report.techniques.iter().enumerate() {
            let cx = LEFT + PANEL_W * (j as f64 + 0.5);
            let _ = writeln!(
                out,
                r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                y0 + PANEL_H + 14.0,
                tech.label()
            );
            let mut vals: Vec<f64> = task
                .fold_scores
                .get(tech)
                .map(|v| v.iter().map(|x| x.1).collect())
                .unwrap_or_default();
            if vals.is_empty() {
                continue;
            }
            vals.sort_by(f64::total_cmp);
            let (q1, med, q3) = (
                quantile(&vals, 0.25),
                quantile(&vals, 0.5),
                quantile(&vals, 0.75),
            );
            let (min, max) = (vals[0], vals[vals.len() - 1]);
            let half = PANEL_W * 0.3;
            let _ = writeln!(
                out,
                r##"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="#333"/>"##,
                ys(min),
                ys(max)
            );
            let _ = writeln!(
                out,
                r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#cde" stroke="#333"/>"##,
                cx - half,
                ys(q3),
                2.0 * half,
                (ys(q1) - ys(q3)).max(0.5)
            );
            let _ = writeln!(
                out,
                r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#c00"/>"##,
                cx - half,
                ys(med),
                cx + half,
                ys(med)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(
        task_id: u64,
        fold: usize,
        technique: TechniqueId,
        score: Option<f64>,
        n: usize,
    ) -> FoldRun {
        FoldRun {
            task_id,
            dataset_name: format!("d{task_id}"),
            fold,
            technique,
            metric: Metric::Auroc,
            score,
            reason: if score.is_none() {
                "metric undefined".into()
            } else {
                String::new()
            },
            seed: 7,
            meta_train_size: 5,
            meta_test_size: 5,
            n_instances: n,
        }
    }

    fn sample() -> Vec<FoldRun> {
        let mut runs = Vec::new();
        for (task, n, sba, vba, stack) in [(1, 100, 0.8, 0.9, 0.85), (2, 3000, 0.6, 0.7, 0.55)] {
            for fold in 0..3 {
                let jitter = fold as f64 * 0.01;
                runs.push(run(task, fold, TechniqueId::DcsSba, Some(sba + jitter), n));
                runs.push(run(task, fold, TechniqueId::DcsVba, Some(vba + jitter), n));
                runs.push(run(
                    task,
                    fold,
                    TechniqueId::Stacking,
                    Some(stack + jitter),
                    n,
                ));
            }
        }
        runs.push(run(2, 3, TechniqueId::Stacking, None, 3000));
        runs
    }

    #[test]
    fn anchors_and_strata() {
        let report = aggregate(&sample(), 1900);
        assert_eq!(
            report.techniques,
            vec![
                TechniqueId::DcsSba,
                TechniqueId::Stacking,
                TechniqueId::DcsVba
            ]
        );
        let all = &report.strata[0];
        assert_eq!(all.n_tasks, 2);
        assert_eq!(all.gap[&TechniqueId::DcsSba], (0.0, 0.0));
        assert_eq!(all.gap[&TechniqueId::DcsVba], (1.0, 0.0));
        let (m, _) = all.gap[&TechniqueId::Stacking];
        assert!((m - 0.0).abs() < 1e-9, "{m}"); // 0.5 and -0.5
        let big = &report.strata[1];
        assert_eq!(big.n_tasks, 1);
        assert!((big.gap[&TechniqueId::Stacking].0 + 0.5).abs() < 1e-9);
        assert_eq!(report.invalid_folds, 1);
        assert_eq!(report.tasks[1].scores[&TechniqueId::Stacking].n_invalid, 1);

        let zero = aggregate(&sample(), 0);
        assert_eq!(zero.strata[0].gap, zero.strata[1].gap);
    }

    #[test]
    fn degenerate_task_excluded() {
        let runs = vec![
            run(1, 0, TechniqueId::DcsSba, Some(0.8), 10),
            run(1, 0, TechniqueId::DcsVba, Some(0.8), 10),
            run(2, 0, TechniqueId::Voting, Some(0.8), 10),
        ];
        let report = aggregate(&runs, 1900);
        assert_eq!(report.excluded.len(), 2);
        assert_eq!(report.strata[0].n_tasks, 0);
    }

    #[test]
    fn results_round_trip() {
        let runs = sample();
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &runs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(
            text.starts_with("task_id,dataset_name,fold,technique,metric,score,valid,reason,seed,")
        );
        assert_eq!(read_results_csv(&buf[..]).unwrap(), runs);
    }

    #[test]
    fn missing_column_rejected() {
        let e = read_results_csv("task_id,fold\n1,0\n".as_bytes()).unwrap_err();
        assert!(matches!(e, HarnessError::MissingColumn(_)));
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &sample()[..1]).unwrap();
        let broken = String::from_utf8(buf)
            .unwrap()
            .replace(",dcs-sba,", ",boosting,");
        assert!(matches!(
            read_results_csv(broken.as_bytes()),
            Err(HarnessError::BadValue { .. })
        ));
    }

    #[test]
    fn renderers() {
        let report = aggregate(&sample(), 1900);
        let md = render_markdown(&report);
        assert!(md.contains("| Stratum | Tasks | SBA | Stacking | VBA |"));
        assert!(md.contains("1.000 (±0.000)"));
        let csv = render_csv(&report);
        assert!(csv.lines().next().unwrap().starts_with("stratum,technique"));
        let svg = render_svg(&report);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 2 + 2 * 3);
    }
}
