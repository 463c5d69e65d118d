//! Deterministic OpenML fixtures written straight into a response cache, so
//! `build --offline` can replay three small tasks without a network.
//!
//! * task 101 (binary): 14 complementary models plus one each of corrupted,
//!   worse-than-random, degenerate, duplicate configuration, missing
//!   predictions and a 404 prediction file. Survives curation.
//! * task 102 (3 classes): 8 good models plus a corrupted one. Too few models.
//! * task 103 (binary): 12 identical models. No VBA-SBA gap.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use metatask::openml::{ClientConfig, ResponseCache};
use metatask::parser::DiscrepancyClass;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const HOST: &str = "http://fixtures.invalid";
pub const BASE_URL: &str = "http://fixtures.invalid/api/v1";
pub const SUITE_ID: u64 = 9001;
pub const TASKS: [u64; 3] = [101, 102, 103];
pub const N_FOLDS: usize = 10;
pub const METRIC: &str = "area_under_roc_curve";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Good,
    Corrupted,
    WorseThanRandom,
    Degenerate,
    Duplicate,
    MissingPredictions,
    NotFound,
    Identical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// OpenML's own layout: repeat, fold, row_id, confidence.<label>, prediction, correct.
    ArffDot,
    /// row_id, fold, pred, confidence_<label>.
    CsvPredUnderscore,
    /// repeat, fold, row_id, prediction, confidence.<label>.
    CsvTriple,
    /// row_id, prediction, confidence_<label>.
    CsvRowIdOnly,
}

const VARIANTS: [Variant; 4] = [
    Variant::ArffDot,
    Variant::CsvPredUnderscore,
    Variant::CsvTriple,
    Variant::CsvRowIdOnly,
];

/// One prediction file together with what a correct parser must make of it.
#[derive(Debug, Clone)]
pub struct PredictionFixture {
    pub task_id: u64,
    pub run_id: u64,
    pub kind: RunKind,
    pub variant: Variant,
    pub labels: Vec<String>,
    pub ground_truth: Vec<usize>,
    pub bytes: Vec<u8>,
    /// Per-instance discrepancy class, by construction.
    pub expected: Vec<DiscrepancyClass>,
}

#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub predictions: Vec<PredictionFixture>,
}

impl FixtureSet {
    pub fn task(&self, task_id: u64) -> impl Iterator<Item = &PredictionFixture> {
        self.predictions
            .iter()
            .filter(move |p| p.task_id == task_id)
    }
}

struct Plan {
    task_id: u64,
    dataset_id: u64,
    name: &'static str,
    labels: &'static [&'static str],
    n: usize,
    runs: Vec<(RunKind, u64)>,
}

fn plans() -> Vec<Plan> {
    let mut binary: Vec<(RunKind, u64)> = (0..14).map(|k| (RunKind::Good, k)).collect();
    binary.extend([
        (RunKind::Corrupted, 0),
        (RunKind::WorseThanRandom, 0),
        (RunKind::Degenerate, 0),
        (RunKind::Duplicate, 0),
        (RunKind::MissingPredictions, 0),
        (RunKind::NotFound, 0),
    ]);
    let mut three: Vec<(RunKind, u64)> = (0..8).map(|k| (RunKind::Good, k)).collect();
    three.push((RunKind::Corrupted, 0));
    vec![
        Plan {
            task_id: 101,
            dataset_id: 1101,
            name: "fixture-binary",
            labels: &["neg", "pos"],
            n: 200,
            runs: binary,
        },
        Plan {
            task_id: 102,
            dataset_id: 1102,
            name: "fixture-three",
            labels: &["red", "green", "blue"],
            n: 150,
            runs: three,
        },
        Plan {
            task_id: 103,
            dataset_id: 1103,
            name: "fixture-flat",
            labels: &["neg", "pos"],
            n: 120,
            runs: (0..12).map(|k| (RunKind::Identical, k)).collect(),
        },
    ]
}

/// Instance features: (x0, x1, x2 or missing, colour), and labels.
struct Data {
    rows: Vec<(f64, f64, Option<f64>, usize)>,
    y: Vec<usize>,
}

fn make_data(plan: &Plan) -> Data {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.task_id);
    let c = plan.labels.len();
    let mut rows = Vec::with_capacity(plan.n);
    let mut y = Vec::with_capacity(plan.n);
    for i in 0..plan.n {
        let x0: f64 = rng.gen();
        let x1: f64 = rng.gen();
        let x2 = (i % 17 != 3).then(|| rng.gen_range(-2.0..2.0));
        let colour = rng.gen_range(0..3);
        let noisy = (x0 + 0.2 * (rng.gen::<f64>() - 0.5)).clamp(0.0, 0.999);
        rows.push((x0, x1, x2, colour));
        y.push((noisy * c as f64) as usize);
    }
    // every class must appear in every fold
    for f in 0..N_FOLDS.min(plan.n) {
        for k in 0..c {
            let slot = f + N_FOLDS * k;
            if slot < plan.n {
                y[slot] = k;
            }
        }
    }
    Data { rows, y }
}

/// One prediction row as integer thousandths per class.
#[derive(Clone)]
struct Row {
    predicted: usize,
    conf: Vec<String>,
    class: DiscrepancyClass,
}

fn thousandths(v: u32) -> String {
    format!("{}", v as f64 / 1000.0)
}

/// Consistent row: `predicted` gets `p` thousandths, the rest is spread.
fn consistent_row(rng: &mut ChaCha8Rng, c: usize, predicted: usize, p: u32) -> Vec<u32> {
    let mut conf = vec![0u32; c];
    conf[predicted] = p;
    let mut rest = 1000 - p;
    let others: Vec<usize> = (0..c).filter(|&k| k != predicted).collect();
    for (j, &k) in others.iter().enumerate() {
        let v = if j + 1 == others.len() {
            rest
        } else {
            rng.gen_range(0..=rest)
        };
        conf[k] = v;
        rest -= v;
    }
    conf
}

fn other_class(rng: &mut ChaCha8Rng, c: usize, y: usize) -> usize {
    (y + rng.gen_range(1..c)) % c
}

fn make_rows(plan: &Plan, data: &Data, kind: RunKind, k: u64) -> Vec<Row> {
    let c = plan.labels.len();
    let seed = match kind {
        RunKind::Identical => plan.task_id * 1000,
        _ => plan.task_id * 1000 + 17 * k + kind as u64 + 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let region = (k % 7) as usize;
    let mut rows = Vec::with_capacity(plan.n);
    for (i, &(_, x1, _, _)) in data.rows.iter().enumerate() {
        let y = data.y[i];
        let expert = ((x1 * 7.0) as usize).min(6) == region;
        let p_correct = match kind {
            RunKind::WorseThanRandom => 0.15,
            RunKind::Degenerate => 0.85,
            RunKind::Identical => 0.8,
            _ if expert => 0.97,
            _ => 0.6,
        };
        let correct = rng.gen::<f64>() < p_correct;
        let predicted = if correct {
            y
        } else {
            other_class(&mut rng, c, y)
        };
        let p = rng.gen_range(550..=950);
        let (conf, class) = if kind == RunKind::Degenerate {
            // the predicted class gets the small share
            let top = other_class(&mut rng, c, predicted);
            (
                consistent_row(&mut rng, c, top, p),
                DiscrepancyClass::NonrepresentativeFixed,
            )
        } else {
            (
                consistent_row(&mut rng, c, predicted, p),
                DiscrepancyClass::Consistent,
            )
        };
        rows.push(Row {
            predicted,
            conf: conf.into_iter().map(thousandths).collect(),
            class,
        });
    }
    match kind {
        RunKind::Corrupted => {
            // confidently contradicts its own prediction
            let r = &mut rows[7];
            let mut v = vec![0u32; c];
            v[r.predicted] = 100;
            v[(r.predicted + 1) % c] = 900;
            r.conf = v.into_iter().map(thousandths).collect();
            r.class = DiscrepancyClass::Unexplainable;
        }
        RunKind::Good if k == 0 && c == 2 => {
            // the predicted label loses to the other one by 5e-10
            let r = &mut rows[3];
            let mut conf = vec![String::new(); 2];
            conf[r.predicted] = "0.49999999975".into();
            conf[1 - r.predicted] = "0.50000000025".into();
            r.conf = conf;
            r.class = DiscrepancyClass::PrecisionFixed;
            // sums to 0.98
            let r = &mut rows[5];
            let mut conf = vec![String::new(); 2];
            conf[r.predicted] = "0.78".into();
            conf[1 - r.predicted] = "0.2".into();
            r.conf = conf;
            r.class = DiscrepancyClass::Renormalized;
        }
        _ => {}
    }
    rows
}

fn fold_order(n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (i % N_FOLDS, i));
    order
}

fn render_predictions(labels: &[&str], y: &[usize], rows: &[Row], variant: Variant) -> Vec<u8> {
    let n = rows.len();
    let mut s = String::new();
    let dot: Vec<String> = labels.iter().map(|l| format!("confidence.{l}")).collect();
    let underscore: Vec<String> = labels.iter().map(|l| format!("confidence_{l}")).collect();
    match variant {
        Variant::ArffDot => {
            s.push_str("@RELATION openml_task_predictions\n\n");
            s.push_str(
                "@ATTRIBUTE repeat NUMERIC\n@ATTRIBUTE fold NUMERIC\n@ATTRIBUTE row_id NUMERIC\n",
            );
            for d in &dot {
                let _ = writeln!(s, "@ATTRIBUTE {d} NUMERIC");
            }
            let nominal = labels.join(",");
            let _ = writeln!(s, "@ATTRIBUTE prediction {{{nominal}}}");
            let _ = writeln!(s, "@ATTRIBUTE correct {{{nominal}}}\n\n@DATA");
        }
        Variant::CsvPredUnderscore => {
            let _ = writeln!(s, "row_id,fold,pred,{}", underscore.join(","));
        }
        Variant::CsvTriple => {
            let _ = writeln!(s, "repeat,fold,row_id,prediction,{}", dot.join(","));
        }
        Variant::CsvRowIdOnly => {
            let _ = writeln!(s, "row_id,prediction,{}", underscore.join(","));
        }
    }
    for i in fold_order(n) {
        let r = &rows[i];
        let fold = i % N_FOLDS;
        let pred = labels[r.predicted];
        let conf = r.conf.join(",");
        let _ = match variant {
            Variant::ArffDot => writeln!(s, "0,{fold},{i},{conf},{pred},{}", labels[y[i]]),
            Variant::CsvPredUnderscore => writeln!(s, "{i},{fold},{pred},{conf}"),
            Variant::CsvTriple => writeln!(s, "0,{fold},{i},{pred},{conf}"),
            Variant::CsvRowIdOnly => writeln!(s, "{i},{pred},{conf}"),
        };
    }
    s.into_bytes()
}

fn render_dataset(plan: &Plan, data: &Data) -> Vec<u8> {
    let mut s = format!("@relation {}\n", plan.name);
    s.push_str("@attribute id numeric\n@attribute x0 numeric\n@attribute x1 numeric\n@attribute x2 numeric\n");
    s.push_str("@attribute colour {red,green,blue}\n");
    let _ = writeln!(s, "@attribute class {{{}}}\n@data", plan.labels.join(","));
    let colours = ["red", "green", "blue"];
    for (i, &(x0, x1, x2, colour)) in data.rows.iter().enumerate() {
        let x2 = x2.map_or("?".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            s,
            "{i},{x0:.4},{x1:.4},{x2},{},{}",
            colours[colour], plan.labels[data.y[i]]
        );
    }
    s.into_bytes()
}

fn render_features(plan: &Plan) -> String {
    let feats = [
        ("id", "numeric", r#","is_row_identifier":"true""#),
        ("x0", "numeric", ""),
        ("x1", "numeric", ""),
        ("x2", "numeric", ""),
        ("colour", "nominal", ""),
        ("class", "nominal", r#","is_target":"true""#),
    ];
    let items: Vec<String> = feats
        .iter()
        .enumerate()
        .map(|(i, (name, ty, extra))| {
            format!(r#"{{"index":"{i}","name":"{name}","data_type":"{ty}"{extra}}}"#)
        })
        .collect();
    let _ = plan;
    format!(r#"{{"data_features":{{"feature":[{}]}}}}"#, items.join(","))
}

fn render_splits(n: usize) -> Vec<u8> {
    let mut s = String::from(
        "@relation splits\n@attribute type {TRAIN,TEST}\n@attribute rowid numeric\n@attribute repeat numeric\n@attribute fold numeric\n@data\n",
    );
    for f in 0..N_FOLDS {
        for i in 0..n {
            let ty = if i % N_FOLDS == f { "TEST" } else { "TRAIN" };
            let _ = writeln!(s, "{ty},{i},0,{f}");
        }
    }
    s.into_bytes()
}

fn task_json(plan: &Plan) -> String {
    format!(
        r#"{{"task":{{"task_id":"{t}","task_name":"Task {t}","task_type_id":"1","task_type":"Supervised Classification",
"input":[{{"name":"source_data","data_set":{{"data_set_id":"{d}","target_feature":"class"}}}},
{{"name":"estimation_procedure","estimation_procedure":{{"id":"1","type":"crossvalidation",
"data_splits_url":"{HOST}/api_splits/get/{t}/Task_{t}_splits.arff",
"parameter":[{{"name":"number_repeats","value":"1"}},{{"name":"number_folds","value":"{N_FOLDS}"}},{{"name":"percentage"}},{{"name":"stratified_sampling","value":"true"}}]}}}},
{{"name":"evaluation_measures","evaluation_measures":{{"evaluation_measure":"predictive_accuracy"}}}}]}}}}"#,
        t = plan.task_id,
        d = plan.dataset_id
    )
}

fn prediction_url(run_id: u64, variant: Variant) -> String {
    let ext = if variant == Variant::ArffDot {
        "arff"
    } else {
        "csv"
    };
    format!("{HOST}/data/download/{run_id}/predictions.{ext}")
}

/// Writes every fixture response into the cache at `cache_dir`.
pub fn install(cache_dir: &Path) -> FixtureSet {
    let cache = ResponseCache::new(cache_dir);
    let put = |url: String, status: u16, body: &[u8]| {
        cache
            .put(&url, status, body)
            .expect("writing fixture cache");
    };
    let api = |path: String| format!("{BASE_URL}/{path}");
    let page = ClientConfig::default().page_size;
    let mut predictions = Vec::new();

    let plans = plans();
    let ids: Vec<String> = plans.iter().map(|p| format!("\"{}\"", p.task_id)).collect();
    put(
        api(format!("json/study/{SUITE_ID}")),
        200,
        format!(
            r#"{{"study":{{"id":"{SUITE_ID}","alias":"fixture-suite","main_entity_type":"task","tasks":{{"task_id":[{}]}}}}}}"#,
            ids.join(",")
        )
        .as_bytes(),
    );

    for plan in &plans {
        let data = make_data(plan);
        let file_url = format!(
            "{HOST}/data/v1/download/{}/{}.arff",
            plan.dataset_id, plan.name
        );
        put(
            api(format!("json/task/{}", plan.task_id)),
            200,
            task_json(plan).as_bytes(),
        );
        put(
            api(format!("json/data/{}", plan.dataset_id)),
            200,
            format!(
                r#"{{"data_set_description":{{"id":"{}","name":"{}","format":"ARFF","url":"{file_url}","default_target_attribute":"class","row_id_attribute":"id"}}}}"#,
                plan.dataset_id, plan.name
            )
            .as_bytes(),
        );
        put(
            api(format!("json/data/features/{}", plan.dataset_id)),
            200,
            render_features(plan).as_bytes(),
        );
        put(file_url, 200, &render_dataset(plan, &data));
        put(
            format!(
                "{HOST}/api_splits/get/{t}/Task_{t}_splits.arff",
                t = plan.task_id
            ),
            200,
            &render_splits(plan.n),
        );

        let mut evaluations = Vec::new();
        for (j, &(kind, k)) in plan.runs.iter().enumerate() {
            let run_id = plan.task_id * 1000 + j as u64;
            let (flow_id, setup_id) = if kind == RunKind::Duplicate {
                (plan.task_id * 100, plan.task_id * 200)
            } else {
                (plan.task_id * 100 + j as u64, plan.task_id * 200 + j as u64)
            };
            // run 1 ties with run 0 so the run-id tie-break is exercised
            let value = if j == 1 {
                0.95
            } else {
                0.95 - 0.004 * j as f64
            };
            evaluations.push(format!(
                r#"{{"run_id":"{run_id}","task_id":"{}","setup_id":"{setup_id}","flow_id":"{flow_id}","flow_name":"fixture.flow{flow_id}","data_id":"{}","function":"{METRIC}","value":"{value:.4}"}}"#,
                plan.task_id, plan.dataset_id
            ));
            let variant = VARIANTS[j % VARIANTS.len()];
            let url = prediction_url(run_id, variant);
            let mut files = vec![format!(
                r#"{{"file_id":"{run_id}1","name":"description","url":"{HOST}/data/download/{run_id}/description.xml"}}"#
            )];
            if kind != RunKind::MissingPredictions {
                files.push(format!(
                    r#"{{"file_id":"{run_id}2","name":"predictions","url":"{url}"}}"#
                ));
            }
            put(
                api(format!("json/run/{run_id}")),
                200,
                format!(
                    r#"{{"run":{{"run_id":"{run_id}","task_id":"{}","flow_id":"{flow_id}","setup_id":"{setup_id}","output_data":{{"file":[{}]}}}}}}"#,
                    plan.task_id,
                    files.join(",")
                )
                .as_bytes(),
            );
            match kind {
                RunKind::MissingPredictions | RunKind::Duplicate => {}
                RunKind::NotFound => put(url, 404, b"file not found"),
                _ => {
                    let rows = make_rows(plan, &data, kind, k);
                    let bytes = render_predictions(plan.labels, &data.y, &rows, variant);
                    put(url, 200, &bytes);
                    predictions.push(PredictionFixture {
                        task_id: plan.task_id,
                        run_id,
                        kind,
                        variant,
                        labels: plan.labels.iter().map(|s| s.to_string()).collect(),
                        ground_truth: data.y.clone(),
                        bytes,
                        expected: rows.iter().map(|r| r.class).collect(),
                    });
                }
            }
        }
        assert!(
            evaluations.len() < page,
            "fixture listing must fit one page"
        );
        put(
            api(format!(
                "json/evaluation/list/function/{METRIC}/task/{}/sort_order/desc/limit/{page}/offset/0",
                plan.task_id
            )),
            200,
            format!(r#"{{"evaluations":{{"evaluation":[{}]}}}}"#, evaluations.join(",")).as_bytes(),
        );
    }
    FixtureSet { predictions }
}
