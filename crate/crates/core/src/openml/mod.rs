//! Minimal read-only client for the OpenML REST API.
//!
//! Every response is cached on disk keyed by its URL, so a warm cache makes
//! all operations deterministic and network-free in offline mode. Requests
//! are bounded by `max_parallel` and retried with exponential backoff.

mod cache;
mod transport;

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use log::{debug, warn};
use serde_json::Value as Json;
use sha2::{Digest, Sha256};

pub use cache::{CachedResponse, ResponseCache};
pub use transport::{HttpResponse, Transport, UreqTransport};

use crate::arff::{self, ArffError, AttributeKind, Value};
use crate::model::{Cell, ClassIdx, FeatureKind, FeatureSpec};
use transport::Gate;

pub const DEFAULT_BASE_URL: &str = "https://www.openml.org/api/v1";

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("offline mode: {0} is not cached")]
    Offline(String),
    #[error("unknown task {0}")]
    UnknownTask(u64),
    #[error("unsupported task {task_id}: {reason}")]
    UnsupportedTask { task_id: u64, reason: String },
    #[error("run {run_id} has no usable prediction file: {reason}")]
    MissingPredictions { run_id: u64, reason: String },
    #[error("unknown suite {0}")]
    UnknownSuite(u64),
    #[error("unknown dataset {0}")]
    UnknownDataset(u64),
    #[error("HTTP {status} from {url}")]
    Http { url: String, status: u16 },
    #[error("request to {url} failed: {message}")]
    Transport { url: String, message: String },
    #[error("cannot parse {url}: {message}")]
    Parse { url: String, message: String },
    #[error("malformed data file {url}: {source}")]
    Data {
        url: String,
        #[source]
        source: ArffError,
    },
    #[error("cache error: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after every failure.
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub cache_dir: PathBuf,
    pub max_parallel: usize,
    pub retry: RetryPolicy,
    pub offline_mode: bool,
    /// Page size of evaluation listings.
    pub page_size: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            base_url: DEFAULT_BASE_URL.to_string(),
            api_key: None,
            cache_dir: default_cache_dir(),
            max_parallel: 4,
            retry: RetryPolicy::default(),
            offline_mode: false,
            page_size: 100,
        }
    }
}

fn default_cache_dir() -> PathBuf {
    std::env::var_os("HOME")
        .map(|h| PathBuf::from(h).join(".cache").join("metatask"))
        .unwrap_or_else(|| PathBuf::from(".metatask-cache"))
}

impl ClientConfig {
    /// Defaults overridden by `OPENML_API_KEY` and `ASSEMBLED_CACHE_DIR`.
    pub fn from_env() -> Self {
        let mut cfg = ClientConfig::default();
        if let Ok(key) = std::env::var("OPENML_API_KEY") {
            if !key.trim().is_empty() {
                cfg.api_key = Some(key.trim().to_string());
            }
        }
        if let Some(dir) = std::env::var_os("ASSEMBLED_CACHE_DIR") {
            cfg.cache_dir = PathBuf::from(dir);
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDescriptor {
    pub task_id: u64,
    pub dataset_id: u64,
    pub task_type: String,
    pub n_folds: usize,
    pub n_repeats: usize,
    pub target_name: String,
    pub split_file_url: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_id: u64,
    pub flow_id: u64,
    pub flow_name: String,
    pub setup_id: u64,
    pub metric_value: f64,
    /// Resolved lazily from the run description when absent.
    pub prediction_file_url: Option<String>,
}

/// A dataset in OpenML row order, with the target split off.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dataset_id: u64,
    pub name: String,
    pub target_name: String,
    pub class_labels: Vec<String>,
    pub features: Vec<FeatureSpec>,
    pub instances: Vec<Vec<Cell>>,
    pub ground_truth: Vec<ClassIdx>,
    /// OpenML row id of every instance (ascending).
    pub row_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFile {
    pub bytes: Vec<u8>,
    pub sha256: String,
}

pub struct OpenMlClient {
    config: ClientConfig,
    cache: ResponseCache,
    transport: Arc<dyn Transport>,
    gate: Gate,
    network_calls: AtomicUsize,
}

impl OpenMlClient {
    pub fn new(config: ClientConfig) -> Self {
        Self::with_transport(config, Arc::new(UreqTransport::default()))
    }

    pub fn with_transport(config: ClientConfig, transport: Arc<dyn Transport>) -> Self {
        OpenMlClient {
            cache: ResponseCache::new(config.cache_dir.clone()),
            gate: Gate::new(config.max_parallel),
            config,
            transport,
            network_calls: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// Number of requests handed to the transport so far.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    /// Highest number of requests that were in flight at once.
    pub fn peak_in_flight(&self) -> usize {
        self.gate.peak()
    }

    pub fn api_url(&self, path: &str) -> String {
        format!(
            "{}/{}",
            self.config.base_url.trim_end_matches('/'),
            path.trim_start_matches('/')
        )
    }

    fn wire_url(&self, url: &str) -> String {
        match &self.config.api_key {
            Some(key) if url.starts_with(&self.config.base_url) => {
                let sep = if url.contains('?') { '&' } else { '?' };
                format!("{url}{sep}api_key={key}")
            }
            _ => url.to_string(),
        }
    }

    /// GET with caching and retries. 200, 404 and 412 responses are final
    /// and cached; 429 and 5xx are retried.
    pub fn get(&self, url: &str) -> Result<CachedResponse, ClientError> {
        if let Some(hit) = self.cache.get(url)? {
            debug!("cache hit {url}");
            return Ok(hit);
        }
        if self.config.offline_mode {
            return Err(ClientError::Offline(url.to_string()));
        }
        let attempts = self.config.retry.max_attempts.max(1);
        let mut backoff = self.config.retry.initial_backoff;
        let mut last_err = None;
        for attempt in 1..=attempts {
            let result = {
                let _pass = self.gate.enter();
                self.network_calls.fetch_add(1, Ordering::SeqCst);
                debug!("GET {url} (attempt {attempt})");
                self.transport.get(&self.wire_url(url))
            };
            let wait = match result {
                Ok(resp) if matches!(resp.status, 200 | 404 | 412) => {
                    self.cache.put(url, resp.status, &resp.body)?;
                    return Ok(CachedResponse {
                        status: resp.status,
                        body: resp.body,
                    });
                }
                Ok(resp) if resp.status == 429 || resp.status >= 500 => {
                    let wait = resp.retry_after.unwrap_or(backoff);
                    last_err = Some(ClientError::Http {
                        url: url.to_string(),
                        status: resp.status,
                    });
                    wait
                }
                Ok(resp) => {
                    return Err(ClientError::Http {
                        url: url.to_string(),
                        status: resp.status,
                    })
                }
                Err(message) => {
                    last_err = Some(ClientError::Transport {
                        url: url.to_string(),
                        message,
                    });
                    backoff
                }
            };
            if attempt < attempts {
                warn!("retrying {url} in {wait:?}");
                std::thread::sleep(wait);
                backoff *= 2;
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    fn get_json(&self, url: &str) -> Result<(u16, Json), ClientError> {
        let resp = self.get(url)?;
        if resp.status != 200 {
            return Ok((resp.status, Json::Null));
        }
        let json = serde_json::from_slice(&resp.body).map_err(|e| ClientError::Parse {
            url: url.to_string(),
            message: e.to_string(),
        })?;
        Ok((200, json))
    }

    pub fn fetch_task(&self, task_id: u64) -> Result<TaskDescriptor, ClientError> {
        let url = self.api_url(&format!("json/task/{task_id}"));
        let (status, json) = self.get_json(&url)?;
        if status != 200 {
            return Err(ClientError::UnknownTask(task_id));
        }
        parse_task(task_id, &json).map_err(|message| match message {
            TaskProblem::Unsupported(reason) => ClientError::UnsupportedTask { task_id, reason },
            TaskProblem::Malformed(message) => ClientError::Parse { url, message },
        })
    }

    /// Dataset with its default target attribute.
    pub fn fetch_dataset(&self, dataset_id: u64) -> Result<Dataset, ClientError> {
        self.fetch_dataset_with_target(dataset_id, None)
    }

    /// Dataset with `target` (or the default target) split off as labels.
    pub fn fetch_dataset_with_target(
        &self,
        dataset_id: u64,
        target: Option<&str>,
    ) -> Result<Dataset, ClientError> {
        let desc_url = self.api_url(&format!("json/data/{dataset_id}"));
        let (status, desc) = self.get_json(&desc_url)?;
        if status != 200 {
            return Err(ClientError::UnknownDataset(dataset_id));
        }
        let d = &desc["data_set_description"];
        let malformed = |message: &str| ClientError::Parse {
            url: desc_url.clone(),
            message: message.to_string(),
        };
        let name = json_str(&d["name"]).ok_or_else(|| malformed("missing name"))?;
        let file_url = json_str(&d["url"]).ok_or_else(|| malformed("missing url"))?;
        let default_target = json_str(&d["default_target_attribute"]);

        let feat_url = self.api_url(&format!("json/data/features/{dataset_id}"));
        let (status, feats) = self.get_json(&feat_url)?;
        if status != 200 {
            return Err(ClientError::UnknownDataset(dataset_id));
        }
        let listed = parse_feature_list(&feats).map_err(|message| ClientError::Parse {
            url: feat_url.clone(),
            message,
        })?;

        let resp = self.get(&file_url)?;
        if resp.status != 200 {
            return Err(ClientError::Http {
                url: file_url,
                status: resp.status,
            });
        }
        let data = arff::parse(&resp.body).map_err(|source| ClientError::Data {
            url: file_url.clone(),
            source,
        })?;
        let target = target
            .map(str::to_string)
            .or_else(|| listed.iter().find(|f| f.is_target).map(|f| f.name.clone()))
            .or(default_target)
            .ok_or_else(|| malformed("no target attribute"))?;
        assemble_dataset(dataset_id, name, &target, &listed, data).map_err(|message| {
            ClientError::Parse {
                url: file_url,
                message,
            }
        })
    }

    /// Test fold of every instance, indexed by row id.
    pub fn fetch_splits(
        &self,
        task: &TaskDescriptor,
        n_instances: usize,
    ) -> Result<Vec<usize>, ClientError> {
        let url = &task.split_file_url;
        let resp = self.get(url)?;
        if resp.status != 200 {
            return Err(ClientError::Http {
                url: url.clone(),
                status: resp.status,
            });
        }
        let data = arff::parse(&resp.body).map_err(|source| ClientError::Data {
            url: url.clone(),
            source,
        })?;
        parse_splits(&data, task.n_folds, n_instances).map_err(|message| ClientError::Parse {
            url: url.clone(),
            message,
        })
    }

    /// Best `n` distinct configurations of a task, by descending metric
    /// value and then ascending run id.
    pub fn fetch_top_runs(
        &self,
        task_id: u64,
        metric: &str,
        n: usize,
    ) -> Result<Vec<RunSummary>, ClientError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let page = self.config.page_size.max(1);
        let mut all: Vec<RunSummary> = Vec::new();
        let mut offset = 0;
        loop {
            let url = self.api_url(&format!(
                "json/evaluation/list/function/{metric}/task/{task_id}/sort_order/desc/limit/{page}/offset/{offset}"
            ));
            let (status, json) = self.get_json(&url)?;
            let batch = if status == 200 {
                parse_evaluations(&json).map_err(|message| ClientError::Parse {
                    url: url.clone(),
                    message,
                })?
            } else {
                Vec::new()
            };
            let exhausted = batch.len() < page;
            all.extend(batch);
            offset += page;
            if exhausted || tie_complete(&all, n) {
                break;
            }
        }
        all.sort_by(|a, b| {
            b.metric_value
                .total_cmp(&a.metric_value)
                .then(a.run_id.cmp(&b.run_id))
        });
        all.dedup_by_key(|r| r.run_id);
        let mut runs = crate::curation::dedup_runs(&all);
        runs.truncate(n);
        Ok(runs)
    }

    /// Resolves the prediction file URL of a run from its description.
    pub fn prediction_url(&self, run_id: u64) -> Result<String, ClientError> {
        let url = self.api_url(&format!("json/run/{run_id}"));
        let (status, json) = self.get_json(&url)?;
        if status != 200 {
            return Err(ClientError::MissingPredictions {
                run_id,
                reason: format!("run description returned HTTP {status}"),
            });
        }
        let files = json_list(&json["run"]["output_data"]["file"]);
        files
            .iter()
            .find(|f| json_str(&f["name"]).as_deref() == Some("predictions"))
            .and_then(|f| json_str(&f["url"]))
            .ok_or_else(|| ClientError::MissingPredictions {
                run_id,
                reason: "no predictions file listed".into(),
            })
    }

    pub fn fetch_predictions(&self, run: &RunSummary) -> Result<PredictionFile, ClientError> {
        let url = match &run.prediction_file_url {
            Some(u) => u.clone(),
            None => self.prediction_url(run.run_id)?,
        };
        let resp = self.get(&url)?;
        if resp.status != 200 || resp.body.is_empty() {
            return Err(ClientError::MissingPredictions {
                run_id: run.run_id,
                reason: format!(
                    "{url} returned HTTP {} with {} bytes",
                    resp.status,
                    resp.body.len()
                ),
            });
        }
        let sha256 = hex::encode(Sha256::digest(&resp.body));
        Ok(PredictionFile {
            bytes: resp.body,
            sha256,
        })
    }

    pub fn fetch_suite(&self, suite_id: u64) -> Result<Vec<u64>, ClientError> {
        let url = self.api_url(&format!("json/study/{suite_id}"));
        let (status, json) = self.get_json(&url)?;
        if status != 200 {
            return Err(ClientError::UnknownSuite(suite_id));
        }
        json_list(&json["study"]["tasks"]["task_id"])
            .iter()
            .map(json_u64)
            .collect::<Option<Vec<u64>>>()
            .filter(|ids| !ids.is_empty())
            .ok_or_else(|| ClientError::Parse {
                url,
                message: "study lists no task ids".into(),
            })
    }
}

/// True once `n` distinct configurations are known and the listing has moved
/// past the value of the n-th one, so no tie can still be pending.
fn tie_complete(sorted_desc: &[RunSummary], n: usize) -> bool {
    let mut seen = BTreeSet::new();
    let mut nth_value = None;
    for r in sorted_desc {
        if seen.insert((r.flow_id, r.setup_id)) && seen.len() == n {
            nth_value = Some(r.metric_value);
        }
    }
    match (nth_value, sorted_desc.last()) {
        (Some(v), Some(last)) => last.metric_value < v,
        _ => false,
    }
}

// Lenient accessors: OpenML JSON encodes numbers as strings in some
// endpoints and collapses one-element lists into bare objects.

fn json_str(v: &Json) -> Option<String> {
    match v {
        Json::String(s) => Some(s.clone()),
        Json::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn json_u64(v: &Json) -> Option<u64> {
    match v {
        Json::Number(n) => n.as_u64(),
        Json::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn json_f64(v: &Json) -> Option<f64> {
    match v {
        Json::Number(n) => n.as_f64(),
        Json::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn json_bool(v: &Json) -> bool {
    match v {
        Json::Bool(b) => *b,
        Json::String(s) => s.eq_ignore_ascii_case("true"),
        _ => false,
    }
}

fn json_list(v: &Json) -> Vec<Json> {
    match v {
        Json::Array(items) => items.clone(),
        Json::Null => Vec::new(),
        other => vec![other.clone()],
    }
}

enum TaskProblem {
    Unsupported(String),
    Malformed(String),
}

fn parse_task(task_id: u64, json: &Json) -> Result<TaskDescriptor, TaskProblem> {
    let t = &json["task"];
    let task_type = json_str(&t["task_type"]).unwrap_or_default();
    let type_id = json_u64(&t["task_type_id"]);
    if type_id != Some(1) && task_type != "Supervised Classification" {
        return Err(TaskProblem::Unsupported(format!(
            "task type {task_type:?} is not supervised classification"
        )));
    }
    let inputs = json_list(&t["input"]);
    let input = |name: &str| {
        inputs
            .iter()
            .find(|i| json_str(&i["name"]).as_deref() == Some(name))
            .cloned()
    };
    let source = input("source_data")
        .ok_or_else(|| TaskProblem::Malformed("no source_data input".into()))?;
    let dataset_id = json_u64(&source["data_set"]["data_set_id"])
        .ok_or_else(|| TaskProblem::Malformed("no data_set_id".into()))?;
    let target_name = json_str(&source["data_set"]["target_feature"])
        .ok_or_else(|| TaskProblem::Malformed("no target_feature".into()))?;
    let est = input("estimation_procedure")
        .ok_or_else(|| TaskProblem::Malformed("no estimation_procedure input".into()))?;
    let est = &est["estimation_procedure"];
    let est_type = json_str(&est["type"]).unwrap_or_default();
    if est_type != "crossvalidation" {
        return Err(TaskProblem::Unsupported(format!(
            "estimation procedure {est_type:?} is not cross-validation"
        )));
    }
    let params: HashMap<String, Json> = json_list(&est["parameter"])
        .into_iter()
        .filter_map(|p| Some((json_str(&p["name"])?, p["value"].clone())))
        .collect();
    let n_folds = params
        .get("number_folds")
        .and_then(json_u64)
        .ok_or_else(|| TaskProblem::Malformed("no number_folds".into()))?
        as usize;
    let n_repeats = params.get("number_repeats").and_then(json_u64).unwrap_or(1) as usize;
    if n_repeats != 1 {
        return Err(TaskProblem::Unsupported(format!(
            "{n_repeats} repeats; only a single repetition is supported"
        )));
    }
    if n_folds < 2 {
        return Err(TaskProblem::Unsupported(format!("{n_folds} folds")));
    }
    let split_file_url = json_str(&est["data_splits_url"])
        .ok_or_else(|| TaskProblem::Malformed("no data_splits_url".into()))?;
    Ok(TaskDescriptor {
        task_id,
        dataset_id,
        task_type: if task_type.is_empty() {
            "Supervised Classification".into()
        } else {
            task_type
        },
        n_folds,
        n_repeats,
        target_name,
        split_file_url,
    })
}

#[derive(Debug, Clone)]
struct ListedFeature {
    name: String,
    is_target: bool,
    skip: bool,
}

fn parse_feature_list(json: &Json) -> Result<Vec<ListedFeature>, String> {
    let items = json_list(&json["data_features"]["feature"]);
    if items.is_empty() {
        return Err("no features listed".into());
    }
    let mut out: Vec<(u64, ListedFeature)> = items
        .iter()
        .enumerate()
        .map(|(pos, f)| {
            let name = json_str(&f["name"]).ok_or_else(|| format!("feature {pos} has no name"))?;
            let index = json_u64(&f["index"]).unwrap_or(pos as u64);
            Ok((
                index,
                ListedFeature {
                    name,
                    is_target: json_bool(&f["is_target"]),
                    skip: json_bool(&f["is_ignore"]) || json_bool(&f["is_row_identifier"]),
                },
            ))
        })
        .collect::<Result<_, String>>()?;
    out.sort_by_key(|(i, _)| *i);
    Ok(out.into_iter().map(|(_, f)| f).collect())
}

fn assemble_dataset(
    dataset_id: u64,
    name: String,
    target: &str,
    listed: &[ListedFeature],
    data: arff::Arff,
) -> Result<Dataset, String> {
    if listed.len() != data.attributes.len() {
        return Err(format!(
            "feature list has {} entries, data file declares {} attributes",
            listed.len(),
            data.attributes.len()
        ));
    }
    for (l, a) in listed.iter().zip(&data.attributes) {
        if l.name != a.name {
            return Err(format!(
                "feature {:?} listed where data file has {:?}",
                l.name, a.name
            ));
        }
    }
    let target_idx = data
        .attribute_index(target)
        .ok_or_else(|| format!("target {target:?} not in data file"))?;
    let class_labels = match &data.attributes[target_idx].kind {
        AttributeKind::Nominal(values) => values.clone(),
        _ => return Err(format!("target {target:?} is not nominal")),
    };
    let mut features = Vec::new();
    let mut columns = Vec::new();
    for (j, (l, a)) in listed.iter().zip(&data.attributes).enumerate() {
        if j == target_idx || l.skip {
            continue;
        }
        let missing = data.rows.iter().any(|r| r[j] == Value::Missing);
        let spec = match &a.kind {
            AttributeKind::Numeric => FeatureSpec::numeric(&a.name),
            AttributeKind::Nominal(values) => FeatureSpec::categorical(&a.name, values.clone()),
            AttributeKind::String | AttributeKind::Date => {
                let seen: BTreeSet<String> = data
                    .rows
                    .iter()
                    .filter_map(|r| r[j].as_str().map(str::to_string))
                    .collect();
                if seen.is_empty() {
                    FeatureSpec::categorical(&a.name, ["?"])
                } else {
                    FeatureSpec::categorical(&a.name, seen)
                }
            }
        };
        features.push(spec.with_missing(missing));
        columns.push(j);
    }
    let mut instances = Vec::with_capacity(data.rows.len());
    let mut ground_truth = Vec::with_capacity(data.rows.len());
    for (i, row) in data.rows.iter().enumerate() {
        let label = row[target_idx]
            .as_str()
            .ok_or_else(|| format!("row {i}: missing target value"))?;
        let class = class_labels
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| format!("row {i}: unknown class {label:?}"))?;
        ground_truth.push(class);
        instances.push(
            columns
                .iter()
                .map(|&j| match &row[j] {
                    Value::Missing => Cell::Missing,
                    Value::Number(x) => Cell::Number(*x),
                    Value::Text(s) => Cell::Text(s.clone()),
                })
                .collect(),
        );
    }
    debug_assert!(features
        .iter()
        .all(|f| f.kind != FeatureKind::Categorical || !f.categories.is_empty()));
    Ok(Dataset {
        dataset_id,
        name,
        target_name: target.to_string(),
        class_labels,
        features,
        row_ids: (0..instances.len()).collect(),
        instances,
        ground_truth,
    })
}

fn parse_splits(
    data: &arff::Arff,
    n_folds: usize,
    n_instances: usize,
) -> Result<Vec<usize>, String> {
    let col = |name: &str| {
        data.attribute_index(name)
            .ok_or_else(|| format!("split file has no {name} column"))
    };
    let (type_col, row_col, repeat_col, fold_col) =
        (col("type")?, col("rowid")?, col("repeat")?, col("fold")?);
    let number = |v: &Value, what: &str, line: usize| -> Result<usize, String> {
        match v {
            Value::Number(x) if *x >= 0.0 && x.fract() == 0.0 => Ok(*x as usize),
            Value::Text(s) => s
                .trim()
                .parse()
                .map_err(|_| format!("split row {line}: bad {what} {s:?}")),
            other => Err(format!("split row {line}: bad {what} {other}")),
        }
    };
    let mut fold_of = vec![usize::MAX; n_instances];
    for (line, row) in data.rows.iter().enumerate() {
        if row[type_col].to_string() != "TEST" || number(&row[repeat_col], "repeat", line)? != 0 {
            continue;
        }
        let rowid = number(&row[row_col], "rowid", line)?;
        let fold = number(&row[fold_col], "fold", line)?;
        if rowid >= n_instances {
            return Err(format!(
                "split row {line}: rowid {rowid} beyond {n_instances} instances"
            ));
        }
        if fold >= n_folds {
            return Err(format!(
                "split row {line}: fold {fold} beyond {n_folds} folds"
            ));
        }
        if fold_of[rowid] != usize::MAX {
            return Err(format!("row {rowid} is listed as test data twice"));
        }
        fold_of[rowid] = fold;
    }
    if let Some(missing) = fold_of.iter().position(|&f| f == usize::MAX) {
        return Err(format!("row {missing} is missing from the split file"));
    }
    let used: BTreeSet<usize> = fold_of.iter().copied().collect();
    if used.len() != n_folds {
        return Err(format!("{} of {n_folds} folds have test rows", used.len()));
    }
    Ok(fold_of)
}

fn parse_evaluations(json: &Json) -> Result<Vec<RunSummary>, String> {
    json_list(&json["evaluations"]["evaluation"])
        .iter()
        .map(|e| {
            let run_id = json_u64(&e["run_id"]).ok_or("evaluation without run_id")?;
            let metric_value = json_f64(&e["value"])
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("run {run_id}: no finite value"))?;
            Ok(RunSummary {
                run_id,
                flow_id: json_u64(&e["flow_id"])
                    .ok_or_else(|| format!("run {run_id}: no flow_id"))?,
                flow_name: json_str(&e["flow_name"]).unwrap_or_default(),
                setup_id: json_u64(&e["setup_id"])
                    .ok_or_else(|| format!("run {run_id}: no setup_id"))?,
                metric_value,
                prediction_file_url: None,
            })
        })
        .collect()
}
