use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{Map, Value as Json};

use super::{PredictionOutput, Predictor, TaskKind, SOFTMAX_TOLERANCE};
use crate::dataset::Value;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    /// Maximum concurrent requests per batch.
    pub fan_out: usize,
    /// Instances per request.
    pub batch_size: usize,
    pub timeout: Duration,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        RemoteOptions {
            fan_out: 8,
            batch_size: 64,
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Deserialize)]
struct PredictResponse {
    predictions: Vec<Json>,
}

/// Client for a model served over HTTP:
/// `POST {"instances": [{feature: value, ...}]}` answered by
/// `{"predictions": [score | [scores], ...]}` in instance order.
pub struct RemoteModel {
    url: String,
    task: TaskKind,
    agent: ureq::Agent,
    options: RemoteOptions,
}

impl RemoteModel {
    pub fn new(url: &str, task: TaskKind, options: RemoteOptions) -> Result<Self> {
        let uri: ureq::http::Uri = url
            .parse()
            .map_err(|e| Error::InvalidModel(format!("bad endpoint URL {url:?}: {e}")))?;
        if !matches!(uri.scheme_str(), Some("http") | Some("https")) || uri.host().is_none() {
            return Err(Error::InvalidModel(format!("endpoint URL {url:?} must be http(s)://host/...")));
        }
        if options.fan_out == 0 || options.batch_size == 0 {
            return Err(Error::InvalidArgument("fan_out and batch_size must be positive".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(options.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteModel {
            url: url.to_string(),
            task,
            agent,
            options,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn request(&self, features: &[String], rows: &[&[Value]]) -> Result<Vec<PredictionOutput>> {
        let instances: Vec<Json> = rows
            .iter()
            .map(|row| {
                let object: Map<String, Json> = features
                    .iter()
                    .zip(row.iter())
                    .map(|(f, v)| (f.clone(), serde_json::to_value(v).expect("values serialize")))
                    .collect();
                Json::Object(object)
            })
            .collect();
        let body = serde_json::json!({ "instances": instances });

        let mut response = self.agent.post(&self.url).send_json(&body).map_err(|e| Error::Remote {
            status: None,
            message: e.to_string(),
        })?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let detail = response.body_mut().read_to_string().unwrap_or_default();
            return Err(Error::Remote {
                status: Some(status),
                message: detail.chars().take(200).collect(),
            });
        }
        let parsed: PredictResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::Protocol(format!("unreadable response body: {e}")))?;
        if parsed.predictions.len() != rows.len() {
            return Err(Error::Protocol(format!(
                "sent {} instances, received {} predictions",
                rows.len(),
                parsed.predictions.len()
            )));
        }
        parsed.predictions.iter().map(|p| parse_prediction(p, self.task)).collect()
    }
}

fn parse_prediction(p: &Json, task: TaskKind) -> Result<PredictionOutput> {
    let numbers = |p: &Json| -> Option<Vec<f64>> {
        match p {
            Json::Number(n) => n.as_f64().map(|x| vec![x]),
            Json::Array(items) => items.iter().map(Json::as_f64).collect(),
            _ => None,
        }
    };
    let bad = || Error::Protocol(format!("prediction {p} does not fit task {task:?}"));
    let v = numbers(p).ok_or_else(bad)?;
    let out = match (task, v.as_slice()) {
        (TaskKind::BinaryClassification, [s]) => PredictionOutput::Binary(*s),
        // [negative, positive]
        (TaskKind::BinaryClassification, [n, s]) if ((n + s) - 1.0).abs() <= SOFTMAX_TOLERANCE => {
            PredictionOutput::Binary(*s)
        }
        (TaskKind::Regression, [s]) => PredictionOutput::Regression(*s),
        (TaskKind::MultiClassification { num_classes }, scores) if scores.len() == num_classes => {
            PredictionOutput::Multiclass(scores.to_vec())
        }
        _ => return Err(bad()),
    };
    out.validate()?;
    Ok(out)
}

impl Predictor for RemoteModel {
    fn task(&self) -> TaskKind {
        self.task
    }

    fn predict(&self, features: &[String], rows: &[&[Value]]) -> Result<Vec<PredictionOutput>> {
        let chunks: Vec<&[&[Value]]> = rows.chunks(self.options.batch_size).collect();
        let workers = self.options.fan_out.min(chunks.len());
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<Vec<PredictionOutput>>>>> =
            Mutex::new((0..chunks.len()).map(|_| None).collect());

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(chunk) = chunks.get(i) else { break };
                    let outcome = self.request(features, chunk);
                    let failed = outcome.is_err();
                    results.lock().expect("results lock")[i] = Some(outcome);
                    if failed {
                        // stop handing out further chunks
                        next.store(chunks.len(), Ordering::Relaxed);
                    }
                });
            }
        });

        let mut out = Vec::with_capacity(rows.len());
        for slot in results.into_inner().expect("results lock") {
            match slot {
                Some(Ok(part)) => out.extend(part),
                Some(Err(e)) => return Err(e),
                None => {
                    return Err(Error::Remote {
                        status: None,
                        message: "request abandoned after an earlier failure".into(),
                    })
                }
            }
        }
        Ok(out)
    }
}
