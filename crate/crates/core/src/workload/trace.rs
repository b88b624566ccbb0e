//! JSONL trace ingestion.
//!
//! Line 1 is a header listing the model pool:
//! `{"models": [{"id": str, "size": number, "modalities": [...], "error_prob": {task: p}?}]}`.
//! Every following non-empty line is one job:
//! `{"job_id": str, "task_type": str, "modality": "text"|"vision", "size_units": number,
//!   "correctness": {model_id: 0|1}}`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Catalog, Modality, ModelSpec, TaskId, TaskInfo};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    models: Vec<HeaderModel>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderModel {
    id: String,
    size: f64,
    modalities: Vec<Modality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error_prob: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    job_id: String,
    task_type: String,
    modality: Modality,
    size_units: f64,
    correctness: BTreeMap<String, serde_json::Value>,
}

/// One recorded job: task, size and per-model correctness (indexed like the catalog).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub job_id: String,
    pub task: TaskId,
    pub size_units: f64,
    pub correct: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub catalog: Catalog,
    pub records: Vec<TraceRecord>,
}

fn trace_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Trace {
        path: PathBuf::from(path),
        line,
        reason: reason.into(),
    }
}

/// Parses a JSONL trace. Expected errors per (task, model) come from the header's
/// `error_prob` when present, otherwise from the empirical error rate in the trace.
pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let file =
        File::open(path).map_err(|e| Error::io(format!("opening trace {}", path.display()), e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header: Header = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line)
                    .map_err(|e| trace_err(path, i + 1, format!("bad header: {e}")))?;
            }
            None => return Err(trace_err(path, 1, "missing header line")),
        }
    };
    if header.models.is_empty() {
        return Err(trace_err(path, 1, "header lists no models"));
    }
    let mut model_index = HashMap::new();
    for (i, m) in header.models.iter().enumerate() {
        if !(m.size.is_finite() && m.size > 0.0) {
            return Err(trace_err(
                path,
                1,
                format!("model {} has non-positive size", m.id),
            ));
        }
        if model_index.insert(m.id.clone(), i).is_some() {
            return Err(trace_err(path, 1, format!("duplicate model id {}", m.id)));
        }
        if let Some(ep) = &m.error_prob {
            if let Some((task, p)) = ep.iter().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
                return Err(trace_err(
                    path,
                    1,
                    format!(
                        "error_prob {p} for model {} on task {task} is outside [0, 1]",
                        m.id
                    ),
                ));
            }
        }
    }
    let n_models = header.models.len();

    let mut tasks: Vec<TaskInfo> = Vec::new();
    let mut task_index: HashMap<String, usize> = HashMap::new();
    let mut records = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| trace_err(path, lineno, e.to_string()))?;
        if !(rec.size_units.is_finite() && rec.size_units > 0.0) {
            return Err(trace_err(path, lineno, "size_units must be positive"));
        }
        let t = match task_index.get(&rec.task_type) {
            Some(&t) => {
                if tasks[t].modality != rec.modality {
                    return Err(trace_err(
                        path,
                        lineno,
                        format!("task {} changes modality", rec.task_type),
                    ));
                }
                t
            }
            None => {
                tasks.push(TaskInfo {
                    name: rec.task_type.clone(),
                    modality: rec.modality,
                });
                task_index.insert(rec.task_type.clone(), tasks.len() - 1);
                tasks.len() - 1
            }
        };
        let mut correct = vec![None; n_models];
        for (model, value) in &rec.correctness {
            let Some(&m) = model_index.get(model) else {
                return Err(trace_err(path, lineno, format!("unknown model_id {model}")));
            };
            let bit = match value.as_u64() {
                Some(0) => false,
                Some(1) => true,
                _ => {
                    return Err(trace_err(
                        path,
                        lineno,
                        format!("correctness for {model} must be 0 or 1, got {value}"),
                    ))
                }
            };
            correct[m] = Some(bit);
        }
        let correct = correct
            .into_iter()
            .enumerate()
            .map(|(m, c)| {
                c.ok_or_else(|| {
                    trace_err(
                        path,
                        lineno,
                        format!("missing correctness for model {}", header.models[m].id),
                    )
                })
            })
            .collect::<Result<Vec<bool>>>()?;
        records.push(TraceRecord {
            job_id: rec.job_id,
            task: TaskId(t as u32),
            size_units: rec.size_units,
            correct,
        });
    }

    let mut wrong = vec![vec![0usize; n_models]; tasks.len()];
    let mut seen = vec![0usize; tasks.len()];
    for r in &records {
        seen[r.task.index()] += 1;
        for (w, &c) in wrong[r.task.index()].iter_mut().zip(&r.correct) {
            *w += (!c) as usize;
        }
    }
    let error: Vec<Vec<f64>> = tasks
        .iter()
        .enumerate()
        .map(|(t, task)| {
            header
                .models
                .iter()
                .enumerate()
                .map(|(m, model)| {
                    model
                        .error_prob
                        .as_ref()
                        .and_then(|ep| ep.get(&task.name).copied())
                        .unwrap_or(wrong[t][m] as f64 / seen[t] as f64)
                })
                .collect()
        })
        .collect();
    let models = header
        .models
        .into_iter()
        .map(|m| ModelSpec {
            id: m.id,
            size: m.size,
            modalities: m.modalities,
        })
        .collect();

    Ok(Trace {
        catalog: Catalog::new(tasks, models, error),
        records,
    })
}

/// Writes `trace` in the JSONL schema read by [`load_trace`], including the
/// catalog's expected errors as `error_prob`.
pub fn write_trace(path: impl AsRef<Path>, trace: &Trace) -> Result<()> {
    let path = path.as_ref();
    let ctx = || format!("writing trace {}", path.display());
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut out = BufWriter::new(file);
    let c = &trace.catalog;
    let header = Header {
        models: c
            .model_ids()
            .map(|m| {
                let spec = c.model(m);
                HeaderModel {
                    id: spec.id.clone(),
                    size: spec.size,
                    modalities: spec.modalities.clone(),
                    error_prob: Some(
                        c.tasks()
                            .iter()
                            .enumerate()
                            .filter(|(t, _)| c.supports(m, TaskId(*t as u32)))
                            .map(|(t, task)| {
                                (task.name.clone(), c.expected_error(TaskId(t as u32), m))
                            })
                            .collect(),
                    ),
                }
            })
            .collect(),
    };
    writeln!(out, "{}", to_line(&header, ctx)?).map_err(|e| Error::io(ctx(), e))?;
    for r in &trace.records {
        let task = c.task(r.task);
        let rec = Record {
            job_id: r.job_id.clone(),
            task_type: task.name.clone(),
            modality: task.modality,
            size_units: r.size_units,
            correctness: c
                .models()
                .iter()
                .zip(&r.correct)
                .map(|(m, &ok)| (m.id.clone(), serde_json::Value::from(ok as u8)))
                .collect(),
        };
        writeln!(out, "{}", to_line(&rec, ctx)?).map_err(|e| Error::io(ctx(), e))?;
    }
    out.flush().map_err(|e| Error::io(ctx(), e))
}

fn to_line<T: Serialize>(value: &T, ctx: impl Fn() -> String) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Json {
        context: ctx(),
        source: e,
    })
}
