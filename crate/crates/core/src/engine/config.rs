//! Experiment configuration: a JSON document with one section per concern.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::PolicyKind;
use crate::error::{Error, Result};
use crate::estimation::RecursionMode;
use crate::placement::PlacementKind;
use crate::routing::default_thresholds;
use crate::topology::TopologySpec;
use crate::workload::SyntheticSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_run_id")]
    pub run_id: String,
    #[serde(default = "TopologySpec::three_layer")]
    pub topology: TopologySpec,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default)]
    pub placement: PlacementSpec,
    #[serde(default)]
    pub params: Params,
    #[serde(default = "default_total_jobs")]
    pub total_jobs: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn default_run_id() -> String {
    "run".to_string()
}

fn default_policy() -> PolicyKind {
    PolicyKind::VrLyExp4
}

fn default_total_jobs() -> u64 {
    20_000
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSpec {
    pub synthetic: SyntheticSpec,
    /// Replaces the synthetic generator when set.
    pub trace: Option<PathBuf>,
    /// Mean Poisson arrivals per entry node per slot.
    pub rate_per_entry: f64,
    pub dirichlet_alpha: f64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            synthetic: SyntheticSpec::default(),
            trace: None,
            rate_per_entry: 0.2747,
            dirichlet_alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlacementSpec {
    pub kind: PlacementKind,
    /// Slots between onloading epochs.
    pub epoch_slots: u64,
}

impl Default for PlacementSpec {
    fn default() -> Self {
        Self {
            kind: PlacementKind::Greedy,
            epoch_slots: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Learning rate; `null` uses `sqrt(ln|E| / total_jobs)` per node.
    pub eta: Option<f64>,
    pub lambda: f64,
    /// Weight of inference error against queue-weighted cost.
    pub v: f64,
    pub eta_b: f64,
    /// Switching penalty per memory unit of newly loaded models.
    pub nu: f64,
    pub thresholds: Vec<f64>,
    pub confidence_std: f64,
    /// Per-hop offload probability of the static routers; `null` calibrates it.
    pub offload_prob: Option<f64>,
    pub recursion: RecursionMode,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            eta: None,
            lambda: 0.1,
            v: 70.0,
            eta_b: 0.002,
            nu: 0.1,
            thresholds: default_thresholds(),
            confidence_std: 0.1,
            offload_prob: None,
            recursion: RecursionMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    /// Write `paths.jsonl` with one record per job.
    pub paths: bool,
    /// Jobs between regret checkpoints.
    pub regret_interval: u64,
    /// Slots between entropy checkpoints in the summary.
    pub entropy_interval: u64,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            paths: false,
            regret_interval: 1000,
            entropy_interval: 1000,
        }
    }
}

/// Axes of a sweep. An empty axis keeps the base config's value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub policies: Vec<PolicyKind>,
    pub topologies: Vec<TopologySpec>,
    pub placements: Vec<PlacementKind>,
}

impl SweepSpec {
    pub fn is_empty(&self) -> bool {
        self.policies.is_empty() && self.topologies.is_empty() && self.placements.is_empty()
    }
}

fn check(ok: bool, field: &str, reason: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, reason))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Json {
            context: "config".into(),
            source: e,
        })?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Json {
            context: "config".into(),
            source: e,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative trace paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut value: Value = serde_json::from_str(&text).map_err(|e| Error::Json {
            context: format!("parsing {}", path.display()),
            source: e,
        })?;
        for (k, v) in overrides {
            apply_override(&mut value, k, v)?;
        }
        let mut cfg = Self::from_value(value)?;
        if let (Some(trace), Some(dir)) = (&cfg.workload.trace, path.parent()) {
            if trace.is_relative() {
                cfg.workload.trace = Some(dir.join(trace));
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        check(self.total_jobs > 0, "total_jobs", "must be positive")?;
        check(!self.seeds.is_empty(), "seeds", "must not be empty")?;
        check(!self.run_id.is_empty(), "run_id", "must not be empty")?;
        check(
            p.lambda > 0.0 && p.lambda < 1.0,
            "params.lambda",
            format!("{} is outside (0, 1)", p.lambda),
        )?;
        check(
            p.v.is_finite() && p.v >= 0.0,
            "params.v",
            "must be finite and non-negative",
        )?;
        check(
            p.eta_b > 0.0 && p.eta_b <= 1.0,
            "params.eta_b",
            "must be in (0, 1]",
        )?;
        check(
            p.nu.is_finite() && p.nu >= 0.0,
            "params.nu",
            "must be finite and non-negative",
        )?;
        if let Some(eta) = p.eta {
            check(
                eta.is_finite() && eta > 0.0,
                "params.eta",
                "must be positive",
            )?;
        }
        check(
            p.confidence_std.is_finite() && p.confidence_std >= 0.0,
            "params.confidence_std",
            "must be non-negative",
        )?;
        if let Some(q) = p.offload_prob {
            check(
                (0.0..=1.0).contains(&q),
                "params.offload_prob",
                "must be in [0, 1]",
            )?;
        }
        check(
            !p.thresholds.is_empty(),
            "params.thresholds",
            "must not be empty",
        )?;
        check(
            p.thresholds.iter().all(|t| (0.0..=1.0).contains(t))
                && p.thresholds.windows(2).all(|w| w[0] < w[1]),
            "params.thresholds",
            "must be strictly increasing within [0, 1]",
        )?;
        let w = &self.workload;
        check(
            w.rate_per_entry.is_finite() && w.rate_per_entry > 0.0,
            "workload.rate_per_entry",
            "must be positive",
        )?;
        check(
            w.dirichlet_alpha > 0.0,
            "workload.dirichlet_alpha",
            "must be positive",
        )?;
        check(
            self.placement.epoch_slots > 0,
            "placement.epoch_slots",
            "must be positive",
        )?;
        check(
            self.output.regret_interval > 0,
            "output.regret_interval",
            "must be positive",
        )?;
        check(
            self.output.entropy_interval > 0,
            "output.entropy_interval",
            "must be positive",
        )?;
        self.topology
            .build()
            .map_err(|e| Error::config("topology", e.to_string()))?;
        if let Some(sweep) = &self.sweep {
            for (i, t) in sweep.topologies.iter().enumerate() {
                t.build()
                    .map_err(|e| Error::config(format!("sweep.topologies[{i}]"), e.to_string()))?;
            }
        }
        Ok(())
    }
}

/// Sets a dotted key (`params.lambda`) to a value. The value is parsed as JSON
/// when possible and used as a plain string otherwise, so `policy=pure_local`
/// and `params.lambda=0.2` both work.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty path segment"));
    }
    for part in &parts[..parts.len() - 1] {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not inside an object")))?;
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = cur
        .as_object_mut()
        .ok_or_else(|| Error::config(key, "parent is not an object"))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::config(s, "override must look like key=value"))
}
