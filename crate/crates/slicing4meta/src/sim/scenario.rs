//! Scenario schema: everything a run needs, loaded from one JSON document.
//!
//! Parsing is strict (unknown fields are rejected) and followed by semantic
//! validation that reports the path of the offending field, e.g.
//! `arrivals[3].bep: must be in [0, 1]`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, MaaSModel, MaasKind, ModelId};
use crate::controllers::{AllocationPolicy, ScalingPolicy};
use crate::orchestrator::{RequirementOverrides, ServiceKind, ServiceRequirements};
use crate::qoe::QoEParams;
use crate::resources::{IsolationDegree, ResourceVector};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario invalid: {path}: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
}

impl ScenarioError {
    pub fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::Invalid { path: path.into(), message: message.into() }
    }
}

/// Inclusive range the per-user virtual-object count is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRange {
    pub min: u32,
    pub max: u32,
}

impl Default for ObjectRange {
    fn default() -> Self {
        // the virtual-travel scene: 56 objects, counts drawn from 1..=56
        ObjectRange { min: 1, max: 56 }
    }
}

/// One catalog declaration. Suppliers carry `supply`, consumers
/// `consumption`, composites carry `children` and no vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogEntry {
    pub id: ModelId,
    pub kind: MaasKind,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub supply: Option<ResourceVector>,
    #[serde(default)]
    pub consumption: Option<ResourceVector>,
    #[serde(default)]
    pub children: Vec<ModelId>,
    #[serde(default = "default_share_threshold")]
    pub max_isolation_degree_for_sharing: IsolationDegree,
}

fn default_share_threshold() -> IsolationDegree {
    IsolationDegree::Logical
}

/// Controller configuration with conventional defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllersConfig {
    /// EMA smoothing factor for demand prediction.
    pub alpha: f64,
    /// Capacity design headroom factor.
    pub headroom: f64,
    /// Rendering allocation policy for local controllers.
    pub policy: AllocationPolicy,
    pub scaling: ScalingPolicy,
    /// Global controller cadence.
    pub epoch_ms: f64,
    /// Monitoring cadence.
    pub monitor_ms: f64,
}

impl Default for ControllersConfig {
    fn default() -> Self {
        ControllersConfig {
            alpha: 0.3,
            headroom: 1.2,
            policy: AllocationPolicy::Even,
            scaling: ScalingPolicy::default(),
            epoch_ms: 100.0,
            monitor_ms: 10.0,
        }
    }
}

/// Partial requirement template override for one cluster.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateOverride {
    pub peak_rate: Option<f64>,
    pub reliability: Option<f64>,
    pub max_latency_ms: Option<f64>,
    pub rendering_per_object: Option<f64>,
    pub isolation: Option<IsolationDegree>,
}

/// One scheduled service request.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalSpec {
    pub time_ms: f64,
    pub user: String,
    pub kind: ServiceKind,
    /// Downlink rate condition, Mb/s.
    pub rate: f64,
    /// Uplink bit error probability.
    #[serde(default)]
    pub bep: f64,
    #[serde(default)]
    pub overrides: RequirementOverrides,
    /// Pinned object count; absent means drawn from the object range.
    #[serde(default)]
    pub n_objects: Option<u32>,
    /// When the user leaves; absent means present until the end.
    #[serde(default)]
    pub departure_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub duration_ms: f64,
    #[serde(default)]
    pub qoe: QoEParams,
    #[serde(default)]
    pub objects: ObjectRange,
    pub catalog: Vec<CatalogEntry>,
    pub bundles: BTreeMap<ServiceKind, Vec<ModelId>>,
    #[serde(default)]
    pub templates: BTreeMap<ServiceKind, TemplateOverride>,
    #[serde(default)]
    pub controllers: ControllersConfig,
    /// Requirement similarity tolerance for instance reuse.
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub arrivals: Vec<ArrivalSpec>,
}

fn default_tau() -> f64 {
    0.1
}

impl std::str::FromStr for Scenario {
    type Err = ScenarioError;

    fn from_str(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text)
            .map_err(|e| ScenarioError::invalid("$", e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }
}

impl Scenario {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        let text = fs::read_to_string(path)?;
        text.parse()
    }

    /// Semantic checks beyond the serde schema.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |path: &str, msg: &str| Err(ScenarioError::invalid(path, msg));

        if !(self.duration_ms >= 0.0 && self.duration_ms.is_finite()) {
            return bad("duration_ms", "must be finite and >= 0");
        }
        self.qoe
            .validate()
            .map_err(|e| ScenarioError::invalid("qoe", e.to_string()))?;
        if self.objects.min < 1 || self.objects.min > self.objects.max {
            return bad("objects", "requires 1 <= min <= max");
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad("tau", "must be finite and >= 0");
        }

        for (i, entry) in self.catalog.iter().enumerate() {
            let path = format!("catalog[{i}]");
            match entry.kind {
                MaasKind::CaaS if entry.consumption.is_some() => {
                    return bad(&path, "a caas entry must not declare consumption");
                }
                MaasKind::TaaS if entry.supply.is_some() => {
                    return bad(&path, "a taas entry must not declare supply");
                }
                _ => {}
            }
            if !entry.children.is_empty() && (entry.supply.is_some() || entry.consumption.is_some())
            {
                return bad(&path, "a composite entry must not declare resource vectors");
            }
            for v in [entry.supply.as_ref(), entry.consumption.as_ref()].into_iter().flatten() {
                if !(v.is_non_negative() && v.is_finite()) {
                    return bad(&path, "resource quantities must be finite and >= 0");
                }
            }
        }

        let known: std::collections::BTreeSet<&ModelId> =
            self.catalog.iter().map(|e| &e.id).collect();
        for (kind, bundle) in &self.bundles {
            for (i, model) in bundle.iter().enumerate() {
                if !known.contains(model) {
                    return bad(
                        &format!("bundles.{kind}[{i}]"),
                        &format!("unknown model '{model}'"),
                    );
                }
            }
        }

        let c = &self.controllers;
        if !(c.alpha > 0.0 && c.alpha <= 1.0) {
            return bad("controllers.alpha", "must be in (0, 1]");
        }
        if !(c.headroom >= 1.0 && c.headroom.is_finite()) {
            return bad("controllers.headroom", "must be >= 1");
        }
        c.scaling
            .validate()
            .map_err(|e| ScenarioError::invalid("controllers.scaling", e.to_string()))?;
        if !(c.epoch_ms > 0.0 && c.epoch_ms.is_finite()) {
            return bad("controllers.epoch_ms", "must be > 0");
        }
        if !(c.monitor_ms > 0.0 && c.monitor_ms.is_finite()) {
            return bad("controllers.monitor_ms", "must be > 0");
        }

        let mut seen_users = std::collections::BTreeSet::new();
        for (i, a) in self.arrivals.iter().enumerate() {
            let path = |field: &str| format!("arrivals[{i}].{field}");
            if a.user.is_empty() {
                return bad(&path("user"), "must not be empty");
            }
            if !seen_users.insert(&a.user) {
                return bad(&path("user"), "user ids must be unique");
            }
            if !(a.time_ms >= 0.0 && a.time_ms <= self.duration_ms) {
                return bad(&path("time_ms"), "must lie within [0, duration_ms]");
            }
            if !(a.rate >= 0.0 && a.rate.is_finite()) {
                return bad(&path("rate"), "must be finite and >= 0");
            }
            if !(0.0..=1.0).contains(&a.bep) {
                return bad(&path("bep"), "must be in [0, 1]");
            }
            if let Some(n) = a.n_objects {
                if n < self.objects.min || n > self.objects.max {
                    return bad(&path("n_objects"), "must lie within the object range");
                }
            }
            if let Some(dep) = a.departure_ms {
                if !dep.is_finite() || dep <= a.time_ms {
                    return bad(&path("departure_ms"), "must be after time_ms");
                }
            }
        }
        Ok(())
    }

    /// Materialize the declared catalog.
    pub fn build_catalog(&self) -> Result<Catalog, ScenarioError> {
        let models: Vec<MaaSModel> = self
            .catalog
            .iter()
            .map(|e| {
                if !e.children.is_empty() {
                    MaaSModel::composite(
                        e.id.clone(),
                        e.kind,
                        e.label.clone(),
                        e.children.clone(),
                        e.max_isolation_degree_for_sharing,
                    )
                } else {
                    match e.kind {
                        MaasKind::CaaS => MaaSModel::caas(
                            e.id.clone(),
                            e.label.clone(),
                            e.supply.unwrap_or(ResourceVector::ZERO),
                            e.max_isolation_degree_for_sharing,
                        ),
                        MaasKind::TaaS => MaaSModel::taas(
                            e.id.clone(),
                            e.label.clone(),
                            e.consumption.unwrap_or(ResourceVector::ZERO),
                            e.max_isolation_degree_for_sharing,
                        ),
                    }
                }
            })
            .collect();
        let mut catalog = Catalog::new();
        catalog.register_all(models).map_err(|e: CatalogError| {
            ScenarioError::invalid("catalog", e.to_string())
        })?;
        Ok(catalog)
    }

    /// Requirement templates with scenario overrides applied.
    pub fn templates(&self) -> BTreeMap<ServiceKind, ServiceRequirements> {
        let mut templates = crate::orchestrator::default_templates();
        for (kind, over) in &self.templates {
            let t = templates.get_mut(kind).expect("both kinds present");
            if let Some(v) = over.peak_rate {
                t.peak_rate = v;
            }
            if let Some(v) = over.reliability {
                t.reliability = v;
            }
            if let Some(v) = over.max_latency_ms {
                t.max_latency_ms = v;
            }
            if let Some(v) = over.rendering_per_object {
                t.rendering_per_object = v;
            }
            if let Some(v) = over.isolation {
                t.isolation = v;
            }
        }
        templates
    }
}
