//! Two-tier control plane.
//!
//! The global controller runs once per epoch on a coarse timescale: it
//! smooths the arrival history into a demand prediction, designs cluster
//! capacity with headroom, and consumes the event feed from the local
//! controllers. Local controllers run on every event: they split a cluster's
//! rendering budget across member users and scale instance reservations
//! against watermark thresholds.
//!
//! All policies are deterministic and pluggable through configuration.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::{MsiId, ServiceKind};
use crate::qoe::{self, QoEParams, QoeError, UserSession};
use crate::resources::{Pool, PoolError, ReservationId, ResourceVector};

/// Expected arrivals per epoch, per service cluster.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub per_kind: BTreeMap<ServiceKind, f64>,
}

impl Prediction {
    pub fn get(&self, kind: ServiceKind) -> f64 {
        self.per_kind.get(&kind).copied().unwrap_or(0.0)
    }
}

/// Watermark scaling policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingPolicy {
    /// Scale up when any dimension reaches this utilization.
    pub u_hi: f64,
    /// Scale down when every dimension is at or below this utilization.
    pub u_lo: f64,
    /// Amount added or removed per action.
    pub step: ResourceVector,
}

impl ScalingPolicy {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if !(self.u_hi > 0.0 && self.u_hi <= 1.0) {
            return Err(ControllerError::InvalidPolicy("u_hi must be in (0, 1]"));
        }
        if !(self.u_lo >= 0.0 && self.u_lo < self.u_hi) {
            return Err(ControllerError::InvalidPolicy("u_lo must be in [0, u_hi)"));
        }
        if !(self.step.is_non_negative() && self.step.is_finite()) {
            return Err(ControllerError::InvalidPolicy("step must be finite and >= 0"));
        }
        Ok(())
    }
}

impl Default for ScalingPolicy {
    fn default() -> Self {
        // grow the dimensions members put live pressure on
        ScalingPolicy {
            u_hi: 0.9,
            u_lo: 0.2,
            step: ResourceVector::new(100.0, 0.0, 0.0, 100.0),
        }
    }
}

/// How a local controller splits its rendering budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationPolicy {
    #[default]
    Even,
    MiMax,
}

impl fmt::Display for AllocationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AllocationPolicy::Even => "even",
            AllocationPolicy::MiMax => "mimax",
        })
    }
}

impl std::str::FromStr for AllocationPolicy {
    type Err = ControllerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "even" => Ok(AllocationPolicy::Even),
            "mimax" => Ok(AllocationPolicy::MiMax),
            _ => Err(ControllerError::InvalidPolicy("policy must be 'even' or 'mimax'")),
        }
    }
}

/// Scaling decision for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleAction {
    ScaleUp,
    ScaleDown,
    None,
}

impl fmt::Display for ScaleAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScaleAction::ScaleUp => "scale_up",
            ScaleAction::ScaleDown => "scale_down",
            ScaleAction::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("history is empty")]
    EmptyHistory,
    #[error("smoothing factor must be in (0, 1]")]
    InvalidSmoothing,
    #[error("invalid policy: {0}")]
    InvalidPolicy(&'static str),
    #[error(transparent)]
    Qoe(#[from] QoeError),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

/// Exponential moving average with `p_1 = x_1`.
pub fn ema(history: &[f64], alpha: f64) -> Result<f64, ControllerError> {
    if history.is_empty() {
        return Err(ControllerError::EmptyHistory);
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(ControllerError::InvalidSmoothing);
    }
    let mut p = history[0];
    for &x in &history[1..] {
        p = alpha * x + (1.0 - alpha) * p;
    }
    Ok(p)
}

/// Smooth per-kind arrival histories into a demand prediction.
pub fn predict_demand(
    history: &BTreeMap<ServiceKind, Vec<f64>>,
    alpha: f64,
) -> Result<Prediction, ControllerError> {
    let mut per_kind = BTreeMap::new();
    for (&kind, counts) in history {
        per_kind.insert(kind, ema(counts, alpha)?);
    }
    Ok(Prediction { per_kind })
}

/// Cluster capacity to provision: predicted arrivals times the per-request
/// demand, padded by the headroom factor.
pub fn design_cluster_capacity(
    prediction: f64,
    per_request_demand: &ResourceVector,
    headroom: f64,
) -> ResourceVector {
    debug_assert!(headroom >= 1.0, "headroom must be >= 1");
    per_request_demand.scale(prediction * headroom)
}

/// Split `budget` K of rendering across the cluster's users with the
/// selected policy. The result never exceeds the budget in sum.
pub fn local_allocate(
    users: &[UserSession],
    budget: f64,
    policy: AllocationPolicy,
    params: &QoEParams,
) -> Result<Vec<f64>, QoeError> {
    match policy {
        AllocationPolicy::Even => qoe::even_allocation(budget, users),
        AllocationPolicy::MiMax => qoe::mi_max_allocation(budget, users, params),
    }
}

/// Watermark decision from per-dimension utilization ratios in [0, 1]:
/// up when any dimension is hot, down when all are cold, otherwise nothing.
pub fn monitor_and_scale(utilization: &ResourceVector, policy: &ScalingPolicy) -> ScaleAction {
    let u = utilization.components();
    debug_assert!(u.iter().all(|&x| (0.0..=1.0).contains(&x)), "utilization must be ratios");
    if u.iter().any(|&x| x >= policy.u_hi) {
        ScaleAction::ScaleUp
    } else if u.iter().all(|&x| x <= policy.u_lo) {
        ScaleAction::ScaleDown
    } else {
        ScaleAction::None
    }
}

/// Result of applying a scaling decision to a reservation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleOutcome {
    /// The action that actually took effect.
    pub applied: ScaleAction,
    /// True when a scale-up was downgraded because the pool was exhausted.
    pub downgraded: bool,
}

/// Apply a scaling decision to an instance's flex reservation.
///
/// `base` is the floor below which the holding never shrinks (the committed
/// model footprints plus current usage). A scale-up that the pool cannot
/// carry is downgraded to no action.
pub fn apply_scale_action(
    action: ScaleAction,
    flex: ReservationId,
    floor: &ResourceVector,
    policy: &ScalingPolicy,
    pool: &mut Pool,
) -> Result<ScaleOutcome, ControllerError> {
    let current = pool
        .get(flex)
        .ok_or(PoolError::UnknownReservation(flex))?
        .amount;
    match action {
        ScaleAction::None => Ok(ScaleOutcome { applied: ScaleAction::None, downgraded: false }),
        ScaleAction::ScaleUp => match pool.resize(flex, current + policy.step) {
            Ok(()) => Ok(ScaleOutcome { applied: ScaleAction::ScaleUp, downgraded: false }),
            Err(PoolError::InsufficientResources { .. }) => {
                Ok(ScaleOutcome { applied: ScaleAction::None, downgraded: true })
            }
            Err(other) => Err(other.into()),
        },
        ScaleAction::ScaleDown => {
            let target = current.saturating_sub(&policy.step).max(floor);
            // never grow on a scale-down even if the floor sits above
            let target = ResourceVector::new(
                target.comm_rate.min(current.comm_rate),
                target.compute.min(current.compute),
                target.storage.min(current.storage),
                target.rendering.min(current.rendering),
            );
            pool.resize(flex, target)?;
            Ok(ScaleOutcome { applied: ScaleAction::ScaleDown, downgraded: false })
        }
    }
}

/// One feedback record flowing from a local controller to the global one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerEvent {
    pub t_ms: f64,
    pub cluster: ServiceKind,
    pub msi: Option<MsiId>,
    pub kind: ControlEventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ControlEventKind {
    Scale { action: ScaleAction, downgraded: bool },
    Readjust { user: String, old: f64, new: f64 },
}

/// Per-cluster controller state: policy selection plus an action counter
/// used to cross-check the feedback loop.
#[derive(Debug, Clone)]
pub struct LocalController {
    pub cluster: ServiceKind,
    pub policy: AllocationPolicy,
    pub scaling: ScalingPolicy,
    pub actions_emitted: u64,
}

impl LocalController {
    pub fn new(cluster: ServiceKind, policy: AllocationPolicy, scaling: ScalingPolicy) -> Self {
        LocalController { cluster, policy, scaling, actions_emitted: 0 }
    }
}

/// Global controller: demand smoothing, capacity design, and the event log
/// fed by the locals. Every locally emitted action lands here in the same
/// epoch it happened.
#[derive(Debug, Clone)]
pub struct GlobalController {
    pub alpha: f64,
    pub headroom: f64,
    history: BTreeMap<ServiceKind, Vec<f64>>,
    event_log: Vec<ControllerEvent>,
}

impl GlobalController {
    pub fn new(alpha: f64, headroom: f64) -> Self {
        GlobalController { alpha, headroom, history: BTreeMap::new(), event_log: Vec::new() }
    }

    pub fn ingest(&mut self, event: ControllerEvent) {
        self.event_log.push(event);
    }

    pub fn event_log(&self) -> &[ControllerEvent] {
        &self.event_log
    }

    /// Close an epoch: absorb its arrival counts and predict the next one.
    pub fn on_epoch(
        &mut self,
        arrivals: &BTreeMap<ServiceKind, f64>,
    ) -> Result<Prediction, ControllerError> {
        for kind in ServiceKind::ALL {
            self.history
                .entry(kind)
                .or_default()
                .push(arrivals.get(&kind).copied().unwrap_or(0.0));
        }
        predict_demand(&self.history, self.alpha)
    }
}
