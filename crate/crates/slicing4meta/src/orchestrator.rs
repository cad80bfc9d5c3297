//! Instantiation management: requirement translation, bundle selection,
//! reuse/modify/create decisions, the instance lifecycle, and model sharing.
//!
//! A service request flows through three functions. Translation maps the
//! request onto the requirement template of its service cluster. Conversion
//! selects the cluster's delivery-model bundle and prices it against the
//! catalog. The final decision either admits the request into an existing
//! instance (when the requirement vectors are close enough and every
//! attached model may be shared), grows a near-match, or creates a fresh
//! instance, rejecting only when the pool cannot carry it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, ModelId};
use crate::resources::{
    may_share, IsolationDegree, Pool, PoolError, ReservationId, ResourceVector,
};

/// The two service clusters.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum ServiceKind {
    /// Immersive AR/VR services.
    Arvr,
    /// Digital-twin services.
    Dt,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 2] = [ServiceKind::Arvr, ServiceKind::Dt];
}

impl fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ServiceKind::Arvr => "arvr",
            ServiceKind::Dt => "dt",
        })
    }
}

impl FromStr for ServiceKind {
    type Err = OrchestratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "arvr" => Ok(ServiceKind::Arvr),
            "dt" => Ok(ServiceKind::Dt),
            other => Err(OrchestratorError::UnknownServiceKind(other.to_owned())),
        }
    }
}

/// Optional per-request overrides of the cluster template.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RequirementOverrides {
    pub peak_rate: Option<f64>,
    pub reliability: Option<f64>,
    pub max_latency_ms: Option<f64>,
    pub rendering_per_object: Option<f64>,
    pub isolation: Option<IsolationDegree>,
}

/// An incoming service request from one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRequest {
    pub user: String,
    pub kind: ServiceKind,
    #[serde(default)]
    pub overrides: RequirementOverrides,
}

/// QoE requirements of a service, produced by translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRequirements {
    pub kind: ServiceKind,
    /// Mb/s.
    pub peak_rate: f64,
    /// Success probability in [0, 1].
    pub reliability: f64,
    /// Milliseconds.
    pub max_latency_ms: f64,
    /// K per virtual object.
    pub rendering_per_object: f64,
    pub isolation: IsolationDegree,
}

/// Requirements at sub-instance granularity: the delivery models to attach
/// and their summed resource demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubInstanceRequirements {
    pub models: Vec<ModelId>,
    pub demand: ResourceVector,
    pub qoe: ServiceRequirements,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct MsiId(pub u64);

impl fmt::Display for MsiId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "msi-{}", self.0)
    }
}

/// Lifecycle phases; transitions only move forward, one step at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleState {
    Preparation,
    Planning,
    RunTime,
    Decommissioned,
}

impl LifecycleState {
    pub const ALL: [LifecycleState; 4] = [
        LifecycleState::Preparation,
        LifecycleState::Planning,
        LifecycleState::RunTime,
        LifecycleState::Decommissioned,
    ];

    /// The single legal successor, if any.
    pub fn next(self) -> Option<LifecycleState> {
        match self {
            LifecycleState::Preparation => Some(LifecycleState::Planning),
            LifecycleState::Planning => Some(LifecycleState::RunTime),
            LifecycleState::RunTime => Some(LifecycleState::Decommissioned),
            LifecycleState::Decommissioned => None,
        }
    }
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LifecycleState::Preparation => "preparation",
            LifecycleState::Planning => "planning",
            LifecycleState::RunTime => "run_time",
            LifecycleState::Decommissioned => "decommissioned",
        })
    }
}

/// A Metaverse Service Instance.
#[derive(Debug, Clone)]
pub struct Msi {
    pub id: MsiId,
    pub cluster: ServiceKind,
    pub state: LifecycleState,
    /// Attached models; `Some` when this instance owns the reservation
    /// backing the model, `None` when the footprint is held by a sharing
    /// group anchored elsewhere.
    attachments: BTreeMap<ModelId, Option<ReservationId>>,
    /// Buffer reservation grown by modify decisions and scaling.
    flex: Option<ReservationId>,
    pub members: Vec<String>,
    pub isolation: IsolationDegree,
    pub requirements: ServiceRequirements,
}

impl Msi {
    pub fn is_live(&self) -> bool {
        self.state != LifecycleState::Decommissioned
    }

    pub fn has_model(&self, model: &ModelId) -> bool {
        self.attachments.contains_key(model)
    }

    pub fn attached_models(&self) -> impl Iterator<Item = &ModelId> {
        self.attachments.keys()
    }

    /// Models whose footprint reservation this instance holds itself.
    pub fn owned_models(&self) -> impl Iterator<Item = (&ModelId, ReservationId)> {
        self.attachments
            .iter()
            .filter_map(|(m, r)| r.map(|rid| (m, rid)))
    }

    /// Reservations this instance owns, including the flex buffer.
    pub fn reservation_ids(&self) -> Vec<ReservationId> {
        self.attachments
            .values()
            .flatten()
            .copied()
            .chain(self.flex)
            .collect()
    }

    pub fn flex_reservation(&self) -> Option<ReservationId> {
        self.flex
    }
}

/// Outcome of the admission decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision", content = "msi")]
pub enum Decision {
    Reuse(MsiId),
    Create,
    Modify(MsiId),
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::Reuse(id) => write!(f, "reuse {id}"),
            Decision::Create => f.write_str("create"),
            Decision::Modify(id) => write!(f, "modify {id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchestratorError {
    #[error("unknown service kind '{0}'")]
    UnknownServiceKind(String),
    #[error("no delivery-model bundle configured for cluster '{0}'")]
    MissingBundle(ServiceKind),
    #[error("unknown MSI {0}")]
    UnknownMsi(MsiId),
    #[error("{0} is not live")]
    MsiNotLive(MsiId),
    #[error("invalid lifecycle transition: {from} -> {to}")]
    InvalidTransition { from: LifecycleState, to: LifecycleState },
    #[error("model '{model}' is not attached to {msi}")]
    ModelNotAttached { msi: MsiId, model: ModelId },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

impl OrchestratorError {
    /// True when the failure means the pool cannot carry the request, i.e.
    /// admission should be rejected rather than treated as a fault.
    pub fn is_insufficient_resources(&self) -> bool {
        matches!(
            self,
            OrchestratorError::Pool(PoolError::InsufficientResources { .. })
        )
    }
}

/// Relative distance between two requirement vectors: the worst per-field
/// relative deviation over peak rate, reliability, latency and rendering.
pub fn qoe_distance(a: &ServiceRequirements, b: &ServiceRequirements) -> f64 {
    let fields = [
        (a.peak_rate, b.peak_rate),
        (a.reliability, b.reliability),
        (a.max_latency_ms, b.max_latency_ms),
        (a.rendering_per_object, b.rendering_per_object),
    ];
    fields
        .iter()
        .map(|&(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-9))
        .fold(0.0, f64::max)
}

/// Requirement template for the AR/VR cluster: peak rate 1 Tb/s, seven-nines
/// reliability, sub-millisecond interaction, 20 K per object.
pub fn arvr_template() -> ServiceRequirements {
    ServiceRequirements {
        kind: ServiceKind::Arvr,
        peak_rate: 1.0e6,
        reliability: 0.999_999_9,
        max_latency_ms: 1.0,
        rendering_per_object: 20.0,
        isolation: IsolationDegree::None,
    }
}

/// Default requirement template for the digital-twin cluster. These numbers
/// are configuration defaults; scenarios override them.
pub fn dt_template() -> ServiceRequirements {
    ServiceRequirements {
        kind: ServiceKind::Dt,
        peak_rate: 1000.0,
        reliability: 0.999_99,
        max_latency_ms: 10.0,
        rendering_per_object: 20.0,
        isolation: IsolationDegree::None,
    }
}

pub fn default_templates() -> BTreeMap<ServiceKind, ServiceRequirements> {
    BTreeMap::from([
        (ServiceKind::Arvr, arvr_template()),
        (ServiceKind::Dt, dt_template()),
    ])
}

#[derive(Debug, Clone)]
struct ShareGroup {
    reservation: ReservationId,
    members: BTreeSet<MsiId>,
}

/// Owns the instances, the sharing groups, and the admission logic.
#[derive(Debug, Clone)]
pub struct Orchestrator {
    templates: BTreeMap<ServiceKind, ServiceRequirements>,
    bundles: BTreeMap<ServiceKind, Vec<ModelId>>,
    similarity_tolerance: f64,
    msis: BTreeMap<MsiId, Msi>,
    shares: BTreeMap<ModelId, ShareGroup>,
    next_msi: u64,
}

impl Orchestrator {
    pub fn new(
        templates: BTreeMap<ServiceKind, ServiceRequirements>,
        bundles: BTreeMap<ServiceKind, Vec<ModelId>>,
        similarity_tolerance: f64,
    ) -> Self {
        assert!(similarity_tolerance >= 0.0, "similarity tolerance must be >= 0");
        Orchestrator {
            templates,
            bundles,
            similarity_tolerance,
            msis: BTreeMap::new(),
            shares: BTreeMap::new(),
            next_msi: 0,
        }
    }

    pub fn msi(&self, id: MsiId) -> Option<&Msi> {
        self.msis.get(&id)
    }

    pub fn msis(&self) -> impl Iterator<Item = &Msi> {
        self.msis.values()
    }

    pub fn live_of_cluster(&self, kind: ServiceKind) -> impl Iterator<Item = &Msi> {
        self.msis.values().filter(move |m| {
            m.cluster == kind
                && matches!(m.state, LifecycleState::Planning | LifecycleState::RunTime)
        })
    }

    /// Step I: translate a request into cluster requirements, merging any
    /// per-request overrides into the cluster template.
    pub fn msmf_translate(&self, request: &ServiceRequest) -> ServiceRequirements {
        let mut req = self
            .templates
            .get(&request.kind)
            .cloned()
            .unwrap_or_else(|| match request.kind {
                ServiceKind::Arvr => arvr_template(),
                ServiceKind::Dt => dt_template(),
            });
        let o = &request.overrides;
        if let Some(v) = o.peak_rate {
            req.peak_rate = v;
        }
        if let Some(v) = o.reliability {
            req.reliability = v;
        }
        if let Some(v) = o.max_latency_ms {
            req.max_latency_ms = v;
        }
        if let Some(v) = o.rendering_per_object {
            req.rendering_per_object = v;
        }
        if let Some(v) = o.isolation {
            req.isolation = v;
        }
        req
    }

    /// Step II: convert cluster requirements into sub-instance requirements
    /// by selecting the cluster's bundle and summing its footprints.
    pub fn vmof_convert(
        &self,
        req: &ServiceRequirements,
        catalog: &Catalog,
    ) -> Result<SubInstanceRequirements, OrchestratorError> {
        let bundle = self
            .bundles
            .get(&req.kind)
            .filter(|models| !models.is_empty())
            .ok_or(OrchestratorError::MissingBundle(req.kind))?;
        let mut demand = ResourceVector::ZERO;
        for model in bundle {
            demand += catalog.effective_footprint(model)?;
        }
        Ok(SubInstanceRequirements {
            models: bundle.clone(),
            demand,
            qoe: req.clone(),
        })
    }

    /// Step III: decide whether to reuse, modify or create an instance.
    ///
    /// Reuses the lowest-id live instance of the same cluster within the
    /// similarity tolerance whose attached models all permit sharing;
    /// otherwise grows the nearest one within twice the tolerance; otherwise
    /// creates, provided the pool can carry the demand.
    pub fn mmf_decide(
        &self,
        sub: &SubInstanceRequirements,
        catalog: &Catalog,
        pool: &Pool,
    ) -> Result<Decision, OrchestratorError> {
        let tau = self.similarity_tolerance;
        let mut nearest: Option<(MsiId, f64)> = None;
        for msi in self.live_of_cluster(sub.qoe.kind) {
            let dist = qoe_distance(&msi.requirements, &sub.qoe);
            if dist <= tau {
                let shareable = msi.attachments.keys().all(|model| {
                    catalog
                        .get(model)
                        .is_some_and(|m| may_share(m, msi.isolation, sub.qoe.isolation))
                });
                if shareable {
                    return Ok(Decision::Reuse(msi.id));
                }
            }
            // iteration is id-ordered, so strict < keeps the lowest id on ties
            if nearest.is_none_or(|(_, best)| dist < best) {
                nearest = Some((msi.id, dist));
            }
        }
        if let Some((id, dist)) = nearest {
            if dist <= 2.0 * tau {
                let reserved = pool.reserved_by(id);
                let growth = sub.demand.saturating_sub(&reserved);
                if growth.fits_within(&pool.remaining()) {
                    return Ok(Decision::Modify(id));
                }
                // growth never exceeds the demand, so creating cannot fit either
                return Err(PoolError::insufficient(&growth, &pool.remaining()).into());
            }
        }
        if sub.demand.fits_within(&pool.remaining()) {
            Ok(Decision::Create)
        } else {
            Err(PoolError::insufficient(&sub.demand, &pool.remaining()).into())
        }
    }

    /// Carry out a decision for `user`, reserving resources as needed.
    /// Returns the instance the user was admitted into; created instances
    /// start in the preparation phase.
    pub fn apply_decision(
        &mut self,
        decision: Decision,
        sub: &SubInstanceRequirements,
        user: &str,
        catalog: &Catalog,
        pool: &mut Pool,
    ) -> Result<MsiId, OrchestratorError> {
        match decision {
            Decision::Reuse(id) => {
                let msi = self
                    .msis
                    .get_mut(&id)
                    .ok_or(OrchestratorError::UnknownMsi(id))?;
                if !msi.is_live() {
                    return Err(OrchestratorError::MsiNotLive(id));
                }
                msi.members.push(user.to_owned());
                Ok(id)
            }
            Decision::Modify(id) => {
                let msi = self
                    .msis
                    .get_mut(&id)
                    .ok_or(OrchestratorError::UnknownMsi(id))?;
                if !msi.is_live() {
                    return Err(OrchestratorError::MsiNotLive(id));
                }
                let reserved = pool.reserved_by(id);
                let growth = sub.demand.saturating_sub(&reserved);
                if !growth.is_zero() {
                    match msi.flex {
                        Some(flex) => {
                            let current = pool
                                .get(flex)
                                .ok_or(PoolError::UnknownReservation(flex))?
                                .amount;
                            pool.resize(flex, current + growth)?;
                        }
                        None => {
                            msi.flex = Some(pool.reserve(id, growth, msi.isolation)?);
                        }
                    }
                }
                msi.members.push(user.to_owned());
                Ok(id)
            }
            Decision::Create => {
                let id = MsiId(self.next_msi);
                let isolation = sub.qoe.isolation;
                let mut attachments = BTreeMap::new();
                let mut reserved = Vec::new();
                for model in &sub.models {
                    let footprint = catalog.effective_footprint(model)?;
                    match pool.reserve(id, footprint, isolation) {
                        Ok(rid) => {
                            attachments.insert(model.clone(), Some(rid));
                            reserved.push(rid);
                        }
                        Err(err) => {
                            for rid in reserved {
                                pool.release(rid).expect("reserved in this call");
                            }
                            return Err(err.into());
                        }
                    }
                }
                self.next_msi += 1;
                self.msis.insert(
                    id,
                    Msi {
                        id,
                        cluster: sub.qoe.kind,
                        state: LifecycleState::Preparation,
                        attachments,
                        flex: None,
                        members: vec![user.to_owned()],
                        isolation,
                        requirements: sub.qoe.clone(),
                    },
                );
                Ok(id)
            }
        }
    }

    /// Move an instance one step forward in its lifecycle. Reaching the
    /// decommissioned phase releases everything it holds; footprints shared
    /// with surviving instances are handed over instead of released.
    pub fn advance_lifecycle(
        &mut self,
        id: MsiId,
        target: LifecycleState,
        pool: &mut Pool,
    ) -> Result<(), OrchestratorError> {
        let state = self
            .msis
            .get(&id)
            .ok_or(OrchestratorError::UnknownMsi(id))?
            .state;
        if state.next() != Some(target) {
            return Err(OrchestratorError::InvalidTransition { from: state, to: target });
        }
        if target == LifecycleState::Decommissioned {
            self.release_holdings(id, pool)?;
        }
        self.msis.get_mut(&id).expect("checked above").state = target;
        Ok(())
    }

    fn release_holdings(&mut self, id: MsiId, pool: &mut Pool) -> Result<(), OrchestratorError> {
        let msi = self.msis.get(&id).ok_or(OrchestratorError::UnknownMsi(id))?;
        let attachments: Vec<(ModelId, Option<ReservationId>)> = msi
            .attachments
            .iter()
            .map(|(m, r)| (m.clone(), *r))
            .collect();
        let flex = msi.flex;

        for (model, owned) in attachments {
            let in_group = self
                .shares
                .get(&model)
                .is_some_and(|g| g.members.contains(&id));
            if in_group {
                let group = self.shares.get_mut(&model).expect("checked above");
                group.members.remove(&id);
                if group.members.is_empty() {
                    let rid = group.reservation;
                    self.shares.remove(&model);
                    pool.release(rid)?;
                } else if owned.is_some() {
                    // hand the group's reservation to the lowest surviving member
                    let heir = *group.members.iter().next().expect("nonempty");
                    let rid = group.reservation;
                    pool.reassign(rid, heir)?;
                    if let Some(h) = self.msis.get_mut(&heir) {
                        h.attachments.insert(model.clone(), Some(rid));
                    }
                }
            } else if let Some(rid) = owned {
                pool.release(rid)?;
            }
        }
        if let Some(rid) = flex {
            pool.release(rid)?;
        }
        let msi = self.msis.get_mut(&id).expect("checked above");
        for slot in msi.attachments.values_mut() {
            *slot = None;
        }
        msi.flex = None;
        Ok(())
    }

    /// Share `model`, attached to `a`, with `b`.Reserves the footprint
    /// once for the whole sharing group: if `b` carried its own reservation
    /// for the model it is merged away. Returns whether sharing happened.
    pub fn attach_shared_model(
        &mut self,
        a: MsiId,
        b: MsiId,
        model: &ModelId,
        catalog: &Catalog,
        pool: &mut Pool,
    ) -> Result<bool, OrchestratorError> {
        let msi_a = self.msis.get(&a).ok_or(OrchestratorError::UnknownMsi(a))?;
        let msi_b = self.msis.get(&b).ok_or(OrchestratorError::UnknownMsi(b))?;
        if !msi_a.is_live() {
            return Err(OrchestratorError::MsiNotLive(a));
        }
        if !msi_b.is_live() {
            return Err(OrchestratorError::MsiNotLive(b));
        }
        let owned_by_a = *msi_a
            .attachments
            .get(model)
            .ok_or_else(|| OrchestratorError::ModelNotAttached { msi: a, model: model.clone() })?;
        let descriptor = catalog
            .get(model)
            .ok_or_else(|| CatalogError::UnknownModel(model.clone()))?;
        if !may_share(descriptor, msi_a.isolation, msi_b.isolation) {
            return Ok(false);
        }
        if a == b {
            return Ok(true);
        }

        if !self.shares.contains_key(model) {
            let anchor = owned_by_a.ok_or_else(|| OrchestratorError::ModelNotAttached {
                msi: a,
                model: model.clone(),
            })?;
            self.shares.insert(
                model.clone(),
                ShareGroup { reservation: anchor, members: BTreeSet::from([a]) },
            );
        }
        let group = self.shares.get_mut(model).expect("inserted above");
        group.members.insert(a);
        if group.members.insert(b) {
            let msi_b = self.msis.get_mut(&b).expect("checked above");
            if let Some(Some(duplicate)) = msi_b.attachments.get(model).copied() {
                // b already paid for this footprint; fold it into the group
                pool.release(duplicate)?;
            }
            msi_b.attachments.insert(model.clone(), None);
        }
        Ok(true)
    }

    /// Make sure the instance carries a flex reservation for scaling,
    /// creating an empty one on first use.
    pub fn ensure_flex(
        &mut self,
        id: MsiId,
        pool: &mut Pool,
    ) -> Result<ReservationId, OrchestratorError> {
        let msi = self.msis.get_mut(&id).ok_or(OrchestratorError::UnknownMsi(id))?;
        if let Some(flex) = msi.flex {
            return Ok(flex);
        }
        let flex = pool.reserve(id, ResourceVector::ZERO, msi.isolation)?;
        msi.flex = Some(flex);
        Ok(flex)
    }

    /// Drop a member from an instance; true when it was the last one.
    pub fn remove_member(&mut self, id: MsiId, user: &str) -> Result<bool, OrchestratorError> {
        let msi = self.msis.get_mut(&id).ok_or(OrchestratorError::UnknownMsi(id))?;
        msi.members.retain(|m| m != user);
        Ok(msi.members.is_empty())
    }

    /// Audit that every live instance's holdings match the footprints of its
    /// attached models, counting shared footprints once per group.
    pub fn audit_attachments(&self, catalog: &Catalog, pool: &Pool) -> Result<(), String> {
        for msi in self.msis.values().filter(|m| m.is_live()) {
            for (model, owned) in &msi.attachments {
                match owned {
                    Some(rid) => {
                        let res = pool
                            .get(*rid)
                            .ok_or_else(|| format!("{}: reservation {rid} not open", msi.id))?;
                        if res.owner != msi.id {
                            return Err(format!("{}: reservation {rid} owned elsewhere", msi.id));
                        }
                        let footprint = catalog
                            .effective_footprint(model)
                            .map_err(|e| e.to_string())?;
                        if res.amount != footprint {
                            return Err(format!(
                                "{}: reservation {rid} amount {} != footprint {} of '{model}'",
                                msi.id, res.amount, footprint
                            ));
                        }
                    }
                    None => {
                        let shared = self
                            .shares
                            .get(model)
                            .is_some_and(|g| g.members.contains(&msi.id));
                        if !shared {
                            return Err(format!(
                                "{}: '{model}' has no reservation and no sharing group",
                                msi.id
                            ));
                        }
                    }
                }
            }
        }
        for (model, group) in &self.shares {
            let res = pool
                .get(group.reservation)
                .ok_or_else(|| format!("group '{model}': reservation not open"))?;
            if !group.members.contains(&res.owner) {
                return Err(format!("group '{model}': owner {} not a member", res.owner));
            }
        }
        Ok(())
    }
}
