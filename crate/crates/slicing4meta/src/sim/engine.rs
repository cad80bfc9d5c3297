//! The discrete-event engine.
//!
//! Events dequeue in `(time, sequence)` order and the whole run is a pure
//! function of `(scenario, seed)`: the only randomness is the object count
//! drawn per user from the scenario's seeded generator, and every container
//! iterated during a run has a deterministic order.
//!
//! Per event the engine drives the instantiation pipeline (translate,
//! convert, decide, apply), the lifecycle, the local controllers (rendering
//! allocation on membership or budget change, watermark scaling on monitor
//! ticks) and the global controller (prediction and capacity design on
//! epoch ticks). Ledger conservation is checked after every event.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use thiserror::Error;

use crate::catalog::Catalog;
use crate::controllers::{
    self, apply_scale_action, local_allocate, ControlEventKind, ControllerEvent,
    GlobalController, LocalController, ScaleAction,
};
use crate::orchestrator::{
    Decision, LifecycleState, MsiId, Orchestrator, OrchestratorError, ServiceKind,
    ServiceRequest,
};
use crate::qoe::{self, UserSession};
use crate::resources::{LedgerOp, Pool, ResourceVector};
use crate::sim::report::{MsiRecord, RunReport, Summary, TraceEvent, TraceKind, UserRecord};
use crate::sim::rng::Xoshiro256StarStar;
use crate::sim::scenario::{ArrivalSpec, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("engine fault: {0}")]
    Fault(String),
}

impl From<OrchestratorError> for SimError {
    fn from(e: OrchestratorError) -> Self {
        SimError::Fault(e.to_string())
    }
}

impl From<qoe::QoeError> for SimError {
    fn from(e: qoe::QoeError) -> Self {
        SimError::Fault(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum EventKind {
    Arrival(usize),
    Departure { user: String },
    EpochTick,
    MonitorTick,
}

#[derive(Debug, Clone)]
struct Event {
    time_ms: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl Eq for Event {}

impl Ord for Event {
    // reversed so the max-heap pops the earliest (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time_ms
            .total_cmp(&self.time_ms)
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Draw a user session for an arrival: the object count comes from the
/// scenario's object range (unless pinned), rate and error probability from
/// the arrival's channel condition.
pub fn sample_user(
    rng: &mut Xoshiro256StarStar,
    scenario: &Scenario,
    arrival: &ArrivalSpec,
) -> UserSession {
    let n_objects = arrival.n_objects.unwrap_or_else(|| {
        rng.next_in_range(u64::from(scenario.objects.min), u64::from(scenario.objects.max)) as u32
    });
    UserSession::new(&arrival.user, arrival.rate, arrival.bep, n_objects, &scenario.qoe)
}

/// Run a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<RunReport, SimError> {
    scenario.validate()?;
    Engine::new(scenario)?.run()
}

struct Engine<'a> {
    scenario: &'a Scenario,
    catalog: Catalog,
    pool: Pool,
    orchestrator: Orchestrator,
    rng: Xoshiro256StarStar,
    locals: BTreeMap<ServiceKind, LocalController>,
    global: GlobalController,
    queue: BinaryHeap<Event>,
    next_event_seq: u64,
    last_dequeued: Option<(f64, u64)>,
    now_ms: f64,
    sessions: BTreeMap<String, UserSession>,
    user_msi: BTreeMap<String, MsiId>,
    allocations: BTreeMap<String, f64>,
    admitted_order: Vec<String>,
    finished: Vec<UserRecord>,
    trace: Vec<TraceEvent>,
    trace_seq: u64,
    arrivals_this_epoch: BTreeMap<ServiceKind, f64>,
    feedback_consumed: usize,
    warned_downgrade: std::collections::BTreeSet<MsiId>,
    summary: Summary,
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self, SimError> {
        let catalog = scenario.build_catalog()?;
        let pool = Pool::build(&catalog);
        let orchestrator = Orchestrator::new(
            scenario.templates(),
            scenario.bundles.clone(),
            scenario.tau,
        );
        let cc = &scenario.controllers;
        let locals = ServiceKind::ALL
            .into_iter()
            .map(|kind| (kind, LocalController::new(kind, cc.policy, cc.scaling.clone())))
            .collect();
        let mut engine = Engine {
            scenario,
            catalog,
            pool,
            orchestrator,
            rng: Xoshiro256StarStar::seed_from_u64(scenario.seed),
            locals,
            global: GlobalController::new(cc.alpha, cc.headroom),
            queue: BinaryHeap::new(),
            next_event_seq: 0,
            last_dequeued: None,
            now_ms: 0.0,
            sessions: BTreeMap::new(),
            user_msi: BTreeMap::new(),
            allocations: BTreeMap::new(),
            admitted_order: Vec::new(),
            finished: Vec::new(),
            trace: Vec::new(),
            trace_seq: 0,
            arrivals_this_epoch: BTreeMap::new(),
            feedback_consumed: 0,
            warned_downgrade: std::collections::BTreeSet::new(),
            summary: Summary::default(),
        };
        engine.schedule_initial();
        Ok(engine)
    }

    fn schedule(&mut self, time_ms: f64, kind: EventKind) {
        let seq = self.next_event_seq;
        self.next_event_seq += 1;
        self.queue.push(Event { time_ms, seq, kind });
    }

    fn schedule_initial(&mut self) {
        for (i, arrival) in self.scenario.arrivals.iter().enumerate() {
            self.schedule(arrival.time_ms, EventKind::Arrival(i));
        }
        let duration = self.scenario.duration_ms;
        let mut t = self.scenario.controllers.epoch_ms;
        while t <= duration {
            self.schedule(t, EventKind::EpochTick);
            t += self.scenario.controllers.epoch_ms;
        }
        let mut t = self.scenario.controllers.monitor_ms;
        while t <= duration {
            self.schedule(t, EventKind::MonitorTick);
            t += self.scenario.controllers.monitor_ms;
        }
    }

    fn emit(&mut self, kind: TraceKind) {
        self.trace.push(TraceEvent { t_ms: self.now_ms, seq: self.trace_seq, kind });
        self.trace_seq += 1;
    }

    fn emit_ledger_ops(&mut self) {
        for op in self.pool.drain_journal() {
            let kind = match op {
                LedgerOp::Reserve { id, owner, amount } => TraceKind::Reserve { id, owner, amount },
                LedgerOp::Release { id, owner, amount } => TraceKind::Release { id, owner, amount },
                LedgerOp::Resize { id, owner, amount } => TraceKind::Resize { id, owner, amount },
            };
            self.emit(kind);
        }
    }

    fn run(mut self) -> Result<RunReport, SimError> {
        while let Some(event) = self.queue.pop() {
            debug_assert!(
                self.last_dequeued
                    .is_none_or(|(t, s)| (event.time_ms, event.seq) > (t, s)),
                "events must dequeue in (time, seq) order"
            );
            self.last_dequeued = Some((event.time_ms, event.seq));
            self.now_ms = event.time_ms;
            match event.kind {
                EventKind::Arrival(index) => self.handle_arrival(index)?,
                EventKind::Departure { user } => self.handle_departure(&user)?,
                EventKind::EpochTick => self.handle_epoch()?,
                EventKind::MonitorTick => self.handle_monitor()?,
            }
            let tol =
                1e-12 * self.pool.capacity().components().iter().fold(1.0f64, |a, &b| a.max(b));
            debug_assert!(
                self.pool.conservation_holds(tol),
                "ledger conservation violated after event at t={}",
                self.now_ms
            );
        }
        self.finish()
    }

    fn handle_arrival(&mut self, index: usize) -> Result<(), SimError> {
        let arrival = &self.scenario.arrivals[index];
        let session = sample_user(&mut self.rng, self.scenario, arrival);
        *self.arrivals_this_epoch.entry(arrival.kind).or_insert(0.0) += 1.0;
        self.emit(TraceKind::Arrival { user: arrival.user.clone(), kind: arrival.kind });

        let request = ServiceRequest {
            user: arrival.user.clone(),
            kind: arrival.kind,
            overrides: arrival.overrides.clone(),
        };
        let requirements = self.orchestrator.msmf_translate(&request);
        let sub = self.orchestrator.vmof_convert(&requirements, &self.catalog)?;
        let decision = match self.orchestrator.mmf_decide(&sub, &self.catalog, &self.pool) {
            Ok(d) => d,
            Err(err) if err.is_insufficient_resources() => {
                self.summary.users_rejected += 1;
                self.emit(TraceKind::Rejected {
                    user: arrival.user.clone(),
                    reason: err.to_string(),
                });
                return Ok(());
            }
            Err(err) => return Err(err.into()),
        };
        let msi = self.orchestrator.apply_decision(
            decision,
            &sub,
            &arrival.user,
            &self.catalog,
            &mut self.pool,
        )?;
        let word = match decision {
            Decision::Create => {
                self.summary.msis_created += 1;
                "create"
            }
            Decision::Reuse(_) => {
                self.summary.msis_reused += 1;
                "reuse"
            }
            Decision::Modify(_) => {
                self.summary.msis_modified += 1;
                "modify"
            }
        };
        self.emit_ledger_ops();
        self.emit(TraceKind::Decision {
            user: arrival.user.clone(),
            decision: word.to_owned(),
            msi,
        });
        if decision == Decision::Create {
            self.advance(msi, LifecycleState::Planning)?;
            self.advance(msi, LifecycleState::RunTime)?;
            self.orchestrator.ensure_flex(msi, &mut self.pool)?;
            self.emit_ledger_ops();
        }

        self.summary.users_admitted += 1;
        self.admitted_order.push(arrival.user.clone());
        self.sessions.insert(arrival.user.clone(), session);
        self.user_msi.insert(arrival.user.clone(), msi);
        if let Some(dep) = arrival.departure_ms {
            if dep <= self.scenario.duration_ms {
                self.schedule(dep, EventKind::Departure { user: arrival.user.clone() });
            }
        }
        self.reallocate(arrival.kind)?;
        Ok(())
    }

    fn advance(&mut self, msi: MsiId, target: LifecycleState) -> Result<(), SimError> {
        let from = self
            .orchestrator
            .msi(msi)
            .ok_or_else(|| SimError::Fault(format!("unknown {msi}")))?
            .state;
        self.orchestrator.advance_lifecycle(msi, target, &mut self.pool)?;
        self.emit_ledger_ops();
        self.emit(TraceKind::Lifecycle { msi, from, to: target });
        Ok(())
    }

    fn handle_departure(&mut self, user: &str) -> Result<(), SimError> {
        let Some(&msi) = self.user_msi.get(user) else {
            return Ok(());
        };
        self.record_user(user)?;
        self.emit(TraceKind::Departure { user: user.to_owned(), msi });
        let kind = self
            .orchestrator
            .msi(msi)
            .ok_or_else(|| SimError::Fault(format!("unknown {msi}")))?
            .cluster;
        let empty = self.orchestrator.remove_member(msi, user)?;
        self.sessions.remove(user);
        self.allocations.remove(user);
        self.user_msi.remove(user);
        if empty {
            self.advance(msi, LifecycleState::Decommissioned)?;
        }
        self.reallocate(kind)?;
        Ok(())
    }

    /// Recompute the cluster's rendering split and apply it, reporting
    /// every allocation move that crosses the re-adjustment threshold.
    fn reallocate(&mut self, kind: ServiceKind) -> Result<(), SimError> {
        let members: Vec<String> = self
            .orchestrator
            .live_of_cluster(kind)
            .flat_map(|m| m.members.iter().cloned())
            .collect();
        if members.is_empty() {
            return Ok(());
        }
        let users: Vec<UserSession> = members
            .iter()
            .map(|u| {
                self.sessions
                    .get(u)
                    .cloned()
                    .ok_or_else(|| SimError::Fault(format!("no session for member '{u}'")))
            })
            .collect::<Result<_, _>>()?;
        let budget: f64 = self
            .orchestrator
            .live_of_cluster(kind)
            .map(|m| self.pool.reserved_by(m.id).rendering)
            .sum();
        let policy = self.locals[&kind].policy;
        let alloc = local_allocate(&users, budget, policy, &self.scenario.qoe)?;
        for (user, &share) in members.iter().zip(alloc.iter()) {
            if let Some(&old) = self.allocations.get(user) {
                if old > 0.0 && qoe::needs_readjustment(old, share, &self.scenario.qoe)? {
                    let msi = self.user_msi.get(user).copied();
                    self.locals.get_mut(&kind).expect("both kinds exist").actions_emitted += 1;
                    self.global.ingest(ControllerEvent {
                        t_ms: self.now_ms,
                        cluster: kind,
                        msi,
                        kind: ControlEventKind::Readjust {
                            user: user.clone(),
                            old,
                            new: share,
                        },
                    });
                    self.emit(TraceKind::Readjust { user: user.clone(), old_k: old, new_k: share });
                }
            }
            self.allocations.insert(user.clone(), share);
        }
        Ok(())
    }

    fn handle_monitor(&mut self) -> Result<(), SimError> {
        for kind in ServiceKind::ALL {
            let msi_ids: Vec<MsiId> = self
                .orchestrator
                .msis()
                .filter(|m| m.cluster == kind && m.state == LifecycleState::RunTime)
                .map(|m| m.id)
                .collect();
            let mut any_applied = false;
            for id in msi_ids {
                let usage = self.usage_of(id)?;
                let reserved = self.pool.reserved_by(id);
                let utilization = ratio(&usage, &reserved);
                let action =
                    controllers::monitor_and_scale(&utilization, &self.locals[&kind].scaling);
                let flex = self.orchestrator.ensure_flex(id, &mut self.pool)?;
                let base = reserved.saturating_sub(
                    &self.pool.get(flex).map(|r| r.amount).unwrap_or(ResourceVector::ZERO),
                );
                let floor = usage.saturating_sub(&base);
                let outcome = apply_scale_action(
                    action,
                    flex,
                    &floor,
                    &self.locals[&kind].scaling,
                    &mut self.pool,
                )
                .map_err(|e| SimError::Fault(e.to_string()))?;
                if outcome.downgraded {
                    log::warn!(
                        "t={} {} scale-up downgraded: pool exhausted",
                        self.now_ms,
                        id
                    );
                }
                self.emit_ledger_ops();
                self.locals.get_mut(&kind).expect("both kinds exist").actions_emitted += 1;
                self.global.ingest(ControllerEvent {
                    t_ms: self.now_ms,
                    cluster: kind,
                    msi: Some(id),
                    kind: ControlEventKind::Scale {
                        action: outcome.applied,
                        downgraded: outcome.downgraded,
                    },
                });
                self.emit(TraceKind::Scale {
                    msi: id,
                    action: outcome.applied,
                    downgraded: outcome.downgraded,
                });
                if outcome.applied != ScaleAction::None {
                    any_applied = true;
                }
            }
            if any_applied {
                self.reallocate(kind)?;
            }
        }
        Ok(())
    }

    /// Load the members put on an instance's holdings: aggregate downlink
    /// rate on the communication dimension and aggregate rendering demand on
    /// the rendering dimension. Compute and storage carry no per-member
    /// signal and read as idle.
    fn usage_of(&self, id: MsiId) -> Result<ResourceVector, SimError> {
        let msi = self
            .orchestrator
            .msi(id)
            .ok_or_else(|| SimError::Fault(format!("unknown {id}")))?;
        let mut usage = ResourceVector::ZERO;
        for member in &msi.members {
            if let Some(session) = self.sessions.get(member) {
                usage.comm_rate += session.rate;
                usage.rendering += session.demand;
            }
        }
        Ok(usage)
    }

    fn handle_epoch(&mut self) -> Result<(), SimError> {
        let counts = std::mem::take(&mut self.arrivals_this_epoch);
        let prediction = self
            .global
            .on_epoch(&counts)
            .map_err(|e| SimError::Fault(e.to_string()))?;
        let mut predictions = Vec::new();
        let mut designed = Vec::new();
        for kind in ServiceKind::ALL {
            let p = prediction.get(kind);
            predictions.push((kind, p));
            let demand = match self.scenario.bundles.get(&kind) {
                Some(bundle) => {
                    let mut d = ResourceVector::ZERO;
                    for model in bundle {
                        d += self
                            .catalog
                            .effective_footprint(model)
                            .map_err(|e| SimError::Fault(e.to_string()))?;
                    }
                    d
                }
                None => ResourceVector::ZERO,
            };
            designed.push((kind, controllers::design_cluster_capacity(p, &demand, self.global.headroom)));
        }
        let feedback_events = self.global.event_log().len() - self.feedback_consumed;
        self.feedback_consumed = self.global.event_log().len();
        self.emit(TraceKind::Epoch { predictions, designed, feedback_events });
        Ok(())
    }

    fn record_user(&mut self, user: &str) -> Result<(), SimError> {
        let session = self
            .sessions
            .get(user)
            .ok_or_else(|| SimError::Fault(format!("no session for '{user}'")))?;
        let msi = self
            .user_msi
            .get(user)
            .copied()
            .ok_or_else(|| SimError::Fault(format!("no instance for '{user}'")))?;
        let kind = self
            .orchestrator
            .msi(msi)
            .ok_or_else(|| SimError::Fault(format!("unknown {msi}")))?
            .cluster;
        let allocated = self.allocations.get(user).copied().unwrap_or(0.0);
        let result = qoe::meta_immersion(session, allocated, &self.scenario.qoe)?;
        self.finished.push(UserRecord {
            user: user.to_owned(),
            msi,
            kind,
            rate_mbps: session.rate,
            bep: session.bep,
            n_objects: session.n_objects,
            demand_k: session.demand,
            allocated_k: allocated,
            perception: result.perception,
            objective_quality: result.objective_quality,
            mi: result.mi,
        });
        Ok(())
    }

    fn finish(mut self) -> Result<RunReport, SimError> {
        let remaining: Vec<String> = self
            .admitted_order
            .iter()
            .filter(|u| self.sessions.contains_key(*u))
            .cloned()
            .collect();
        for user in remaining {
            self.record_user(&user)?;
        }
        debug_assert_eq!(
            self.global.event_log().len() as u64,
            self.locals.values().map(|l| l.actions_emitted).sum::<u64>(),
            "every local action must reach the global controller"
        );
        let mean_mi = if self.finished.is_empty() {
            0.0
        } else {
            self.finished.iter().map(|u| u.mi).sum::<f64>() / self.finished.len() as f64
        };
        self.summary.mean_mi = mean_mi;
        let msis = self
            .orchestrator
            .msis()
            .map(|m| MsiRecord {
                msi: m.id,
                cluster: m.cluster,
                state: m.state,
                members: m.members.len(),
                reserved: self.pool.reserved_by(m.id),
            })
            .collect();
        Ok(RunReport {
            summary: self.summary,
            users: self.finished,
            msis,
            trace: self.trace,
            pool: self.pool.snapshot(),
        })
    }

    #[cfg(test)]
    fn controller_log_lengths(&self) -> (usize, u64) {
        (
            self.global.event_log().len(),
            self.locals.values().map(|l| l.actions_emitted).sum(),
        )
    }
}

fn ratio(usage: &ResourceVector, reserved: &ResourceVector) -> ResourceVector {
    let one = |u: f64, r: f64| {
        if r > 0.0 {
            (u / r).min(1.0)
        } else if u > 0.0 {
            1.0
        } else {
            0.0
        }
    };
    ResourceVector::new(
        one(usage.comm_rate, reserved.comm_rate),
        one(usage.compute, reserved.compute),
        one(usage.storage, reserved.storage),
        one(usage.rendering, reserved.rendering),
    )
}
