//! Library for composing Metaverse Service Instances (MSIs) from
//! as-a-service delivery models over a shared multi-dimensional resource
//! pool, with a Meta-Immersion QoE model and a deterministic discrete-event
//! engine for running scenarios end to end.
//!
//! The pieces fit together like this:
//!
//! * [`catalog`] holds the delivery models (suppliers and consumers of
//!   resources, possibly composite).
//! * [`resources`] maps supplier models into a virtual pool and tracks
//!   reservations against it, including isolation-degree sharing rules.
//! * [`qoe`] scores user sessions with the Meta-Immersion metric and
//!   allocates rendering capacity (evenly or by water-filling).
//! * [`orchestrator`] turns service requests into requirements, picks the
//!   delivery-model bundle, and decides whether to reuse, modify or create
//!   an instance; it also owns the instance lifecycle.
//! * [`controllers`] is the two-tier control plane: demand prediction and
//!   capacity design globally, allocation and threshold scaling locally.
//! * [`sim`] is the seeded event engine tying everything together.
//! * [`experiment`] is the rendering-capacity sweep harness producing
//!   plot-ready CSV.

pub mod catalog;
pub mod controllers;
pub mod experiment;
pub mod orchestrator;
pub mod qoe;
pub mod resources;
pub mod sim;

pub use catalog::{Catalog, CatalogError, MaaSModel, MaasKind, ModelId};
pub use controllers::{AllocationPolicy, ScaleAction, ScalingPolicy};
pub use orchestrator::{Decision, LifecycleState, Msi, MsiId, Orchestrator, ServiceKind};
pub use qoe::{MiResult, QoEParams, UserSession};
pub use resources::{IsolationDegree, Pool, Reservation, ReservationId, ResourceVector};
pub use sim::scenario::Scenario;
