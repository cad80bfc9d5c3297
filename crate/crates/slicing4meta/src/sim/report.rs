//! Run outputs: per-user metrics (CSV), the structured event trace
//! (JSON lines), and a summary.
//!
//! Both writers are byte-deterministic for a fixed `(scenario, seed)`:
//! floats in the CSV are printed with six fixed decimals, lines end with
//! `\n`, and trace events are serialized in emission order.

use serde::{Deserialize, Serialize};

use crate::controllers::ScaleAction;
use crate::orchestrator::{LifecycleState, MsiId, ServiceKind};
use crate::resources::{PoolSnapshot, ReservationId, ResourceVector};

/// Final per-user record; values are taken at departure or at the end of
/// the run, whichever comes first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user: String,
    pub msi: MsiId,
    pub kind: ServiceKind,
    pub rate_mbps: f64,
    pub bep: f64,
    pub n_objects: u32,
    pub demand_k: f64,
    pub allocated_k: f64,
    pub perception: f64,
    pub objective_quality: f64,
    pub mi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsiRecord {
    pub msi: MsiId,
    pub cluster: ServiceKind,
    pub state: LifecycleState,
    pub members: usize,
    pub reserved: ResourceVector,
}

/// One trace line. `seq` is the global emission index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t_ms: f64,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: TraceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceKind {
    Arrival { user: String, kind: ServiceKind },
    Decision { user: String, decision: String, msi: MsiId },
    Rejected { user: String, reason: String },
    Lifecycle { msi: MsiId, from: LifecycleState, to: LifecycleState },
    Reserve { id: ReservationId, owner: MsiId, amount: ResourceVector },
    Release { id: ReservationId, owner: MsiId, amount: ResourceVector },
    Resize { id: ReservationId, owner: MsiId, amount: ResourceVector },
    Scale { msi: MsiId, action: ScaleAction, downgraded: bool },
    Readjust { user: String, old_k: f64, new_k: f64 },
    Departure { user: String, msi: MsiId },
    Epoch { predictions: Vec<(ServiceKind, f64)>, designed: Vec<(ServiceKind, ResourceVector)>, feedback_events: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub users_admitted: usize,
    pub users_rejected: usize,
    pub msis_created: usize,
    pub msis_reused: usize,
    pub msis_modified: usize,
    pub mean_mi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub summary: Summary,
    pub users: Vec<UserRecord>,
    pub msis: Vec<MsiRecord>,
    pub trace: Vec<TraceEvent>,
    pub pool: PoolSnapshot,
}

pub const USERS_CSV_HEADER: &str =
    "user,msi,kind,rate_mbps,bep,n_objects,demand_k,allocated_k,perception,objective_quality,mi";

impl RunReport {
    /// Per-user metrics as CSV (UTF-8, `\n` newlines, `.` decimal separator).
    pub fn users_csv(&self) -> String {
        let mut out = String::from(USERS_CSV_HEADER);
        out.push('\n');
        for u in &self.users {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                u.user,
                u.msi.0,
                u.kind,
                u.rate_mbps,
                u.bep,
                u.n_objects,
                u.demand_k,
                u.allocated_k,
                u.perception,
                u.objective_quality,
                u.mi,
            ));
        }
        out
    }

    /// The event trace as JSON lines, one event per line.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.trace {
            out.push_str(&serde_json::to_string(event).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn summary_line(&self) -> String {
        format!(
            "users: {} admitted, {} rejected; MSIs: {} created, {} reused, {} modified; mean MI: {:.6}",
            self.summary.users_admitted,
            self.summary.users_rejected,
            self.summary.msis_created,
            self.summary.msis_reused,
            self.summary.msis_modified,
            self.summary.mean_mi,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_is_fixed_format() {
        let report = RunReport {
            summary: Summary::default(),
            users: vec![UserRecord {
                user: "u1".into(),
                msi: MsiId(0),
                kind: ServiceKind::Arvr,
                rate_mbps: 100.0,
                bep: 0.001,
                n_objects: 3,
                demand_k: 60.0,
                allocated_k: 50.0,
                perception: 3.912023,
                objective_quality: 0.631488,
                mi: 2.470284,
            }],
            msis: vec![],
            trace: vec![],
            pool: PoolSnapshot {
                capacity: ResourceVector::ZERO,
                remaining: ResourceVector::ZERO,
                open_reservations: vec![],
            },
        };
        let csv = report.users_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), USERS_CSV_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "u1,0,arvr,100.000000,0.001000,3,60.000000,50.000000,3.912023,0.631488,2.470284"
        );
    }

    #[test]
    fn trace_lines_are_valid_json() {
        let report = RunReport {
            summary: Summary::default(),
            users: vec![],
            msis: vec![],
            trace: vec![
                TraceEvent {
                    t_ms: 0.0,
                    seq: 0,
                    kind: TraceKind::Decision {
                        user: "u1".into(),
                        decision: "create".into(),
                        msi: MsiId(0),
                    },
                },
                TraceEvent {
                    t_ms: 1.0,
                    seq: 1,
                    kind: TraceKind::Scale {
                        msi: MsiId(0),
                        action: ScaleAction::ScaleUp,
                        downgraded: false,
                    },
                },
            ],
            pool: PoolSnapshot {
                capacity: ResourceVector::ZERO,
                remaining: ResourceVector::ZERO,
                open_reservations: vec![],
            },
        };
        let text = report.trace_jsonl();
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("event").is_some());
            assert!(v.get("t_ms").is_some());
        }
    }
}
