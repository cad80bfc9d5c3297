//! Virtual multi-dimensional resource pool with a reservation ledger.
//!
//! Pool capacity is mapped from the supply side of the catalog and handed
//! out as reservations owned by service instances. The ledger maintains one
//! invariant throughout a run: the sum of open reservations plus the
//! remaining capacity equals the initial capacity, element-wise, and no
//! dimension ever goes negative.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, MaaSModel, MaasKind};
use crate::orchestrator::MsiId;

/// Quantities on the four resource dimensions.
///
/// `rendering` is measured in K units, where 1 K = 960x480 pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceVector {
    /// Downlink aggregate communication rate, Mb/s.
    pub comm_rate: f64,
    /// Abstract compute units.
    pub compute: f64,
    /// Storage, GB.
    pub storage: f64,
    /// Rendering capacity, K units.
    pub rendering: f64,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector {
        comm_rate: 0.0,
        compute: 0.0,
        storage: 0.0,
        rendering: 0.0,
    };

    pub fn new(comm_rate: f64, compute: f64, storage: f64, rendering: f64) -> Self {
        Self { comm_rate, compute, storage, rendering }
    }

    pub fn components(&self) -> [f64; 4] {
        [self.comm_rate, self.compute, self.storage, self.rendering]
    }

    pub fn is_zero(&self) -> bool {
        self.components().iter().all(|&c| c == 0.0)
    }

    pub fn is_non_negative(&self) -> bool {
        self.components().iter().all(|&c| c >= 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|&c| c.is_finite())
    }

    /// Element-wise `self <= other`.
    pub fn fits_within(&self, other: &ResourceVector) -> bool {
        self.comm_rate <= other.comm_rate
            && self.compute <= other.compute
            && self.storage <= other.storage
            && self.rendering <= other.rendering
    }

    /// Element-wise subtraction; `None` if any dimension would go negative.
    pub fn checked_sub(&self, rhs: &ResourceVector) -> Option<ResourceVector> {
        if rhs.fits_within(self) {
            Some(ResourceVector::new(
                self.comm_rate - rhs.comm_rate,
                self.compute - rhs.compute,
                self.storage - rhs.storage,
                self.rendering - rhs.rendering,
            ))
        } else {
            None
        }
    }

    /// Element-wise subtraction clamped at zero.
    pub fn saturating_sub(&self, rhs: &ResourceVector) -> ResourceVector {
        ResourceVector::new(
            (self.comm_rate - rhs.comm_rate).max(0.0),
            (self.compute - rhs.compute).max(0.0),
            (self.storage - rhs.storage).max(0.0),
            (self.rendering - rhs.rendering).max(0.0),
        )
    }

    pub fn max(&self, other: &ResourceVector) -> ResourceVector {
        ResourceVector::new(
            self.comm_rate.max(other.comm_rate),
            self.compute.max(other.compute),
            self.storage.max(other.storage),
            self.rendering.max(other.rendering),
        )
    }

    pub fn scale(&self, factor: f64) -> ResourceVector {
        ResourceVector::new(
            self.comm_rate * factor,
            self.compute * factor,
            self.storage * factor,
            self.rendering * factor,
        )
    }

    /// Largest absolute element-wise difference to `other`.
    pub fn max_abs_diff(&self, other: &ResourceVector) -> f64 {
        self.components()
            .iter()
            .zip(other.components())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Add for ResourceVector {
    type Output = ResourceVector;

    fn add(self, rhs: ResourceVector) -> ResourceVector {
        ResourceVector::new(
            self.comm_rate + rhs.comm_rate,
            self.compute + rhs.compute,
            self.storage + rhs.storage,
            self.rendering + rhs.rendering,
        )
    }
}

impl AddAssign for ResourceVector {
    fn add_assign(&mut self, rhs: ResourceVector) {
        *self = *self + rhs;
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(comm {} Mb/s, compute {}, storage {} GB, rendering {} K)",
            self.comm_rate, self.compute, self.storage, self.rendering
        )
    }
}

/// Strength of separation between service instances.
///
/// The degrees are totally ordered; a lower degree permits more sharing.
/// `Physical` separation forbids sharing outright.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum IsolationDegree {
    #[default]
    None = 0,
    Scheduling = 1,
    Logical = 2,
    Physical = 3,
}

impl IsolationDegree {
    pub const ALL: [IsolationDegree; 4] = [
        IsolationDegree::None,
        IsolationDegree::Scheduling,
        IsolationDegree::Logical,
        IsolationDegree::Physical,
    ];
}

impl fmt::Display for IsolationDegree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            IsolationDegree::None => "none",
            IsolationDegree::Scheduling => "scheduling",
            IsolationDegree::Logical => "logical",
            IsolationDegree::Physical => "physical",
        };
        f.write_str(s)
    }
}

/// Whether two owners at the given isolation degrees may share `model`.
///
/// True iff the stricter of the two degrees stays at or below the model's
/// sharing threshold and neither side demands physical separation.
pub fn may_share(model: &MaaSModel, a: IsolationDegree, b: IsolationDegree) -> bool {
    let strictest = a.max(b);
    strictest <= model.max_isolation_degree_for_sharing && strictest < IsolationDegree::Physical
}

/// Handle to an open or closed ledger entry.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ReservationId(pub u64);

impl fmt::Display for ReservationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reservation {
    pub id: ReservationId,
    pub owner: MsiId,
    pub amount: ResourceVector,
    pub isolation: IsolationDegree,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PoolError {
    #[error("insufficient resources: requested {requested} exceeds remaining {remaining}")]
    InsufficientResources { requested: String, remaining: String },
    #[error("unknown reservation {0}")]
    UnknownReservation(ReservationId),
    #[error("reservation {0} already released")]
    DoubleRelease(ReservationId),
}

impl PoolError {
    pub(crate) fn insufficient(requested: &ResourceVector, remaining: &ResourceVector) -> Self {
        PoolError::InsufficientResources {
            requested: requested.to_string(),
            remaining: remaining.to_string(),
        }
    }
}

/// A ledger mutation, journaled for event traces.
#[derive(Debug, Clone, PartialEq)]
pub enum LedgerOp {
    Reserve { id: ReservationId, owner: MsiId, amount: ResourceVector },
    Release { id: ReservationId, owner: MsiId, amount: ResourceVector },
    Resize { id: ReservationId, owner: MsiId, amount: ResourceVector },
}

/// The virtual resource pool and its reservation ledger.
///
/// Single-writer: within a run only the event loop mutates the pool.
#[derive(Debug, Clone)]
pub struct Pool {
    capacity: ResourceVector,
    remaining: ResourceVector,
    open: BTreeMap<ReservationId, Reservation>,
    released: BTreeSet<ReservationId>,
    next_id: u64,
    journal: Vec<LedgerOp>,
}

/// Serializable debugging view of the pool (capacity, remaining, open entries).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolSnapshot {
    pub capacity: ResourceVector,
    pub remaining: ResourceVector,
    pub open_reservations: Vec<Reservation>,
}

impl Pool {
    pub fn with_capacity(capacity: ResourceVector) -> Self {
        assert!(
            capacity.is_non_negative() && capacity.is_finite(),
            "pool capacity must be finite and non-negative"
        );
        Pool {
            capacity,
            remaining: capacity,
            open: BTreeMap::new(),
            released: BTreeSet::new(),
            next_id: 0,
            journal: Vec::new(),
        }
    }

    /// Map the catalog's supply side into pool capacity.
    ///
    /// Sums the effective supply of every root supplier model, i.e. every
    /// CaaS model that is not a child of some composite. Children are
    /// already counted through their parent's footprint.
    pub fn build(catalog: &Catalog) -> Pool {
        let children: BTreeSet<_> = catalog
            .iter()
            .flat_map(|m| m.children.iter().cloned())
            .collect();
        let mut capacity = ResourceVector::ZERO;
        for model in catalog.iter() {
            if model.kind == MaasKind::CaaS && !children.contains(&model.id) {
                capacity += catalog
                    .effective_footprint(&model.id)
                    .expect("iterated model is registered");
            }
        }
        Pool::with_capacity(capacity)
    }

    pub fn capacity(&self) -> ResourceVector {
        self.capacity
    }

    pub fn remaining(&self) -> ResourceVector {
        self.remaining
    }

    pub fn open_reservations(&self) -> impl Iterator<Item = &Reservation> {
        self.open.values()
    }

    pub fn open_count(&self) -> usize {
        self.open.len()
    }

    pub fn get(&self, id: ReservationId) -> Option<&Reservation> {
        self.open.get(&id)
    }

    /// Total open amount held by `owner`.
    pub fn reserved_by(&self, owner: MsiId) -> ResourceVector {
        self.open
            .values()
            .filter(|r| r.owner == owner)
            .fold(ResourceVector::ZERO, |acc, r| acc + r.amount)
    }

    pub fn reserve(
        &mut self,
        owner: MsiId,
        amount: ResourceVector,
        isolation: IsolationDegree,
    ) -> Result<ReservationId, PoolError> {
        assert!(
            amount.is_non_negative() && amount.is_finite(),
            "reservation amount must be finite and non-negative"
        );
        let remaining = self
            .remaining
            .checked_sub(&amount)
            .ok_or_else(|| PoolError::insufficient(&amount, &self.remaining))?;
        self.remaining = remaining;
        let id = ReservationId(self.next_id);
        self.next_id += 1;
        self.open.insert(id, Reservation { id, owner, amount, isolation });
        self.journal.push(LedgerOp::Reserve { id, owner, amount });
        Ok(id)
    }

    /// Close a reservation, returning its amount to the pool.
    pub fn release(&mut self, id: ReservationId) -> Result<ResourceVector, PoolError> {
        match self.open.remove(&id) {
            Some(res) => {
                self.remaining += res.amount;
                self.released.insert(id);
                self.journal.push(LedgerOp::Release {
                    id,
                    owner: res.owner,
                    amount: res.amount,
                });
                Ok(res.amount)
            }
            None if self.released.contains(&id) => Err(PoolError::DoubleRelease(id)),
            None => Err(PoolError::UnknownReservation(id)),
        }
    }

    /// Grow or shrink an open reservation to `new_amount`.
    pub fn resize(
        &mut self,
        id: ReservationId,
        new_amount: ResourceVector,
    ) -> Result<(), PoolError> {
        assert!(
            new_amount.is_non_negative() && new_amount.is_finite(),
            "reservation amount must be finite and non-negative"
        );
        let current = match self.open.get(&id) {
            Some(res) => res.amount,
            None if self.released.contains(&id) => return Err(PoolError::DoubleRelease(id)),
            None => return Err(PoolError::UnknownReservation(id)),
        };
        // Return the old amount, then take the new one, rejecting atomically.
        let freed = self.remaining + current;
        let remaining = freed
            .checked_sub(&new_amount)
            .ok_or_else(|| PoolError::insufficient(&new_amount, &freed))?;
        self.remaining = remaining;
        let res = self.open.get_mut(&id).expect("checked above");
        res.amount = new_amount;
        let owner = res.owner;
        self.journal.push(LedgerOp::Resize { id, owner, amount: new_amount });
        Ok(())
    }

    /// Take and clear the journal of ledger mutations since the last drain.
    pub fn drain_journal(&mut self) -> Vec<LedgerOp> {
        std::mem::take(&mut self.journal)
    }

    /// Hand an open reservation to a different owner.
    pub fn reassign(&mut self, id: ReservationId, new_owner: MsiId) -> Result<(), PoolError> {
        match self.open.get_mut(&id) {
            Some(res) => {
                res.owner = new_owner;
                Ok(())
            }
            None if self.released.contains(&id) => Err(PoolError::DoubleRelease(id)),
            None => Err(PoolError::UnknownReservation(id)),
        }
    }

    /// Ledger conservation: open reservations + remaining == capacity.
    ///
    /// `tol` is an absolute per-dimension slack; pass 0.0 for exact checks
    /// over exactly-representable amounts.
    pub fn conservation_holds(&self, tol: f64) -> bool {
        let open_sum = self
            .open
            .values()
            .fold(ResourceVector::ZERO, |acc, r| acc + r.amount);
        let lhs = open_sum + self.remaining;
        lhs.max_abs_diff(&self.capacity) <= tol && self.remaining.is_non_negative()
    }

    pub fn snapshot(&self) -> PoolSnapshot {
        PoolSnapshot {
            capacity: self.capacity,
            remaining: self.remaining,
            open_reservations: self.open.values().cloned().collect(),
        }
    }
}
