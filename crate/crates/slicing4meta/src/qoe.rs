//! Meta-Immersion QoE model and rendering-capacity allocation.
//!
//! A user's Meta-Immersion (MI) combines two stimuli multiplicatively:
//!
//! * rendering perception, following the Weber-Fechner law: perceived
//!   intensity grows with the logarithm of the rendering stimulus,
//!   `k * ln(c_eff / c0)`, where the effective capacity saturates at the
//!   user's demand and falls back to the threshold `c0` below it;
//! * objective channel quality, a normalized stimulus
//!   `(1 - exp(-rate / r_ref)) * (1 - bep)` in `[0, 1)`.
//!
//! Either stimulus at zero annihilates the product: a broken channel or
//! absent rendering destroys the experience.
//!
//! Two allocation policies split a rendering budget across users: a plain
//! even split, and a sum-MI maximizer solved by KKT water-filling with
//! bisection on the dual multiplier.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Constants of the MI model. All defaults are overridable per scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QoEParams {
    /// Weber-Fechner proportionality constant.
    pub k: f64,
    /// Perception threshold capacity, K. Stimuli at or below it read as zero.
    pub c0: f64,
    /// Rate normalization constant, Mb/s.
    pub r_ref: f64,
    /// Rendering capacity demanded per virtual object, K.
    pub per_object_capacity: f64,
    /// Relative stimulus change that triggers re-adjustment.
    pub readjust_fraction: f64,
}

impl Default for QoEParams {
    fn default() -> Self {
        QoEParams {
            k: 1.0,
            c0: 1.0,
            r_ref: 100.0,
            per_object_capacity: 20.0,
            readjust_fraction: 0.1,
        }
    }
}

impl QoEParams {
    pub fn validate(&self) -> Result<(), QoeError> {
        // `positive` rejects NaN and infinities along with the sign
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.k) {
            return Err(QoeError::InvalidParams("k must be > 0"));
        }
        if !positive(self.c0) {
            return Err(QoeError::InvalidParams("c0 must be > 0"));
        }
        if !positive(self.r_ref) {
            return Err(QoeError::InvalidParams("r_ref must be > 0"));
        }
        if !positive(self.per_object_capacity) {
            return Err(QoeError::InvalidParams("per_object_capacity must be > 0"));
        }
        if !(positive(self.readjust_fraction) && self.readjust_fraction < 1.0) {
            return Err(QoeError::InvalidParams("readjust_fraction must be in (0, 1)"));
        }
        Ok(())
    }
}

/// One user's channel condition and rendering demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSession {
    pub id: String,
    /// Downlink rate, Mb/s.
    pub rate: f64,
    /// Uplink bit error probability, in [0, 1].
    pub bep: f64,
    /// Number of virtual objects rendered for this user.
    pub n_objects: u32,
    /// Rendering demand, K: `n_objects * per_object_capacity`.
    pub demand: f64,
}

impl UserSession {
    pub fn new(
        id: impl Into<String>,
        rate: f64,
        bep: f64,
        n_objects: u32,
        params: &QoEParams,
    ) -> Self {
        UserSession {
            id: id.into(),
            rate,
            bep,
            n_objects,
            demand: f64::from(n_objects) * params.per_object_capacity,
        }
    }
}

/// Per-user MI with its two components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiResult {
    pub user: String,
    pub perception: f64,
    pub objective_quality: f64,
    pub mi: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QoeError {
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
    #[error("domain error: {0}")]
    DomainError(&'static str),
    #[error("empty user set")]
    EmptyUserSet,
    #[error("allocation bisection did not converge within {0} iterations")]
    NonConvergence(u32),
}

/// Weber-Fechner rendering perception for an allocated capacity.
///
/// The effective stimulus saturates at the demand (rendering absent objects
/// is worthless) and clamps to the threshold `c0` from below, so the result
/// is always >= 0.
pub fn rendering_perception(
    allocated: f64,
    demand: f64,
    params: &QoEParams,
) -> Result<f64, QoeError> {
    params.validate()?;
    let c_eff = allocated.min(demand).max(params.c0);
    Ok(params.k * (c_eff / params.c0).ln())
}

/// Normalized objective stimulus in [0, 1): strictly increasing in rate,
/// strictly decreasing in bit error probability.
pub fn objective_quality(rate: f64, bep: f64, params: &QoEParams) -> Result<f64, QoeError> {
    params.validate()?;
    if !(0.0..=1.0).contains(&bep) {
        return Err(QoeError::DomainError("bep must be in [0, 1]"));
    }
    if !rate.is_finite() || rate < 0.0 {
        return Err(QoeError::DomainError("rate must be finite and >= 0"));
    }
    Ok((1.0 - (-rate / params.r_ref).exp()) * (1.0 - bep))
}

/// MI of one user under an allocated rendering capacity.
pub fn meta_immersion(
    user: &UserSession,
    allocated: f64,
    params: &QoEParams,
) -> Result<MiResult, QoeError> {
    let perception = rendering_perception(allocated, user.demand, params)?;
    let quality = objective_quality(user.rate, user.bep, params)?;
    Ok(MiResult {
        user: user.id.clone(),
        perception,
        objective_quality: quality,
        mi: perception * quality,
    })
}

/// Split `total` evenly: every user receives `total / n`.
pub fn even_allocation(total: f64, users: &[UserSession]) -> Result<Vec<f64>, QoeError> {
    if users.is_empty() {
        return Err(QoeError::EmptyUserSet);
    }
    if !total.is_finite() || total < 0.0 {
        return Err(QoeError::DomainError("total must be finite and >= 0"));
    }
    let share = total / users.len() as f64;
    Ok(vec![share; users.len()])
}

/// Allocate `total` to maximize the sum of MI across users.
///
/// Maximizes `sum_i G_i * k * ln(c_eff_i / c0)` subject to `sum c_i <= total`
/// and `0 <= c_i <= demand_i`, where `G_i` is the user's objective quality.
/// Users with `G_i = 0` (or demand at or below `c0`) receive nothing.
pub fn mi_max_allocation(
    total: f64,
    users: &[UserSession],
    params: &QoEParams,
) -> Result<Vec<f64>, QoeError> {
    if users.is_empty() {
        return Err(QoeError::EmptyUserSet);
    }
    if !total.is_finite() || total < 0.0 {
        return Err(QoeError::DomainError("total must be finite and >= 0"));
    }
    params.validate()?;
    let weights: Vec<f64> = users
        .iter()
        .map(|u| objective_quality(u.rate, u.bep, params))
        .collect::<Result<_, _>>()?;
    let demands: Vec<f64> = users.iter().map(|u| u.demand).collect();
    water_fill(&weights, &demands, total, params.k, params.c0)
}

/// Maximum number of bisection steps before reporting non-convergence.
const MAX_BISECTION_ITERS: u32 = 200;

/// KKT water-filling core, parameterized directly on the utility weights.
///
/// The stationarity condition gives `c_i(lambda) = clamp(w_i * k / lambda,
/// c0, d_i)` over the active users; bisection drives the total onto the
/// budget. A user pinned at the lower clamp consumes `c0` for zero utility,
/// so pinned users are dropped and the remainder re-solved. The bisection
/// runs the budget residual far below the 1e-6 * total level so the result
/// never undercuts an even split by more than rounding noise.
pub(crate) fn water_fill(
    weights: &[f64],
    demands: &[f64],
    total: f64,
    k: f64,
    c0: f64,
) -> Result<Vec<f64>, QoeError> {
    let n = weights.len();
    debug_assert_eq!(n, demands.len());
    let mut alloc = vec![0.0; n];
    let mut active: Vec<usize> = (0..n)
        .filter(|&i| weights[i] > 0.0 && demands[i] > c0)
        .collect();

    'solve: while !active.is_empty() {
        let sum_demand: f64 = active.iter().map(|&i| demands[i]).sum();
        if total >= sum_demand {
            // budget covers everyone: saturate at demand
            for &i in &active {
                alloc[i] = demands[i];
            }
            break 'solve;
        }
        if total <= active.len() as f64 * c0 {
            // not enough to lift all above the perception threshold;
            // shed the weakest channel and retry
            let weakest = *active
                .iter()
                .min_by(|&&a, &&b| {
                    weights[a]
                        .partial_cmp(&weights[b])
                        .expect("weights are finite")
                        .then(b.cmp(&a))
                })
                .expect("active set nonempty");
            active.retain(|&i| i != weakest);
            continue 'solve;
        }

        let total_at = |lambda: f64| -> f64 {
            active
                .iter()
                .map(|&i| (weights[i] * k / lambda).max(c0).min(demands[i]))
                .sum()
        };
        let w_min = active.iter().map(|&i| weights[i]).fold(f64::INFINITY, f64::min);
        let w_max = active.iter().map(|&i| weights[i]).fold(0.0, f64::max);
        // lambda_lo saturates everyone (sum >= total); lambda_hi pins
        // everyone at c0 (sum <= total)
        let mut lambda_lo = w_min * k / sum_demand;
        let mut lambda_hi = w_max * k / c0;
        let tol = 1e-13 * total.max(1.0);
        let mut iters = 0u32;
        while total - total_at(lambda_hi) > tol {
            iters += 1;
            if iters > MAX_BISECTION_ITERS {
                return Err(QoeError::NonConvergence(MAX_BISECTION_ITERS));
            }
            let mid = 0.5 * (lambda_lo + lambda_hi);
            if total_at(mid) >= total {
                lambda_lo = mid;
            } else {
                lambda_hi = mid;
            }
        }
        let lambda = lambda_hi;

        let pinned: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| weights[i] * k / lambda <= c0)
            .collect();
        if !pinned.is_empty() {
            active.retain(|i| !pinned.contains(i));
            continue 'solve;
        }

        for &i in &active {
            alloc[i] = (weights[i] * k / lambda).max(c0).min(demands[i]);
        }
        // hand the residual budget to unsaturated users, strongest first
        let mut leftover = total - active.iter().map(|&i| alloc[i]).sum::<f64>();
        let mut by_weight = active.clone();
        by_weight.sort_by(|&a, &b| {
            weights[b].partial_cmp(&weights[a]).expect("finite").then(a.cmp(&b))
        });
        for i in by_weight {
            if leftover <= 0.0 {
                break;
            }
            let room = demands[i] - alloc[i];
            if room > 0.0 {
                let add = room.min(leftover);
                alloc[i] += add;
                leftover -= add;
            }
        }
        break 'solve;
    }

    // an even split clamped to demand is always feasible; return it when
    // rounding left it ahead (e.g. exactly symmetric instances)
    let share = total / n as f64;
    let fallback: Vec<f64> = (0..n)
        .map(|i| {
            if weights[i] > 0.0 && demands[i] > c0 {
                share.min(demands[i])
            } else {
                0.0
            }
        })
        .collect();
    if utility(weights, demands, &fallback, k, c0) > utility(weights, demands, &alloc, k, c0) {
        return Ok(fallback);
    }
    Ok(alloc)
}

/// Sum-MI objective of an allocation.
pub(crate) fn utility(
    weights: &[f64],
    demands: &[f64],
    alloc: &[f64],
    k: f64,
    c0: f64,
) -> f64 {
    weights
        .iter()
        .zip(demands)
        .zip(alloc)
        .map(|((&w, &d), &c)| w * k * (c.min(d).max(c0) / c0).ln())
        .sum()
}

/// True when the stimulus moved by at least the configured fraction of its
/// previous magnitude, i.e. the controllers should re-adjust.
pub fn needs_readjustment(
    old_stimulus: f64,
    new_stimulus: f64,
    params: &QoEParams,
) -> Result<bool, QoeError> {
    params.validate()?;
    if !old_stimulus.is_finite() || old_stimulus <= 0.0 {
        return Err(QoeError::DomainError("old stimulus must be > 0"));
    }
    Ok((new_stimulus - old_stimulus).abs() / old_stimulus >= params.readjust_fraction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn defaults() -> QoEParams {
        QoEParams::default()
    }

    fn user(id: &str, rate: f64, bep: f64, n_objects: u32) -> UserSession {
        UserSession::new(id, rate, bep, n_objects, &defaults())
    }

    const LN_20: f64 = 2.995732273553991; // frozen: ln(20), checked against quadrature

    #[test]
    fn perception_below_threshold_is_zero() {
        assert_eq!(rendering_perception(0.0, 20.0, &defaults()).unwrap(), 0.0);
        assert_eq!(rendering_perception(1.0, 20.0, &defaults()).unwrap(), 0.0);
    }

    #[test]
    fn perception_matches_log_law_at_demand() {
        let p = rendering_perception(20.0, 20.0, &defaults()).unwrap();
        assert!((p - LN_20).abs() < 1e-12, "p = {p}");
    }

    #[test]
    fn perception_saturates_above_demand() {
        let p = rendering_perception(100.0, 20.0, &defaults()).unwrap();
        assert!((p - LN_20).abs() < 1e-12, "over-allocation must be wasted, p = {p}");
    }

    #[test]
    fn perception_rejects_bad_params() {
        let mut params = defaults();
        params.k = 0.0;
        assert_eq!(
            rendering_perception(5.0, 5.0, &params).unwrap_err(),
            QoeError::InvalidParams("k must be > 0")
        );
        let mut params = defaults();
        params.c0 = -1.0;
        assert!(rendering_perception(5.0, 5.0, &params).is_err());
    }

    #[test]
    fn quality_boundary_values() {
        assert_eq!(objective_quality(0.0, 0.5, &defaults()).unwrap(), 0.0);
        assert_eq!(objective_quality(100.0, 1.0, &defaults()).unwrap(), 0.0);
        // frozen: 1 - exp(-1), cross-checked against a series expansion
        let q = objective_quality(100.0, 0.0, &defaults()).unwrap();
        assert!((q - 0.6321205588285577).abs() < 1e-15, "q = {q}");
    }

    #[test]
    fn quality_domain_errors() {
        assert_eq!(
            objective_quality(10.0, 1.5, &defaults()).unwrap_err(),
            QoeError::DomainError("bep must be in [0, 1]")
        );
        assert!(objective_quality(-1.0, 0.0, &defaults()).is_err());
        let mut params = defaults();
        params.r_ref = 0.0;
        assert!(objective_quality(10.0, 0.0, &params).is_err());
    }

    #[test]
    fn mi_combines_components() {
        // frozen product: (1 - e^-1) * ln(20)
        let u = user("u", 100.0, 0.0, 1);
        assert_eq!(u.demand, 20.0);
        let r = meta_immersion(&u, 20.0, &defaults()).unwrap();
        assert!((r.mi - 1.8936639588596942).abs() < 1e-12, "mi = {}", r.mi);
        assert_eq!(r.mi, r.perception * r.objective_quality);
    }

    #[test]
    fn mi_zero_rate_annihilates() {
        let u = user("u", 0.0, 0.0, 2);
        let r = meta_immersion(&u, 40.0, &defaults()).unwrap();
        assert_eq!(r.mi, 0.0);
        assert!(r.perception > 0.0);
    }

    #[test]
    fn mi_increases_with_rate() {
        let slow = meta_immersion(&user("a", 50.0, 0.0, 3), 60.0, &defaults()).unwrap();
        let fast = meta_immersion(&user("b", 200.0, 0.0, 3), 60.0, &defaults()).unwrap();
        assert!(fast.mi > slow.mi);
    }

    #[test]
    fn even_allocation_splits_the_pool() {
        let users: Vec<_> = (0..40).map(|i| user(&format!("u{i}"), 100.0, 0.0, 1)).collect();
        let alloc = even_allocation(4000.0, &users).unwrap();
        assert!(alloc.iter().all(|&a| a == 100.0));

        let one = vec![user("solo", 100.0, 0.0, 1)];
        assert_eq!(even_allocation(4000.0, &one).unwrap(), vec![4000.0]);

        assert_eq!(even_allocation(4000.0, &[]).unwrap_err(), QoeError::EmptyUserSet);
    }

    #[test]
    fn mi_max_single_user_caps_at_demand() {
        let users = vec![user("u", 100.0, 0.0, 5)]; // demand 100
        let alloc = mi_max_allocation(4000.0, &users, &defaults()).unwrap();
        assert_eq!(alloc, vec![100.0]);
    }

    #[test]
    fn mi_max_identical_users_split_evenly() {
        let users = vec![user("a", 100.0, 0.0, 5), user("b", 100.0, 0.0, 5)];
        let alloc = mi_max_allocation(100.0, &users, &defaults()).unwrap();
        assert!((alloc[0] - 50.0).abs() < 1e-9 && (alloc[1] - 50.0).abs() < 1e-9,
            "alloc = {alloc:?}");
    }

    #[test]
    fn mi_max_matches_analytic_interior_optimum() {
        // three users, demands 40/60/80, rates 50/100/200, budget 120: the
        // optimum is interior, c_i = G_i / lambda with lambda = sum(G) / 120.
        // Frozen from the KKT solution and an exhaustive 1 K grid search.
        let users = vec![
            user("a", 50.0, 0.0, 2),
            user("b", 100.0, 0.0, 3),
            user("c", 200.0, 0.0, 4),
        ];
        let alloc = mi_max_allocation(120.0, &users, &defaults()).unwrap();
        let expected = [24.97881525474801, 40.12923255005031, 54.891952195201675];
        for (got, want) in alloc.iter().zip(expected) {
            assert!((got - want).abs() < 1e-6, "alloc = {alloc:?}");
        }
        let weights: Vec<f64> = users
            .iter()
            .map(|u| objective_quality(u.rate, u.bep, &defaults()).unwrap())
            .collect();
        let demands: Vec<f64> = users.iter().map(|u| u.demand).collect();
        let obj = utility(&weights, &demands, &alloc, 1.0, 1.0);
        // frozen grid-search optimum 7.0633451028490875 at (25, 40, 55)
        assert!((obj - 7.0633451028490875).abs() / 7.0633451028490875 < 1e-3);
        assert!(alloc.iter().sum::<f64>() <= 120.0 * (1.0 + 1e-12));
    }

    #[test]
    fn mi_max_sheds_weak_channel_under_tight_budget() {
        // giving the near-dead channel its threshold share would waste it
        let mut a = user("a", 100.0, 0.0, 5);
        a.rate = 230.0; // G ~ 0.9
        let mut b = user("b", 100.0, 0.0, 5);
        b.rate = 0.1; // G ~ 0.001
        let alloc = mi_max_allocation(10.0, &[a, b], &defaults()).unwrap();
        assert!((alloc[0] - 10.0).abs() < 1e-9, "alloc = {alloc:?}");
        assert_eq!(alloc[1], 0.0);
    }

    #[test]
    fn mi_max_zero_quality_user_receives_nothing() {
        let users = vec![user("dead", 0.0, 0.0, 5), user("live", 100.0, 0.0, 5)];
        let alloc = mi_max_allocation(150.0, &users, &defaults()).unwrap();
        assert_eq!(alloc[0], 0.0);
        assert!((alloc[1] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn mi_max_empty_users_rejected() {
        assert_eq!(
            mi_max_allocation(100.0, &[], &defaults()).unwrap_err(),
            QoeError::EmptyUserSet
        );
    }

    #[test]
    fn readjustment_trigger_thresholds() {
        let p = defaults();
        assert!(!needs_readjustment(100.0, 100.0, &p).unwrap());
        assert!(needs_readjustment(100.0, 111.0, &p).unwrap()); // 0.11 >= 0.1
        assert!(!needs_readjustment(100.0, 109.9, &p).unwrap()); // 0.099 < 0.1
        assert!(needs_readjustment(100.0, 89.0, &p).unwrap()); // shrink triggers too
        assert!(needs_readjustment(0.0, 5.0, &p).is_err());
    }

    proptest! {
        // log-difference law over the active region
        #[test]
        fn weber_fechner_log_difference(
            c0 in 0.5f64..4.0,
            k in 0.1f64..10.0,
            r1 in 0.1f64..3.0,   // ln of c1/c0
            r2 in 0.1f64..3.0,   // ln of c2/c1
        ) {
            let params = QoEParams { k, c0, ..QoEParams::default() };
            let c1 = c0 * r1.exp();
            let c2 = c1 * r2.exp();
            let demand = c2 * 1.5;
            let p1 = rendering_perception(c1, demand, &params).unwrap();
            let p2 = rendering_perception(c2, demand, &params).unwrap();
            let expected = k * (c2 / c1).ln();
            prop_assert!(((p2 - p1) - expected).abs() <= 1e-12 * expected.abs());
        }

        #[test]
        fn mi_monotone_in_allocation_and_rate(
            rate in 0.0f64..1000.0,
            bep in 0.0f64..1.0,
            n in 1u32..56,
            a1 in 0.0f64..2000.0,
            delta in 0.0f64..500.0,
        ) {
            let params = defaults();
            let u = UserSession::new("u", rate, bep, n, &params);
            let lo = meta_immersion(&u, a1, &params).unwrap().mi;
            let hi = meta_immersion(&u, a1 + delta, &params).unwrap().mi;
            prop_assert!(hi >= lo);

            let mut faster = u.clone();
            faster.rate = rate + 1.0;
            let base = meta_immersion(&u, a1, &params).unwrap();
            let quicker = meta_immersion(&faster, a1, &params).unwrap();
            prop_assert!(quicker.mi >= base.mi);
            if base.perception > 0.0 && base.objective_quality < 1.0 {
                prop_assert!(quicker.mi > base.mi);
            }
        }

        #[test]
        fn mi_saturates_at_demand(
            rate in 1.0f64..500.0,
            n in 1u32..56,
            extra in 0.0f64..3000.0,
        ) {
            let params = defaults();
            let u = UserSession::new("u", rate, 0.0, n, &params);
            let at_demand = meta_immersion(&u, u.demand, &params).unwrap().mi;
            let beyond = meta_immersion(&u, u.demand + extra, &params).unwrap().mi;
            prop_assert_eq!(at_demand, beyond);
        }

        #[test]
        fn mi_max_respects_budget_demand_and_dominates_even(
            seed_users in proptest::collection::vec((10.0f64..500.0, 0.0f64..0.05, 1u32..10), 1..6),
            budget_factor in 0.1f64..2.0,
        ) {
            let params = defaults();
            let users: Vec<UserSession> = seed_users
                .iter()
                .enumerate()
                .map(|(i, &(rate, bep, n))| UserSession::new(format!("u{i}"), rate, bep, n, &params))
                .collect();
            let sum_demand: f64 = users.iter().map(|u| u.demand).sum();
            let total = budget_factor * sum_demand;
            let alloc = mi_max_allocation(total, &users, &params).unwrap();
            prop_assert!(alloc.iter().sum::<f64>() <= total * (1.0 + 1e-9) + 1e-12);
            for (a, u) in alloc.iter().zip(&users) {
                prop_assert!(*a >= 0.0 && *a <= u.demand + 1e-9);
            }
            let mean = |alloc: &[f64]| -> f64 {
                users.iter().zip(alloc)
                    .map(|(u, &c)| meta_immersion(u, c, &params).unwrap().mi)
                    .sum::<f64>() / users.len() as f64
            };
            let even = even_allocation(total, &users).unwrap();
            prop_assert!(mean(&alloc) >= mean(&even) - 1e-9);
        }

        // scaling every weight by a positive constant leaves the argmax alone
        #[test]
        fn water_fill_weight_scale_invariance(
            raw in proptest::collection::vec((0.05f64..1.0, 20.0f64..200.0), 1..6),
            scale in 0.01f64..100.0,
            budget_factor in 0.2f64..1.5,
        ) {
            let weights: Vec<f64> = raw.iter().map(|&(w, _)| w).collect();
            let demands: Vec<f64> = raw.iter().map(|&(_, d)| d).collect();
            let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
            let total = budget_factor * demands.iter().sum::<f64>();
            let a = water_fill(&weights, &demands, total, 1.0, 1.0).unwrap();
            let b = water_fill(&scaled, &demands, total, 1.0, 1.0).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{a:?} vs {b:?}");
            }
        }
    }
}
