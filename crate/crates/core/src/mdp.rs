//! MDP vocabulary: box state spaces, finite action sets, discounted cost
//! problems, and the generic Bellman machinery that acts on them.
//!
//! Everything here is cost-minimizing. Environments that think in rewards
//! negate them before they reach this module.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the state space.
pub type StateVector = Vec<f64>;

/// Axis-aligned box `[lower, upper]` in `R^dim`.
///
/// Convex by construction, which is what makes the clamp in
/// [`StateSpace::project`] the orthogonal projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl StateSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::invalid("state space must have dim >= 1"));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                context: "state space bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!(
                    "state space coordinate {k}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        s.len() == self.dim()
            && s.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
    }

    /// Returns an error naming the first offending coordinate.
    pub fn check(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "state vector",
                expected: self.dim(),
                got: s.len(),
            });
        }
        for (k, x) in s.iter().enumerate() {
            let (lo, hi) = (self.lower[k], self.upper[k]);
            if !(lo <= *x && *x <= hi) {
                return Err(Error::StateOutOfBounds {
                    coord: k,
                    value: *x,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(())
    }

    /// Orthogonal projection onto the box (componentwise clamp).
    pub fn project(&self, x: &[f64]) -> StateVector {
        let mut out = x.to_vec();
        self.project_in_place(&mut out);
        out
    }

    pub fn project_in_place(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub label: String,
    pub payload: Vec<f64>,
}

/// Finite, ordered action set. Index order is the tie-breaking order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSet {
    actions: Vec<Action>,
}

impl ActionSet {
    pub fn new(actions: Vec<Action>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::invalid("action set must be nonempty"));
        }
        for (i, a) in actions.iter().enumerate() {
            if actions[..i].iter().any(|b| b.label == a.label) {
                return Err(Error::invalid(format!("duplicate action label {:?}", a.label)));
            }
        }
        Ok(Self { actions })
    }

    /// Convenience constructor for scalar-payload actions.
    pub fn from_scalars(items: &[(&str, f64)]) -> Result<Self> {
        Self::new(
            items
                .iter()
                .map(|(l, p)| Action {
                    label: (*l).to_string(),
                    payload: vec![*p],
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Action> {
        self.actions.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Action> {
        self.actions.iter()
    }
}

pub type CostFn = Arc<dyn Fn(&[f64], usize) -> f64 + Send + Sync>;

/// The tuple (S, A, c, gamma); the transition law is supplied separately as
/// a scenario source.
#[derive(Clone)]
pub struct DiscountedProblem {
    pub space: StateSpace,
    pub actions: ActionSet,
    cost: CostFn,
    gamma: f64,
}

impl fmt::Debug for DiscountedProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscountedProblem")
            .field("space", &self.space)
            .field("actions", &self.actions)
            .field("gamma", &self.gamma)
            .finish_non_exhaustive()
    }
}

impl DiscountedProblem {
    pub fn new(space: StateSpace, actions: ActionSet, cost: CostFn, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        Ok(Self {
            space,
            actions,
            cost,
            gamma,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn cost(&self, s: &[f64], a: usize) -> f64 {
        (self.cost)(s, a)
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.space.clone(), self.actions.clone(), self.cost.clone(), gamma)
    }
}

/// A bounded state-action value function.
pub trait QFunction {
    fn num_actions(&self) -> usize;

    fn eval(&self, s: &[f64], a: usize) -> f64;

    /// `(argmin, min)` over actions; ties go to the lowest index.
    fn min_action(&self, s: &[f64]) -> (usize, f64) {
        argmin((0..self.num_actions()).map(|a| self.eval(s, a)))
    }

    /// `V(s) = min_a Q(s, a)`.
    fn value(&self, s: &[f64]) -> f64 {
        self.min_action(s).1
    }
}

impl<Q: QFunction + ?Sized> QFunction for &Q {
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn eval(&self, s: &[f64], a: usize) -> f64 {
        (**self).eval(s, a)
    }
    fn min_action(&self, s: &[f64]) -> (usize, f64) {
        (**self).min_action(s)
    }
}

/// Lowest-index argmin. Panics on an empty iterator.
pub fn argmin(values: impl IntoIterator<Item = f64>) -> (usize, f64) {
    let mut it = values.into_iter().enumerate();
    let (mut best_i, mut best) = it.next().expect("argmin over empty set");
    for (i, v) in it {
        if v < best {
            best = v;
            best_i = i;
        }
    }
    (best_i, best)
}

/// Q function given by a closure; handy for tests and analytic references.
pub struct FnQ<F> {
    num_actions: usize,
    f: F,
}

impl<F: Fn(&[f64], usize) -> f64> FnQ<F> {
    pub fn new(num_actions: usize, f: F) -> Self {
        Self { num_actions, f }
    }
}

impl<F: Fn(&[f64], usize) -> f64> QFunction for FnQ<F> {
    fn num_actions(&self) -> usize {
        self.num_actions
    }
    fn eval(&self, s: &[f64], a: usize) -> f64 {
        (self.f)(s, a)
    }
}

/// One application of the scenario Bellman operator at `(s, a)`:
/// `c(s,a) + (gamma/N) * sum_i min_a' Q(s_i', a')`.
///
/// With the residual-kernel atoms this is the residuals-based operator; with
/// true-model atoms it is the full-information operator.
pub fn scenario_bellman_apply<Q, F>(
    q: &Q,
    problem: &DiscountedProblem,
    next_states: F,
    s: &[f64],
    a: usize,
) -> Result<f64>
where
    Q: QFunction + ?Sized,
    F: Fn(&[f64], usize) -> Vec<StateVector>,
{
    let scenarios = next_states(s, a);
    if scenarios.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mut total = 0.0;
    for sp in &scenarios {
        problem.space.check(sp)?;
        total += q.value(sp);
    }
    Ok(problem.cost(s, a) + problem.gamma() * total / scenarios.len() as f64)
}

/// Largest absolute difference of two Q functions over a finite probe set.
pub fn sup_norm_distance<Q1, Q2>(q1: &Q1, q2: &Q2, probe: &[(StateVector, usize)]) -> f64
where
    Q1: QFunction + ?Sized,
    Q2: QFunction + ?Sized,
{
    probe
        .iter()
        .map(|(s, a)| (q1.eval(s, *a) - q2.eval(s, *a)).abs())
        .fold(0.0, f64::max)
}

/// Exact sup-norm distance between representations that share their support.
pub trait SupDistance {
    fn sup_distance(&self, other: &Self) -> f64;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iterations: usize,
    /// `deltas[k] = ||Q_{k+1} - Q_k||_inf`.
    pub deltas: Vec<f64>,
}

impl IterationDiagnostics {
    /// Successive ratios `delta_{k+1} / delta_k` (skipping zero denominators).
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.deltas
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect()
    }

    /// Largest violation of `delta_{k+1} <= gamma * delta_k + slack`; `<= 0` means none.
    pub fn worst_rate_violation(&self, gamma: f64, slack: f64) -> f64 {
        self.deltas
            .windows(2)
            .map(|w| w[1] - gamma * w[0] - slack)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Fixed-point iteration `Q_{k+1} = T(Q_k)` until `||Q_{k+1} - Q_k|| <= tol`.
///
/// Returns the last iterate, for which `||T Q - Q|| <= gamma * tol`.
pub fn value_iterate<Q, T>(mut operator: T, q0: Q, tol: f64, max_iter: usize) -> Result<(Q, IterationDiagnostics)>
where
    Q: SupDistance,
    T: FnMut(&Q) -> Q,
{
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tol must be > 0, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be >= 1"));
    }
    let mut diag = IterationDiagnostics::default();
    let mut q = q0;
    for _ in 0..max_iter {
        let next = operator(&q);
        let delta = next.sup_distance(&q);
        diag.iterations += 1;
        diag.deltas.push(delta);
        q = next;
        if delta <= tol {
            return Ok((q, diag));
        }
    }
    Err(Error::NonConvergence {
        iterations: diag.iterations,
        last_delta: *diag.deltas.last().unwrap_or(&f64::INFINITY),
    })
}

/// Greedy (cost-minimizing) policy of `q`, ties to the lowest index.
pub fn greedy_policy<Q: QFunction>(q: Q) -> impl Fn(&[f64]) -> usize {
    move |s| q.min_action(s).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_problem(gamma: f64, cost: f64) -> DiscountedProblem {
        DiscountedProblem::new(
            StateSpace::new(vec![-1.0], vec![1.0]).unwrap(),
            ActionSet::from_scalars(&[("a0", 0.0), ("a1", 1.0)]).unwrap(),
            Arc::new(move |_s: &[f64], _a| cost),
            gamma,
        )
        .unwrap()
    }

    #[derive(Clone, Debug, PartialEq)]
    struct Table(Vec<f64>);

    impl SupDistance for Table {
        fn sup_distance(&self, other: &Self) -> f64 {
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        }
    }

    #[test]
    fn state_space_validation() {
        assert!(StateSpace::new(vec![0.0], vec![0.0]).is_err());
        assert!(StateSpace::new(vec![1.0], vec![0.0]).is_err());
        assert!(StateSpace::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(StateSpace::new(vec![], vec![]).is_err());
        let sp = StateSpace::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        assert!(sp.contains(&[0.0, 2.0]));
        assert!(!sp.contains(&[0.0, 2.1]));
        assert_eq!(sp.project(&[-3.0, 0.5]), vec![-1.0, 0.5]);
    }

    #[test]
    fn action_set_validation() {
        assert!(ActionSet::new(vec![]).is_err());
        assert!(ActionSet::from_scalars(&[("x", 0.0), ("x", 1.0)]).is_err());
    }

    #[test]
    fn gamma_out_of_range_rejected() {
        let sp = StateSpace::new(vec![0.0], vec![1.0]).unwrap();
        let acts = ActionSet::from_scalars(&[("a", 0.0)]).unwrap();
        assert!(DiscountedProblem::new(sp.clone(), acts.clone(), Arc::new(|_: &[f64], _| 0.0), 1.0).is_err());
        assert!(DiscountedProblem::new(sp, acts, Arc::new(|_: &[f64], _| 0.0), -0.1).is_err());
    }

    #[test]
    fn bellman_apply_discount_zero_returns_cost() {
        let p = unit_problem(0.0, 0.7);
        let q = FnQ::new(2, |s: &[f64], a| s[0] * 10.0 + a as f64);
        let v = scenario_bellman_apply(&q, &p, |_s, _a| vec![vec![0.3], vec![-0.9]], &[0.1], 1).unwrap();
        assert_eq!(v, 0.7);
    }

    #[test]
    fn bellman_apply_constant_q() {
        let p = unit_problem(0.9, 1.5);
        let q = FnQ::new(2, |_s: &[f64], _a| 4.0);
        let v = scenario_bellman_apply(&q, &p, |_s, _a| vec![vec![0.3]; 5], &[0.0], 0).unwrap();
        assert!((v - (1.5 + 0.9 * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn bellman_apply_fixed_point_of_self_loop() {
        let p = unit_problem(0.5, 1.0);
        let q = FnQ::new(2, |_s: &[f64], _a| 2.0);
        let v = scenario_bellman_apply(&q, &p, |s, _a| vec![s.to_vec()], &[0.4], 1).unwrap();
        assert_eq!(v, 2.0);
    }

    #[test]
    fn bellman_apply_errors() {
        let p = unit_problem(0.5, 1.0);
        let q = FnQ::new(2, |_s: &[f64], _a| 0.0);
        assert!(matches!(
            scenario_bellman_apply(&q, &p, |_s, _a| vec![], &[0.0], 0),
            Err(Error::EmptySupport)
        ));
        assert!(matches!(
            scenario_bellman_apply(&q, &p, |_s, _a| vec![vec![1.5]], &[0.0], 0),
            Err(Error::StateOutOfBounds { .. })
        ));
    }

    #[test]
    fn sup_norm_identity_and_shift() {
        let q1 = FnQ::new(2, |s: &[f64], a| s[0].sin() + a as f64);
        let q2 = FnQ::new(2, |s: &[f64], a| s[0].sin() + a as f64 + 3.0);
        let probe: Vec<_> = (0..11)
            .flat_map(|i| (0..2).map(move |a| (vec![-1.0 + 0.2 * i as f64], a)))
            .collect();
        assert_eq!(sup_norm_distance(&q1, &q1, &probe), 0.0);
        assert!((sup_norm_distance(&q2, &q1, &probe) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn value_iterate_identity_stops_immediately() {
        let q0 = Table(vec![1.0, -2.0, 3.5]);
        let (q, diag) = value_iterate(|q: &Table| q.clone(), q0.clone(), 1e-12, 10).unwrap();
        assert_eq!(q, q0);
        assert_eq!(diag.iterations, 1);
        assert_eq!(diag.deltas, vec![0.0]);
    }

    #[test]
    fn value_iterate_geometric_series() {
        // c = 1, gamma = 0.5, deterministic self-loop: Q = 1 + 0.5 * Q.
        let op = |q: &Table| Table(q.0.iter().map(|v| 1.0 + 0.5 * v).collect());
        let (q, diag) = value_iterate(op, Table(vec![0.0; 4]), 1e-10, 1000).unwrap();
        for v in &q.0 {
            assert!((v - 2.0).abs() < 1e-10);
        }
        assert!(diag.worst_rate_violation(0.5, 1e-10) <= 0.0);
    }

    #[test]
    fn value_iterate_reports_non_convergence() {
        let op = |q: &Table| Table(q.0.iter().map(|v| v + 1.0).collect());
        match value_iterate(op, Table(vec![0.0]), 1e-6, 5) {
            Err(Error::NonConvergence { iterations, last_delta }) => {
                assert_eq!(iterations, 5);
                assert_eq!(last_delta, 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(value_iterate(op, Table(vec![0.0]), 0.0, 5).is_err());
        assert!(value_iterate(op, Table(vec![0.0]), 1e-3, 0).is_err());
    }

    #[test]
    fn greedy_policy_tie_breaks_low() {
        let by_index = greedy_policy(FnQ::new(3, |_s: &[f64], a| a as f64));
        assert_eq!(by_index(&[0.3]), 0);
        let flat = greedy_policy(FnQ::new(3, |_s: &[f64], _a| 1.0));
        assert_eq!(flat(&[0.3]), 0);
        let pick_two = greedy_policy(FnQ::new(3, |_s: &[f64], a| if a == 2 { -1.0 } else { 0.0 }));
        assert_eq!(pick_two(&[0.0]), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn greedy_invariant_to_constant_shift(vals in prop::collection::vec(-5.0f64..5.0, 1..6), k in -100.0f64..100.0) {
                let n = vals.len();
                let v1 = vals.clone();
                let v2 = vals.clone();
                let p1 = greedy_policy(FnQ::new(n, move |_s: &[f64], a| v1[a]));
                let p2 = greedy_policy(FnQ::new(n, move |_s: &[f64], a| v2[a] + k));
                // shifting can merge values only through rounding; compare on exact argmin of shifted values
                let shifted: Vec<f64> = vals.iter().map(|v| v + k).collect();
                prop_assert_eq!(p2(&[0.0]), argmin(shifted.iter().copied()).0);
                if vals.iter().all(|v| (v + k) - k == *v) {
                    prop_assert_eq!(p1(&[0.0]), p2(&[0.0]));
                }
            }

            #[test]
            fn scenario_operator_shift_and_monotone(
                q in prop::collection::vec(-3.0f64..3.0, 22),
                bump in prop::collection::vec(0.0f64..1.0, 22),
                k in -10.0f64..10.0,
                atoms in prop::collection::vec(-1.0f64..1.0, 1..8),
                s in -1.0f64..1.0,
                a in 0usize..2,
            ) {
                let p = unit_problem(0.8, 0.3);
                let nodes = 11usize;
                let lookup = |tab: Vec<f64>| move |s: &[f64], a: usize| {
                    let i = (((s[0] + 1.0) / 2.0) * (nodes - 1) as f64).round() as usize;
                    tab[i * 2 + a]
                };
                let scen = |_s: &[f64], _a: usize| atoms.iter().map(|x| vec![*x]).collect::<Vec<_>>();
                let q_lo = FnQ::new(2, lookup(q.clone()));
                let q_hi = FnQ::new(2, lookup(q.iter().zip(&bump).map(|(x, b)| x + b).collect()));
                let q_sh = FnQ::new(2, lookup(q.iter().map(|x| x + k).collect()));
                let lo = scenario_bellman_apply(&q_lo, &p, scen, &[s], a).unwrap();
                let hi = scenario_bellman_apply(&q_hi, &p, scen, &[s], a).unwrap();
                let sh = scenario_bellman_apply(&q_sh, &p, scen, &[s], a).unwrap();
                prop_assert!(lo <= hi + 1e-12);
                prop_assert!((sh - (lo + 0.8 * k)).abs() < 1e-9);
            }
        }
    }
}
