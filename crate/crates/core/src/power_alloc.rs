//! Weighted sum-rate power control for one NOMA group.
//!
//! With the decode order fixed (strongest channel first), the weighted sum
//! rate is `log2 prod_k z_k^{w_k}` where `z_k = mu_k / phi_k` is the ratio of
//! the received power at and after device `k` (plus noise) to the power after
//! it. The objective is increasing in `z`, and the set of achievable `z` is a
//! normal set, so the problem is solved by polyblock outer approximation: keep
//! the vertices of a polyblock containing the feasible set, project the best
//! vertex onto the feasible boundary along the ray from `1`, and split it into
//! its `K` children until the bound and the incumbent meet.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::channel::{self, RateReport};
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;
/// Largest group the lattice oracle accepts.
pub const ORACLE_MAX_DEVICES: usize = 3;

const BISECTION_STEPS: usize = 64;
const BOX_SLACK: f64 = 1e-12;
/// Ray origin below the lower face, as a fraction of the upper corner.
const ORIGIN_SHIFT: f64 = 0.5;

/// Power allocation instance. Inputs may come in any order; the solver decodes
/// in descending gain order and reports powers in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerProblem {
    gains: Vec<f64>,
    max_power: Vec<f64>,
    noise: f64,
    weights: Vec<f64>,
}

impl PowerProblem {
    pub fn new(gains: Vec<f64>, max_power: Vec<f64>, noise: f64, weights: Vec<f64>) -> Result<Self> {
        if gains.is_empty() {
            return Err(Error::domain("power problem needs at least one device"));
        }
        for other in [max_power.len(), weights.len()] {
            if other != gains.len() {
                return Err(Error::LengthMismatch {
                    expected: gains.len(),
                    found: other,
                });
            }
        }
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        if !gains.iter().all(positive) {
            return Err(Error::domain("gains must be finite and positive"));
        }
        if !max_power.iter().all(positive) {
            return Err(Error::domain("power limits must be finite and positive"));
        }
        if !weights.iter().all(positive) {
            return Err(Error::domain("weights must be finite and positive"));
        }
        if !positive(&noise) {
            return Err(Error::domain(format!("noise power must be positive, got {noise}")));
        }
        Ok(Self {
            gains,
            max_power,
            noise,
            weights,
        })
    }

    /// Same power limit for every device.
    pub fn uniform(gains: Vec<f64>, max_power: f64, noise: f64, weights: Vec<f64>) -> Result<Self> {
        let n = gains.len();
        Self::new(gains, vec![max_power; n], noise, weights)
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn max_power(&self) -> &[f64] {
        &self.max_power
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Frozen decode order: gain descending, ties by index.
    pub fn decode_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.gains[b].total_cmp(&self.gains[a]).then(a.cmp(&b)));
        order
    }
}

/// `prod_k (mu_k / phi_k)^{w_k}` under the frozen decode order.
pub fn objective(powers: &[f64], problem: &PowerProblem) -> f64 {
    log_objective(powers, problem, problem.weights()).exp()
}

/// `sum_k w_k ln z_k`.
fn log_objective(powers: &[f64], problem: &PowerProblem, weights: &[f64]) -> f64 {
    let mut after = problem.noise;
    let mut acc = 0.0;
    for &k in problem.decode_order().iter().rev() {
        let rx = powers[k] * problem.gains[k];
        acc += weights[k] * (rx / after).ln_1p();
        after += rx;
    }
    acc
}

/// Outcome of a power allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSolution {
    /// Watts, in input order.
    pub powers: Vec<f64>,
    /// [`objective`] at `powers`.
    pub objective: f64,
    /// Rates recomputed under the realized received-power decode order.
    pub rates: RateReport,
    pub iterations: usize,
    pub converged: bool,
    /// Upper bound on the optimum objective when known.
    pub upper_bound: f64,
}

impl PowerSolution {
    fn finish(
        problem: &PowerProblem,
        powers: Vec<f64>,
        iterations: usize,
        converged: bool,
        upper_bound: f64,
    ) -> Result<Self> {
        let rates = channel::noma_rates(&powers, problem.gains(), problem.noise())?;
        Ok(Self {
            objective: objective(&powers, problem),
            powers,
            rates,
            iterations,
            converged,
            upper_bound,
        })
    }

    /// `sum_k w_k R_k` with the realized rates.
    pub fn weighted_sum_rate(&self, weights: &[f64]) -> f64 {
        self.rates.weighted_sum_rate(weights)
    }
}

/// Every device at its limit.
pub fn fixed_max_power(problem: &PowerProblem) -> Result<PowerSolution> {
    let powers = problem.max_power.clone();
    let obj = objective(&powers, problem);
    PowerSolution::finish(problem, powers, 0, true, obj)
}

/// Problem data permuted into decode order. The solver works with
/// `y = ln z`, where the objective `sum_k w_k y_k` is linear.
struct Sorted {
    order: Vec<usize>,
    gains: Vec<f64>,
    max_power: Vec<f64>,
    weights: Vec<f64>,
    noise: f64,
}

impl Sorted {
    fn new(problem: &PowerProblem) -> Self {
        let order = problem.decode_order();
        let pick = |v: &[f64]| order.iter().map(|&k| v[k]).collect::<Vec<_>>();
        let weights = pick(&problem.weights);
        let w_max = weights.iter().cloned().fold(0.0, f64::max);
        Self {
            gains: pick(&problem.gains),
            max_power: pick(&problem.max_power),
            weights: weights.iter().map(|w| w / w_max).collect(),
            noise: problem.noise,
            order,
        }
    }

    fn value(&self, y: &[f64]) -> f64 {
        y.iter().zip(&self.weights).map(|(y, w)| w * y).sum()
    }

    /// Powers realizing `z = exp(max(y, 0))`, solved from the last decoded
    /// device upward. `None` when some power leaves its box. Negative
    /// coordinates stand for silent devices, which extends the feasible set
    /// below the face `z_k = 1` without changing its upper boundary.
    fn powers_for(&self, y: &[f64]) -> Option<Vec<f64>> {
        let k = y.len();
        let mut p = vec![0.0; k];
        let mut after = self.noise;
        for i in (0..k).rev() {
            let pi = y[i].max(0.0).exp_m1() * after / self.gains[i];
            if pi > self.max_power[i] * (1.0 + BOX_SLACK) {
                return None;
            }
            p[i] = pi.min(self.max_power[i]);
            after += p[i] * self.gains[i];
        }
        Some(p)
    }

    fn y_for(&self, p: &[f64]) -> Vec<f64> {
        let k = p.len();
        let mut y = vec![0.0; k];
        let mut after = self.noise;
        for i in (0..k).rev() {
            let rx = p[i] * self.gains[i];
            y[i] = (rx / after).ln_1p();
            after += rx;
        }
        y
    }

    /// Last feasible point on the segment from `origin` to `v`, and its powers.
    fn project(&self, origin: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let point = |lambda: f64| -> Vec<f64> { origin.iter().zip(v).map(|(o, x)| o + lambda * (x - o)).collect() };
        if let Some(p) = self.powers_for(v) {
            return (v.to_vec(), p);
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut p_lo = vec![0.0; v.len()];
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            match self.powers_for(&point(mid)) {
                Some(p) => {
                    lo = mid;
                    p_lo = p;
                }
                None => hi = mid,
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        (point(lo), p_lo)
    }

    fn unsort(&self, sorted: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; sorted.len()];
        for (i, &k) in self.order.iter().enumerate() {
            out[k] = sorted[i];
        }
        out
    }
}

/// A box `[lower, upper]` of the polyblock, keyed by the objective at its
/// upper corner.
struct Vertex {
    key: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PartialEq for Vertex {
    fn eq(&self, other: &Self) -> bool {
        self.key.total_cmp(&other.key) == Ordering::Equal
    }
}

impl Eq for Vertex {}

impl PartialOrd for Vertex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Vertex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key)
    }
}

impl Sorted {
    /// Shrinks `[lower, upper]` to the part that can still hold a feasible
    /// point worth more than `target`: the lower corner rises until the upper
    /// corner's value would drop to `target`, and each upper coordinate falls
    /// to the largest value feasible with the others at the lower corner.
    /// `None` when nothing is left.
    fn reduce(&self, mut lower: Vec<f64>, mut upper: Vec<f64>, target: f64) -> Option<Vertex> {
        let k = upper.len();
        let top = self.value(&upper);
        if top <= target {
            return None;
        }
        for i in 0..k {
            if self.weights[i] > 0.0 {
                let need = upper[i] - (top - target) / self.weights[i];
                lower[i] = lower[i].max(need);
            }
        }
        self.powers_for(&lower)?;
        for i in 0..k {
            let mut probe = lower.clone();
            probe[i] = upper[i];
            if self.powers_for(&probe).is_some() {
                continue;
            }
            let (mut lo, mut hi) = (lower[i], upper[i]);
            for _ in 0..BISECTION_STEPS {
                let mid = 0.5 * (lo + hi);
                probe[i] = mid;
                if self.powers_for(&probe).is_some() {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-14 * hi.abs().max(1.0) {
                    break;
                }
            }
            upper[i] = hi;
        }
        let key = self.value(&upper);
        (key > target).then_some(Vertex { key, lower, upper })
    }
}

/// Polyblock outer approximation. Stops once the best vertex of the polyblock
/// is within a factor `1 + epsilon` of the incumbent on [`objective`]. Hitting
/// `max_iterations` returns the incumbent with `converged = false`.
///
/// Each vertex carries the lower corner of its box. Boxes are reduced against
/// the incumbent before they enter the queue, and projections run from the
/// box's own lower corner, which starts below the face `z = 1`.
pub fn solve_polyblock(problem: &PowerProblem, epsilon: f64, max_iterations: usize) -> Result<PowerSolution> {
    if !(epsilon > 0.0) {
        return Err(Error::domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let s = Sorted::new(problem);
    let k = s.gains.len();
    let w_max = problem.weights.iter().cloned().fold(0.0, f64::max);
    // The sorted weights are scaled by 1 / w_max.
    let gap = epsilon.ln_1p() / w_max;

    // Incumbent: the best corner of the power box, max power included.
    let mut best_p = s.max_power.clone();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..1 << k {
        let p: Vec<f64> = (0..k)
            .map(|i| if mask & (1 << i) != 0 { s.max_power[i] } else { 0.0 })
            .collect();
        let v = s.value(&s.y_for(&p));
        if v > best || (v == best && mask == (1 << k) - 1) {
            best = v;
            best_p = p;
        }
    }

    let top: Vec<f64> = (0..k)
        .map(|i| (s.max_power[i] * s.gains[i] / s.noise).ln_1p())
        .collect();
    let origin: Vec<f64> = top.iter().map(|t| -ORIGIN_SHIFT * t).collect();
    let mut heap = BinaryHeap::new();
    let mut bound = s.value(&top);
    if let Some(v) = s.reduce(origin, top, best + gap) {
        heap.push(v);
    }

    let mut iterations = 0;
    let mut converged = true;
    while let Some(v) = heap.pop() {
        bound = v.key;
        if v.key <= best + gap {
            break;
        }
        if iterations == max_iterations {
            converged = false;
            break;
        }
        iterations += 1;
        let (x, p) = s.project(&v.lower, &v.upper);
        let value = s.value(&s.y_for(&p));
        if value > best {
            best = value;
            best_p = p;
        }
        for i in 0..k {
            // A box at or below the face y_i = 0 sits where feasibility no
            // longer depends on coordinate i: everything above `x` in the
            // other coordinates is already infeasible, so that child adds
            // nothing.
            if x[i] >= v.upper[i] || v.upper[i] <= 0.0 {
                continue;
            }
            let mut upper = v.upper.clone();
            upper[i] = x[i];
            if let Some(child) = s.reduce(v.lower.clone(), upper, best + gap) {
                heap.push(child);
            }
        }
    }
    if heap.is_empty() && converged {
        bound = bound.min(best + gap);
    }
    if !converged {
        log::warn!("polyblock stopped after {iterations} iterations without closing the gap");
    }
    let upper_bound = (bound.max(best) * w_max).exp();
    PowerSolution::finish(problem, s.unsort(&best_p), iterations, converged, upper_bound)
}

/// Exhaustive search over the lattice `{0, r, 2r, ..., 1} * p_max` per device,
/// with `r = resolution`. Ties go to the lexicographically smallest power
/// vector. At most [`ORACLE_MAX_DEVICES`] devices.
pub fn solve_grid_oracle(problem: &PowerProblem, resolution: f64) -> Result<PowerSolution> {
    let k = problem.len();
    if k > ORACLE_MAX_DEVICES {
        return Err(Error::OracleTooLarge(k));
    }
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::domain(format!("resolution must be in (0, 1], got {resolution}")));
    }
    let steps = (1.0 / resolution).round().max(1.0) as usize;
    let mut index = vec![0usize; k];
    let mut powers = vec![0.0; k];
    let mut best_p = powers.clone();
    let mut best = f64::NEG_INFINITY;
    let mut evaluated = 0;
    loop {
        for i in 0..k {
            powers[i] = problem.max_power[i] * index[i] as f64 / steps as f64;
        }
        let value = log_objective(&powers, problem, &problem.weights);
        evaluated += 1;
        if value > best {
            best = value;
            best_p.copy_from_slice(&powers);
        }
        // Odometer, last coordinate fastest: lexicographic order.
        let mut i = k;
        loop {
            if i == 0 {
                let obj = best.exp();
                return PowerSolution::finish(problem, best_p, evaluated, true, obj);
            }
            i -= 1;
            if index[i] < steps {
                index[i] += 1;
                break;
            }
            index[i] = 0;
        }
    }
}
