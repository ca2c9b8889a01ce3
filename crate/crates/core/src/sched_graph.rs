//! Scheduling as a maximum-weight independent set.
//!
//! A vertex `(j_1, ..., j_K) t` schedules a device group in round `t`. Two
//! vertices conflict when their groups share a device (a device may upload at
//! most once) or when they sit in the same round (one group per round). An
//! independent set of `T` vertices is therefore a complete schedule, and its
//! weight is the schedule's weighted sum rate.
//!
//! The graph is dense (every round is a clique), so adjacency is implicit in
//! the edge rule rather than stored. [`SchedulingGraph::greedy_mwis`] exploits
//! the fact that every residual graph is again a full "groups x rounds" graph
//! with a uniform degree; [`greedy_mwis`] runs the same rule on an arbitrary
//! explicit graph.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::exec::{self, Execution};
use crate::{Error, Result};

pub type DeviceId = usize;

/// Default vertex cap for materializing a scheduling graph.
pub const DEFAULT_GRAPH_CAP: usize = 200_000;

/// Relative slack used when comparing a vertex weight against its
/// neighbourhood average.
const Q_TOLERANCE: f64 = 1e-9;

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Lexicographic `k`-combinations of `0..n`.
#[derive(Debug, Clone)]
pub struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            current: (k <= n).then(|| (0..k).collect()),
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let cur = self.current.as_mut().unwrap();
        let k = cur.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if cur[i] < self.n - k + i {
                cur[i] += 1;
                for j in i + 1..k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleVertex {
    /// Sorted, distinct.
    pub devices: Vec<DeviceId>,
    /// Zero-based round index.
    pub round: usize,
    pub weight: f64,
}

impl ScheduleVertex {
    fn intersects(&self, other: &ScheduleVertex) -> bool {
        // Both sides are sorted.
        let (mut i, mut j) = (0, 0);
        while i < self.devices.len() && j < other.devices.len() {
            match self.devices[i].cmp(&other.devices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }
}

/// Assignment of device groups to rounds; `rounds[t]` is the sorted group of
/// round `t` (possibly empty).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SchedulePattern {
    pub rounds: Vec<Vec<DeviceId>>,
}

impl SchedulePattern {
    pub fn empty(rounds: usize) -> Self {
        Self {
            rounds: vec![Vec::new(); rounds],
        }
    }

    pub fn populated_rounds(&self) -> usize {
        self.rounds.iter().filter(|r| !r.is_empty()).count()
    }

    pub fn scheduled_devices(&self) -> Vec<DeviceId> {
        let mut all: Vec<_> = self.rounds.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }

    /// Binary indicators `Lambda[m][t]`.
    pub fn indicators(&self, devices: usize) -> Vec<Vec<bool>> {
        let mut lambda = vec![vec![false; self.rounds.len()]; devices];
        for (t, group) in self.rounds.iter().enumerate() {
            for &m in group {
                if m < devices {
                    lambda[m][t] = true;
                }
            }
        }
        lambda
    }
}

/// One line per round, `t: m1,m2,...`, rounds counted from 1.
impl fmt::Display for SchedulePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (t, group) in self.rounds.iter().enumerate() {
            let ids: Vec<String> = group.iter().map(|m| m.to_string()).collect();
            writeln!(f, "{}: {}", t + 1, ids.join(","))?;
        }
        Ok(())
    }
}

impl FromStr for SchedulePattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut rounds = Vec::new();
        for (lineno, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |why: &str| Error::domain(format!("schedule line {}: {why}", lineno + 1));
            let (t, rest) = line.split_once(':').ok_or_else(|| bad("missing ':'"))?;
            let t: usize = t.trim().parse().map_err(|_| bad("round is not an integer"))?;
            if t != rounds.len() + 1 {
                return Err(bad("rounds must be listed in order starting at 1"));
            }
            let mut group = Vec::new();
            for id in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                group.push(id.parse().map_err(|_| bad("device id is not an integer"))?);
            }
            rounds.push(group);
        }
        Ok(SchedulePattern { rounds })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// C1: a device appears in two rounds.
    RepeatedDevice {
        device: DeviceId,
        first_round: usize,
        second_round: usize,
    },
    /// C1 within a single round.
    DuplicateInRound {
        round: usize,
        device: DeviceId,
    },
    /// C2: more than `K` devices in a round.
    RoundOverfull {
        round: usize,
        count: usize,
    },
    DeviceOutOfRange {
        round: usize,
        device: DeviceId,
    },
    RoundCount {
        expected: usize,
        found: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RepeatedDevice {
                device,
                first_round,
                second_round,
            } => write!(
                f,
                "C1: device {device} scheduled in rounds {} and {}",
                first_round + 1,
                second_round + 1
            ),
            Violation::DuplicateInRound { round, device } => {
                write!(f, "C1: device {device} listed twice in round {}", round + 1)
            }
            Violation::RoundOverfull { round, count } => {
                write!(f, "C2: round {} has {count} devices", round + 1)
            }
            Violation::DeviceOutOfRange { round, device } => {
                write!(f, "device {device} in round {} does not exist", round + 1)
            }
            Violation::RoundCount { expected, found } => {
                write!(f, "expected {expected} rounds, found {found}")
            }
        }
    }
}

/// Checks the once-per-device (C1) and at-most-K-per-round (C2) constraints.
pub fn validate_pattern(pattern: &SchedulePattern, devices: usize, group_size: usize, rounds: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    if pattern.rounds.len() != rounds {
        out.push(Violation::RoundCount {
            expected: rounds,
            found: pattern.rounds.len(),
        });
    }
    let mut seen: HashMap<DeviceId, usize> = HashMap::new();
    for (t, group) in pattern.rounds.iter().enumerate() {
        if group.len() > group_size {
            out.push(Violation::RoundOverfull {
                round: t,
                count: group.len(),
            });
        }
        for &m in group {
            if m >= devices {
                out.push(Violation::DeviceOutOfRange { round: t, device: m });
            }
            match seen.get(&m) {
                Some(&first) if first == t => out.push(Violation::DuplicateInRound { round: t, device: m }),
                Some(&first) => out.push(Violation::RepeatedDevice {
                    device: m,
                    first_round: first,
                    second_round: t,
                }),
                None => {
                    seen.insert(m, t);
                }
            }
        }
    }
    out
}

/// Caches a vertex weight function by `(group, round)`.
pub struct MemoizedWeight<F> {
    inner: F,
    cache: Mutex<HashMap<(Vec<DeviceId>, usize), f64>>,
}

impl<F> MemoizedWeight<F>
where
    F: Fn(&[DeviceId], usize) -> f64,
{
    pub fn new(inner: F) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn get(&self, group: &[DeviceId], round: usize) -> f64 {
        let key = (group.to_vec(), round);
        if let Some(&w) = self.cache.lock().unwrap().get(&key) {
            return w;
        }
        let w = (self.inner)(group, round);
        self.cache.lock().unwrap().insert(key, w);
        w
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

/// An explicit undirected vertex-weighted graph.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    pub weights: Vec<f64>,
    /// Sorted neighbour lists.
    pub adjacency: Vec<Vec<usize>>,
}

impl WeightedGraph {
    pub fn new(weights: Vec<f64>, edges: &[(usize, usize)]) -> Self {
        let mut adjacency = vec![Vec::new(); weights.len()];
        for &(a, b) in edges {
            if a != b {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self { weights, adjacency }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_independent(&self, set: &[usize]) -> bool {
        set.iter().enumerate().all(|(i, &a)| {
            set[i + 1..]
                .iter()
                .all(|b| a != *b && self.adjacency[a].binary_search(b).is_err())
        })
    }
}

/// Result of the degree-weighted greedy selection.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOutcome {
    /// Selected vertices in selection order.
    pub selected: Vec<usize>,
    pub total_weight: f64,
    /// Iterations where the candidate set came up empty and the rule fell
    /// back to all remaining vertices.
    pub fallbacks: usize,
}

/// Degree-weighted greedy MWIS on an explicit graph. Each iteration keeps the
/// vertices whose weight reaches `sum_{u in J(v)} w(u) / (deg(u) + 1)` over
/// their closed neighbourhood `J(v)`, picks the one maximizing
/// `w(v) / (deg(v) + 1)` (lowest index on ties), and deletes `J(v)`. Degrees
/// are taken in the residual graph.
pub fn greedy_mwis(graph: &WeightedGraph) -> GreedyOutcome {
    let n = graph.len();
    let mut alive = vec![true; n];
    let mut remaining = n;
    let mut selected = Vec::new();
    let mut total = 0.0;
    let mut fallbacks = 0;
    let mut degree = vec![0usize; n];

    while remaining > 0 {
        let mut w_max: f64 = 0.0;
        for v in (0..n).filter(|&v| alive[v]) {
            degree[v] = graph.adjacency[v].iter().filter(|&&u| alive[u]).count();
            w_max = w_max.max(graph.weights[v].abs());
        }
        let tol = Q_TOLERANCE * w_max;
        let mut best_q: Option<(usize, f64)> = None;
        let mut best_any: Option<(usize, f64)> = None;
        for v in (0..n).filter(|&v| alive[v]) {
            let share = |u: usize| graph.weights[u] / (degree[u] + 1) as f64;
            let avg: f64 = share(v)
                + graph.adjacency[v]
                    .iter()
                    .filter(|&&u| alive[u])
                    .map(|&u| share(u))
                    .sum::<f64>();
            let score = share(v);
            if best_any.is_none_or(|(_, s)| score > s) {
                best_any = Some((v, score));
            }
            if graph.weights[v] + tol >= avg && best_q.is_none_or(|(_, s)| score > s) {
                best_q = Some((v, score));
            }
        }
        let (pick, _) = match best_q {
            Some(p) => p,
            None => {
                fallbacks += 1;
                best_any.expect("graph has live vertices")
            }
        };
        selected.push(pick);
        total += graph.weights[pick];
        alive[pick] = false;
        remaining -= 1;
        for &u in &graph.adjacency[pick] {
            if alive[u] {
                alive[u] = false;
                remaining -= 1;
            }
        }
    }
    GreedyOutcome {
        selected,
        total_weight: total,
        fallbacks,
    }
}

/// Limits for the exhaustive oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactLimits {
    pub max_vertices: usize,
    pub max_rounds: usize,
}

impl Default for ExactLimits {
    fn default() -> Self {
        Self {
            max_vertices: 5000,
            max_rounds: 4,
        }
    }
}

/// The full scheduling graph with its vertex weights.
#[derive(Debug, Clone)]
pub struct SchedulingGraph {
    devices: usize,
    group_size: usize,
    rounds: usize,
    per_round: usize,
    vertices: Vec<ScheduleVertex>,
}

impl SchedulingGraph {
    /// Materializes all `C(M, K) * T` vertices, evaluating `weight` for each.
    /// Vertices are ordered by round, then lexicographically by group.
    pub fn build<F>(
        devices: usize,
        group_size: usize,
        rounds: usize,
        cap: usize,
        exec: Execution,
        weight: F,
    ) -> Result<Self>
    where
        F: Fn(&[DeviceId], usize) -> f64 + Sync + Send,
    {
        if group_size == 0 || rounds == 0 {
            return Err(Error::domain("group size and round count must be positive"));
        }
        if devices < group_size * rounds {
            return Err(Error::domain(format!(
                "need M >= K*T, got M={devices}, K={group_size}, T={rounds}"
            )));
        }
        let vertices = Self::vertex_count(devices, group_size, rounds);
        if vertices > cap as u128 {
            return Err(Error::VertexCap { vertices, cap });
        }
        let groups: Vec<Vec<DeviceId>> = Combinations::new(devices, group_size).collect();
        let per_round = groups.len();
        let weights = exec::map_range(exec, per_round * rounds, |i| {
            weight(&groups[i % per_round], i / per_round)
        });
        let vertices = weights
            .into_iter()
            .enumerate()
            .map(|(i, w)| ScheduleVertex {
                devices: groups[i % per_round].clone(),
                round: i / per_round,
                weight: w,
            })
            .collect();
        Ok(Self {
            devices,
            group_size,
            rounds,
            per_round,
            vertices,
        })
    }

    /// `C(M, K) * T`.
    pub fn vertex_count(devices: usize, group_size: usize, rounds: usize) -> u128 {
        binomial(devices, group_size).saturating_mul(rounds as u128)
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn vertices(&self) -> &[ScheduleVertex] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Index of the vertex scheduling `group` (sorted) in `round`.
    pub fn find(&self, group: &[DeviceId], round: usize) -> Option<usize> {
        let start = round * self.per_round;
        self.vertices
            .get(start..start + self.per_round)?
            .iter()
            .position(|v| v.devices == group)
            .map(|i| start + i)
    }

    /// The edge rule: shared device or same round.
    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        if a == b {
            return false;
        }
        let (va, vb) = (&self.vertices[a], &self.vertices[b]);
        va.round == vb.round || va.intersects(vb)
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        (0..self.len()).filter(|&u| self.adjacent(v, u)).collect()
    }

    /// Explicit copy of the graph. Quadratic in the vertex count.
    pub fn to_weighted_graph(&self) -> WeightedGraph {
        let n = self.len();
        let adjacency = (0..n).map(|v| self.neighbors(v)).collect();
        WeightedGraph {
            weights: self.vertices.iter().map(|v| v.weight).collect(),
            adjacency,
        }
    }

    pub fn edge_count(&self) -> usize {
        let n = self.len();
        (0..n)
            .map(|a| (a + 1..n).filter(|&b| self.adjacent(a, b)).count())
            .sum()
    }

    pub fn pattern_of(&self, selected: &[usize]) -> SchedulePattern {
        let mut pattern = SchedulePattern::empty(self.rounds);
        for &v in selected {
            let vx = &self.vertices[v];
            pattern.rounds[vx.round].extend_from_slice(&vx.devices);
            pattern.rounds[vx.round].sort_unstable();
        }
        pattern
    }

    pub fn total_weight(&self, selected: &[usize]) -> f64 {
        selected.iter().map(|&v| self.vertices[v].weight).sum()
    }

    /// All maximal independent sets that contain `v`, each sorted, listed in
    /// lexicographic order. Exponential; for small graphs.
    pub fn maximal_independent_sets_containing(&self, v: usize) -> Vec<Vec<usize>> {
        let candidates: Vec<usize> = (0..self.len()).filter(|&u| u != v && !self.adjacent(u, v)).collect();
        let mut out = Vec::new();
        let mut current = vec![v];
        self.extend_maximal(&candidates, 0, &mut current, &mut out);
        for set in &mut out {
            set.sort_unstable();
        }
        out.sort();
        out
    }

    fn extend_maximal(&self, candidates: &[usize], from: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let mut extended = false;
        for i in from..candidates.len() {
            let u = candidates[i];
            if current.iter().all(|&c| !self.adjacent(c, u)) {
                extended = true;
                current.push(u);
                self.extend_maximal(candidates, i + 1, current, out);
                current.pop();
            }
        }
        if !extended {
            // Maximal only if no skipped candidate could still be added.
            let maximal = (0..self.len())
                .filter(|u| !current.contains(u))
                .all(|u| current.iter().any(|&c| self.adjacent(c, u)));
            if maximal {
                out.push(current.clone());
            }
        }
    }

    /// Degree-weighted greedy MWIS specialised to the scheduling graph.
    ///
    /// Every residual graph is again the full graph over the remaining devices
    /// and rounds, so all vertices share one degree and the closed
    /// neighbourhood weight of `(S, t)` is the whole of round `t` plus, for
    /// each other round, everything not disjoint from `S`. Disjoint sums come
    /// from inclusion-exclusion over the subsets of `S`, which keeps each
    /// iteration linear in the vertex count.
    pub fn greedy_mwis(&self) -> GreedyOutcome {
        let k = self.group_size;
        let mut alive_devices = vec![true; self.devices];
        let mut alive_rounds = vec![true; self.rounds];
        let mut selected = Vec::new();
        let mut total = 0.0;
        let mut fallbacks = 0;

        // Subset keys of every group, shared across rounds.
        let subsets: Vec<Vec<(usize, Vec<DeviceId>)>> = self.vertices[..self.per_round]
            .iter()
            .map(|v| proper_subsets(&v.devices))
            .collect();

        loop {
            let n_alive = alive_devices.iter().filter(|&&a| a).count();
            let r_alive = alive_rounds.iter().filter(|&&a| a).count();
            if n_alive < k || r_alive == 0 {
                break;
            }
            let groups = binomial(n_alive, k) as f64;
            let disjoint = binomial(n_alive - k, k) as f64;
            let degree = (groups - 1.0) + (r_alive as f64 - 1.0) * (groups - disjoint);

            let live: Vec<usize> = (0..self.len())
                .filter(|&i| {
                    let v = &self.vertices[i];
                    alive_rounds[v.round] && v.devices.iter().all(|&m| alive_devices[m])
                })
                .collect();

            // Per-round and all-round sums of weights of groups containing a
            // given subset.
            let mut per_round: Vec<HashMap<&[DeviceId], f64>> = vec![HashMap::new(); self.rounds];
            let mut all: HashMap<&[DeviceId], f64> = HashMap::new();
            let mut w_max: f64 = 0.0;
            for &i in &live {
                let v = &self.vertices[i];
                w_max = w_max.max(v.weight.abs());
                for (_, sub) in &subsets[i % self.per_round] {
                    *per_round[v.round].entry(sub.as_slice()).or_default() += v.weight;
                    *all.entry(sub.as_slice()).or_default() += v.weight;
                }
            }
            let tol = Q_TOLERANCE * w_max;
            let disjoint_sum = |sums: &HashMap<&[DeviceId], f64>, i: usize| -> f64 {
                subsets[i % self.per_round]
                    .iter()
                    .map(|(size, sub)| {
                        let s = sums.get(sub.as_slice()).copied().unwrap_or(0.0);
                        if size % 2 == 0 {
                            s
                        } else {
                            -s
                        }
                    })
                    .sum()
            };

            let mut best_q: Option<(usize, f64)> = None;
            let mut best_any: Option<(usize, f64)> = None;
            for &i in &live {
                let v = &self.vertices[i];
                let round_sums = &per_round[v.round];
                let round_total = round_sums[&[][..]];
                let all_total = all[&[][..]];
                let intersecting_all = all_total - disjoint_sum(&all, i);
                let intersecting_here = round_total - disjoint_sum(round_sums, i);
                let closed = round_total + (intersecting_all - intersecting_here);
                let avg = closed / (degree + 1.0);
                let score = v.weight / (degree + 1.0);
                if best_any.is_none_or(|(_, s)| score > s) {
                    best_any = Some((i, score));
                }
                if v.weight + tol >= avg && best_q.is_none_or(|(_, s)| score > s) {
                    best_q = Some((i, score));
                }
            }
            let (pick, _) = match best_q {
                Some(p) => p,
                None => {
                    fallbacks += 1;
                    best_any.expect("live vertices exist")
                }
            };
            let v = &self.vertices[pick];
            selected.push(pick);
            total += v.weight;
            alive_rounds[v.round] = false;
            for &m in &v.devices {
                alive_devices[m] = false;
            }
        }
        GreedyOutcome {
            selected,
            total_weight: total,
            fallbacks,
        }
    }

    /// Exhaustive maximum-weight independent set among sets of exactly `T`
    /// vertices (one group per round, pairwise disjoint). Ties resolve to the
    /// lexicographically least vertex sequence.
    pub fn exact_mwis(&self, limits: ExactLimits) -> Result<(Vec<usize>, f64)> {
        if self.len() > limits.max_vertices || self.rounds > limits.max_rounds {
            return Err(Error::VertexCap {
                vertices: self.len() as u128,
                cap: limits.max_vertices,
            });
        }
        // Optimistic completion: best weight of each remaining round.
        let mut round_best = vec![f64::NEG_INFINITY; self.rounds];
        for v in &self.vertices {
            round_best[v.round] = round_best[v.round].max(v.weight);
        }
        let mut tail = vec![0.0; self.rounds + 1];
        for t in (0..self.rounds).rev() {
            tail[t] = tail[t + 1] + round_best[t];
        }
        let mut search = ExactSearch {
            graph: self,
            tail,
            used: vec![false; self.devices],
            current: Vec::with_capacity(self.rounds),
            best: None,
        };
        search.descend(0, 0.0);
        search
            .best
            .ok_or_else(|| Error::domain("no independent set with T vertices exists"))
    }
}

struct ExactSearch<'a> {
    graph: &'a SchedulingGraph,
    tail: Vec<f64>,
    used: Vec<bool>,
    current: Vec<usize>,
    best: Option<(Vec<usize>, f64)>,
}

impl ExactSearch<'_> {
    fn descend(&mut self, round: usize, acc: f64) {
        if round == self.graph.rounds {
            if self.best.as_ref().is_none_or(|(_, b)| acc > *b) {
                self.best = Some((self.current.clone(), acc));
            }
            return;
        }
        if let Some((_, b)) = &self.best {
            if acc + self.tail[round] <= *b {
                return;
            }
        }
        let start = round * self.graph.per_round;
        for i in start..start + self.graph.per_round {
            let v = &self.graph.vertices[i];
            if v.devices.iter().any(|&m| self.used[m]) {
                continue;
            }
            for &m in &v.devices {
                self.used[m] = true;
            }
            self.current.push(i);
            self.descend(round + 1, acc + v.weight);
            self.current.pop();
            for &m in &v.devices {
                self.used[m] = false;
            }
        }
    }
}

/// All subsets of a sorted group, with their sizes (including the empty set
/// and the group itself).
fn proper_subsets(group: &[DeviceId]) -> Vec<(usize, Vec<DeviceId>)> {
    let k = group.len();
    (0u32..1 << k)
        .map(|mask| {
            let sub: Vec<DeviceId> = (0..k).filter(|i| mask & (1 << i) != 0).map(|i| group[i]).collect();
            (sub.len(), sub)
        })
        .collect()
}

/// Round-by-round scheduler that never materializes the graph. For each round
/// it grows the group one device at a time, adding the unscheduled device that
/// maximizes the weight of the enlarged group (lowest id on ties).
pub fn sequential_schedule<F>(
    devices: usize,
    group_size: usize,
    rounds: usize,
    exec: Execution,
    weight: F,
) -> SchedulePattern
where
    F: Fn(&[DeviceId], usize) -> f64 + Sync + Send,
{
    let mut pattern = SchedulePattern::empty(rounds);
    sequential_fill(&mut pattern, devices, group_size, exec, weight);
    pattern
}

/// Fills the empty rounds of `pattern` the way [`sequential_schedule`] does,
/// drawing only on devices the pattern does not already use. Returns the
/// rounds filled.
pub fn sequential_fill<F>(
    pattern: &mut SchedulePattern,
    devices: usize,
    group_size: usize,
    exec: Execution,
    weight: F,
) -> Vec<usize>
where
    F: Fn(&[DeviceId], usize) -> f64 + Sync + Send,
{
    let mut available = vec![true; devices];
    for m in pattern.scheduled_devices() {
        if m < devices {
            available[m] = false;
        }
    }
    let mut filled = Vec::new();
    for t in 0..pattern.rounds.len() {
        if !pattern.rounds[t].is_empty() {
            continue;
        }
        let mut group: Vec<DeviceId> = Vec::with_capacity(group_size);
        for _ in 0..group_size {
            let candidates: Vec<DeviceId> = (0..devices).filter(|&m| available[m] && !group.contains(&m)).collect();
            if candidates.is_empty() {
                break;
            }
            let scores = exec::map(exec, &candidates, |&m| {
                let mut trial = group.clone();
                trial.push(m);
                trial.sort_unstable();
                weight(&trial, t)
            });
            let mut best = 0;
            for i in 1..candidates.len() {
                if scores[i] > scores[best] {
                    best = i;
                }
            }
            group.push(candidates[best]);
        }
        group.sort_unstable();
        for &m in &group {
            available[m] = false;
        }
        if !group.is_empty() {
            filled.push(t);
        }
        pattern.rounds[t] = group;
    }
    filled
}
