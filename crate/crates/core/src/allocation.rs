//! Hub allocation: choose which candidates become hubs (deployment `x`) and
//! which hub serves each client (assignment `y`) to minimize
//! `C_B = C_M + omega * C_S`.
//!
//! Given a deployment the optimal assignment is closed-form (each client picks
//! the hub minimizing `zeta + omega * sum(delta to deployed hubs)`), so both
//! solvers search over deployments only. The exact solver is a branch and
//! bound over `x`; the approximate one is the randomized double greedy run on
//! `f_hat(X) = f_ub - f(X)`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::topology::{generate_small_world, hop_matrix, HopMatrix, NodeId};

pub const DEFAULT_EXACT_BOUND: usize = 20;

/// Pruning slack so floating point noise in the bound never cuts an optimum.
const PRUNE_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid cost: {0}")]
    InvalidCost(String),
    #[error("candidates must be listed in strictly increasing id order")]
    UnsortedCandidates,
    #[error("instance has no candidates")]
    NoCandidates,
    #[error("deployment is empty")]
    EmptyDeployment,
    #[error("infeasible plan: {0}")]
    Infeasible(String),
    #[error("{candidates} candidates exceed the exact solver bound of {bound}; use the approximate solver")]
    TooLarge { candidates: usize, bound: usize },
    #[error("linearization witness violated: {0}")]
    WitnessViolation(String),
    #[error("network generation failed: {0}")]
    Network(String),
}

pub type Result<T> = std::result::Result<T, AllocError>;

/// Per-hop cost multipliers used to derive `zeta`, `delta` and `eps` from hop counts.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct HopCostRates {
    pub zeta_per_hop: f64,
    pub delta_per_hop: f64,
    pub eps_per_hop: f64,
}

impl Default for HopCostRates {
    fn default() -> Self {
        HopCostRates { zeta_per_hop: 0.02, delta_per_hop: 0.01, eps_per_hop: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AllocationInstance {
    clients: Vec<NodeId>,
    candidates: Vec<NodeId>,
    /// `zeta[m * z + n]`
    zeta: Vec<f64>,
    /// `delta[n * z + l]`
    delta: Vec<f64>,
    /// `eps[n * z + l]`
    eps: Vec<f64>,
    omega: f64,
    /// 1.0 sums ordered hub pairs, 0.5 counts each unordered pair once.
    pair_scale: f64,
}

impl AllocationInstance {
    pub fn new(
        clients: Vec<NodeId>,
        candidates: Vec<NodeId>,
        zeta: Vec<Vec<f64>>,
        delta: Vec<Vec<f64>>,
        eps: Vec<Vec<f64>>,
        omega: f64,
    ) -> Result<Self> {
        let (m, z) = (clients.len(), candidates.len());
        if candidates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AllocError::UnsortedCandidates);
        }
        if zeta.len() != m || zeta.iter().any(|r| r.len() != z) {
            return Err(AllocError::Dimension(format!("zeta must be {m} x {z}")));
        }
        for (name, mat) in [("delta", &delta), ("eps", &eps)] {
            if mat.len() != z || mat.iter().any(|r| r.len() != z) {
                return Err(AllocError::Dimension(format!("{name} must be {z} x {z}")));
            }
            for n in 0..z {
                if mat[n][n] != 0.0 {
                    return Err(AllocError::InvalidCost(format!("{name} diagonal must be zero")));
                }
                for l in 0..z {
                    if mat[n][l] != mat[l][n] {
                        return Err(AllocError::InvalidCost(format!("{name} must be symmetric")));
                    }
                }
            }
        }
        let all = zeta.iter().chain(&delta).chain(&eps).flatten();
        if all.clone().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(AllocError::InvalidCost("costs must be finite and nonnegative".into()));
        }
        if !(omega.is_finite() && omega >= 0.0) {
            return Err(AllocError::InvalidCost(format!("omega = {omega} must be nonnegative")));
        }
        Ok(AllocationInstance {
            clients,
            candidates,
            zeta: zeta.into_iter().flatten().collect(),
            delta: delta.into_iter().flatten().collect(),
            eps: eps.into_iter().flatten().collect(),
            omega,
            pair_scale: 1.0,
        })
    }

    /// Costs proportional to hop distance in an existing network.
    pub fn from_hops(
        clients: Vec<NodeId>,
        candidates: Vec<NodeId>,
        hops: &HopMatrix,
        rates: HopCostRates,
        omega: f64,
    ) -> Result<Self> {
        let h = |a: NodeId, b: NodeId| f64::from(hops.get(a, b));
        let zeta =
            clients.iter().map(|&m| candidates.iter().map(|&n| rates.zeta_per_hop * h(m, n)).collect()).collect();
        let pairwise = |rate: f64| -> Vec<Vec<f64>> {
            candidates.iter().map(|&n| candidates.iter().map(|&l| rate * h(n, l)).collect()).collect()
        };
        let delta = pairwise(rates.delta_per_hop);
        let eps = pairwise(rates.eps_per_hop);
        Self::new(clients, candidates, zeta, delta, eps, omega)
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    /// Count each hub pair once in `C_S` instead of once per ordering.
    pub fn with_unordered_pairs(mut self, unordered: bool) -> Self {
        self.pair_scale = if unordered { 0.5 } else { 1.0 };
        self
    }

    pub fn clients(&self) -> &[NodeId] {
        &self.clients
    }

    pub fn candidates(&self) -> &[NodeId] {
        &self.candidates
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn zeta(&self, m: usize, n: usize) -> f64 {
        self.zeta[m * self.candidates.len() + n]
    }

    pub fn delta(&self, n: usize, l: usize) -> f64 {
        self.delta[n * self.candidates.len() + l]
    }

    pub fn eps(&self, n: usize, l: usize) -> f64 {
        self.eps[n * self.candidates.len() + l]
    }

    pub fn pair_scale(&self) -> f64 {
        self.pair_scale
    }

    /// True when every off-diagonal `delta` is the same value.
    pub fn has_uniform_delta(&self) -> bool {
        let z = self.candidates.len();
        let mut off = (0..z).flat_map(|n| (0..z).filter(move |&l| l != n).map(move |l| (n, l)));
        match off.next() {
            None => true,
            Some((n, l)) => {
                let d = self.delta(n, l);
                off.all(|(a, b)| self.delta(a, b) == d)
            }
        }
    }

    fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }
}

/// `x`: which candidates are deployed, indexed like `AllocationInstance::candidates`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DeploymentPlan {
    deployed: Vec<bool>,
}

impl DeploymentPlan {
    pub fn new(deployed: Vec<bool>) -> Self {
        DeploymentPlan { deployed }
    }

    pub fn from_indices(z: usize, indices: &[usize]) -> Self {
        let mut deployed = vec![false; z];
        for &i in indices {
            deployed[i] = true;
        }
        DeploymentPlan { deployed }
    }

    pub fn is_deployed(&self, n: usize) -> bool {
        self.deployed[n]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.deployed
    }

    pub fn hub_count(&self) -> usize {
        self.deployed.iter().filter(|d| **d).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.deployed.iter().enumerate().filter(|(_, d)| **d).map(|(i, _)| i).collect()
    }

    pub fn len(&self) -> usize {
        self.deployed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deployed.is_empty()
    }
}

/// `y`: the candidate index serving each client. Storing one hub per client
/// makes `sum_n y_mn = 1` hold by construction.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AssignmentPlan {
    hub: Vec<usize>,
}

impl AssignmentPlan {
    pub fn new(hub: Vec<usize>) -> Self {
        AssignmentPlan { hub }
    }

    pub fn hub_of(&self, client: usize) -> usize {
        self.hub[client]
    }

    pub fn y(&self, client: usize, candidate: usize) -> bool {
        self.hub[client] == candidate
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.hub
    }

    /// Clients served by each candidate.
    pub fn loads(&self, z: usize) -> Vec<usize> {
        let mut loads = vec![0; z];
        for &h in &self.hub {
            loads[h] += 1;
        }
        loads
    }
}

fn check_assignment(inst: &AllocationInstance, y: &AssignmentPlan) -> Result<()> {
    if y.hub.len() != inst.num_clients() {
        return Err(AllocError::Infeasible(format!(
            "assignment covers {} clients, instance has {}",
            y.hub.len(),
            inst.num_clients()
        )));
    }
    if let Some(&bad) = y.hub.iter().find(|&&h| h >= inst.num_candidates()) {
        return Err(AllocError::Infeasible(format!("candidate index {bad} out of range")));
    }
    Ok(())
}

fn check_plans(inst: &AllocationInstance, x: &DeploymentPlan, y: &AssignmentPlan) -> Result<()> {
    check_assignment(inst, y)?;
    if x.len() != inst.num_candidates() {
        return Err(AllocError::Dimension(format!("deployment has {} entries", x.len())));
    }
    for (m, &h) in y.hub.iter().enumerate() {
        if !x.is_deployed(h) {
            return Err(AllocError::Infeasible(format!("client {m} assigned to undeployed candidate {h}")));
        }
    }
    Ok(())
}

/// `C_M(y) = sum_m sum_n zeta_mn y_mn`.
pub fn management_cost(inst: &AllocationInstance, y: &AssignmentPlan) -> Result<f64> {
    check_assignment(inst, y)?;
    Ok(management_cost_unchecked(inst, y))
}

fn management_cost_unchecked(inst: &AllocationInstance, y: &AssignmentPlan) -> f64 {
    y.hub.iter().enumerate().map(|(m, &n)| inst.zeta(m, n)).sum()
}

/// `C_S(x, y) = sum_{n != l} x_n x_l (delta_nl * load_n + eps_nl)`.
pub fn synchronization_cost(inst: &AllocationInstance, x: &DeploymentPlan, y: &AssignmentPlan) -> Result<f64> {
    check_plans(inst, x, y)?;
    Ok(sync_cost_unchecked(inst, x, y))
}

fn sync_cost_unchecked(inst: &AllocationInstance, x: &DeploymentPlan, y: &AssignmentPlan) -> f64 {
    let z = inst.num_candidates();
    let loads = y.loads(z);
    let mut total = 0.0;
    for n in 0..z {
        if !x.deployed[n] {
            continue;
        }
        for l in 0..z {
            if l != n && x.deployed[l] {
                total += inst.delta(n, l) * loads[n] as f64 + inst.eps(n, l);
            }
        }
    }
    inst.pair_scale * total
}

/// `C_B = C_M + omega * C_S`.
pub fn balanced_cost(inst: &AllocationInstance, x: &DeploymentPlan, y: &AssignmentPlan) -> Result<f64> {
    check_plans(inst, x, y)?;
    Ok(balanced_cost_unchecked(inst, x, y))
}

fn balanced_cost_unchecked(inst: &AllocationInstance, x: &DeploymentPlan, y: &AssignmentPlan) -> f64 {
    management_cost_unchecked(inst, y) + inst.omega * sync_cost_unchecked(inst, x, y)
}

/// Best assignment for a fixed deployment; ties go to the lowest candidate id.
pub fn optimal_assignment(inst: &AllocationInstance, x: &DeploymentPlan) -> Result<AssignmentPlan> {
    if x.len() != inst.num_candidates() {
        return Err(AllocError::Dimension(format!("deployment has {} entries", x.len())));
    }
    if x.hub_count() == 0 {
        return Err(AllocError::EmptyDeployment);
    }
    Ok(optimal_assignment_unchecked(inst, &x.deployed))
}

fn optimal_assignment_unchecked(inst: &AllocationInstance, deployed: &[bool]) -> AssignmentPlan {
    let z = inst.num_candidates();
    let sync: Vec<f64> = (0..z)
        .map(|n| {
            let s: f64 = (0..z).filter(|&l| deployed[l]).map(|l| inst.delta(n, l)).sum();
            inst.omega * inst.pair_scale * s
        })
        .collect();
    let hub = (0..inst.num_clients())
        .map(|m| {
            let mut best: Option<(usize, f64)> = None;
            for n in (0..z).filter(|&n| deployed[n]) {
                let c = sync[n] + inst.zeta(m, n);
                if best.is_none_or(|(_, b)| c < b) {
                    best = Some((n, c));
                }
            }
            best.expect("deployment is nonempty").0
        })
        .collect();
    AssignmentPlan { hub }
}

/// Auxiliary binaries of the linearized program: `theta_nl = x_n x_l` and
/// `phi_nlm = theta_nl y_mn`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedWitness {
    z: usize,
    m: usize,
    theta: Vec<u8>,
    phi: Vec<u8>,
}

impl LinearizedWitness {
    pub fn from_plans(inst: &AllocationInstance, x: &DeploymentPlan, y: &AssignmentPlan) -> Self {
        let (z, m) = (inst.num_candidates(), inst.num_clients());
        let mut theta = vec![0u8; z * z];
        let mut phi = vec![0u8; z * z * m];
        for n in 0..z {
            for l in 0..z {
                let t = u8::from(x.deployed[n] && x.deployed[l]);
                theta[n * z + l] = t;
                for c in 0..m {
                    phi[(n * z + l) * m + c] = t & u8::from(y.y(c, n));
                }
            }
        }
        LinearizedWitness { z, m, theta, phi }
    }

    pub fn theta(&self, n: usize, l: usize) -> u8 {
        self.theta[n * self.z + l]
    }

    pub fn phi(&self, n: usize, l: usize, client: usize) -> u8 {
        self.phi[(n * self.z + l) * self.m + client]
    }

    /// Checks the six linear constraints tying `theta` and `phi` to `(x, y)`.
    pub fn check(&self, x: &DeploymentPlan, y: &AssignmentPlan) -> Result<()> {
        let xi = |n: usize| i32::from(x.deployed[n]);
        for n in 0..self.z {
            for l in 0..self.z {
                let t = i32::from(self.theta(n, l));
                if t > xi(n) || t > xi(l) || t < xi(n) + xi(l) - 1 {
                    return Err(AllocError::WitnessViolation(format!("theta[{n}][{l}] = {t}")));
                }
                for c in 0..self.m {
                    let p = i32::from(self.phi(n, l, c));
                    let ymn = i32::from(y.y(c, n));
                    if p > t || p > ymn || p < t + ymn - 1 {
                        return Err(AllocError::WitnessViolation(format!("phi[{n}][{l}][{c}] = {p}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// `sum_n sum_l (sum_m delta_nl phi_nlm + eps_nl theta_nl)`.
    pub fn linearized_sync_cost(&self, inst: &AllocationInstance) -> f64 {
        let mut total = 0.0;
        for n in 0..self.z {
            for l in 0..self.z {
                let d = inst.delta(n, l);
                let load: f64 = (0..self.m).map(|c| d * f64::from(self.phi(n, l, c))).sum();
                total += load + inst.eps(n, l) * f64::from(self.theta(n, l));
            }
        }
        inst.pair_scale * total
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub deployment: DeploymentPlan,
    pub assignment: AssignmentPlan,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactSolution {
    pub solution: Solution,
    pub witness: LinearizedWitness,
    /// Search nodes visited by the branch and bound.
    pub nodes: u64,
}

pub fn solve_exact(inst: &AllocationInstance) -> Result<ExactSolution> {
    solve_exact_bounded(inst, DEFAULT_EXACT_BOUND)
}

pub fn solve_exact_bounded(inst: &AllocationInstance, bound: usize) -> Result<ExactSolution> {
    let z = inst.num_candidates();
    if z == 0 {
        return Err(AllocError::NoCandidates);
    }
    if z > bound {
        return Err(AllocError::TooLarge { candidates: z, bound });
    }
    let mut search = BranchAndBound { inst, best: None, nodes: 0 };
    for n in 0..z {
        let mut single = vec![false; z];
        single[n] = true;
        search.offer(&single);
    }
    let mut state = vec![Decision::Open; z];
    search.descend(&mut state, 0);

    let (deployed, _) = search.best.take().expect("a singleton incumbent always exists");
    let deployment = DeploymentPlan { deployed };
    let assignment = optimal_assignment_unchecked(inst, &deployment.deployed);
    let cost = balanced_cost_unchecked(inst, &deployment, &assignment);
    let witness = LinearizedWitness::from_plans(inst, &deployment, &assignment);
    witness.check(&deployment, &assignment)?;
    let exact = sync_cost_unchecked(inst, &deployment, &assignment);
    let linear = witness.linearized_sync_cost(inst);
    if (exact - linear).abs() > 1e-9 * exact.abs().max(1.0) {
        return Err(AllocError::WitnessViolation(format!("linearized C_S {linear} != C_S {exact}")));
    }
    Ok(ExactSolution { solution: Solution { deployment, assignment, cost }, witness, nodes: search.nodes })
}

#[derive(Copy, Clone, PartialEq, Eq)]
enum Decision {
    Open,
    In,
    Out,
}

struct BranchAndBound<'a> {
    inst: &'a AllocationInstance,
    best: Option<(Vec<bool>, f64)>,
    nodes: u64,
}

impl BranchAndBound<'_> {
    fn offer(&mut self, deployed: &[bool]) {
        let f = set_function_f(self.inst, deployed);
        if self.best.as_ref().is_none_or(|(_, b)| f < *b) {
            self.best = Some((deployed.to_vec(), f));
        }
    }

    /// Admissible bound: every client pays at least its cheapest hub among the
    /// not-excluded candidates given the hubs already committed, and the
    /// constant sync terms among committed hubs are unavoidable.
    fn lower_bound(&self, state: &[Decision]) -> Option<f64> {
        let inst = self.inst;
        let z = inst.num_candidates();
        let committed: Vec<bool> = state.iter().map(|d| *d == Decision::In).collect();
        let allowed: Vec<usize> = (0..z).filter(|&n| state[n] != Decision::Out).collect();
        if allowed.is_empty() {
            return None;
        }
        let sync: Vec<f64> = (0..z)
            .map(|n| {
                let s: f64 = (0..z).filter(|&l| committed[l]).map(|l| inst.delta(n, l)).sum();
                inst.omega * inst.pair_scale * s
            })
            .collect();
        let mut lb = 0.0;
        for m in 0..inst.num_clients() {
            lb += allowed.iter().map(|&n| sync[n] + inst.zeta(m, n)).fold(f64::INFINITY, f64::min);
        }
        let mut eps = 0.0;
        for n in (0..z).filter(|&n| committed[n]) {
            for l in (0..z).filter(|&l| l != n && committed[l]) {
                eps += inst.eps(n, l);
            }
        }
        Some(lb + inst.omega * inst.pair_scale * eps)
    }

    fn descend(&mut self, state: &mut Vec<Decision>, depth: usize) {
        self.nodes += 1;
        let Some(lb) = self.lower_bound(state) else { return };
        if let Some((_, best)) = &self.best {
            if lb > best + PRUNE_SLACK * best.abs().max(1.0) {
                return;
            }
        }
        if depth == state.len() {
            let deployed: Vec<bool> = state.iter().map(|d| *d == Decision::In).collect();
            if deployed.iter().any(|d| *d) {
                self.offer(&deployed);
            }
            return;
        }
        for choice in [Decision::In, Decision::Out] {
            state[depth] = choice;
            self.descend(state, depth + 1);
        }
        state[depth] = Decision::Open;
    }
}

/// Upper bound on `f` over all nonempty deployments.
pub fn f_upper_bound(inst: &AllocationInstance) -> f64 {
    let z = inst.num_candidates();
    let worst_mgmt: f64 = (0..inst.num_clients()).map(|m| (0..z).map(|n| inst.zeta(m, n)).fold(0.0, f64::max)).sum();
    let clients = inst.num_clients() as f64;
    let mut sync = 0.0;
    for n in 0..z {
        for l in (0..z).filter(|&l| l != n) {
            sync += inst.delta(n, l) * clients + inst.eps(n, l);
        }
    }
    worst_mgmt + inst.omega * inst.pair_scale * sync
}

/// `f(X) = C_B(x_X, y(x_X))`, with `f(empty) = f_ub`.
pub fn set_function_f(inst: &AllocationInstance, members: &[bool]) -> f64 {
    if !members.iter().any(|d| *d) {
        return f_upper_bound(inst);
    }
    let x = DeploymentPlan { deployed: members.to_vec() };
    let y = optimal_assignment_unchecked(inst, members);
    balanced_cost_unchecked(inst, &x, &y)
}

/// Randomized double greedy on `f_hat = f_ub - f`. Elements are visited in
/// candidate order; an element with no positive gain either way is added.
pub fn double_greedy(inst: &AllocationInstance, seed: u64) -> Result<Solution> {
    let z = inst.num_candidates();
    if z == 0 {
        return Err(AllocError::NoCandidates);
    }
    let fub = f_upper_bound(inst);
    let f_hat = |set: &[bool]| fub - set_function_f(inst, set);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lower = vec![false; z];
    let mut upper = vec![true; z];
    for u in 0..z {
        let base_lower = f_hat(&lower);
        lower[u] = true;
        let a = f_hat(&lower) - base_lower;
        lower[u] = false;

        let base_upper = f_hat(&upper);
        upper[u] = false;
        let b = f_hat(&upper) - base_upper;
        upper[u] = true;

        let (a, b) = (a.max(0.0), b.max(0.0));
        let include = if a + b == 0.0 { true } else { rng.random::<f64>() < a / (a + b) };
        if include {
            lower[u] = true;
        } else {
            upper[u] = false;
        }
    }
    debug_assert_eq!(lower, upper);

    let deployed = if lower.iter().any(|d| *d) {
        lower
    } else {
        let best = (0..z)
            .map(|n| {
                let mut s = vec![false; z];
                s[n] = true;
                (n, set_function_f(inst, &s))
            })
            .fold(None, |acc: Option<(usize, f64)>, (n, f)| match acc {
                Some((_, bf)) if bf <= f => acc,
                _ => Some((n, f)),
            })
            .expect("at least one candidate")
            .0;
        let mut s = vec![false; z];
        s[best] = true;
        s
    };
    let deployment = DeploymentPlan { deployed };
    let assignment = optimal_assignment_unchecked(inst, &deployment.deployed);
    let cost = balanced_cost_unchecked(inst, &deployment, &assignment);
    Ok(Solution { deployment, assignment, cost })
}

/// Instance on a seeded small-world graph with disjoint random candidate and
/// client sets and hop-proportional costs.
pub fn small_world_instance(
    nodes: usize,
    candidates: usize,
    clients: usize,
    rates: HopCostRates,
    omega: f64,
    seed: u64,
) -> Result<AllocationInstance> {
    if candidates == 0 {
        return Err(AllocError::NoCandidates);
    }
    if candidates + clients > nodes {
        return Err(AllocError::Dimension(format!("{candidates} candidates + {clients} clients exceed {nodes} nodes")));
    }
    let net = |e: crate::topology::TopologyError| AllocError::Network(e.to_string());
    let graph = generate_small_world(nodes, 4, 0.2, seed).map_err(net)?;
    let hops = hop_matrix(&graph).map_err(net)?;
    let mut ids: Vec<NodeId> = graph.nodes().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    let mut cand = ids[..candidates].to_vec();
    let mut cl = ids[candidates..candidates + clients].to_vec();
    cand.sort();
    cl.sort();
    AllocationInstance::from_hops(cl, cand, &hops, rates, omega)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SolverKind {
    Exact,
    DoubleGreedy,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Exact => "exact",
            SolverKind::DoubleGreedy => "double_greedy",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrontierPoint {
    pub omega: f64,
    pub hub_count: usize,
    pub management: f64,
    pub sync: f64,
    pub balanced: f64,
    pub solver: SolverKind,
    pub deployment: DeploymentPlan,
    pub assignment: AssignmentPlan,
    pub wall_time: f64,
}

/// Solves the instance once per `omega`. Exact when the candidate count is
/// within `exact_bound`, double greedy with `seed` otherwise.
pub fn omega_sweep(
    inst: &AllocationInstance,
    omegas: &[f64],
    exact_bound: usize,
    seed: u64,
) -> Result<Vec<FrontierPoint>> {
    omegas
        .iter()
        .map(|&omega| {
            let inst = inst.clone().with_omega(omega);
            let started = Instant::now();
            let (sol, solver) = if inst.num_candidates() <= exact_bound {
                (solve_exact_bounded(&inst, exact_bound)?.solution, SolverKind::Exact)
            } else {
                (double_greedy(&inst, seed)?, SolverKind::DoubleGreedy)
            };
            let wall_time = started.elapsed().as_secs_f64();
            let management = management_cost_unchecked(&inst, &sol.assignment);
            let sync = sync_cost_unchecked(&inst, &sol.deployment, &sol.assignment);
            Ok(FrontierPoint {
                omega,
                hub_count: sol.deployment.hub_count(),
                management,
                sync,
                balanced: sol.cost,
                solver,
                deployment: sol.deployment,
                assignment: sol.assignment,
                wall_time,
            })
        })
        .collect()
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct SupermodularityReport {
    pub checked: usize,
    pub violations: usize,
}

/// Samples `(A, B, i)` with `A ⊆ B` and `i ∉ B` and counts violations of
/// `f(A + i) - f(A) <= f(B + i) - f(B)`.
pub fn check_supermodularity(inst: &AllocationInstance, samples: usize, seed: u64) -> SupermodularityReport {
    let z = inst.num_candidates();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SupermodularityReport { checked: 0, violations: 0 };
    if z < 1 {
        return report;
    }
    for _ in 0..samples {
        let i = rng.random_range(0..z);
        let b: Vec<bool> = (0..z).map(|n| n != i && rng.random::<bool>()).collect();
        let a: Vec<bool> = b.iter().map(|&in_b| in_b && rng.random::<bool>()).collect();
        let with = |s: &[bool]| {
            let mut t = s.to_vec();
            t[i] = true;
            t
        };
        let gain_a = set_function_f(inst, &with(&a)) - set_function_f(inst, &a);
        let gain_b = set_function_f(inst, &with(&b)) - set_function_f(inst, &b);
        report.checked += 1;
        if gain_a > gain_b + 1e-9 * gain_b.abs().max(1.0) {
            report.violations += 1;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(r: std::ops::Range<u32>) -> Vec<NodeId> {
        r.map(NodeId).collect()
    }

    fn two_hub_instance() -> AllocationInstance {
        AllocationInstance::new(
            ids(0..2),
            ids(2..4),
            vec![vec![0.1, 0.3], vec![0.2, 0.4]],
            vec![vec![0.0, 0.01], vec![0.01, 0.0]],
            vec![vec![0.0, 0.05], vec![0.05, 0.0]],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn single_term_management_cost() {
        let inst =
            AllocationInstance::new(ids(0..1), ids(1..2), vec![vec![0.5]], vec![vec![0.0]], vec![vec![0.0]], 1.0)
                .unwrap();
        let y = AssignmentPlan::new(vec![0]);
        assert_eq!(management_cost(&inst, &y).unwrap(), 0.5);
    }

    #[test]
    fn sync_cost_two_hubs_hand_value() {
        let inst = two_hub_instance();
        let x = DeploymentPlan::new(vec![true, true]);
        let y = AssignmentPlan::new(vec![0, 0]);
        let cs = synchronization_cost(&inst, &x, &y).unwrap();
        assert!((cs - 0.12).abs() < 1e-15, "{cs}");
        let halved = inst.clone().with_unordered_pairs(true);
        assert!((synchronization_cost(&halved, &x, &y).unwrap() - 0.06).abs() < 1e-15);
    }

    #[test]
    fn single_hub_has_no_sync_cost() {
        let inst = two_hub_instance();
        let x = DeploymentPlan::new(vec![true, false]);
        let y = AssignmentPlan::new(vec![0, 0]);
        assert_eq!(synchronization_cost(&inst, &x, &y).unwrap(), 0.0);
    }

    #[test]
    fn balanced_cost_is_additive() {
        let inst = two_hub_instance();
        let x = DeploymentPlan::new(vec![true, true]);
        let y = AssignmentPlan::new(vec![0, 0]);
        let cm = management_cost(&inst, &y).unwrap();
        let cs = synchronization_cost(&inst, &x, &y).unwrap();
        assert_eq!(balanced_cost(&inst, &x, &y).unwrap(), cm + cs);
        let zero = inst.with_omega(0.0);
        assert_eq!(balanced_cost(&zero, &x, &y).unwrap(), cm);
    }

    #[test]
    fn infeasible_plans_rejected() {
        let inst = two_hub_instance();
        let x = DeploymentPlan::new(vec![true, false]);
        let y = AssignmentPlan::new(vec![0, 1]);
        assert!(matches!(balanced_cost(&inst, &x, &y), Err(AllocError::Infeasible(_))));
        assert!(matches!(management_cost(&inst, &AssignmentPlan::new(vec![0])), Err(AllocError::Infeasible(_))));
        assert!(matches!(management_cost(&inst, &AssignmentPlan::new(vec![0, 7])), Err(AllocError::Infeasible(_))));
    }

    #[test]
    fn instance_validation() {
        let bad_sym = AllocationInstance::new(
            ids(0..1),
            ids(1..3),
            vec![vec![0.1, 0.1]],
            vec![vec![0.0, 0.1], vec![0.2, 0.0]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            1.0,
        );
        assert!(matches!(bad_sym, Err(AllocError::InvalidCost(_))));
        let unsorted = AllocationInstance::new(
            ids(0..1),
            vec![NodeId(3), NodeId(2)],
            vec![vec![0.1, 0.1]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            1.0,
        );
        assert_eq!(unsorted, Err(AllocError::UnsortedCandidates));
        let neg_omega = two_hub_instance().omega;
        assert!(neg_omega >= 0.0);
    }

    #[test]
    fn lemma_one_picks_cheapest_and_breaks_ties_low() {
        let inst = two_hub_instance();
        let y = optimal_assignment(&inst, &DeploymentPlan::new(vec![true, true])).unwrap();
        assert_eq!(y.as_slice(), &[0, 0]);
        let tie = AllocationInstance::new(
            ids(0..1),
            ids(1..3),
            vec![vec![0.2, 0.2]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            1.0,
        )
        .unwrap();
        let y = optimal_assignment(&tie, &DeploymentPlan::new(vec![true, true])).unwrap();
        assert_eq!(y.as_slice(), &[0]);
        assert_eq!(
            optimal_assignment(&inst, &DeploymentPlan::new(vec![false, false])),
            Err(AllocError::EmptyDeployment)
        );
    }

    #[test]
    fn exact_single_candidate() {
        let inst = AllocationInstance::new(
            ids(0..3),
            ids(3..4),
            vec![vec![0.1], vec![0.2], vec![0.4]],
            vec![vec![0.0]],
            vec![vec![0.0]],
            2.0,
        )
        .unwrap();
        let sol = solve_exact(&inst).unwrap().solution;
        assert_eq!(sol.deployment.as_slice(), &[true]);
        assert_eq!(sol.cost, 0.1 + 0.2 + 0.4);
    }

    #[test]
    fn exact_rejects_oversized_and_empty() {
        let z = 25;
        let inst = AllocationInstance::new(
            ids(0..1),
            ids(1..1 + z as u32),
            vec![vec![0.1; z]],
            vec![vec![0.0; z]; z],
            vec![vec![0.0; z]; z],
            1.0,
        )
        .unwrap();
        assert_eq!(solve_exact(&inst).unwrap_err(), AllocError::TooLarge { candidates: 25, bound: 20 });
        let empty = AllocationInstance::new(ids(0..1), vec![], vec![vec![]], vec![], vec![], 1.0).unwrap();
        assert_eq!(solve_exact(&empty).unwrap_err(), AllocError::NoCandidates);
    }

    #[test]
    fn upper_bound_cases() {
        let zero = AllocationInstance::new(
            ids(0..2),
            ids(2..4),
            vec![vec![0.0; 2]; 2],
            vec![vec![0.0; 2]; 2],
            vec![vec![0.0; 2]; 2],
            1.0,
        )
        .unwrap();
        assert_eq!(f_upper_bound(&zero), 0.0);
        let single = AllocationInstance::new(
            ids(0..2),
            ids(2..3),
            vec![vec![0.3], vec![0.5]],
            vec![vec![0.0]],
            vec![vec![0.0]],
            3.0,
        )
        .unwrap();
        assert_eq!(f_upper_bound(&single), 0.8);
        assert_eq!(set_function_f(&single, &[true]), 0.8);
        assert_eq!(set_function_f(&single, &[false]), f_upper_bound(&single));
    }

    #[test]
    fn double_greedy_single_candidate() {
        let inst =
            AllocationInstance::new(ids(0..1), ids(1..2), vec![vec![0.5]], vec![vec![0.0]], vec![vec![0.0]], 1.0)
                .unwrap();
        for seed in 0..5 {
            assert_eq!(double_greedy(&inst, seed).unwrap().deployment.as_slice(), &[true]);
        }
    }

    #[test]
    fn double_greedy_takes_everything_when_gains_are_strict() {
        // Each client sits on its own candidate, sync is free: adding always
        // helps and removing always hurts.
        let zeta = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]];
        let inst =
            AllocationInstance::new(ids(0..3), ids(3..6), zeta, vec![vec![0.0; 3]; 3], vec![vec![0.0; 3]; 3], 0.0)
                .unwrap();
        for seed in 0..10 {
            assert_eq!(double_greedy(&inst, seed).unwrap().deployment.as_slice(), &[true, true, true]);
        }
    }

    #[test]
    fn omega_sweep_consistent_with_plans() {
        let inst = two_hub_instance();
        let pts = omega_sweep(&inst, &[0.0, 1.0, 100.0], DEFAULT_EXACT_BOUND, 1).unwrap();
        for p in &pts {
            let inst = inst.clone().with_omega(p.omega);
            assert_eq!(p.management, management_cost(&inst, &p.assignment).unwrap());
            assert_eq!(p.sync, synchronization_cost(&inst, &p.deployment, &p.assignment).unwrap());
            assert_eq!(p.hub_count, p.deployment.hub_count());
        }
        assert_eq!(pts[2].hub_count, 1);
    }
}
