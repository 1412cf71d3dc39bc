//! Batch Levenberg-Marquardt over the pose graph.

use alloc::vec::Vec;

#[allow(unused_imports)] // float methods under no_std
use nalgebra::{ComplexField, DMatrix, DVector};

use crate::factors::{huber_weight, mahalanobis, Factor, FactorKind, HUBER_DELTA};
use crate::geom::{GeomError, State};

mod assemble;
mod sparse;

pub use assemble::{assemble_graph, AerialMeasurement, GaugeMode, GnssFix, GraphInputs, LoopMeasurement};
pub use sparse::{to_dense_vec, BVec, Block, BlockCholesky, BlockMatrix};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("trajectory has no states")]
    EmptyTrajectory,
    #[error("factor {factor} references state {state} of {count}")]
    InvalidIndex { factor: usize, state: usize, count: usize },
    #[error("fixed state {0} does not exist")]
    InvalidFixedState(usize),
    #[error("graph has neither factors nor fixed states")]
    Unconstrained,
    #[error("normal equations are singular; the gauge is not fixed")]
    SingularSystem,
    #[error("{what} input has {got} entries, expected {expected}")]
    InputLength { what: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    Factor(#[from] crate::factors::FactorError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    states: Vec<State>,
    factors: Vec<Factor>,
    fixed: Vec<usize>,
}

impl PoseGraph {
    pub fn new(states: Vec<State>, factors: Vec<Factor>, mut fixed: Vec<usize>) -> Result<Self, SolverError> {
        if states.is_empty() {
            return Err(SolverError::EmptyTrajectory);
        }
        let count = states.len();
        for (k, f) in factors.iter().enumerate() {
            if let Some(&s) = f.states().iter().find(|&&s| s >= count) {
                return Err(SolverError::InvalidIndex { factor: k, state: s, count });
            }
        }
        fixed.sort_unstable();
        fixed.dedup();
        if let Some(&s) = fixed.iter().find(|&&s| s >= count) {
            return Err(SolverError::InvalidFixedState(s));
        }
        if factors.is_empty() && fixed.is_empty() {
            return Err(SolverError::Unconstrained);
        }
        Ok(Self { states, factors, fixed })
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn fixed(&self) -> &[usize] {
        &self.fixed
    }

    pub fn count(&self, kind: FactorKind) -> usize {
        self.factors.iter().filter(|f| f.kind() == kind).count()
    }

    /// Replaces the state estimates, keeping the factors.
    pub fn with_states(mut self, states: Vec<State>) -> Result<Self, SolverError> {
        if states.len() != self.states.len() {
            return Err(SolverError::InvalidIndex { factor: 0, state: states.len(), count: self.states.len() });
        }
        self.states = states;
        Ok(self)
    }

    /// Whether every connected group of states is tied to the map frame by
    /// a fixed state or an absolute factor.
    pub fn gauge_fixed(&self) -> bool {
        let n = self.states.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut involved = alloc::vec![false; n];
        for f in &self.factors {
            let s = f.states();
            for &k in s {
                involved[k] = true;
            }
            if s.len() == 2 {
                let (a, b) = (find(&mut parent, s[0]), find(&mut parent, s[1]));
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut anchored = alloc::vec![false; n];
        for &k in &self.fixed {
            let r = find(&mut parent, k);
            anchored[r] = true;
        }
        for f in self.factors.iter().filter(|f| f.kind().is_absolute()) {
            let r = find(&mut parent, f.states()[0]);
            anchored[r] = true;
        }
        (0..n).all(|k| {
            let r = find(&mut parent, k);
            !involved[k] || anchored[r]
        })
    }
}

/// Gauss-Newton system `H`, `b = J^T Λ r` and the total cost at a state.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub hessian: BlockMatrix,
    pub gradient: Vec<BVec>,
    pub cost: f64,
}

impl NormalEquations {
    pub fn dense_gradient(&self) -> DVector<f64> {
        sparse::to_dense_vec(&self.gradient)
    }
}

/// Sums `w J^T Λ J` and `w J^T Λ r` over all factors; `w` is the Huber
/// weight for robust factors and 1 otherwise. Only state pairs that share a
/// factor get an off-diagonal block.
pub fn build_normal_equations(graph: &PoseGraph, states: &[State]) -> Result<NormalEquations, GeomError> {
    let n = states.len();
    let mut hessian = BlockMatrix::zeros(n);
    let mut gradient = alloc::vec![BVec::zeros(); n];
    let mut cost = 0.0;
    for f in &graph.factors {
        let lin = f.linearize(states)?;
        let info = f.information();
        let s = mahalanobis(info, &lin.residual);
        let w = if f.robust() { huber_weight(s, HUBER_DELTA) } else { 1.0 };
        cost += crate::factors::weighted_cost(f, &lin.residual);
        let info_r = info * &lin.residual * w;
        let weighted: Vec<DMatrix<f64>> = lin.jacobians.iter().map(|j| info * j * w).collect();
        for (a, &sa) in f.states().iter().enumerate() {
            let g = lin.jacobians[a].transpose() * &info_r;
            gradient[sa] += BVec::from_column_slice(g.as_slice());
            for (c, &sc) in f.states().iter().enumerate() {
                if sc < sa {
                    continue;
                }
                let h = lin.jacobians[a].transpose() * &weighted[c];
                hessian.add(sa, sc, &Block::from_column_slice(h.as_slice()));
            }
        }
    }
    Ok(NormalEquations { hessian, gradient, cost })
}

/// Total cost only.
pub fn total_cost(graph: &PoseGraph, states: &[State]) -> Result<f64, GeomError> {
    let mut cost = 0.0;
    for f in &graph.factors {
        cost += crate::factors::weighted_cost(f, &f.residual(states)?);
    }
    Ok(cost)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iter: usize,
    pub lambda0: f64,
    /// Converged when an accepted step lowers the cost by less than this
    /// fraction.
    pub cost_tol: f64,
    /// Converged when the step norm falls below this.
    pub step_tol: f64,
    pub lambda_max: f64,
    pub lambda_down: f64,
    pub lambda_up: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { max_iter: 50, lambda0: 1e-4, cost_tol: 1e-6, step_tol: 1e-8, lambda_max: 1e8, lambda_down: 3.0, lambda_up: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Termination {
    Converged,
    MaxIter,
    Stalled,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::MaxIter => "max_iter",
            Self::Stalled => "stalled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
    pub termination: Termination,
    pub final_lambda: f64,
    pub rejected_steps: usize,
    /// Max-norm of the gradient at the returned states.
    pub final_gradient_norm: f64,
}

/// Dimensions held at zero: all of a fixed state, plus any dimension that no
/// factor touches.
fn pinned_dims(graph: &PoseGraph, h: &BlockMatrix) -> Vec<[bool; sparse::B]> {
    let mut pinned: Vec<[bool; sparse::B]> = h
        .diag
        .iter()
        .map(|d| core::array::from_fn(|k| d[(k, k)] == 0.0))
        .collect();
    for &s in &graph.fixed {
        pinned[s] = [true; sparse::B];
    }
    pinned
}

fn damped(h: &BlockMatrix, lambda: f64, pinned: &[[bool; sparse::B]]) -> BlockMatrix {
    let mut a = h.clone();
    for (k, d) in a.diag.iter_mut().enumerate() {
        for r in 0..sparse::B {
            d[(r, r)] *= 1.0 + lambda;
        }
        for r in 0..sparse::B {
            if pinned[k][r] {
                for c in 0..sparse::B {
                    d[(r, c)] = 0.0;
                    d[(c, r)] = 0.0;
                }
                d[(r, r)] = 1.0;
            }
        }
    }
    for (&(i, j), m) in a.upper.iter_mut() {
        #[allow(clippy::needless_range_loop)]
        for r in 0..sparse::B {
            if pinned[i][r] {
                m.row_mut(r).fill(0.0);
            }
            if pinned[j][r] {
                m.column_mut(r).fill(0.0);
            }
        }
    }
    a
}

/// Levenberg-Marquardt with multiplicative damping `(H + λ diag(H)) δ = -b`.
pub fn lm_solve(graph: &PoseGraph, cfg: &LmConfig) -> Result<(Vec<State>, SolveReport), SolverError> {
    if !graph.gauge_fixed() {
        return Err(SolverError::SingularSystem);
    }
    let mut states = graph.states.clone();
    let mut ne = build_normal_equations(graph, &states)?;
    let initial_cost = ne.cost;
    let mut trace = alloc::vec![ne.cost];
    let mut lambda = cfg.lambda0;
    let mut rejected = 0;
    let mut iterations = 0;
    let mut termination = Termination::MaxIter;

    'outer: while iterations < cfg.max_iter {
        iterations += 1;
        let pinned = pinned_dims(graph, &ne.hessian);
        let rhs: Vec<BVec> = ne
            .gradient
            .iter()
            .zip(&pinned)
            .map(|(g, p)| BVec::from_fn(|r, _| if p[r] { 0.0 } else { -g[r] }))
            .collect();
        loop {
            let Some(chol) = BlockCholesky::factor(&damped(&ne.hessian, lambda, &pinned)) else {
                lambda *= cfg.lambda_up;
                rejected += 1;
                if lambda > cfg.lambda_max {
                    return Err(SolverError::SingularSystem);
                }
                continue;
            };
            let step = chol.solve(&rhs);
            let norm = step.iter().map(|s| s.norm_squared()).sum::<f64>().sqrt();
            if norm < cfg.step_tol {
                termination = Termination::Converged;
                break 'outer;
            }
            let candidate: Vec<State> = states.iter().zip(&step).map(|(s, d)| s.retract(d.as_slice())).collect();
            let new_cost = total_cost(graph, &candidate).unwrap_or(f64::INFINITY);
            if new_cost < ne.cost {
                let decrease = (ne.cost - new_cost) / ne.cost.max(f64::MIN_POSITIVE);
                states = candidate;
                ne = build_normal_equations(graph, &states)?;
                trace.push(ne.cost);
                lambda = (lambda / cfg.lambda_down).max(1e-12);
                if decrease < cfg.cost_tol || ne.cost == 0.0 {
                    termination = Termination::Converged;
                    break 'outer;
                }
                break;
            }
            rejected += 1;
            lambda *= cfg.lambda_up;
            if lambda > cfg.lambda_max {
                termination = Termination::Stalled;
                break 'outer;
            }
        }
    }
    let pinned = pinned_dims(graph, &ne.hessian);
    let final_gradient_norm = ne
        .gradient
        .iter()
        .zip(&pinned)
        .flat_map(|(g, p)| (0..sparse::B).filter(|&r| !p[r]).map(move |r| g[r].abs()))
        .fold(0.0, f64::max);
    let report = SolveReport {
        iterations,
        initial_cost,
        final_cost: ne.cost,
        cost_trace: trace,
        termination,
        final_lambda: lambda,
        rejected_steps: rejected,
        final_gradient_norm,
    };
    Ok((states, report))
}

/// Dense assembly of the same system, for checking the sparse path.
pub fn dense_normal_equations(graph: &PoseGraph, states: &[State]) -> Result<(DMatrix<f64>, DVector<f64>), GeomError> {
    let n = states.len() * sparse::B;
    let mut h = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for f in &graph.factors {
        let lin = f.linearize(states)?;
        let rows = lin.residual.len();
        let mut j = DMatrix::zeros(rows, n);
        for (a, &s) in f.states().iter().enumerate() {
            let mut view = j.view_mut((0, s * sparse::B), (rows, sparse::B));
            view += &lin.jacobians[a];
        }
        let s = mahalanobis(f.information(), &lin.residual);
        let w = if f.robust() { huber_weight(s, HUBER_DELTA) } else { 1.0 };
        h += j.transpose() * f.information() * &j * w;
        b += j.transpose() * f.information() * &lin.residual * w;
    }
    Ok((h, b))
}
