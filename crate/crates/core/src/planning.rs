//! Sampling and gradient planners over a [`CostModel`], plus the
//! receding-horizon [`MpcPolicy`] that drives them from a world.
//!
//! Candidate batches are `K×H×A` arrays of `f64`. Solvers keep every
//! sequence they return inside the action bounds.

use std::sync::Arc;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::envs::{self, ActionSpec, Env, EnvConfig, EnvError};
use crate::variation::Assignment;
use crate::world::{Policy, PolicyError, WorldInfos};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Central finite-difference step used when a model has no gradient.
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("cost model returned a non-finite cost for candidate {index}")]
    NonFiniteCost { index: usize },
    #[error("cost model returned {got} costs for {expected} candidates")]
    CostLength { expected: usize, got: usize },
    #[error("gradient has shape {got:?}, expected {expected:?}")]
    GradientShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("initial plan has shape {got:?}, expected {expected:?}")]
    InitShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("invalid planner parameters: {0}")]
    Params(String),
    #[error("cost model failed: {0}")]
    Model(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// What the planner knows about the env it is planning for.
#[derive(Debug, Clone, Copy)]
pub struct PlanContext<'a> {
    pub env_index: usize,
    pub seed: u64,
    pub state: ArrayView1<'a, f32>,
    pub pixels: ArrayView3<'a, u8>,
    pub variation: &'a Assignment,
}

#[derive(Debug, Clone, Copy)]
pub struct GoalSpec<'a> {
    pub state: ArrayView1<'a, f32>,
    pub pixels: ArrayView3<'a, u8>,
}

/// Scores candidate action sequences; lower is better.
pub trait CostModel: Send + Sync {
    /// One finite cost per candidate. Must be deterministic.
    fn get_cost(&self, ctx: &PlanContext, candidates: ArrayView3<f64>, goal: &GoalSpec) -> Result<Vec<f64>, PlanError>;

    /// Analytic gradient of each candidate's cost, `K×H×A`. `None` makes
    /// gradient solvers fall back to finite differences.
    fn get_cost_gradient(
        &self,
        _ctx: &PlanContext,
        _candidates: ArrayView3<f64>,
        _goal: &GoalSpec,
    ) -> Option<Result<Array3<f64>, PlanError>> {
        None
    }

    /// Whether `get_cost` may run concurrently for different envs.
    fn parallel_safe(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanConfig {
    pub horizon: usize,
    pub receding_horizon: usize,
    pub warm_start: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            receding_horizon: 5,
            warm_start: true,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.horizon == 0 || self.receding_horizon == 0 || self.receding_horizon > self.horizon {
            return Err(PlanError::Params(format!(
                "need 1 <= receding_horizon ({}) <= horizon ({})",
                self.receding_horizon, self.horizon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CemParams {
    pub num_samples: usize,
    pub elite_fraction: f64,
    pub iterations: usize,
    pub init_std: f64,
    pub min_std: f64,
    pub weighting: EliteWeighting,
    /// Draw noise in `±z` pairs.
    pub mirrored: bool,
}

/// How elites are combined when refitting the Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EliteWeighting {
    Uniform,
    /// `w_i ∝ ln(M + 1/2) − ln(i)` for the i-th best of `M` elites.
    LogRank,
}

impl EliteWeighting {
    pub fn weights(self, m: usize) -> Vec<f64> {
        let raw: Vec<f64> = match self {
            EliteWeighting::Uniform => vec![1.0; m],
            EliteWeighting::LogRank => (1..=m).map(|i| (m as f64 + 0.5).ln() - (i as f64).ln()).collect(),
        };
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

impl Default for CemParams {
    fn default() -> Self {
        Self {
            num_samples: 300,
            elite_fraction: 0.1,
            iterations: 10,
            init_std: 0.5,
            min_std: 1e-3,
            weighting: EliteWeighting::LogRank,
            mirrored: true,
        }
    }
}

impl CemParams {
    pub fn num_elites(&self) -> usize {
        ((self.elite_fraction * self.num_samples as f64).ceil() as usize).clamp(1, self.num_samples)
    }

    fn validate(&self) -> Result<(), PlanError> {
        if self.num_samples < 2
            || !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0)
            || self.iterations == 0
            || self.init_std < 0.0
            || self.min_std < 0.0
        {
            return Err(PlanError::Params(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MppiParams {
    pub num_samples: usize,
    pub temperature: f64,
    pub noise_sigma: f64,
    pub iterations: usize,
}

impl Default for MppiParams {
    fn default() -> Self {
        Self {
            num_samples: 300,
            temperature: 0.01,
            noise_sigma: 0.5,
            iterations: 3,
        }
    }
}

impl MppiParams {
    fn validate(&self) -> Result<(), PlanError> {
        if self.num_samples < 2
            || self.temperature.is_nan()
            || self.temperature <= 0.0
            || self.noise_sigma < 0.0
            || self.iterations == 0
        {
            return Err(PlanError::Params(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Plain,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradParams {
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
}

impl Default for GradParams {
    fn default() -> Self {
        Self {
            steps: 100,
            learning_rate: 0.05,
            optimizer: Optimizer::Adam,
        }
    }
}

impl GradParams {
    fn validate(&self) -> Result<(), PlanError> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(PlanError::Params(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Solver output: an `H×A` sequence and its per-iteration best cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub actions: Array2<f64>,
    pub cost_trace: Vec<f64>,
    /// CEM only: mean elite cost after each iteration.
    pub elite_trace: Vec<f64>,
}

/// Action bounds as `f64` vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl Bounds {
    pub fn symmetric(dim: usize, bound: f64) -> Self {
        Self {
            low: vec![-bound; dim],
            high: vec![bound; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    fn clip_sequence(&self, mut seq: ndarray::ArrayViewMut2<f64>) {
        for mut row in seq.rows_mut() {
            for (a, v) in row.iter_mut().enumerate() {
                *v = v.clamp(self.low[a], self.high[a]);
            }
        }
    }

    fn clip_batch(&self, batch: &mut Array3<f64>) {
        for seq in batch.outer_iter_mut() {
            self.clip_sequence(seq);
        }
    }
}

impl From<&ActionSpec> for Bounds {
    fn from(spec: &ActionSpec) -> Self {
        Self {
            low: spec.low.iter().map(|&v| v as f64).collect(),
            high: spec.high.iter().map(|&v| v as f64).collect(),
        }
    }
}

fn init_plan(init: Option<&Array2<f64>>, horizon: usize, bounds: &Bounds) -> Result<Array2<f64>, PlanError> {
    let shape = [horizon, bounds.dim()];
    match init {
        Some(m) if m.shape() != shape => Err(PlanError::InitShape {
            expected: shape.to_vec(),
            got: m.shape().to_vec(),
        }),
        Some(m) => {
            let mut m = m.clone();
            bounds.clip_sequence(m.view_mut());
            Ok(m)
        }
        None => Ok(Array2::zeros(shape)),
    }
}

fn evaluate(
    model: &dyn CostModel,
    ctx: &PlanContext,
    candidates: &Array3<f64>,
    goal: &GoalSpec,
) -> Result<Vec<f64>, PlanError> {
    let costs = model.get_cost(ctx, candidates.view(), goal)?;
    if costs.len() != candidates.len_of(Axis(0)) {
        return Err(PlanError::CostLength {
            expected: candidates.len_of(Axis(0)),
            got: costs.len(),
        });
    }
    if let Some(index) = costs.iter().position(|c| !c.is_finite()) {
        return Err(PlanError::NonFiniteCost { index });
    }
    Ok(costs)
}

fn gaussian_batch(
    mean: &Array2<f64>,
    std: &Array2<f64>,
    k: usize,
    mirrored: bool,
    rng: &mut ChaCha8Rng,
    bounds: &Bounds,
) -> Array3<f64> {
    let (h, a) = mean.dim();
    let mut batch = Array3::zeros((k, h, a));
    let mut z = Array2::<f64>::zeros((h, a));
    for (i, mut seq) in batch.outer_iter_mut().enumerate() {
        if mirrored && i % 2 == 1 {
            z.mapv_inplace(|v| -v);
        } else {
            z.mapv_inplace(|_| StandardNormal.sample(rng));
        }
        ndarray::Zip::from(&mut seq)
            .and(mean)
            .and(std)
            .and(&z)
            .for_each(|x, &m, &s, &z| *x = m + s * z);
    }
    bounds.clip_batch(&mut batch);
    batch
}

/// Cross-entropy method over a diagonal Gaussian.
///
/// Elites are the `⌈elite_fraction · K⌉` lowest-cost sequences; the mean and
/// std are refit as weighted moments of the elites.
///
/// The previous iteration's elites compete with each new batch (their costs
/// are reused, not recomputed), so with a deterministic model the elite-mean
/// cost never increases from one iteration to the next.
#[allow(clippy::too_many_arguments)]
pub fn cem_solve(
    model: &dyn CostModel,
    ctx: &PlanContext,
    goal: &GoalSpec,
    horizon: usize,
    bounds: &Bounds,
    params: &CemParams,
    rng: &mut ChaCha8Rng,
    init: Option<&Array2<f64>>,
) -> Result<Plan, PlanError> {
    params.validate()?;
    let mut mean = init_plan(init, horizon, bounds)?;
    let mut std = Array2::from_elem(mean.dim(), params.init_std);
    let m = params.num_elites();
    let (h, a) = mean.dim();
    let mut elites: Array3<f64> = Array3::zeros((0, h, a));
    let mut elite_costs: Vec<f64> = Vec::new();
    let weights = params.weighting.weights(m);
    let mut trace = Vec::with_capacity(params.iterations);
    let mut elite_trace = Vec::with_capacity(params.iterations);

    for _ in 0..params.iterations {
        let batch = gaussian_batch(&mean, &std, params.num_samples, params.mirrored, rng, bounds);
        let costs = evaluate(model, ctx, &batch, goal)?;
        let pool = ndarray::concatenate(Axis(0), &[elites.view(), batch.view()]).expect("same row shape");
        let pool_costs: Vec<f64> = elite_costs.iter().chain(&costs).copied().collect();
        let mut order: Vec<usize> = (0..pool_costs.len()).collect();
        // Stable sort keeps ties in pool order, so results are reproducible.
        order.sort_by(|&x, &y| pool_costs[x].total_cmp(&pool_costs[y]));
        order.truncate(m);

        elites = pool.select(Axis(0), &order);
        elite_costs = order.iter().map(|&i| pool_costs[i]).collect();
        mean = Array2::zeros((h, a));
        for (w, e) in weights.iter().zip(elites.outer_iter()) {
            mean.scaled_add(*w, &e);
        }
        let mut var = Array2::<f64>::zeros((h, a));
        for (w, e) in weights.iter().zip(elites.outer_iter()) {
            let d = &e - &mean;
            var.scaled_add(*w, &d.mapv(|v| v * v));
        }
        std = var.mapv(|v| v.sqrt().max(params.min_std));
        trace.push(elite_costs[0]);
        elite_trace.push(elite_costs.iter().sum::<f64>() / m as f64);
    }
    bounds.clip_sequence(mean.view_mut());
    Ok(Plan {
        actions: mean,
        cost_trace: trace,
        elite_trace,
    })
}

/// Normalized MPPI weights `exp(-(c - min c) / λ)`.
pub fn mppi_weights(costs: &[f64], temperature: f64) -> Vec<f64> {
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = costs.iter().map(|c| (-(c - min) / temperature).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Model predictive path integral: a cost-weighted average of Gaussian
/// perturbations of the nominal sequence. Candidate 0 is the unperturbed
/// nominal.
#[allow(clippy::too_many_arguments)]
pub fn mppi_solve(
    model: &dyn CostModel,
    ctx: &PlanContext,
    goal: &GoalSpec,
    horizon: usize,
    bounds: &Bounds,
    params: &MppiParams,
    rng: &mut ChaCha8Rng,
    init: Option<&Array2<f64>>,
) -> Result<Plan, PlanError> {
    params.validate()?;
    let mut nominal = init_plan(init, horizon, bounds)?;
    let std = Array2::from_elem(nominal.dim(), params.noise_sigma);
    let mut trace = Vec::with_capacity(params.iterations);
    for _ in 0..params.iterations {
        let mut batch = gaussian_batch(&nominal, &std, params.num_samples, false, rng, bounds);
        batch.index_axis_mut(Axis(0), 0).assign(&nominal);
        let costs = evaluate(model, ctx, &batch, goal)?;
        let weights = mppi_weights(&costs, params.temperature);
        let mut next = Array2::zeros(nominal.dim());
        for (w, seq) in weights.iter().zip(batch.outer_iter()) {
            next.scaled_add(*w, &seq);
        }
        bounds.clip_sequence(next.view_mut());
        nominal = next;
        trace.push(costs.iter().copied().fold(f64::INFINITY, f64::min));
    }
    Ok(Plan {
        actions: nominal,
        cost_trace: trace,
        elite_trace: Vec::new(),
    })
}

/// Central finite-difference gradient of one sequence's cost, evaluated in
/// a single `2·H·A` batch.
pub fn finite_difference_gradient(
    model: &dyn CostModel,
    ctx: &PlanContext,
    goal: &GoalSpec,
    seq: &Array2<f64>,
    h: f64,
) -> Result<Array2<f64>, PlanError> {
    let (t, a) = seq.dim();
    let n = t * a;
    let mut batch = Array3::zeros((2 * n, t, a));
    for k in 0..n {
        let (ti, ai) = (k / a, k % a);
        let mut plus = batch.index_axis_mut(Axis(0), 2 * k);
        plus.assign(seq);
        plus[[ti, ai]] += h;
        let mut minus = batch.index_axis_mut(Axis(0), 2 * k + 1);
        minus.assign(seq);
        minus[[ti, ai]] -= h;
    }
    let costs = evaluate(model, ctx, &batch, goal)?;
    Ok(Array2::from_shape_fn((t, a), |(ti, ai)| {
        let k = ti * a + ai;
        (costs[2 * k] - costs[2 * k + 1]) / (2.0 * h)
    }))
}

fn gradient(
    model: &dyn CostModel,
    ctx: &PlanContext,
    goal: &GoalSpec,
    seq: &Array2<f64>,
) -> Result<Array2<f64>, PlanError> {
    let batch = seq.clone().insert_axis(Axis(0));
    match model.get_cost_gradient(ctx, batch.view(), goal) {
        Some(g) => {
            let g = g?;
            if g.shape() != batch.shape() {
                return Err(PlanError::GradientShape {
                    expected: batch.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            Ok(g.index_axis_move(Axis(0), 0))
        }
        None => finite_difference_gradient(model, ctx, goal, seq, FD_STEP),
    }
}

/// Gradient descent on one sequence, re-clipped to bounds after each step.
/// The trace holds the cost before each step and once more at the end.
pub fn grad_solve(
    model: &dyn CostModel,
    ctx: &PlanContext,
    goal: &GoalSpec,
    horizon: usize,
    bounds: &Bounds,
    params: &GradParams,
    init: Option<&Array2<f64>>,
) -> Result<Plan, PlanError> {
    params.validate()?;
    let mut seq = init_plan(init, horizon, bounds)?;
    let mut m1 = Array2::<f64>::zeros(seq.dim());
    let mut m2 = Array2::<f64>::zeros(seq.dim());
    let mut trace = Vec::with_capacity(params.steps + 1);
    let cost_of = |seq: &Array2<f64>| -> Result<f64, PlanError> {
        let batch = seq.clone().insert_axis(Axis(0));
        Ok(evaluate(model, ctx, &batch, goal)?[0])
    };
    for step in 1..=params.steps {
        trace.push(cost_of(&seq)?);
        let g = gradient(model, ctx, goal, &seq)?;
        match params.optimizer {
            Optimizer::Plain => seq.scaled_add(-params.learning_rate, &g),
            Optimizer::Adam => {
                m1 = &m1 * ADAM_BETA1 + &g * (1.0 - ADAM_BETA1);
                m2 = &m2 * ADAM_BETA2 + &g.mapv(|v| v * v) * (1.0 - ADAM_BETA2);
                let c1 = 1.0 - ADAM_BETA1.powi(step as i32);
                let c2 = 1.0 - ADAM_BETA2.powi(step as i32);
                ndarray::Zip::from(&mut seq).and(&m1).and(&m2).for_each(|x, &a, &b| {
                    *x -= params.learning_rate * (a / c1) / ((b / c2).sqrt() + ADAM_EPS);
                });
            }
        }
        bounds.clip_sequence(seq.view_mut());
    }
    trace.push(cost_of(&seq)?);
    Ok(Plan {
        actions: seq,
        cost_trace: trace,
        elite_trace: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solver {
    Cem(CemParams),
    Mppi(MppiParams),
    Grad(GradParams),
}

impl Solver {
    pub fn name(&self) -> &'static str {
        match self {
            Solver::Cem(_) => "cem",
            Solver::Mppi(_) => "mppi",
            Solver::Grad(_) => "grad",
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn solve(
        &self,
        model: &dyn CostModel,
        ctx: &PlanContext,
        goal: &GoalSpec,
        horizon: usize,
        bounds: &Bounds,
        rng: &mut ChaCha8Rng,
        init: Option<&Array2<f64>>,
    ) -> Result<Plan, PlanError> {
        match self {
            Solver::Cem(p) => cem_solve(model, ctx, goal, horizon, bounds, p, rng, init),
            Solver::Mppi(p) => mppi_solve(model, ctx, goal, horizon, bounds, p, rng, init),
            Solver::Grad(p) => grad_solve(model, ctx, goal, horizon, bounds, p, init),
        }
    }
}

#[derive(Debug, Clone)]
struct EnvPlan {
    actions: Option<Array2<f64>>,
    consumed: usize,
    rng: ChaCha8Rng,
    seed: u64,
}

/// Receding-horizon controller: replans every `receding_horizon` steps and
/// plays the plan prefix in between.
///
/// Each env keeps its own plan and generator. The generator is reseeded from
/// the policy seed and the env's reset seed whenever `step_idx` is zero, so
/// results do not depend on batch layout.
pub struct MpcPolicy {
    model: Arc<dyn CostModel>,
    solver: Solver,
    config: PlanConfig,
    bounds: Bounds,
    seed: u64,
    plans: Vec<EnvPlan>,
    solver_calls: usize,
}

impl std::fmt::Debug for MpcPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MpcPolicy")
            .field("solver", &self.solver)
            .field("config", &self.config)
            .field("seed", &self.seed)
            .field("solver_calls", &self.solver_calls)
            .finish()
    }
}

impl MpcPolicy {
    pub fn new(
        model: Arc<dyn CostModel>,
        solver: Solver,
        config: PlanConfig,
        bounds: Bounds,
        seed: u64,
    ) -> Result<Self, PlanError> {
        config.validate()?;
        Ok(Self {
            model,
            solver,
            config,
            bounds,
            seed,
            plans: Vec::new(),
            solver_calls: 0,
        })
    }

    /// Total solver invocations so far.
    pub fn solver_calls(&self) -> usize {
        self.solver_calls
    }

    pub fn config(&self) -> &PlanConfig {
        &self.config
    }

    fn env_rng(&self, env_seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ env_seed)
    }

    fn warm_init(&self, prev: &Array2<f64>) -> Array2<f64> {
        let r = self.config.receding_horizon;
        let mut next = Array2::zeros(prev.dim());
        let keep = prev.nrows().saturating_sub(r);
        next.slice_mut(s![..keep, ..]).assign(&prev.slice(s![r.., ..]));
        next
    }
}

impl Policy for MpcPolicy {
    fn get_action(&mut self, infos: &WorldInfos) -> Result<Array2<f32>, PolicyError> {
        let n = infos.num_envs();
        let a = self.bounds.dim();
        if infos.action.ncols() != a {
            return Err(format!(
                "planner bounds have {a} components, env expects {}",
                infos.action.ncols()
            )
            .into());
        }
        if self.plans.len() != n {
            self.plans = (0..n)
                .map(|i| EnvPlan {
                    actions: None,
                    consumed: 0,
                    rng: self.env_rng(infos.seed[i]),
                    seed: infos.seed[i],
                })
                .collect();
        }
        for i in 0..n {
            if infos.step_idx[i] == 0 || self.plans[i].seed != infos.seed[i] {
                self.plans[i] = EnvPlan {
                    actions: None,
                    consumed: 0,
                    rng: self.env_rng(infos.seed[i]),
                    seed: infos.seed[i],
                };
            }
        }

        let r = self.config.receding_horizon;
        let due: Vec<usize> = (0..n)
            .filter(|&i| !infos.is_frozen(i))
            .filter(|&i| self.plans[i].actions.is_none() || self.plans[i].consumed >= r)
            .collect();
        let jobs: Vec<(usize, Option<Array2<f64>>, ChaCha8Rng)> = due
            .iter()
            .map(|&i| {
                let p = &self.plans[i];
                let init = match (&p.actions, self.config.warm_start) {
                    (Some(prev), true) => Some(self.warm_init(prev)),
                    _ => None,
                };
                (i, init, p.rng.clone())
            })
            .collect();

        let solve = |(i, init, mut rng): (usize, Option<Array2<f64>>, ChaCha8Rng)| {
            let ctx = PlanContext {
                env_index: i,
                seed: infos.seed[i],
                state: infos.state.row(i),
                pixels: infos.pixels.index_axis(Axis(0), i),
                variation: &infos.variation[i],
            };
            let goal = GoalSpec {
                state: infos.goal_state.row(i),
                pixels: infos.goal_pixels.index_axis(Axis(0), i),
            };
            let plan = self.solver.solve(
                self.model.as_ref(),
                &ctx,
                &goal,
                self.config.horizon,
                &self.bounds,
                &mut rng,
                init.as_ref(),
            )?;
            Ok::<_, PlanError>((i, plan.actions, rng))
        };
        let solved: Vec<Result<_, PlanError>> = if self.model.parallel_safe() {
            jobs.into_par_iter().map(solve).collect()
        } else {
            jobs.into_iter().map(solve).collect()
        };
        for r in solved {
            let (i, actions, rng) = r?;
            self.plans[i].actions = Some(actions);
            self.plans[i].consumed = 0;
            self.plans[i].rng = rng;
            self.solver_calls += 1;
        }

        let mut out = Array2::zeros((n, a));
        for i in 0..n {
            if infos.is_frozen(i) {
                continue;
            }
            let p = &mut self.plans[i];
            let plan = p.actions.as_ref().expect("planned above");
            let row: Array1<f32> = plan.row(p.consumed).mapv(|v| v as f32);
            out.row_mut(i).assign(&row);
            p.consumed += 1;
        }
        Ok(out)
    }
}

/// Uses the simulator itself as the world model: each candidate is rolled
/// out from the current state and scored by the env's goal distance at the
/// end of the rollout.
#[derive(Debug, Clone)]
pub struct SimulatorCostModel {
    env_id: String,
}

impl SimulatorCostModel {
    pub fn new(env_id: &str) -> Result<Self, PlanError> {
        envs::make(env_id, EnvConfig { image_size: 1 })?;
        Ok(Self {
            env_id: env_id.to_string(),
        })
    }

    /// An env positioned at the context state and aimed at the goal.
    pub fn start_env(&self, ctx: &PlanContext, goal: &GoalSpec) -> Result<Box<dyn Env>, PlanError> {
        let mut env = envs::make(&self.env_id, EnvConfig { image_size: 1 })?;
        env.reset(ctx.seed, ctx.variation)?;
        env.set_state(&ctx.state.to_vec())?;
        env.set_goal_from_state(&goal.state.to_vec())?;
        Ok(env)
    }

    pub fn rollout_cost(env: &mut dyn Env, actions: ndarray::ArrayView2<f64>) -> Result<f64, PlanError> {
        for row in actions.rows() {
            if env.is_done() {
                break;
            }
            let a: Vec<f32> = row.iter().map(|&v| v as f32).collect();
            env.step(&a)?;
        }
        Ok(env.goal_distance())
    }
}

impl CostModel for SimulatorCostModel {
    fn get_cost(&self, ctx: &PlanContext, candidates: ArrayView3<f64>, goal: &GoalSpec) -> Result<Vec<f64>, PlanError> {
        let base = self.start_env(ctx, goal)?;
        (0..candidates.len_of(Axis(0)))
            .into_par_iter()
            .map(|k| {
                let mut env = base.clone();
                Self::rollout_cost(env.as_mut(), candidates.index_axis(Axis(0), k))
            })
            .collect()
    }
}

/// `Σ_t ‖a_t − target_t‖²` with analytic gradient; handy as a test oracle.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    pub target: Array2<f64>,
}

impl QuadraticCost {
    pub fn new(target: Array2<f64>) -> Self {
        Self { target }
    }

    pub fn cost(&self, seq: ndarray::ArrayView2<f64>) -> f64 {
        (&seq - &self.target).mapv(|v| v * v).sum()
    }
}

impl CostModel for QuadraticCost {
    fn get_cost(
        &self,
        _ctx: &PlanContext,
        candidates: ArrayView3<f64>,
        _goal: &GoalSpec,
    ) -> Result<Vec<f64>, PlanError> {
        if candidates.shape()[1..] != *self.target.shape() {
            return Err(PlanError::Model(format!(
                "candidates {:?} do not match target {:?}",
                &candidates.shape()[1..],
                self.target.shape()
            )));
        }
        Ok(candidates.outer_iter().map(|seq| self.cost(seq)).collect())
    }

    fn get_cost_gradient(
        &self,
        _ctx: &PlanContext,
        candidates: ArrayView3<f64>,
        _goal: &GoalSpec,
    ) -> Option<Result<Array3<f64>, PlanError>> {
        let mut g = candidates.to_owned();
        for mut seq in g.outer_iter_mut() {
            seq -= &self.target;
            seq *= 2.0;
        }
        Some(Ok(g))
    }
}

/// Owned backing storage for a [`PlanContext`] and [`GoalSpec`] when no
/// world is involved (tests, benches, bindings).
#[derive(Debug, Clone, Default)]
pub struct StandaloneContext {
    pub state: Array1<f32>,
    pub pixels: Array3<u8>,
    pub goal_state: Array1<f32>,
    pub goal_pixels: Array3<u8>,
    pub variation: Assignment,
    pub seed: u64,
}

impl StandaloneContext {
    pub fn context(&self) -> PlanContext<'_> {
        PlanContext {
            env_index: 0,
            seed: self.seed,
            state: self.state.view(),
            pixels: self.pixels.view(),
            variation: &self.variation,
        }
    }

    pub fn goal(&self) -> GoalSpec<'_> {
        GoalSpec {
            state: self.goal_state.view(),
            pixels: self.goal_pixels.view(),
        }
    }
}
