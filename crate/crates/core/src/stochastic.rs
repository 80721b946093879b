//! Brownian paths, Monte Carlo orchestration and ensemble estimators.
//!
//! Each path draws its increments from a ChaCha stream selected by
//! `(master_seed, path_index)`, so any path can be regenerated on its own
//! and paths can run on any worker without shared RNG state. Ensemble
//! reductions happen in path-index order, which keeps results bitwise
//! reproducible regardless of scheduling.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::algebra::NoiseCoefficient;
use crate::error::{Error, Result};
use crate::fem::{NodalField, Vec3};
use crate::mesh::Mesh;
use crate::scheme::{advance, transform_to_magnetization, Discretization, PathState, SchemeParams};

/// Discrete Wiener path on the uniform grid `t_j = j k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    seed: u64,
    path_index: u64,
    k: f64,
    increments: Vec<f64>,
    cumulative: Vec<f64>,
}

/// Draws `steps` increments `~ N(0, k)`.
///
/// Increments are stored as differences of the cumulative sums, so
/// `cumulative[j + 1] - cumulative[j] == increments[j]` holds exactly.
pub fn sample_path(seed: u64, path_index: u64, steps: usize, k: f64) -> Result<BrownianPath> {
    if steps == 0 {
        return Err(Error::InvalidParameter("a Brownian path needs at least one step".into()));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    let sd = k.sqrt();
    let mut cumulative = Vec::with_capacity(steps + 1);
    cumulative.push(0.0);
    let mut w = 0.0;
    for _ in 0..steps {
        let z: f64 = StandardNormal.sample(&mut rng);
        w += sd * z;
        cumulative.push(w);
    }
    let increments = cumulative.windows(2).map(|p| p[1] - p[0]).collect();
    Ok(BrownianPath { seed, path_index, k, increments, cumulative })
}

impl BrownianPath {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// `W(t_j)`, clamped to the last grid point.
    pub fn at_step(&self, j: usize) -> f64 {
        self.cumulative[j.min(self.steps())]
    }

    /// Piecewise-constant `W_k(t) = W(t_j)` for `t ∈ [t_j, t_{j+1})`.
    ///
    /// `t / k` within `1e-9` of an integer snaps to it, so grid times
    /// computed as `j * k` evaluate to their own level.
    pub fn w_k(&self, t: f64) -> f64 {
        let x = t / self.k;
        let r = x.round();
        let j = if (x - r).abs() < 1e-9 { r } else { x.floor() };
        let j = j.clamp(0.0, self.steps() as f64) as usize;
        self.cumulative[j]
    }
}

/// Running mean (Neumaier-compensated sum) and variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    count: u64,
    sum: f64,
    sum_c: f64,
    // Welford running mean and sum of squared deviations
    run_mean: f64,
    m2: f64,
}

fn neumaier(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        neumaier(&mut self.sum, &mut self.sum_c, x);
        let delta = x - self.run_mean;
        self.run_mean += delta / self.count as f64;
        self.m2 += delta * (x - self.run_mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 { 0.0 } else { (self.sum + self.sum_c) / self.count as f64 }
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        self.m2 / (self.count - 1) as f64
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }
}

/// `∫_D (1 − |U|)² dx`, per element by three edge-midpoint samples of the
/// P1 field `U`.
pub fn unit_defect_integral(mesh: &Mesh, big_m: &NodalField) -> Result<f64> {
    big_m.check_mesh(mesh)?;
    let mut total = 0.0;
    for (e, tri) in mesh.elements().iter().enumerate() {
        let mut s = 0.0;
        for (a, b) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])] {
            let mid = 0.5 * (big_m[a] + big_m[b]);
            let d = 1.0 - mid.norm();
            s += d * d;
        }
        total += mesh.area(e) * s / 3.0;
    }
    Ok(total)
}

/// `E_{h,k}`: root of the ensemble mean of `k Σ_j ∫_D (1 − |M^{(j)}|)² dx`.
///
/// Each history holds the snapshots `M^{(0)}, …, M^{(J−1)}` of one path,
/// i.e. the piecewise-constant interpolant `M⁻_{h,k}` on `[0, T)`.
pub fn error_ehk(mesh: &Mesh, k: f64, histories: &[Vec<NodalField>]) -> Result<f64> {
    if histories.is_empty() || histories.iter().any(|h| h.is_empty()) {
        return Err(Error::InvalidParameter("E_hk needs at least one non-empty history".into()));
    }
    let mut acc = Accumulator::default();
    for history in histories {
        let mut path_total = 0.0;
        for snapshot in history {
            path_total += k * unit_defect_integral(mesh, snapshot)?;
        }
        acc.push(path_total);
    }
    Ok(acc.mean().sqrt())
}

/// Pointwise ensemble mean of equal-length traces.
pub fn energy_trace(traces: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = traces.first().ok_or_else(|| Error::InvalidParameter("no traces".into()))?;
    if let Some(bad) = traces.iter().find(|t| t.len() != first.len()) {
        return Err(Error::DimensionMismatch { expected: first.len(), found: bad.len() });
    }
    Ok((0..first.len())
        .map(|j| {
            let mut acc = Accumulator::default();
            traces.iter().for_each(|t| acc.push(t[j]));
            acc.mean()
        })
        .collect())
}

/// Per-path observables of one Monte Carlo realization.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOutcome {
    pub path_index: u64,
    /// `k Σ_{j<J} ∫_D (1 − |M^{(j)}|)² dx`
    pub defect: f64,
    /// `‖∇M^{(j)}‖²` for `j = 0..=J`.
    pub energy: Vec<f64>,
    /// `M^{(j)}` at the requested snapshot steps.
    pub snapshots: BTreeMap<usize, NodalField>,
    /// Largest `max_n ||m(x_n)| − 1|` over the run.
    pub max_unit_defect: f64,
    /// Largest `max_n |v(x_n) · m(x_n)|` over the run.
    pub max_tangency_defect: f64,
}

/// Ensemble accumulators, filled in path-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub path_count: usize,
    pub defect: Accumulator,
    pub energy: Vec<Accumulator>,
    /// Running sums of `M` at each snapshot step.
    snapshot_sums: BTreeMap<usize, Vec<Vec3>>,
    pub max_unit_defect: f64,
    pub max_tangency_defect: f64,
}

impl EnsembleStats {
    pub fn from_outcomes<'a>(outcomes: impl IntoIterator<Item = &'a PathOutcome>) -> Result<Self> {
        let mut stats: Option<EnsembleStats> = None;
        for o in outcomes {
            let s = stats.get_or_insert_with(|| EnsembleStats {
                path_count: 0,
                defect: Accumulator::default(),
                energy: vec![Accumulator::default(); o.energy.len()],
                snapshot_sums: o.snapshots.iter().map(|(&j, f)| (j, vec![Vec3::zeros(); f.len()])).collect(),
                max_unit_defect: 0.0,
                max_tangency_defect: 0.0,
            });
            if o.energy.len() != s.energy.len() {
                return Err(Error::DimensionMismatch { expected: s.energy.len(), found: o.energy.len() });
            }
            s.path_count += 1;
            s.defect.push(o.defect);
            s.energy.iter_mut().zip(&o.energy).for_each(|(a, &e)| a.push(e));
            for (j, sum) in s.snapshot_sums.iter_mut() {
                let field = o.snapshots.get(j).ok_or_else(|| Error::InvalidParameter(format!("path {} lacks snapshot {j}", o.path_index)))?;
                sum.iter_mut().zip(field.iter()).for_each(|(acc, v)| *acc += v);
            }
            s.max_unit_defect = s.max_unit_defect.max(o.max_unit_defect);
            s.max_tangency_defect = s.max_tangency_defect.max(o.max_tangency_defect);
        }
        stats.ok_or_else(|| Error::InvalidParameter("empty ensemble".into()))
    }

    /// `E_{h,k}`
    pub fn error_ehk(&self) -> f64 {
        self.defect.mean().sqrt()
    }

    pub fn energy_mean(&self) -> Vec<f64> {
        self.energy.iter().map(Accumulator::mean).collect()
    }

    pub fn energy_std(&self) -> Vec<f64> {
        self.energy.iter().map(Accumulator::std).collect()
    }

    pub fn snapshot_steps(&self) -> Vec<usize> {
        self.snapshot_sums.keys().copied().collect()
    }

    /// Ensemble mean of `M` at a snapshot step.
    pub fn mean_field(&self, step: usize) -> Option<NodalField> {
        let n = self.path_count as f64;
        self.snapshot_sums
            .get(&step)
            .map(|s| NodalField::from_values(s.iter().map(|v| v / n).collect()).expect("finite sums"))
    }
}

/// Default snapshot cadence: every `⌈J/8⌉` steps, plus the final step.
pub fn default_snapshot_steps(steps: usize) -> Vec<usize> {
    let stride = steps.div_ceil(8).max(1);
    let mut out: Vec<usize> = (0..=steps).step_by(stride).collect();
    if out.last() != Some(&steps) {
        out.push(steps);
    }
    out
}

/// Everything a Monte Carlo run needs besides the shared discretization.
#[derive(Debug, Clone)]
pub struct MonteCarloConfig {
    pub params: SchemeParams,
    pub paths: usize,
    pub master_seed: u64,
    /// Worker threads; `0` uses the rayon default.
    pub workers: usize,
    pub snapshot_steps: Vec<usize>,
    pub solver_tolerance: f64,
    /// Solve the deterministic `m` once when `g` is constant and rotate it
    /// per path. Off forces one full solve per path.
    pub share_constant_g: bool,
}

struct Level<'a> {
    mesh: &'a Mesh,
    disc: &'a Discretization,
    nc: &'a NoiseCoefficient,
    k: f64,
    steps: usize,
}

impl Level<'_> {
    fn observe(&self, outcome: &mut PathOutcome, j: usize, m: &NodalField, w: f64, snapshots: &[usize]) -> Result<()> {
        let big_m = transform_to_magnetization(m, w, self.nc)?;
        outcome.energy.push(self.disc.energy(&big_m)?);
        if j < self.steps {
            outcome.defect += self.k * unit_defect_integral(self.mesh, &big_m)?;
        }
        if snapshots.contains(&j) {
            outcome.snapshots.insert(j, big_m);
        }
        Ok(())
    }
}

fn empty_outcome(path_index: u64, steps: usize) -> PathOutcome {
    PathOutcome {
        path_index,
        defect: 0.0,
        energy: Vec::with_capacity(steps + 1),
        snapshots: BTreeMap::new(),
        max_unit_defect: 0.0,
        max_tangency_defect: 0.0,
    }
}

/// Runs the scheme along one Brownian path and records its observables.
pub fn simulate_path(
    disc: &Discretization,
    nc: &NoiseCoefficient,
    m0: &NodalField,
    path: &BrownianPath,
    params: &SchemeParams,
    snapshot_steps: &[usize],
    tolerance: f64,
) -> Result<(PathOutcome, PathState)> {
    let level = Level { mesh: disc.mesh(), disc, nc, k: params.k(), steps: params.steps };
    let mut outcome = empty_outcome(path.path_index(), params.steps);
    let mut state = PathState::new(disc, m0.clone())?;
    outcome.max_unit_defect = state.m.max_unit_defect();
    for j in 0..=params.steps {
        let w = path.at_step(j);
        level.observe(&mut outcome, j, &state.m, w, snapshot_steps)?;
        if j < params.steps {
            let rec = advance(disc, &mut state, params, nc, w, tolerance)?;
            outcome.max_tangency_defect = outcome.max_tangency_defect.max(rec.tangency_defect);
            outcome.max_unit_defect = outcome.max_unit_defect.max(state.m.max_unit_defect());
        }
    }
    Ok((outcome, state))
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Monte Carlo estimate over `config.paths` independent Brownian paths.
///
/// Output depends only on the inputs and `master_seed`; worker count and
/// scheduling do not change a single bit.
pub fn run_monte_carlo(
    disc: &Discretization,
    nc: &NoiseCoefficient,
    m0: &NodalField,
    config: &MonteCarloConfig,
) -> Result<EnsembleStats> {
    let outcomes = run_paths(disc, nc, m0, config)?;
    EnsembleStats::from_outcomes(&outcomes)
}

/// Per-path outcomes in path-index order.
pub fn run_paths(
    disc: &Discretization,
    nc: &NoiseCoefficient,
    m0: &NodalField,
    config: &MonteCarloConfig,
) -> Result<Vec<PathOutcome>> {
    config.params.validate()?;
    if config.paths == 0 {
        return Err(Error::InvalidParameter("need at least one path".into()));
    }
    let params = config.params;
    let seed = config.master_seed;
    let paths: Vec<BrownianPath> = (0..config.paths as u64)
        .map(|i| sample_path(seed, i, params.steps, params.k()))
        .collect::<Result<_>>()?;

    with_workers(config.workers, || {
        if nc.is_constant() && config.share_constant_g {
            shared_trajectory(disc, nc, m0, &paths, config)
        } else {
            paths
                .par_iter()
                .map(|p| {
                    simulate_path(disc, nc, m0, p, &params, &config.snapshot_steps, config.solver_tolerance)
                        .map(|(o, _)| o)
                        .map_err(|e| Error::Path { path_index: p.path_index(), seed, source: Box::new(e) })
                })
                .collect()
        }
    })?
}

// With constant g the lower-order term vanishes, so m does not depend on
// the path: one linear solve per step serves the whole ensemble.
fn shared_trajectory(
    disc: &Discretization,
    nc: &NoiseCoefficient,
    m0: &NodalField,
    paths: &[BrownianPath],
    config: &MonteCarloConfig,
) -> Result<Vec<PathOutcome>> {
    let params = config.params;
    let level = Level { mesh: disc.mesh(), disc, nc, k: params.k(), steps: params.steps };
    let mut outcomes: Vec<PathOutcome> = paths.iter().map(|p| empty_outcome(p.path_index(), params.steps)).collect();
    let mut state = PathState::new(disc, m0.clone())?;
    let mut unit = state.m.max_unit_defect();
    let mut tangency: f64 = 0.0;
    for j in 0..=params.steps {
        outcomes
            .par_iter_mut()
            .zip(paths.par_iter())
            .try_for_each(|(o, p)| level.observe(o, j, &state.m, p.at_step(j), &config.snapshot_steps))?;
        if j < params.steps {
            let rec = advance(disc, &mut state, &params, nc, 0.0, config.solver_tolerance).map_err(|e| Error::Path {
                path_index: 0,
                seed: config.master_seed,
                source: Box::new(e),
            })?;
            tangency = tangency.max(rec.tangency_defect);
            unit = unit.max(state.m.max_unit_defect());
        }
    }
    for o in &mut outcomes {
        o.max_unit_defect = unit;
        o.max_tangency_defect = tangency;
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::uniform_unit_square_mesh;
    use crate::scheme::{initial_field, DEFAULT_SOLVER_TOL};

    #[test]
    fn path_basics() {
        let p = sample_path(42, 3, 10, 0.1).unwrap();
        assert_eq!(p.w_k(0.0), 0.0);
        assert_eq!(p.cumulative().len(), 11);
        for j in 0..10 {
            assert_eq!(p.cumulative()[j + 1] - p.cumulative()[j], p.increments()[j]);
            let tj = j as f64 * 0.1;
            assert_eq!(p.w_k(tj), p.at_step(j));
            assert_eq!(p.w_k(tj + 0.05), p.at_step(j));
            assert_eq!(p.w_k(tj + 0.0999), p.at_step(j));
        }
        assert_eq!(p.w_k(5.0), p.at_step(10));
        assert_eq!(p.w_k(-1.0), 0.0);
        assert_eq!(p, sample_path(42, 3, 10, 0.1).unwrap());
        assert_ne!(p, sample_path(42, 4, 10, 0.1).unwrap());
        assert!(sample_path(1, 0, 0, 0.1).is_err());
        assert!(sample_path(1, 0, 3, 0.0).is_err());
    }

    #[test]
    fn accumulator_moments() {
        let mut a = Accumulator::default();
        for x in [1.0, 2.0, 3.0, 4.0] {
            a.push(x);
        }
        assert_eq!(a.mean(), 2.5);
        assert!((a.variance() - 5.0 / 3.0).abs() < 1e-15);
        let mut one = Accumulator::default();
        one.push(7.0);
        assert_eq!(one.mean(), 7.0);
        assert_eq!(one.variance(), 0.0);
    }

    #[test]
    fn unit_fields_have_no_defect() {
        let mesh = uniform_unit_square_mesh(3).unwrap();
        let m = NodalField::constant(mesh.node_count(), Vec3::z());
        assert_eq!(unit_defect_integral(&mesh, &m).unwrap(), 0.0);
        assert_eq!(error_ehk(&mesh, 0.1, &[vec![m.clone(), m]]).unwrap(), 0.0);
        assert!(error_ehk(&mesh, 0.1, &[]).is_err());
        assert!(error_ehk(&mesh, 0.1, &[vec![]]).is_err());
    }

    #[test]
    fn constant_defect_single_element() {
        let mesh = Mesh::new(vec![[0.0, 0.0], [0.4, 0.0], [0.0, 0.3]], vec![[0, 1, 2]]).unwrap();
        let m = NodalField::constant(3, Vec3::new(0.0, 0.9, 0.0));
        let k = 0.25;
        let e = error_ehk(&mesh, k, &[vec![m]]).unwrap();
        let area: f64 = 0.06;
        assert!((e - 0.1 * (area * k).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ragged_traces_rejected() {
        assert!(energy_trace(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert_eq!(energy_trace(&[vec![1.0, 2.0]]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(energy_trace(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn snapshot_cadence() {
        assert_eq!(default_snapshot_steps(8), (0..=8).collect::<Vec<_>>());
        assert_eq!(default_snapshot_steps(20), vec![0, 3, 6, 9, 12, 15, 18, 20]);
        assert_eq!(default_snapshot_steps(1), vec![0, 1]);
    }

    fn small_setup(g: crate::algebra::NoiseSpec) -> (Discretization, NoiseCoefficient, NodalField) {
        let disc = Discretization::new(uniform_unit_square_mesh(4).unwrap()).unwrap();
        let nc = g.build(disc.mesh()).unwrap();
        let m0 = initial_field(disc.mesh(), |x| Vec3::new(x[0], x[1], 0.4).normalize()).unwrap();
        (disc, nc, m0)
    }

    fn config(paths: usize, share: bool) -> MonteCarloConfig {
        MonteCarloConfig {
            params: SchemeParams::new(1.0, 1.0, 0.7, 0.5, 5).unwrap(),
            paths,
            master_seed: 9,
            workers: 2,
            snapshot_steps: vec![0, 5],
            solver_tolerance: DEFAULT_SOLVER_TOL,
            share_constant_g: share,
        }
    }

    #[test]
    fn single_path_stats_equal_path_values() {
        let (disc, nc, m0) = small_setup(crate::algebra::NoiseSpec::PhaseWave { a: 1.0, b: 0.0 });
        let cfg = config(1, true);
        let outcomes = run_paths(&disc, &nc, &m0, &cfg).unwrap();
        let stats = EnsembleStats::from_outcomes(&outcomes).unwrap();
        assert_eq!(stats.path_count, 1);
        assert_eq!(stats.energy_mean(), outcomes[0].energy);
        assert_eq!(stats.error_ehk(), outcomes[0].defect.sqrt());
        assert_eq!(stats.mean_field(5).unwrap(), outcomes[0].snapshots[&5]);
    }

    #[test]
    fn shared_trajectory_matches_per_path_runs() {
        let (disc, nc, m0) = small_setup(crate::algebra::NoiseSpec::Constant(Vec3::x()));
        let shared = run_paths(&disc, &nc, &m0, &config(3, true)).unwrap();
        let full = run_paths(&disc, &nc, &m0, &config(3, false)).unwrap();
        assert_eq!(shared, full);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (disc, nc, m0) = small_setup(crate::algebra::NoiseSpec::PhaseWave { a: 1.0, b: 1.0 });
        let mut a = config(4, true);
        a.workers = 1;
        let mut b = config(4, true);
        b.workers = 3;
        assert_eq!(run_monte_carlo(&disc, &nc, &m0, &a).unwrap(), run_monte_carlo(&disc, &nc, &m0, &b).unwrap());
    }

    #[test]
    fn mean_is_permutation_invariant() {
        let (disc, nc, m0) = small_setup(crate::algebra::NoiseSpec::Constant(Vec3::x()));
        let mut outcomes = run_paths(&disc, &nc, &m0, &config(6, true)).unwrap();
        let forward = EnsembleStats::from_outcomes(&outcomes).unwrap();
        outcomes.reverse();
        outcomes.swap(1, 4);
        let shuffled = EnsembleStats::from_outcomes(&outcomes).unwrap();
        for (a, b) in forward.energy_mean().iter().zip(shuffled.energy_mean()) {
            assert!((a - b).abs() <= 1e-12 * a.abs());
        }
        assert!((forward.error_ehk() - shuffled.error_ehk()).abs() <= 1e-12);
        let (fa, fb) = (forward.mean_field(5).unwrap(), shuffled.mean_field(5).unwrap());
        assert!(fa.max_abs_diff(&fb) <= 1e-12);
    }
}
