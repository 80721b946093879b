//! The three experiment drivers behind the command-line tool: a single
//! path (`simulate`), the error study over mesh sizes (`convergence`) and
//! the ensemble exchange energy over damping values (`energy`).

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::json;

use crate::error::{Error, Result};
use crate::fem::NodalField;
use crate::io::{builtin_m0, fmt_f64, Csv, KRule, Manifest, SimulationConfig};
use crate::mesh::{uniform_unit_square_mesh, Mesh};
use crate::scheme::{normalize_initial, transform_to_magnetization, Discretization, SchemeParams};
use crate::stochastic::{default_snapshot_steps, run_monte_carlo, sample_path, simulate_path, MonteCarloConfig};
use crate::vtk::{self, PointData};

/// Starting configuration for each command before file and flag overrides.
pub fn preset(command: &str, full_scale: bool) -> SimulationConfig {
    let base = SimulationConfig { full_scale, ..SimulationConfig::default() };
    match (command, full_scale) {
        ("convergence", false) => SimulationConfig { n_list: vec![10, 20, 40], k_rules: vec![KRule::H], paths: 20, ..base },
        ("convergence", true) => SimulationConfig {
            n_list: vec![10, 20, 30, 40, 50],
            k_rules: vec![KRule::H, KRule::HalfH, KRule::QuarterH],
            paths: 400,
            ..base
        },
        ("energy", false) => SimulationConfig { n: 20, k: Some(1.0 / 50.0), paths: 20, ..base },
        ("energy", true) => SimulationConfig { n: 60, k: Some(1.0 / 100.0), paths: 400, ..base },
        _ => base,
    }
}

/// Nodal interpolant of the builtin initial magnetization.
pub fn builtin_initial_field(mesh: &Mesh) -> Result<NodalField> {
    let values = mesh.nodes().iter().map(|&x| builtin_m0(x)).collect::<Result<Vec<_>>>()?;
    normalize_initial(NodalField::from_values(values)?)
}

struct Setup {
    disc: Discretization,
    nc: crate::algebra::NoiseCoefficient,
    m0: NodalField,
}

fn setup(config: &SimulationConfig, n: usize) -> Result<Setup> {
    let disc = Discretization::new(uniform_unit_square_mesh(n)?)?;
    let nc = config.g.to_spec()?.build(disc.mesh())?;
    let m0 = builtin_initial_field(disc.mesh())?;
    Ok(Setup { disc, nc, m0 })
}

fn params(config: &SimulationConfig, lambda2: f64, steps: usize) -> Result<SchemeParams> {
    SchemeParams::new(config.lambda1, lambda2, config.theta, config.final_time, steps)
        .map_err(|e| Error::Config(e.to_string()))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// What a command produced, for the caller to report.
#[derive(Debug, Clone)]
pub struct Report {
    pub manifest: Manifest,
    pub warnings: Vec<String>,
}

/// Single-path run: per-step trace, field snapshots and the final fields.
pub fn simulate(config: &SimulationConfig, out: &Path) -> Result<Report> {
    config.validate()?;
    let steps = config.resolve_steps(config.n, config.k_rule);
    let p = params(config, config.lambda2, steps)?;
    let s = setup(config, config.n)?;
    let mesh = s.disc.mesh();
    let mut manifest = Manifest::new("simulate", config);
    manifest.warnings.extend(p.stability_warning(mesh.h()));

    let snapshots = snapshot_steps(config, steps);
    let path = sample_path(config.master_seed, 0, steps, p.k())?;
    let (outcome, state) = simulate_path(&s.disc, &s.nc, &s.m0, &path, &p, &snapshots, config.solver_tolerance)?;

    prepare_dir(out)?;
    let mut trace = Csv::new(&["j", "t", "energy", "v_norm_sq", "iterations", "residual"]);
    for r in &state.records {
        trace.push(vec![
            r.j.to_string(),
            fmt_f64(r.t),
            fmt_f64(r.energy),
            fmt_f64(r.v_norm_sq),
            r.iterations.to_string(),
            fmt_f64(r.residual),
        ]);
    }
    trace.write(&out.join("trace.csv"))?;
    manifest.record(out, "trace.csv")?;

    for (j, field) in &outcome.snapshots {
        let name = format!("M_step_{j:05}.vtk");
        vtk::write_field(&out.join(&name), mesh, &format!("M at step {j}"), "M", field)?;
        manifest.record(out, &name)?;
    }
    let big_m = transform_to_magnetization(&state.m, path.at_step(steps), &s.nc)?;
    let modulus = big_m.iter().map(|v| v.norm()).collect();
    let body = vtk::render(
        mesh,
        &format!("final fields at t = {}", fmt_f64(p.time(steps))),
        &[PointData::Vectors("M", &big_m), PointData::Vectors("m", &state.m), PointData::Scalars("modulus", modulus)],
    )?;
    std::fs::write(out.join("final.vtk"), body)?;
    manifest.record(out, "final.vtk")?;

    manifest.results.insert("steps".into(), json!(steps));
    manifest.results.insert("k".into(), json!(p.k()));
    manifest.results.insert("h".into(), json!(mesh.h()));
    manifest.results.insert("max_unit_defect".into(), json!(outcome.max_unit_defect));
    manifest.results.insert("max_tangency_defect".into(), json!(outcome.max_tangency_defect));
    manifest.write(out)?;
    let warnings = manifest.warnings.clone();
    Ok(Report { manifest, warnings })
}

/// One row of the error table.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub n: usize,
    pub k: f64,
    pub paths: usize,
    pub seed: u64,
    pub e_hk: f64,
}

/// `E_{h,k}` for every `(n, k-rule)` pair, in that nesting order.
pub fn convergence_rows(config: &SimulationConfig) -> Result<(Vec<ErrorRow>, Vec<String>)> {
    config.validate()?;
    if config.n_list.is_empty() || config.k_rules.is_empty() {
        return Err(Error::Config("convergence needs a non-empty n-list and k-rule list".into()));
    }
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &n in &config.n_list {
        let s = setup(config, n)?;
        for &rule in &config.k_rules {
            let steps = config.resolve_steps(n, rule);
            let p = params(config, config.lambda2, steps)?;
            warnings.extend(p.stability_warning(s.disc.mesh().h()));
            let mc = mc_config(config, p, vec![]);
            let stats = run_monte_carlo(&s.disc, &s.nc, &s.m0, &mc)?;
            rows.push(ErrorRow { n, k: p.k(), paths: config.paths, seed: config.master_seed, e_hk: stats.error_ehk() });
        }
    }
    Ok((rows, warnings))
}

pub fn convergence(config: &SimulationConfig, out: &Path) -> Result<Report> {
    let (rows, warnings) = convergence_rows(config)?;
    prepare_dir(out)?;
    let mut csv = Csv::new(&["n", "k", "L", "seed", "E_hk"]);
    for r in &rows {
        csv.push(vec![r.n.to_string(), fmt_f64(r.k), r.paths.to_string(), r.seed.to_string(), fmt_f64(r.e_hk)]);
    }
    csv.write(&out.join("errors.csv"))?;
    let mut manifest = Manifest::new("convergence", config);
    manifest.warnings = warnings.clone();
    manifest.record(out, "errors.csv")?;
    manifest.write(out)?;
    Ok(Report { manifest, warnings })
}

/// Ensemble exchange-energy trace for one damping value.
#[derive(Debug, Clone)]
pub struct EnergyTrace {
    pub lambda2: f64,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub mean_fields: BTreeMap<usize, NodalField>,
}

impl EnergyTrace {
    /// Mean energy at the grid time closest to `t`, divided by the initial value.
    pub fn ratio_at(&self, t: f64) -> f64 {
        let j = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(j, _)| j)
            .unwrap_or(0);
        self.mean[j] / self.mean[0]
    }
}

pub fn energy_traces(config: &SimulationConfig) -> Result<(Vec<EnergyTrace>, Vec<String>)> {
    config.validate()?;
    if config.lambda2_list.is_empty() {
        return Err(Error::Config("energy needs a non-empty lambda2 list".into()));
    }
    let s = setup(config, config.n)?;
    let steps = config.resolve_steps(config.n, config.k_rule);
    let snapshots = snapshot_steps(config, steps);
    let mut traces = Vec::new();
    let mut warnings = Vec::new();
    for &lambda2 in &config.lambda2_list {
        let p = params(config, lambda2, steps)?;
        warnings.extend(p.stability_warning(s.disc.mesh().h()));
        let stats = run_monte_carlo(&s.disc, &s.nc, &s.m0, &mc_config(config, p, snapshots.clone()))?;
        let mean_fields = snapshots.iter().filter_map(|&j| stats.mean_field(j).map(|f| (j, f))).collect();
        traces.push(EnergyTrace {
            lambda2,
            times: (0..=steps).map(|j| p.time(j)).collect(),
            mean: stats.energy_mean(),
            std: stats.energy_std(),
            mean_fields,
        });
    }
    Ok((traces, warnings))
}

pub fn energy(config: &SimulationConfig, out: &Path) -> Result<Report> {
    let (traces, warnings) = energy_traces(config)?;
    prepare_dir(out)?;
    let mesh = uniform_unit_square_mesh(config.n)?;
    let mut manifest = Manifest::new("energy", config);
    manifest.warnings = warnings.clone();
    let mut ratios = serde_json::Map::new();
    for tr in &traces {
        let tag = format!("{}", tr.lambda2);
        let mut csv = Csv::new(&["t", "mean_energy", "std_energy"]);
        for ((t, m), s) in tr.times.iter().zip(&tr.mean).zip(&tr.std) {
            csv.push(vec![fmt_f64(*t), fmt_f64(*m), fmt_f64(*s)]);
        }
        let name = format!("energy_lambda2_{tag}.csv");
        csv.write(&out.join(&name))?;
        manifest.record(out, &name)?;
        for (j, field) in &tr.mean_fields {
            let name = format!("mean_M_lambda2_{tag}_step_{j:05}.vtk");
            vtk::write_field(&out.join(&name), &mesh, &format!("E(M) at step {j}, lambda2 = {tag}"), "mean_M", field)?;
            manifest.record(out, &name)?;
        }
        let t1 = config.final_time.min(1.0);
        ratios.insert(
            tag,
            json!({
                "t": t1,
                "energy_ratio": tr.ratio_at(t1),
                "final_to_initial": tr.mean[tr.mean.len() - 1] / tr.mean[0],
            }),
        );
    }
    manifest.results.insert("energy_ratios".into(), serde_json::Value::Object(ratios));
    manifest.write(out)?;
    Ok(Report { manifest, warnings })
}

fn snapshot_steps(config: &SimulationConfig, steps: usize) -> Vec<usize> {
    match &config.snapshot_steps {
        Some(list) => list.iter().copied().filter(|&j| j <= steps).collect(),
        None => default_snapshot_steps(steps),
    }
}

fn mc_config(config: &SimulationConfig, params: SchemeParams, snapshot_steps: Vec<usize>) -> MonteCarloConfig {
    MonteCarloConfig {
        params,
        paths: config.paths,
        master_seed: config.master_seed,
        workers: config.worker_count,
        snapshot_steps,
        solver_tolerance: config.solver_tolerance,
        share_constant_g: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_experiment_sizes() {
        let c = preset("convergence", false);
        assert_eq!((c.n_list.clone(), c.paths), (vec![10, 20, 40], 20));
        let c = preset("convergence", true);
        assert_eq!(c.n_list, vec![10, 20, 30, 40, 50]);
        assert_eq!(c.paths, 400);
        let e = preset("energy", false);
        assert_eq!(e.resolve_steps(e.n, e.k_rule), 50);
        let e = preset("energy", true);
        assert_eq!((e.n, e.resolve_steps(e.n, e.k_rule)), (60, 100));
    }

    #[test]
    fn initial_field_center() {
        let mesh = uniform_unit_square_mesh(4).unwrap();
        let m0 = builtin_initial_field(&mesh).unwrap();
        let center = 2 * 5 + 2;
        assert_eq!(m0[center], crate::fem::Vec3::z());
        assert!(m0.max_unit_defect() <= 1e-12);
    }

    #[test]
    fn small_convergence_table() {
        let c = SimulationConfig { n_list: vec![3], paths: 1, ..SimulationConfig::default() };
        let (rows, warnings) = convergence_rows(&c).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(warnings.is_empty());
        assert_eq!(rows[0].k, 1.0 / 3.0);
        assert!(rows[0].e_hk > 0.0);
    }

    #[test]
    fn halving_rule_halves_k() {
        let c = SimulationConfig { n_list: vec![4], paths: 1, k_rules: vec![KRule::H, KRule::HalfH], ..SimulationConfig::default() };
        let (rows, _) = convergence_rows(&c).unwrap();
        assert_eq!(rows[1].k, rows[0].k / 2.0);
    }
}
