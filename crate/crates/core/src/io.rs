//! Run configuration, the builtin initial magnetization and output formats.
//!
//! CSV files are comma-separated with a header row and LF line endings.
//! Every float is written by [`fmt_f64`] (17 significant digits), so a
//! given configuration always produces the same bytes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algebra::NoiseSpec;
use crate::error::{Error, Result};
use crate::fem::Vec3;

/// `{:.16e}`: 17 significant digits, round-trip exact.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Vortex-like initial magnetization on `(-0.5, 0.5)²`.
///
/// With `x* = 2x` and `A = (1 − 2|x*|)⁴`:
///
/// ```text
/// |x*| < 1/2       (2x*A, A² − |x*|²) / (A² + |x*|²)
/// 1/2 ≤ |x*| ≤ 1   (−2x*A, A² − |x*|²) / (A² + |x*|²)
/// |x*| > 1         (−x*, 0) / |x*|
/// ```
///
/// Both branch interfaces are continuity points.
pub fn builtin_m0(x: [f64; 2]) -> Result<Vec3> {
    const SLACK: f64 = 1e-12;
    if !x.iter().all(|c| c.is_finite() && c.abs() <= 0.5 + SLACK) {
        return Err(Error::InvalidParameter(format!("point ({}, {}) lies outside the unit square", x[0], x[1])));
    }
    let xs = [2.0 * x[0], 2.0 * x[1]];
    let r = xs[0].hypot(xs[1]);
    if r > 1.0 {
        return Ok(Vec3::new(-xs[0] / r, -xs[1] / r, 0.0));
    }
    let a = (1.0 - 2.0 * r).powi(4);
    let denom = a * a + r * r;
    let sign = if r < 0.5 { 1.0 } else { -1.0 };
    Ok(Vec3::new(sign * 2.0 * xs[0] * a, sign * 2.0 * xs[1] * a, a * a - r * r) / denom)
}

/// How the time step follows the mesh when `steps` is not given:
/// `k = h`, `h/2` or `h/4` with the nominal size `h = 1/n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KRule {
    #[serde(rename = "h")]
    H,
    #[serde(rename = "h/2")]
    HalfH,
    #[serde(rename = "h/4")]
    QuarterH,
}

impl KRule {
    pub fn divisor(self) -> usize {
        match self {
            KRule::H => 1,
            KRule::HalfH => 2,
            KRule::QuarterH => 4,
        }
    }

    /// Number of steps `J` so that `k = T/J` approximates `divisor⁻¹ / n`.
    pub fn steps(self, n: usize, final_time: f64) -> usize {
        ((final_time * (n * self.divisor()) as f64).round() as usize).max(1)
    }
}

impl FromStr for KRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "h" => Ok(KRule::H),
            "h/2" => Ok(KRule::HalfH),
            "h/4" => Ok(KRule::QuarterH),
            other => Err(Error::Config(format!("unknown k-rule '{other}' (expected h, h/2 or h/4)"))),
        }
    }
}

impl fmt::Display for KRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KRule::H => "h",
            KRule::HalfH => "h/2",
            KRule::QuarterH => "h/4",
        })
    }
}

/// Noise coefficient as written in a config file: either a constant
/// vector `[gx, gy, gz]` or a catalog id such as `"wave:a,b"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GSetting {
    Vector([f64; 3]),
    Catalog(String),
}

impl Default for GSetting {
    fn default() -> Self {
        GSetting::Vector([1.0, 0.0, 0.0])
    }
}

impl GSetting {
    pub fn to_spec(&self) -> Result<NoiseSpec> {
        match self {
            GSetting::Vector(v) => Ok(NoiseSpec::Constant(Vec3::new(v[0], v[1], v[2]))),
            GSetting::Catalog(id) => {
                let (name, args) = id.split_once(':').unwrap_or((id.as_str(), ""));
                match name.trim() {
                    "wave" => {
                        let v = parse_f64_list(args)?;
                        match v[..] {
                            [a, b] => Ok(NoiseSpec::PhaseWave { a, b }),
                            _ => Err(Error::Config(format!("'wave' takes two parameters a,b; got '{args}'"))),
                        }
                    }
                    _ => Err(Error::Config(format!("unknown noise coefficient '{id}'"))),
                }
            }
        }
    }
}

impl FromStr for GSetting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.contains(':') {
            return Ok(GSetting::Catalog(s.to_string()));
        }
        match parse_f64_list(s)?[..] {
            [x, y, z] => Ok(GSetting::Vector([x, y, z])),
            _ => Err(Error::Config(format!("expected 'gx,gy,gz' or a catalog id, got '{s}'"))),
        }
    }
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad number '{t}': {e}"))))
        .collect()
}

pub fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<usize>().map_err(|e| Error::Config(format!("bad integer '{t}': {e}"))))
        .collect()
}

/// Flat run configuration. Missing keys take the desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Mesh subdivisions per side.
    pub n: usize,
    /// Explicit number of time steps; overrides `k` and `k_rule`.
    pub steps: Option<usize>,
    /// Explicit time step; `J = round(T / k)`.
    pub k: Option<f64>,
    pub k_rule: KRule,
    #[serde(rename = "T")]
    pub final_time: f64,
    pub theta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(rename = "L")]
    pub paths: usize,
    pub master_seed: u64,
    pub g: GSetting,
    pub output_dir: PathBuf,
    pub worker_count: usize,
    pub n_list: Vec<usize>,
    pub k_rules: Vec<KRule>,
    pub lambda2_list: Vec<f64>,
    pub snapshot_steps: Option<Vec<usize>>,
    pub solver_tolerance: f64,
    /// Use the full-size experiment presets instead of the desk-scale ones.
    pub full_scale: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 10,
            steps: None,
            k: None,
            k_rule: KRule::H,
            final_time: 1.0,
            theta: 0.7,
            lambda1: 1.0,
            lambda2: 1.0,
            paths: 20,
            master_seed: 42,
            g: GSetting::default(),
            output_dir: PathBuf::from("out"),
            worker_count: 0,
            n_list: vec![5, 10, 20],
            k_rules: vec![KRule::H],
            lambda2_list: vec![1.0],
            snapshot_steps: None,
            solver_tolerance: crate::scheme::DEFAULT_SOLVER_TOL,
            full_scale: false,
        }
    }
}

impl SimulationConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return bad(format!("theta must lie in [0, 1], got {}", self.theta));
        }
        if !(self.lambda1.is_finite() && self.lambda1 != 0.0) {
            return bad(format!("lambda1 must be nonzero, got {}", self.lambda1));
        }
        if !(self.lambda2.is_finite() && self.lambda2 > 0.0) {
            return bad(format!("lambda2 must be positive, got {}", self.lambda2));
        }
        if !(self.final_time.is_finite() && self.final_time > 0.0) {
            return bad(format!("T must be positive, got {}", self.final_time));
        }
        if self.paths == 0 {
            return bad("L must be >= 1".into());
        }
        if self.steps == Some(0) {
            return bad("steps must be >= 1".into());
        }
        if let Some(k) = self.k {
            if !(k.is_finite() && k > 0.0) {
                return bad(format!("k must be positive, got {k}"));
            }
        }
        if !(self.solver_tolerance > 0.0) {
            return bad(format!("solver tolerance must be positive, got {}", self.solver_tolerance));
        }
        if self.n_list.contains(&0) {
            return bad("n-list entries must be >= 1".into());
        }
        if let Some(bad_l2) = self.lambda2_list.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return bad(format!("lambda2-list entries must be positive, got {bad_l2}"));
        }
        if let crate::algebra::NoiseSpec::Constant(g) = self.g.to_spec()? {
            if !((g.norm() - 1.0).abs() <= crate::algebra::UNIT_G_TOL) {
                return bad(format!("g must be a unit vector, got modulus {}", g.norm()));
            }
        }
        Ok(())
    }

    /// Number of steps for mesh size `n`: explicit `steps`, else `round(T/k)`,
    /// else the k-rule.
    pub fn resolve_steps(&self, n: usize, rule: KRule) -> usize {
        if let Some(j) = self.steps {
            j
        } else if let Some(k) = self.k {
            ((self.final_time / k).round() as usize).max(1)
        } else {
            rule.steps(n, self.final_time)
        }
    }
}

/// One CSV document: header plus rows of preformatted cells.
#[derive(Debug, Clone, Default)]
pub struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

/// SHA-256 over a git-style blob header `blob <len>\0` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OutputEntry {
    pub file: String,
    pub blob_sha256: String,
}

/// Run manifest: the resolved configuration, seed, output hashes and any
/// scalar results worth keeping next to the files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub config: SimulationConfig,
    pub master_seed: u64,
    pub outputs: Vec<OutputEntry>,
    pub results: serde_json::Map<String, serde_json::Value>,
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &SimulationConfig) -> Self {
        Self {
            command: command.to_string(),
            config: config.clone(),
            master_seed: config.master_seed,
            outputs: vec![],
            results: serde_json::Map::new(),
            warnings: vec![],
        }
    }

    /// Hashes a file already written under `dir`.
    pub fn record(&mut self, dir: &Path, file: &str) -> Result<()> {
        let bytes = std::fs::read(dir.join(file))?;
        self.outputs.push(OutputEntry { file: file.to_string(), blob_sha256: content_hash(&bytes) });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        text.push('\n');
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn m0_reference_points() {
        assert_eq!(builtin_m0([0.0, 0.0]).unwrap(), Vec3::z());
        let s = 0.5f64.sqrt();
        assert!((builtin_m0([0.5, 0.5]).unwrap() - Vec3::new(-s, -s, 0.0)).amax() < 1e-15);

        // x* = (0.6, 0), A = 0.2⁴ = 0.0016, second branch
        let a: f64 = 0.0016;
        let denom = a * a + 0.36;
        let expected = Vec3::new(-2.0 * 0.6 * a / denom, 0.0, (a * a - 0.36) / denom);
        let got = builtin_m0([0.3, 0.0]).unwrap();
        assert!((got - expected).amax() < 1e-15);
        assert!((got.x + 0.005333).abs() < 1e-6);
        assert!((got.z + 0.999986).abs() < 1e-6);
        assert!((got.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn m0_rejects_points_outside() {
        assert!(builtin_m0([0.6, 0.0]).is_err());
        assert!(builtin_m0([0.0, f64::NAN]).is_err());
    }

    #[test]
    fn m0_unit_on_grid() {
        for i in 0..=100 {
            for j in 0..=100 {
                let x = [-0.5 + i as f64 / 100.0, -0.5 + j as f64 / 100.0];
                assert!((builtin_m0(x).unwrap().norm() - 1.0).abs() < 1e-12, "{x:?}");
            }
        }
    }

    #[test]
    fn m0_branches_continuous() {
        for radius in [0.25, 0.5] {
            for angle in [0.3, 0.7, 2.0, 4.0] {
                let dir = [f64::cos(angle), f64::sin(angle)];
                let at = |r: f64| builtin_m0([r * dir[0], r * dir[1]]).unwrap();
                let (lo, hi) = (at(radius - 0.5e-9), at(radius + 0.5e-9));
                assert!((lo - hi).amax() <= 1e-6, "radius {radius}");
            }
        }
    }

    #[test]
    fn k_rules() {
        assert_eq!(KRule::H.steps(5, 1.0), 5);
        assert_eq!(KRule::HalfH.steps(5, 1.0), 10);
        assert_eq!(KRule::QuarterH.steps(20, 1.0), 80);
        assert_eq!("h/2".parse::<KRule>().unwrap(), KRule::HalfH);
        assert!("2h".parse::<KRule>().is_err());
        assert_eq!(KRule::QuarterH.to_string(), "h/4");
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let c = SimulationConfig::from_json(r#"{"n": 4, "T": 0.5, "L": 3, "g": [0, 0, 1], "k_rule": "h/2"}"#).unwrap();
        assert_eq!(c.n, 4);
        assert_eq!(c.final_time, 0.5);
        assert_eq!(c.paths, 3);
        assert_eq!(c.theta, 0.7);
        assert_eq!(c.resolve_steps(4, c.k_rule), 4);
        assert_eq!(SimulationConfig::from_json(&c.to_json()).unwrap(), c);
        assert!(SimulationConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = SimulationConfig::default();
        ok.validate().unwrap();
        for bad in [
            SimulationConfig { theta: 1.5, ..ok.clone() },
            SimulationConfig { lambda1: 0.0, ..ok.clone() },
            SimulationConfig { lambda2: -1.0, ..ok.clone() },
            SimulationConfig { final_time: 0.0, ..ok.clone() },
            SimulationConfig { paths: 0, ..ok.clone() },
            SimulationConfig { g: GSetting::Catalog("nope".into()), ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn g_settings() {
        assert_eq!("1,0,0".parse::<GSetting>().unwrap(), GSetting::Vector([1.0, 0.0, 0.0]));
        assert_eq!(
            "wave:2,1".parse::<GSetting>().unwrap().to_spec().unwrap(),
            NoiseSpec::PhaseWave { a: 2.0, b: 1.0 }
        );
        assert!("1,0".parse::<GSetting>().is_err());
        assert!(GSetting::Catalog("wave:1".into()).to_spec().is_err());
    }

    #[test]
    fn csv_rendering() {
        let mut c = Csv::new(&["a", "b"]);
        c.push(vec![fmt_f64(0.1), fmt_f64(-2.0)]);
        assert_eq!(c.render(), "a,b\n1.0000000000000001e-1,-2.0000000000000000e0\n");
    }

    #[test]
    fn hash_is_git_style() {
        // sha256 of "blob 0\0"
        assert_eq!(content_hash(b""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
    }
}
