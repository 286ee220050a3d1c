//! Command-line driver: run configuration (TOML file plus flag overrides),
//! the six commands, and the report files they write.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analytic::{ExampleMap, ExampleName, IDENTITY};
use crate::domain::{curve_domain_from_map, unit_ball, Domain};
use crate::error::{Error, Result};
use crate::mesh::{build_polar_mesh, convergence_order, converges_with_order, DiscMesh, MeshDump, ROUNDOFF_FLOOR};
use crate::residual::{
    boundary_conditions_example, example_report, singular_masses, standard_family, stationarity_test, write_csv, CsvRow, Omega, ResidualReport, DEFAULT_COLLAR_R0,
};
use crate::solver::{angle_variance, rigidity_experiment_with_history, write_history_csv, SolverConfig, RIGIDITY_DIST_TOL};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAIL: i32 = 2;

pub const MAX_REFINEMENTS: usize = 5;
pub const MAX_EPS: f64 = 0.1;

/// Loop radii and quadrature size for the singular mass measurement.
pub const MASS_RADII: [f64; 3] = [0.2, 0.35, 0.5];
pub const MASS_QUAD: usize = 1024;
pub const MASS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    VerifyExample,
    BoundaryReport,
    Stationarity,
    Masses,
    Rigidity,
    DumpMesh,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::VerifyExample => "verify-example",
            Self::BoundaryReport => "boundary-report",
            Self::Stationarity => "stationarity",
            Self::Masses => "masses",
            Self::Rigidity => "rigidity",
            Self::DumpMesh => "dump-mesh",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Ball,
    Curve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub n_rings: usize,
    pub n_sectors: usize,
    #[serde(default = "unit_grading")]
    pub grading: f64,
}

fn unit_grading() -> f64 {
    1.0
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self { n_rings: 24, n_sectors: 96, grading: 1.0 }
    }
}

impl FromStr for MeshSpec {
    type Err = Error;
    /// `R,S` or `R,S,G`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config { key: "mesh".into(), msg: format!("expected R,S[,G], got '{s}'") };
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 2 && parts.len() != 3 {
            return Err(bad());
        }
        let n_rings = parts[0].parse().map_err(|_| bad())?;
        let n_sectors = parts[1].parse().map_err(|_| bad())?;
        let grading = match parts.get(2) {
            Some(g) => g.parse().map_err(|_| bad())?,
            None => 1.0,
        };
        Ok(Self { n_rings, n_sectors, grading })
    }
}

impl MeshSpec {
    /// Level `l` doubles rings and sectors `l` times.
    pub fn refined(&self, level: usize) -> Self {
        Self { n_rings: self.n_rings << level, n_sectors: self.n_sectors << level, grading: self.grading }
    }

    pub fn build(&self) -> Result<DiscMesh> {
        build_polar_mesh(self.n_rings, self.n_sectors, self.grading).map_err(|e| Error::Config { key: "mesh".into(), msg: e.to_string() })
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub example: ExampleName,
    pub domain: DomainKind,
    pub mesh: MeshSpec,
    pub refinements: usize,
    pub seeds: Vec<u64>,
    pub eps: f64,
    pub output_dir: PathBuf,
    pub solver: SolverConfig,
}

/// Partial configuration as read from TOML or flags; later layers override earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialConfig {
    pub command: Option<Command>,
    pub example: Option<String>,
    pub domain: Option<DomainKind>,
    pub mesh: Option<MeshSpec>,
    pub refinements: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub eps: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub solver: Option<SolverConfig>,
}

fn field<T: serde::de::DeserializeOwned>(key: &str, v: &toml::Value) -> Result<T> {
    v.clone().try_into().map_err(|e: toml::de::Error| Error::Config { key: key.into(), msg: e.message().trim().to_string() })
}

impl PartialConfig {
    /// Parses a TOML document; unknown keys and ill-typed values are reported by key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config { key: "config".into(), msg: e.message().trim().to_string() })?;
        let mut p = Self::default();
        for (k, v) in &table {
            match k.as_str() {
                "command" => p.command = Some(field(k, v)?),
                "example" => p.example = Some(field(k, v)?),
                "domain" => p.domain = Some(field(k, v)?),
                "mesh" => {
                    p.mesh = Some(match v {
                        toml::Value::String(s) => s.parse()?,
                        _ => field(k, v)?,
                    })
                }
                "refinements" => p.refinements = Some(field(k, v)?),
                "seeds" => p.seeds = Some(field(k, v)?),
                "seed" => p.seeds = Some(vec![field(k, v)?]),
                "eps" => p.eps = Some(field(k, v)?),
                "output_dir" | "out" => p.output_dir = Some(field::<String>(k, v)?.into()),
                "solver" => p.solver = Some(field(k, v)?),
                _ => return Err(Error::Config { key: k.clone(), msg: "unknown key".into() }),
            }
        }
        Ok(p)
    }

    pub fn overlay(self, top: Self) -> Self {
        Self {
            command: top.command.or(self.command),
            example: top.example.or(self.example),
            domain: top.domain.or(self.domain),
            mesh: top.mesh.or(self.mesh),
            refinements: top.refinements.or(self.refinements),
            seeds: top.seeds.or(self.seeds),
            eps: top.eps.or(self.eps),
            output_dir: top.output_dir.or(self.output_dir),
            solver: top.solver.or(self.solver),
        }
    }

    /// Applies defaults and validates every key.
    pub fn resolve(self) -> Result<RunConfig> {
        let cfg_err = |key: &str, msg: String| Error::Config { key: key.into(), msg };
        let command = self.command.ok_or_else(|| cfg_err("command", "missing".into()))?;
        let example: ExampleName = match &self.example {
            Some(s) => s.parse().map_err(|e: Error| cfg_err("example", e.to_string()))?,
            None => ExampleName::Flat,
        };
        let natural = if example == ExampleName::NonMinimal { DomainKind::Curve } else { DomainKind::Ball };
        let domain = self.domain.unwrap_or(natural);
        if domain != natural {
            let msg = match domain {
                DomainKind::Curve => format!("the curve domain is only defined for nonminimal, not {example}"),
                DomainKind::Ball => "nonminimal does not meet the unit sphere orthogonally; use domain = curve".to_string(),
            };
            return Err(cfg_err("domain", msg));
        }
        if let ExampleName::Sw(p, q) = example {
            if p < 1 || q < 1 || gcd(p, q) != 1 {
                return Err(cfg_err("example", format!("sw:{p},{q} needs coprime positive p, q")));
            }
        }
        let mesh = self.mesh.unwrap_or_default();
        if !(mesh.grading > 0.0 && mesh.grading.is_finite()) {
            return Err(cfg_err("mesh", format!("grading {} must be positive", mesh.grading)));
        }
        mesh.build()?;
        let refinements = self.refinements.unwrap_or(3);
        if refinements == 0 || refinements > MAX_REFINEMENTS {
            return Err(cfg_err("refinements", format!("{refinements} not in 1..={MAX_REFINEMENTS}")));
        }
        let seeds = self.seeds.unwrap_or_else(|| vec![1]);
        if seeds.is_empty() {
            return Err(cfg_err("seeds", "empty".into()));
        }
        let eps = self.eps.unwrap_or(0.05);
        if !(0.0..=MAX_EPS).contains(&eps) {
            return Err(cfg_err("eps", format!("{eps} not in [0, {MAX_EPS}]")));
        }
        if command == Command::Rigidity && example != ExampleName::Flat {
            return Err(cfg_err("example", "rigidity starts from the flat disc".into()));
        }
        let solver = self.solver.unwrap_or_default();
        solver.validate().map_err(|e| cfg_err("solver", e.to_string()))?;
        let output_dir = self.output_dir.unwrap_or_else(|| PathBuf::from("out"));
        Ok(RunConfig { command, example, domain, mesh, refinements, seeds, eps, output_dir, solver })
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Parser)]
#[command(name = "hamstat", version, about = "Residual checks, stationarity tests and rigidity runs for Lagrangian discs in C^2")]
pub struct Cli {
    /// TOML run configuration; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub command: Option<Command>,
    /// flat, sw:p,q or nonminimal.
    #[arg(long)]
    pub example: Option<String>,
    #[arg(long, value_enum)]
    pub domain: Option<DomainKind>,
    /// Base mesh as R,S[,G].
    #[arg(long)]
    pub mesh: Option<String>,
    #[arg(long)]
    pub refinements: Option<usize>,
    /// Single seed; repeat for several.
    #[arg(long)]
    pub seed: Vec<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Cli {
    pub fn to_partial(&self) -> Result<PartialConfig> {
        Ok(PartialConfig {
            command: self.command,
            example: self.example.clone(),
            domain: self.domain,
            mesh: self.mesh.as_deref().map(str::parse).transpose()?,
            refinements: self.refinements,
            seeds: (!self.seed.is_empty()).then(|| self.seed.clone()),
            eps: self.eps,
            output_dir: self.out.clone(),
            solver: None,
        })
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Config { key: "config".into(), msg: format!("{}: {e}", path.display()) })?;
                PartialConfig::from_toml(&text)?
            }
            None => PartialConfig::default(),
        };
        base.overlay(self.to_partial()?).resolve()
    }
}

/// One suite assertion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    /// `None` when an order is undefined because every value sits at roundoff.
    pub value: Option<f64>,
    pub relation: &'static str,
    pub threshold: f64,
    pub pass: bool,
}

impl Assertion {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value: Some(value), relation: "<=", threshold, pass: value <= threshold }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value: Some(value), relation: ">=", threshold, pass: value >= threshold }
    }

    /// Observed order `≥ min_order`, or every value at roundoff.
    pub fn order(name: impl Into<String>, h: &[f64], err: &[f64], min_order: f64) -> Self {
        let floored = err.iter().all(|&e| e <= ROUNDOFF_FLOOR);
        let value = (!floored).then(|| convergence_order(h, err));
        Self { name: name.into(), value, relation: "order>=", threshold: min_order, pass: converges_with_order(h, err, min_order) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub config: RunConfig,
    pub assertions: Vec<Assertion>,
    pub details: Value,
    pub pass: bool,
}

/// Result of a command before anything is written.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<CsvRow>,
    pub summary: Summary,
    pub mesh: MeshDump,
    /// Extra CSV files (name, contents).
    pub extra: Vec<(String, String)>,
}

fn build_domain(kind: DomainKind, e: &ExampleMap) -> Result<Domain> {
    match kind {
        DomainKind::Ball => Ok(unit_ball()),
        DomainKind::Curve => curve_domain_from_map(e),
    }
}

struct Setup {
    example: ExampleMap,
    domain: Domain,
    meshes: Vec<DiscMesh>,
}

impl Setup {
    fn new(cfg: &RunConfig, levels: usize) -> Result<Self> {
        let example = cfg.example.build(IDENTITY)?;
        let domain = build_domain(cfg.domain, &example)?;
        let meshes = (0..levels).map(|l| cfg.mesh.refined(l).build()).collect::<Result<Vec<_>>>()?;
        Ok(Self { example, domain, meshes })
    }

    fn h(&self) -> Vec<f64> {
        self.meshes.iter().map(DiscMesh::h).collect()
    }

    fn finest(&self) -> &DiscMesh {
        self.meshes.last().expect("at least one mesh")
    }

    fn dump(&self) -> MeshDump {
        let mut d = self.example.sample(self.finest()).dump();
        if let Some((pts, nrm)) = self.domain.curve_arrays() {
            d.curve_points = Some(pts);
            d.curve_normals = Some(nrm);
        }
        d
    }
}

fn row(cfg: &RunConfig, h: f64, check: impl Into<String>, value: f64) -> CsvRow {
    CsvRow { example: cfg.example.to_string(), domain: format!("{:?}", cfg.domain).to_lowercase(), h, check: check.into(), value }
}

fn column(reports: &[ResidualReport], check: &str) -> Vec<f64> {
    reports.iter().map(|r| r.entries().iter().find(|(n, _)| *n == check).map(|&(_, v)| v).expect("known check")).collect()
}

fn verify_example(cfg: &RunConfig) -> Result<RunOutput> {
    let s = Setup::new(cfg, cfg.refinements)?;
    let fs = standard_family(&s.domain, |p| s.example.value(p[0], p[1]))?;
    let name = cfg.example.to_string();
    let reports = s.meshes.iter().map(|m| example_report(&name, &s.example, m, &s.domain, &fs)).collect::<Result<Vec<_>>>()?;
    let rows = reports.iter().flat_map(ResidualReport::csv_rows).collect();
    let h = s.h();
    let last = reports.last().expect("at least one level");
    let mut a = Vec::new();
    let mut details = json!({ "reports": reports });
    match cfg.example {
        ExampleName::Flat => {
            for (n, v) in last.entries() {
                a.push(Assertion::at_most(n, v, 1e-10));
            }
        }
        ExampleName::Sw(..) => {
            for n in ["lagrangian", "conformality", "legendrian", "conormal"] {
                a.push(Assertion::at_most(n, column(&reports, n)[reports.len() - 1], 1e-12));
            }
            a.push(Assertion::at_most("neumann_trace", last.neumann_trace, 1e-8));
            for n in ["structural", "angle_div", "angle_perp_div"] {
                a.push(Assertion::order(n, &h, &column(&reports, n), 1.0));
            }
            a.push(Assertion::at_most("stationarity", last.stationarity, 1e-6));
        }
        ExampleName::NonMinimal => {
            for n in ["lagrangian", "conformality"] {
                a.push(Assertion::at_most(n, column(&reports, n)[reports.len() - 1], 1e-12));
            }
            for n in ["structural", "angle_div", "angle_perp_div"] {
                a.push(Assertion::order(n, &h, &column(&reports, n), 1.0));
            }
            a.push(Assertion::at_most("stationarity", last.stationarity, 1e-6));
            a.push(Assertion::at_least("legendrian", last.legendrian, 0.5));
            a.push(Assertion::at_least("neumann_trace", last.neumann_trace, 1.0));
            let var = angle_variance(&s.example.sample(s.finest()))?;
            a.push(Assertion::at_least("angle_variance", var, 0.1));
            details["angle_variance"] = json!(var);
        }
    }
    Ok(finish(cfg, rows, a, details, s.dump()))
}

fn boundary_report(cfg: &RunConfig) -> Result<RunOutput> {
    let s = Setup::new(cfg, cfg.refinements)?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for m in &s.meshes {
        let b = boundary_conditions_example(&s.example, m, &s.domain, DEFAULT_COLLAR_R0)?;
        for (n, v) in [("legendrian", b.legendrian), ("conormal", b.conormal), ("neumann_trace", b.neumann_trace)] {
            rows.push(row(cfg, m.h(), n, v));
        }
        reports.push(b);
    }
    let b = reports.last().expect("at least one level");
    let a = if cfg.example == ExampleName::NonMinimal {
        vec![Assertion::at_least("legendrian", b.legendrian, 0.5), Assertion::at_least("neumann_trace", b.neumann_trace, 1.0)]
    } else {
        vec![Assertion::at_most("legendrian", b.legendrian, 1e-12), Assertion::at_most("conormal", b.conormal, 1e-12), Assertion::at_most("neumann_trace", b.neumann_trace, 1e-8)]
    };
    Ok(finish(cfg, rows, a, json!({ "reports": reports }), s.dump()))
}

fn stationarity(cfg: &RunConfig) -> Result<RunOutput> {
    let s = Setup::new(cfg, cfg.refinements)?;
    let fs = standard_family(&s.domain, |p| s.example.value(p[0], p[1]))?;
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for m in &s.meshes {
        let r = stationarity_test(&s.example.sample(m), &s.domain, &fs, &Omega::Full)?;
        rows.push(row(cfg, m.h(), "stationarity", r.value));
        results.push(r);
    }
    let values: Vec<f64> = results.iter().map(|r| r.value).collect();
    let min_order = if matches!(cfg.example, ExampleName::Sw(..)) { 0.8 } else { 1.0 };
    let a = vec![Assertion::order("stationarity", &s.h(), &values, min_order)];
    Ok(finish(cfg, rows, a, json!({ "h": s.h(), "results": results }), s.dump()))
}

fn masses(cfg: &RunConfig) -> Result<RunOutput> {
    let s = Setup::new(cfg, 1)?;
    let e = &s.example;
    let points = if e.singular_points.is_empty() { vec![[0.0, 0.0]] } else { e.singular_points.clone() };
    let mut rows = Vec::new();
    let mut a = Vec::new();
    let mut records = Vec::new();
    for p in points {
        let rec = singular_masses(|x| e.exact_angle_flux(x[0], x[1]), p, &MASS_RADII, MASS_QUAD)?;
        let tag = format!("({},{})", p[0], p[1]);
        for (n, v) in [("degree", rec.degree), ("flux_mass", rec.flux_mass), ("degree_spread", rec.degree_spread), ("flux_spread", rec.flux_spread)] {
            rows.push(row(cfg, 0.0, format!("{n}@{tag}"), v));
        }
        let want = if e.singular_points.is_empty() { 0.0 } else { rec.degree.round() };
        if !e.singular_points.is_empty() {
            a.push(Assertion::at_least(format!("|degree|@{tag}"), rec.degree.abs(), 0.5));
        }
        a.push(Assertion::at_most(format!("integer_defect@{tag}"), (rec.degree - want).abs(), MASS_TOL));
        a.push(Assertion::at_most(format!("flux_mass@{tag}"), rec.flux_mass.abs(), MASS_TOL));
        a.push(Assertion::at_most(format!("degree_spread@{tag}"), rec.degree_spread, MASS_TOL));
        records.push(rec);
    }
    Ok(finish(cfg, rows, a, json!({ "masses": records }), s.dump()))
}

fn rigidity(cfg: &RunConfig) -> Result<RunOutput> {
    let s = Setup::new(cfg, 1)?;
    let mesh = s.finest();
    let mut rows = Vec::new();
    let mut a = Vec::new();
    let mut reports = Vec::new();
    let mut extra = Vec::new();
    for &seed in &cfg.seeds {
        let (report, history) = rigidity_experiment_with_history(seed, cfg.eps, mesh, &cfg.solver)?;
        for (n, v) in [
            ("initial_distance", report.initial_distance),
            ("final_distance", report.final_distance),
            ("final_energy", report.final_energy),
            ("angle_variance", report.angle_variance),
            ("circle_defect", report.circle_defect),
            ("lagrangian_residual", report.lagrangian_residual),
        ] {
            rows.push(row(cfg, mesh.h(), format!("seed{seed}:{n}"), v));
        }
        let mut buf = Vec::new();
        write_history_csv(&history, &mut buf)?;
        extra.push((format!("history_seed{seed}.csv"), String::from_utf8(buf).expect("csv is utf-8")));
        a.push(Assertion { name: format!("seed{seed}"), value: Some(report.final_distance), relation: "rigid", threshold: RIGIDITY_DIST_TOL, pass: report.pass });
        reports.push(report);
    }
    let mut out = finish(cfg, rows, a, json!({ "reports": reports }), s.dump());
    out.extra = extra;
    Ok(out)
}

fn dump_mesh(cfg: &RunConfig) -> Result<RunOutput> {
    let s = Setup::new(cfg, 1)?;
    let m = s.finest();
    let rows = vec![row(cfg, m.h(), "n_nodes", m.n_nodes() as f64), row(cfg, m.h(), "n_triangles", m.n_triangles() as f64)];
    Ok(finish(cfg, rows, Vec::new(), json!({ "n_nodes": m.n_nodes(), "n_triangles": m.n_triangles(), "h": m.h() }), s.dump()))
}

fn finish(cfg: &RunConfig, rows: Vec<CsvRow>, assertions: Vec<Assertion>, details: Value, mesh: MeshDump) -> RunOutput {
    let pass = assertions.iter().all(|a| a.pass);
    RunOutput { rows, summary: Summary { config: cfg.clone(), assertions, details, pass }, mesh, extra: Vec::new() }
}

/// Runs the configured command without touching the filesystem.
pub fn execute(cfg: &RunConfig) -> Result<RunOutput> {
    match cfg.command {
        Command::VerifyExample => verify_example(cfg),
        Command::BoundaryReport => boundary_report(cfg),
        Command::Stationarity => stationarity(cfg),
        Command::Masses => masses(cfg),
        Command::Rigidity => rigidity(cfg),
        Command::DumpMesh => dump_mesh(cfg),
    }
}

/// Writes `report.csv`, `summary.json`, `mesh.json` and any extra files into `dir`.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = Vec::new();
    write_csv(&out.rows, &mut csv)?;
    fs::write(dir.join("report.csv"), csv)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&out.summary)? + "\n")?;
    fs::write(dir.join("mesh.json"), out.mesh.to_json()? + "\n")?;
    for (name, text) in &out.extra {
        fs::write(dir.join(name), text)?;
    }
    Ok(())
}

/// Entry point shared by the binary and the tests; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match cli.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("hamstat: {e}");
            return EXIT_USAGE;
        }
    };
    let out = match execute(&cfg) {
        Ok(o) => o,
        Err(e @ Error::Config { .. }) => {
            eprintln!("hamstat: {e}");
            return EXIT_USAGE;
        }
        Err(e) => {
            eprintln!("hamstat: {} failed: {e}", cfg.command.name());
            return EXIT_FAIL;
        }
    };
    if let Err(e) = write_outputs(&out, &cfg.output_dir) {
        eprintln!("hamstat: cannot write to {}: {e}", cfg.output_dir.display());
        return EXIT_USAGE;
    }
    for a in out.summary.assertions.iter().filter(|a| !a.pass) {
        eprintln!("hamstat: FAIL {} = {:?} ({} {})", a.name, a.value, a.relation, a.threshold);
    }
    println!("{} {}: {}", cfg.command.name(), cfg.example, if out.summary.pass { "pass" } else { "FAIL" });
    if out.summary.pass {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(e: Error) -> String {
        match e {
            Error::Config { key, .. } => key,
            other => panic!("not a config error: {other}"),
        }
    }

    fn partial(command: Command) -> PartialConfig {
        PartialConfig { command: Some(command), ..Default::default() }
    }

    #[test]
    fn defaults() {
        let c = partial(Command::VerifyExample).resolve().unwrap();
        assert_eq!(c.example, ExampleName::Flat);
        assert_eq!(c.domain, DomainKind::Ball);
        assert_eq!(c.mesh, MeshSpec::default());
        assert_eq!(c.refinements, 3);
        assert_eq!(c.seeds, vec![1]);
        let n = PartialConfig { example: Some("nonminimal".into()), ..partial(Command::Masses) }.resolve().unwrap();
        assert_eq!(n.domain, DomainKind::Curve);
    }

    #[test]
    fn mesh_spec_parsing() {
        assert_eq!("2,8,1.0".parse::<MeshSpec>().unwrap(), MeshSpec { n_rings: 2, n_sectors: 8, grading: 1.0 });
        assert_eq!("12, 48".parse::<MeshSpec>().unwrap(), MeshSpec { n_rings: 12, n_sectors: 48, grading: 1.0 });
        for bad in ["", "2", "2,8,1,4", "a,8", "2,8,x"] {
            assert_eq!(key_of(bad.parse::<MeshSpec>().unwrap_err()), "mesh", "{bad}");
        }
        assert_eq!(MeshSpec { n_rings: 3, n_sectors: 12, grading: 0.7 }.refined(2), MeshSpec { n_rings: 12, n_sectors: 48, grading: 0.7 });
    }

    #[test]
    fn toml_round() {
        let p = PartialConfig::from_toml(
            r#"
            command = "rigidity"
            seeds = [1, 2, 3]
            eps = 0.02
            output_dir = "runs/a"
            mesh = { n_rings = 12, n_sectors = 48, grading = 0.9 }
            [solver]
            max_iters = 50
            penalty_lagrangian = 0.0
            "#,
        )
        .unwrap();
        let c = p.resolve().unwrap();
        assert_eq!(c.command, Command::Rigidity);
        assert_eq!(c.seeds, vec![1, 2, 3]);
        assert_eq!(c.mesh.n_sectors, 48);
        assert_eq!(c.solver.max_iters, 50);
        assert_eq!(c.solver.stages().last(), Some(&(0.0, 1e4)));
        assert_eq!(c.solver.penalty_boundary, SolverConfig::default().penalty_boundary);
        assert_eq!(c.output_dir, PathBuf::from("runs/a"));
        let s = PartialConfig::from_toml("command = \"dump-mesh\"\nmesh = \"2,8,1.0\"").unwrap();
        assert_eq!(s.mesh.unwrap().n_sectors, 8);
    }

    #[test]
    fn flags_override_file() {
        let file = PartialConfig::from_toml("command = \"masses\"\nexample = \"sw:2,3\"\nrefinements = 2").unwrap();
        let flags = PartialConfig { example: Some("sw:1,2".into()), ..Default::default() };
        let c = file.overlay(flags).resolve().unwrap();
        assert_eq!(c.command, Command::Masses);
        assert_eq!(c.example, ExampleName::Sw(1, 2));
        assert_eq!(c.refinements, 2);
    }

    #[test]
    fn offending_keys_reported() {
        let cases: [(&str, &str); 9] = [
            ("command = \"masses\"\nfoo = 1", "foo"),
            ("command = \"fly\"", "command"),
            ("example = \"flat\"", "command"),
            ("command = \"masses\"\nexample = \"sw:2,4\"", "example"),
            ("command = \"masses\"\nexample = \"torus\"", "example"),
            ("command = \"masses\"\nexample = \"nonminimal\"\ndomain = \"ball\"", "domain"),
            ("command = \"masses\"\nexample = \"flat\"\ndomain = \"curve\"", "domain"),
            ("command = \"masses\"\nrefinements = 0", "refinements"),
            ("command = \"rigidity\"\neps = 0.5", "eps"),
        ];
        for (text, key) in cases {
            let e = PartialConfig::from_toml(text).and_then(PartialConfig::resolve).unwrap_err();
            assert_eq!(key_of(e), key, "{text}");
        }
        let more: [(&str, &str); 5] = [
            ("command = \"masses\"\nmesh = { n_rings = 1, n_sectors = 8 }", "mesh"),
            ("command = \"masses\"\nmesh = { n_rings = 4, n_sectors = 8, grading = -1.0 }", "mesh"),
            ("command = \"masses\"\nmesh = { n_rings = 4, n_sectors = 8, extra = 1 }", "mesh"),
            ("command = \"rigidity\"\nseeds = []", "seeds"),
            ("command = \"rigidity\"\n[solver]\npenalty_boundary = 0.0", "solver"),
        ];
        for (text, key) in more {
            let e = PartialConfig::from_toml(text).and_then(PartialConfig::resolve).unwrap_err();
            assert_eq!(key_of(e), key, "{text}");
        }
        assert_eq!(key_of(PartialConfig::from_toml("command = ").unwrap_err()), "config");
        assert_eq!(key_of(partial(Command::Rigidity).overlay(PartialConfig { example: Some("sw:1,2".into()), ..Default::default() }).resolve().unwrap_err()), "example");
    }

    #[test]
    fn order_assertion_handles_roundoff() {
        let h = [0.1, 0.05, 0.025];
        let a = Assertion::order("x", &h, &[1e-15, 2e-15, 4e-15], 1.0);
        assert!(a.pass && a.value.is_none());
        let b = Assertion::order("x", &h, &[1e-2, 2.5e-3, 6.25e-4], 1.0);
        assert!(b.pass && (b.value.unwrap() - 2.0).abs() < 1e-12);
        assert!(!Assertion::order("x", &h, &[1e-2, 1e-2, 1e-2], 1.0).pass);
        assert!(!Assertion::at_most("x", f64::NAN, 1.0).pass);
    }

    #[test]
    fn dump_mesh_small() {
        let c = PartialConfig { mesh: Some("2,8,1.0".parse().unwrap()), ..partial(Command::DumpMesh) }.resolve().unwrap();
        let out = execute(&c).unwrap();
        assert_eq!(out.mesh.nodes.len(), 17);
        assert_eq!(out.mesh.values.as_ref().unwrap().len(), 17);
        assert!(out.summary.pass && out.summary.assertions.is_empty());
    }
}
