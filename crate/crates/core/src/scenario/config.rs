use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use super::{CheckSpec, InitSpec, PotentialSpec, Scenario, SchemeSpec, SolverSpec};
use crate::dynamics::ParticleParams;
use crate::ensemble::{EnsembleConfig, Sampler};
use crate::grid::{Axis, Boundary, Coord};
use crate::verify::Criterion;
use crate::wave::SolverKind;

/// One problem found in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if let Some(k) = &self.key {
            write!(f, "{k}: ")?;
        }
        f.write_str(&self.message)
    }
}

/// Every problem found while reading a scenario, in file order.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "{} problem(s) in scenario:\n  {}", self.0.len(), lines.join("\n  "))
    }
}

struct Reader {
    entries: BTreeMap<String, (String, usize)>,
    used: BTreeSet<String>,
    issues: Vec<ConfigIssue>,
}

impl Reader {
    fn tokenize(text: &str) -> Self {
        let mut r = Reader { entries: BTreeMap::new(), used: BTreeSet::new(), issues: Vec::new() };
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[') {
                match inner.strip_suffix(']').map(str::trim) {
                    Some(name) if valid_key(name) => section = name.to_string(),
                    _ => r.issue(Some(line_no), None, format!("malformed section header `{line}`")),
                }
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                r.issue(Some(line_no), None, format!("expected `key = value`, found `{line}`"));
                continue;
            };
            let k = k.trim();
            if !valid_key(k) {
                r.issue(Some(line_no), None, format!("malformed key `{k}`"));
                continue;
            }
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            if let Some((_, first)) = r.entries.get(&key) {
                let msg = format!("duplicate key (first set on line {first})");
                r.issue(Some(line_no), Some(&key), msg);
                continue;
            }
            r.entries.insert(key, (v.trim().to_string(), line_no));
        }
        r
    }

    fn issue(&mut self, line: Option<usize>, key: Option<&str>, message: impl Into<String>) {
        self.issues.push(ConfigIssue { line, key: key.map(String::from), message: message.into() });
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|e| e.1)
    }

    fn has_section(&self, prefix: &str) -> bool {
        let p = format!("{prefix}.");
        self.entries.keys().any(|k| k.starts_with(&p))
    }

    fn string(&mut self, key: &str) -> Option<String> {
        let (v, _) = self.entries.get(key)?.clone();
        self.used.insert(key.to_string());
        Some(v)
    }

    fn parse<T: FromStr>(&mut self, key: &str, what: &str) -> Option<T> {
        let v = self.string(key)?;
        match v.parse() {
            Ok(x) => Some(x),
            Err(_) => {
                self.issue(self.line(key), Some(key), format!("expected {what}, found `{v}`"));
                None
            }
        }
    }

    fn float(&mut self, key: &str) -> Option<f64> {
        let v: f64 = self.parse(key, "a number")?;
        if !v.is_finite() {
            self.issue(self.line(key), Some(key), "value must be finite");
            return None;
        }
        Some(v)
    }

    fn floats(&mut self, key: &str) -> Option<Vec<f64>> {
        let v = self.string(key)?;
        let mut out = Vec::new();
        for tok in v.split_whitespace() {
            match tok.parse::<f64>() {
                Ok(x) if x.is_finite() => out.push(x),
                _ => {
                    self.issue(self.line(key), Some(key), format!("expected numbers, found `{tok}`"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn vector(&mut self, key: &str) -> Option<[f64; 3]> {
        let v = self.floats(key)?;
        if v.is_empty() || v.len() > 3 {
            self.issue(self.line(key), Some(key), format!("expected 1 to 3 components, found {}", v.len()));
            return None;
        }
        let mut out = [0.0; 3];
        out[..v.len()].copy_from_slice(&v);
        Some(out)
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)]) -> Option<T> {
        let v = self.string(key)?;
        match options.iter().find(|o| o.0 == v) {
            Some(o) => Some(o.1),
            None => {
                let names: Vec<&str> = options.iter().map(|o| o.0).collect();
                self.issue(self.line(key), Some(key), format!("unknown value `{v}`, expected one of {}", names.join(", ")));
                None
            }
        }
    }

    fn required<T>(&mut self, key: &str, v: Option<T>) -> Option<T> {
        if v.is_none() && !self.entries.contains_key(key) {
            self.issue(None, Some(key), "missing required key");
        }
        v
    }
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && k.split('.').all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
}

const BOUNDARIES: [(&str, Boundary); 2] = [("periodic", Boundary::Periodic), ("one_sided", Boundary::OneSided)];
const SOLVERS: [(&str, SolverKind); 2] = [("schrodinger", SolverKind::Schrodinger), ("klein_gordon", SolverKind::KleinGordon)];
const SCHEMES: [(&str, SchemeSpec); 3] = [
    ("crank_nicolson", SchemeSpec::CrankNicolson),
    ("split_step", SchemeSpec::SplitStep),
    ("leapfrog", SchemeSpec::Leapfrog),
];
const SAMPLERS: [(&str, Sampler); 2] = [("inverse_cdf", Sampler::InverseCdf), ("rejection", Sampler::Rejection)];

fn name_of<T: PartialEq + Copy>(options: &[(&'static str, T)], v: T) -> &'static str {
    options.iter().find(|o| o.1 == v).map(|o| o.0).expect("every variant is listed")
}

fn read_axis(r: &mut Reader, coord: Coord) -> Option<Axis> {
    let key = format!("grid.{}", coord.name());
    let v = r.string(&key)?;
    let toks: Vec<&str> = v.split_whitespace().collect();
    let line = r.line(&key);
    if toks.len() != 4 {
        r.issue(line, Some(&key), "expected `min max points boundary`");
        return None;
    }
    let (min, max, points) = match (toks[0].parse::<f64>(), toks[1].parse::<f64>(), toks[2].parse::<usize>()) {
        (Ok(a), Ok(b), Ok(n)) if a.is_finite() && b.is_finite() => (a, b, n),
        _ => {
            r.issue(line, Some(&key), format!("bad axis `{v}`"));
            return None;
        }
    };
    let Some(boundary) = BOUNDARIES.iter().find(|b| b.0 == toks[3]).map(|b| b.1) else {
        r.issue(line, Some(&key), format!("unknown boundary `{}`, expected periodic or one_sided", toks[3]));
        return None;
    };
    Some(Axis::new(coord, min, max, points, boundary))
}

fn read_init(r: &mut Reader) -> Option<InitSpec> {
    let kinds = [("plane_wave", 0), ("gaussian", 1), ("oscillator_eigenstate", 2), ("double_slit", 3), ("custom", 4)];
    let kind = r.choice("wave.init", &kinds);
    let kind = r.required("wave.init", kind)?;
    Some(match kind {
        0 => {
            let p = r.vector("wave.p");
            InitSpec::PlaneWave { p: r.required("wave.p", p)? }
        }
        1 => {
            let x0 = r.vector("wave.x0").unwrap_or([0.0; 3]);
            let sigma0 = r.float("wave.sigma0");
            let p0 = r.vector("wave.p0").unwrap_or([0.0; 3]);
            InitSpec::Gaussian { x0, sigma0: r.required("wave.sigma0", sigma0)?, p0 }
        }
        2 => {
            let n = r.parse("wave.n", "a non-negative integer").unwrap_or(0);
            let omega = r.float("wave.omega");
            InitSpec::OscillatorEigenstate { n, omega: r.required("wave.omega", omega)? }
        }
        3 => {
            let separation = r.float("wave.separation");
            let slit_sigma = r.float("wave.slit_sigma");
            let p0 = r.float("wave.p0").unwrap_or(0.0);
            InitSpec::DoubleSlit {
                separation: r.required("wave.separation", separation)?,
                slit_sigma: r.required("wave.slit_sigma", slit_sigma)?,
                p0,
            }
        }
        _ => {
            let file = r.string("wave.file");
            InitSpec::Custom { file: PathBuf::from(r.required("wave.file", file)?) }
        }
    })
}

fn read_potential(r: &mut Reader) -> PotentialSpec {
    let kind = r.choice("potential.kind", &[("none", 0), ("harmonic", 1)]).unwrap_or(0);
    match kind {
        1 => {
            let omega = r.float("potential.omega");
            let omega = r.required("potential.omega", omega).unwrap_or(1.0);
            let center = r.float("potential.center").unwrap_or(0.0);
            PotentialSpec::Harmonic { omega, center }
        }
        _ => PotentialSpec::None,
    }
}

fn read_check(r: &mut Reader) -> Option<CheckSpec> {
    let name = r.string("check.criterion")?;
    let Some(criterion) = Criterion::parse(&name) else {
        let names: Vec<&str> = Criterion::ALL.iter().map(|c| c.name()).collect();
        r.issue(r.line("check.criterion"), Some("check.criterion"), format!("unknown criterion `{name}`, expected one of {}", names.join(", ")));
        return None;
    };
    let mut c = CheckSpec::new(criterion);
    if let Some(v) = r.parse("check.refine", "a positive integer") {
        c.refine = v;
    }
    c.tolerance = r.float("check.tolerance");
    if let Some(v) = r.floats("check.eps") {
        c.eps = v;
    }
    if let Some(v) = r.floats("check.starts") {
        c.starts = v;
    }
    if let Some(v) = r.float("check.spreading_times") {
        c.spreading_times = v;
    }
    c.control_offset = r.float("check.control_offset");
    if let Some(v) = r.float("check.ks_limit") {
        c.ks_limit = v;
    }
    c.l1_limit = r.float("check.l1_limit");
    if let Some(v) = r.parse("check.min_particles", "a non-negative integer") {
        c.min_particles = v;
    }
    if let Some(v) = r.parse("check.min_steps", "a non-negative integer") {
        c.min_steps = v;
    }
    Some(c)
}

/// Parse a scenario, reporting every problem at once. With `strict`, keys
/// the scenario does not use are errors; otherwise they are logged and
/// ignored.
pub fn parse_scenario(text: &str, strict: bool) -> Result<Scenario, ConfigErrors> {
    let mut r = Reader::tokenize(text);
    let name = r.string("name");
    let name = r.required("name", name).unwrap_or_default();

    let mut axes = Vec::new();
    for c in [Coord::X, Coord::Y, Coord::Z] {
        if let Some(a) = read_axis(&mut r, c) {
            axes.push(a);
        }
    }
    if r.entries.contains_key("grid.t") {
        r.used.insert("grid.t".into());
        r.issue(r.line("grid.t"), Some("grid.t"), "time is set by the solver section, not the grid");
    }
    if axes.is_empty() && !r.issues.iter().any(|i| i.key.as_deref().is_some_and(|k| k.starts_with("grid."))) {
        r.issue(None, Some("grid"), "need at least one of grid.x, grid.y, grid.z");
    }

    let mut particle = ParticleParams::default();
    if let Some(v) = r.float("particle.m") {
        particle.m = v;
    }
    if let Some(v) = r.float("particle.e") {
        particle.e = v;
    }
    if let Some(v) = r.float("particle.hbar") {
        particle.hbar = v;
    }
    particle.alpha = r.float("particle.alpha").unwrap_or(particle.matched_alpha());

    let init = if r.has_section("wave") { read_init(&mut r) } else { None };
    let potential = read_potential(&mut r);
    let gauge = match r.floats("gauge.a") {
        Some(v) if v.len() == 4 => Some([v[0], v[1], v[2], v[3]]),
        Some(v) => {
            r.issue(r.line("gauge.a"), Some("gauge.a"), format!("expected 4 components, found {}", v.len()));
            None
        }
        None => None,
    };

    let mut solver = SolverSpec::default();
    if let Some(v) = r.choice("solver.kind", &SOLVERS) {
        solver.kind = v;
        solver.scheme = SolverSpec::default_scheme(v);
    }
    if let Some(v) = r.choice("solver.scheme", &SCHEMES) {
        solver.scheme = v;
    }
    if let Some(v) = r.float("solver.dt") {
        solver.dt = v;
    }
    if let Some(v) = r.float("solver.t_end") {
        solver.t_end = v;
    }
    if let Some(v) = r.parse("solver.snapshot_every", "a positive integer") {
        solver.snapshot_every = v;
    }

    let mut ensemble = EnsembleConfig { n: 0, ..EnsembleConfig::default() };
    if let Some(v) = r.parse("ensemble.n", "a non-negative integer") {
        ensemble.n = v;
    }
    if let Some(v) = r.parse("ensemble.seed", "a non-negative integer") {
        ensemble.seed = v;
    }
    if let Some(v) = r.choice("ensemble.sampler", &SAMPLERS) {
        ensemble.sampler = v;
    }
    if let Some(v) = r.float("ensemble.dt") {
        ensemble.dt = v;
    }
    if let Some(v) = r.parse("ensemble.bins", "a positive integer") {
        ensemble.bins = v;
    }
    if let Some(v) = r.float("ensemble.b_floor_rel") {
        ensemble.b_floor_rel = v;
    }
    let record = r.parse("ensemble.record", "a non-negative integer").unwrap_or(super::DEFAULT_RECORD);
    let trajectories = r.parse("trajectories.count", "a non-negative integer").unwrap_or(super::DEFAULT_TRAJECTORIES);
    let core_rel = r.float("residuals.core_rel").unwrap_or(super::DEFAULT_CORE_REL);
    let check = read_check(&mut r);

    let unused: Vec<(String, usize)> =
        r.entries.iter().filter(|(k, _)| !r.used.contains(*k)).map(|(k, (_, l))| (k.clone(), *l)).collect();
    for (k, l) in unused {
        if strict {
            r.issue(Some(l), Some(&k), "unknown key");
        } else {
            log::warn!("line {l}: ignoring unknown key {k}");
        }
    }

    let scenario = Scenario {
        name,
        axes,
        particle,
        init,
        potential,
        gauge,
        solver,
        ensemble,
        record,
        trajectories,
        core_rel,
        check,
    };
    let lines: BTreeMap<String, usize> = r.entries.iter().map(|(k, (_, l))| (k.clone(), *l)).collect();
    for mut issue in scenario.validate() {
        if issue.line.is_none() {
            issue.line = issue.key.as_ref().and_then(|k| lines.get(k).copied());
        }
        r.issues.push(issue);
    }
    if r.issues.is_empty() {
        Ok(scenario)
    } else {
        r.issues.sort_by_key(|i| i.line.unwrap_or(usize::MAX));
        Err(ConfigErrors(r.issues))
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Canonical text form with every default spelled out; parsing it gives
/// the same scenario back.
pub fn scenario_to_text(s: &Scenario) -> String {
    let mut o = String::new();
    let mut put = |k: &str, v: String| o.push_str(&format!("{k} = {v}\n"));
    put("name", s.name.clone());
    for a in &s.axes {
        put(&format!("grid.{}", a.coord.name()), format!("{} {} {} {}", a.min, a.max, a.points, name_of(&BOUNDARIES, a.boundary)));
    }
    let p = &s.particle;
    put("particle.m", p.m.to_string());
    put("particle.e", p.e.to_string());
    put("particle.hbar", p.hbar.to_string());
    put("particle.alpha", p.alpha.to_string());
    match &s.init {
        None => {}
        Some(InitSpec::PlaneWave { p }) => {
            put("wave.init", "plane_wave".into());
            put("wave.p", join(p));
        }
        Some(InitSpec::Gaussian { x0, sigma0, p0 }) => {
            put("wave.init", "gaussian".into());
            put("wave.x0", join(x0));
            put("wave.sigma0", sigma0.to_string());
            put("wave.p0", join(p0));
        }
        Some(InitSpec::OscillatorEigenstate { n, omega }) => {
            put("wave.init", "oscillator_eigenstate".into());
            put("wave.n", n.to_string());
            put("wave.omega", omega.to_string());
        }
        Some(InitSpec::DoubleSlit { separation, slit_sigma, p0 }) => {
            put("wave.init", "double_slit".into());
            put("wave.separation", separation.to_string());
            put("wave.slit_sigma", slit_sigma.to_string());
            put("wave.p0", p0.to_string());
        }
        Some(InitSpec::Custom { file }) => {
            put("wave.init", "custom".into());
            put("wave.file", file.display().to_string());
        }
    }
    match s.potential {
        PotentialSpec::None => put("potential.kind", "none".into()),
        PotentialSpec::Harmonic { omega, center } => {
            put("potential.kind", "harmonic".into());
            put("potential.omega", omega.to_string());
            put("potential.center", center.to_string());
        }
    }
    if let Some(a) = s.gauge {
        put("gauge.a", join(&a));
    }
    let v = &s.solver;
    put("solver.kind", name_of(&SOLVERS, v.kind).into());
    put("solver.scheme", name_of(&SCHEMES, v.scheme).into());
    put("solver.dt", v.dt.to_string());
    put("solver.t_end", v.t_end.to_string());
    put("solver.snapshot_every", v.snapshot_every.to_string());
    let e = &s.ensemble;
    put("ensemble.n", e.n.to_string());
    put("ensemble.seed", e.seed.to_string());
    put("ensemble.sampler", name_of(&SAMPLERS, e.sampler).into());
    put("ensemble.dt", e.dt.to_string());
    put("ensemble.bins", e.bins.to_string());
    put("ensemble.b_floor_rel", e.b_floor_rel.to_string());
    put("ensemble.record", s.record.to_string());
    put("trajectories.count", s.trajectories.to_string());
    put("residuals.core_rel", s.core_rel.to_string());
    if let Some(c) = &s.check {
        put("check.criterion", c.criterion.name().into());
        put("check.refine", c.refine.to_string());
        if let Some(t) = c.tolerance {
            put("check.tolerance", t.to_string());
        }
        put("check.eps", join(&c.eps));
        if !c.starts.is_empty() {
            put("check.starts", join(&c.starts));
        }
        put("check.spreading_times", c.spreading_times.to_string());
        if let Some(x) = c.control_offset {
            put("check.control_offset", x.to_string());
        }
        put("check.ks_limit", c.ks_limit.to_string());
        if let Some(x) = c.l1_limit {
            put("check.l1_limit", x.to_string());
        }
        put("check.min_particles", c.min_particles.to_string());
        put("check.min_steps", c.min_steps.to_string());
    }
    o
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAUSSIAN: &str = "
# free packet
name = packet
grid.x = -40 40 512 one_sided

[wave]
init = gaussian
sigma0 = 2   # width
p0 = 0.5

[solver]
dt = 0.05
t_end = 2
snapshot_every = 8

[ensemble]
n = 500
";

    #[test]
    fn parses_sections_and_defaults() {
        let s = parse_scenario(GAUSSIAN, true).unwrap();
        assert_eq!(s.name, "packet");
        assert_eq!(s.axes.len(), 1);
        assert_eq!(s.particle.alpha, 1.0 / 6.0);
        assert_eq!(s.init, Some(InitSpec::Gaussian { x0: [0.0; 3], sigma0: 2.0, p0: [0.5, 0.0, 0.0] }));
        assert_eq!(s.solver.scheme, SchemeSpec::CrankNicolson);
        assert_eq!(s.ensemble.n, 500);
    }

    #[test]
    fn canonical_text_round_trips() {
        let s = parse_scenario(GAUSSIAN, true).unwrap();
        let text = scenario_to_text(&s);
        assert_eq!(parse_scenario(&text, true).unwrap(), s);
        assert_eq!(scenario_to_text(&parse_scenario(&text, true).unwrap()), text);
    }

    #[test]
    fn reports_all_problems_with_lines() {
        let text = "name = bad\ngrid.x = -1 1 64 sideways\nbogus = 3\n[wave]\ninit = gaussian\nsigma0 = abc\nsigma0 = 2\n";
        let err = parse_scenario(text, true).unwrap_err();
        let lines: Vec<Option<usize>> = err.0.iter().map(|i| i.line).collect();
        assert!(lines.contains(&Some(2)), "{err}");
        assert!(lines.contains(&Some(3)), "{err}");
        assert!(lines.contains(&Some(6)), "{err}");
        assert!(lines.contains(&Some(7)), "{err}");
        assert!(parse_scenario("name = x\ngrid.x = -1 1 64 periodic\nfoo = 1\n[check]\ncriterion = k_field\n", false).is_ok());
    }
}
