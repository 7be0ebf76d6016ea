use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

use super::{parse_scenario, OutputFile};
use crate::ensemble::{empirical_histogram, reference_histogram};
use crate::grid::V4;
use crate::verify::ConvergenceLevel;
use crate::wave::{read_snapshot_csv, WaveField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    DensityVsT,
    Trajectories,
    ResidualConvergence,
    FringeHistogram,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] =
        [PlotKind::DensityVsT, PlotKind::Trajectories, PlotKind::ResidualConvergence, PlotKind::FringeHistogram];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::DensityVsT => "density_vs_t",
            PlotKind::Trajectories => "trajectories",
            PlotKind::ResidualConvergence => "residual_convergence",
            PlotKind::FringeHistogram => "fringe_histogram",
        }
    }
}

impl FromStr for PlotKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        PlotKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown plot kind `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("manifest lists no {0}")]
    Missing(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Deserialize)]
struct ManifestFiles {
    outputs: Vec<OutputFile>,
}

struct Run {
    dir: PathBuf,
    outputs: Vec<OutputFile>,
}

impl Run {
    fn open(manifest: &Path) -> Result<Self, PlotError> {
        let text = fs::read_to_string(manifest)?;
        let m: ManifestFiles = serde_json::from_str(&text).map_err(|e| PlotError::Invalid(format!("{}: {e}", manifest.display())))?;
        let dir = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(Self { dir, outputs: m.outputs })
    }

    /// Paths of listed outputs whose file name passes `pred`, in manifest
    /// order; only the first run of a repeated pair is used.
    fn find(&self, pred: impl Fn(&str) -> bool) -> Vec<PathBuf> {
        let mut prefix: Option<&str> = None;
        let mut out = Vec::new();
        for o in &self.outputs {
            let (head, name) = o.path.rsplit_once('/').unwrap_or(("", &o.path));
            if !pred(name) {
                continue;
            }
            let top = head.split('/').next().unwrap_or("");
            let top = if top == "snapshots" { "" } else { top };
            if *prefix.get_or_insert(top) == top {
                out.push(self.dir.join(&o.path));
            }
        }
        out
    }

    fn one(&self, name: &str) -> Result<PathBuf, PlotError> {
        self.find(|n| n == name).into_iter().next().ok_or_else(|| PlotError::Missing(name.into()))
    }

    fn snapshots(&self) -> Result<Vec<WaveField>, PlotError> {
        let files = self.find(|n| n.starts_with("snapshot_") && n.ends_with(".csv"));
        if files.is_empty() {
            return Err(PlotError::Missing("snapshots".into()));
        }
        files.iter().map(|f| Ok(read_snapshot_csv(fs::File::open(f)?)?)).collect()
    }
}

fn header(kind: PlotKind, columns: &str, notes: &[&str]) -> String {
    let mut s = format!("# kind: {}\n", kind.name());
    for n in notes {
        let _ = writeln!(s, "# {n}");
    }
    let _ = writeln!(s, "# columns: {columns}");
    s
}

fn density_vs_t(run: &Run) -> Result<String, PlotError> {
    let snaps = run.snapshots()?;
    let names: Vec<&str> = snaps[0].grid.axes().iter().map(|a| a.coord.name()).collect();
    let mut s = header(PlotKind::DensityVsT, &format!("t {} rho", names.join(" ")), &["rho = |psi|^2, one block per snapshot"]);
    for f in &snaps {
        let rho = f.density();
        for (i, r) in rho.iter().enumerate() {
            let p = f.grid.point(i);
            let coords: Vec<String> = f.grid.axes().iter().map(|a| format!("{:e}", p[a.coord.index()])).collect();
            let _ = writeln!(s, "{:e} {} {r:e}", f.t, coords.join(" "));
        }
        s.push('\n');
    }
    Ok(s)
}

#[derive(Deserialize)]
struct PathRow {
    particle: usize,
    k: usize,
    t: f64,
    x: f64,
}

fn trajectories(run: &Run) -> Result<String, PlotError> {
    let path = run.one("trajectories.csv")?;
    let mut rd = csv::Reader::from_path(&path).map_err(|e| PlotError::Invalid(e.to_string()))?;
    let mut paths: Vec<Vec<(f64, f64)>> = Vec::new();
    for row in rd.deserialize::<PathRow>() {
        let r = row.map_err(|e| PlotError::Invalid(format!("{}: {e}", path.display())))?;
        if paths.len() <= r.particle {
            paths.resize(r.particle + 1, Vec::new());
        }
        if r.k != paths[r.particle].len() {
            return Err(PlotError::Invalid(format!("{}: rows out of order", path.display())));
        }
        paths[r.particle].push((r.t, r.x));
    }
    let rows = paths.iter().map(Vec::len).max().unwrap_or(0);
    let cols: Vec<String> = (0..paths.len()).map(|i| format!("t_{i} x_{i}")).collect();
    let mut s = header(PlotKind::Trajectories, &cols.join(" "), &["one (t, x) pair per particle, nan after a halt"]);
    for k in 0..rows {
        let cells: Vec<String> = paths
            .iter()
            .map(|p| match p.get(k) {
                Some((t, x)) => format!("{t:e} {x:e}"),
                None => "nan nan".into(),
            })
            .collect();
        let _ = writeln!(s, "{}", cells.join(" "));
    }
    Ok(s)
}

fn residual_convergence(run: &Run) -> Result<String, PlotError> {
    let path = run.one("convergence.json").map_err(|_| PlotError::Missing("convergence.json (run an equivalence check or `residuals --refine`)".into()))?;
    let levels: Vec<ConvergenceLevel> =
        serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| PlotError::Invalid(format!("{}: {e}", path.display())))?;
    Ok(convergence_table(&levels))
}

/// Plot data of a refinement series, one row per level.
pub fn convergence_table(levels: &[ConvergenceLevel]) -> String {
    let mut s = header(
        PlotKind::ResidualConvergence,
        "h dt snapshot_dt max_a max_b l2_a l2_b",
        &["second order: max residual falls by 4 per halving of (h, dt)"],
    );
    for l in levels {
        let n = &l.norms;
        let _ = writeln!(s, "{:e} {:e} {:e} {:e} {:e} {:e} {:e}", l.h, l.dt, l.snapshot_dt, n.max_a, n.max_b, n.l2_a, n.l2_b);
    }
    s
}

#[derive(Deserialize)]
struct FinalRow {
    x: f64,
    y: f64,
    z: f64,
}

fn fringe_histogram(run: &Run) -> Result<String, PlotError> {
    let path = run.one("positions_final.csv")?;
    let mut rd = csv::Reader::from_path(&path).map_err(|e| PlotError::Invalid(e.to_string()))?;
    let positions: Vec<V4> = rd
        .deserialize::<FinalRow>()
        .map(|r| r.map(|r| [0.0, r.x, r.y, r.z]).map_err(|e| PlotError::Invalid(format!("{}: {e}", path.display()))))
        .collect::<Result<_, _>>()?;
    let cfg = fs::read_to_string(run.one("scenario.cfg")?)?;
    let scenario = parse_scenario(&cfg, false).map_err(|e| PlotError::Invalid(e.to_string()))?;
    let last = run.snapshots()?.pop().expect("non-empty");
    let grid = &last.grid;
    if grid.ndim() != 1 {
        return Err(PlotError::Invalid("fringe histogram is one-dimensional".into()));
    }
    let bins = scenario.ensemble.bins;
    let reference = reference_histogram(grid, &last.density(), bins).map_err(|e| PlotError::Invalid(e.to_string()))?;
    let empirical = empirical_histogram(grid, &positions, bins);
    let ax = &grid.axes()[0];
    let width = ax.length() / bins as f64;
    let mut s = header(
        PlotKind::FringeHistogram,
        &format!("{} empirical reference", ax.coord.name()),
        &[&format!("probability densities at t = {} from {} particles", last.t, positions.len())],
    );
    for k in 0..bins {
        let x = ax.min + (k as f64 + 0.5) * width;
        let _ = writeln!(s, "{x:e} {:e} {:e}", empirical[k] / width, reference[k] / width);
    }
    Ok(s)
}

/// Write columnar plot data for `kind` next to the manifest and return its
/// path. Files start with `#` comment lines naming the columns.
pub fn emit_plot_data(manifest: &Path, kind: PlotKind) -> Result<PathBuf, PlotError> {
    let run = Run::open(manifest)?;
    let body = match kind {
        PlotKind::DensityVsT => density_vs_t(&run)?,
        PlotKind::Trajectories => trajectories(&run)?,
        PlotKind::ResidualConvergence => residual_convergence(&run)?,
        PlotKind::FringeHistogram => fringe_histogram(&run)?,
    };
    let out = run.dir.join(format!("plot_{}.dat", kind.name()));
    fs::write(&out, body)?;
    Ok(out)
}
