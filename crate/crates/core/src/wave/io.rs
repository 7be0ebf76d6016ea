use std::io::{BufRead, BufReader, Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{SolverKind, WaveError, WaveField};
use crate::dynamics::ParticleParams;
use crate::grid::GridSpec;

/// Residual summary written as JSON next to run outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub name: String,
    pub max: f64,
    pub l2: f64,
    pub grid: GridSpec,
    pub h: f64,
    pub dt: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    grid: GridSpec,
    t: f64,
    kind: SolverKind,
    params: ParticleParams,
}

fn bad(msg: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.into())
}

/// CSV dump of one snapshot. A `#`-prefixed JSON header line carries the
/// grid, time, solver kind and particle parameters; rows are
/// `index, t, x, y, z, re, im`.
pub fn write_snapshot_csv<W: Write>(field: &WaveField, mut out: W) -> std::io::Result<()> {
    let header = Header { grid: field.grid.clone(), t: field.t, kind: field.kind, params: field.params };
    writeln!(out, "# {}", serde_json::to_string(&header)?)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "t", "x", "y", "z", "re", "im"])?;
    for (i, v) in field.values.iter().enumerate() {
        let p = field.grid.point(i);
        w.write_record([
            i.to_string(),
            format!("{:e}", field.t),
            format!("{:e}", p[1]),
            format!("{:e}", p[2]),
            format!("{:e}", p[3]),
            format!("{:e}", v.re),
            format!("{:e}", v.im),
        ])?;
    }
    w.flush()
}

pub fn read_snapshot_csv<R: Read>(input: R) -> Result<WaveField, std::io::Error> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let json = first.trim().strip_prefix('#').ok_or_else(|| bad("missing snapshot header"))?;
    let header: Header = serde_json::from_str(json.trim())?;
    let mut rd = csv::Reader::from_reader(reader);
    let mut values = vec![Complex64::new(0.0, 0.0); header.grid.len()];
    let mut seen = 0;
    for rec in rd.records() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).ok_or_else(|| bad(format!("row has {} columns", rec.len())));
        let i: usize = field(0)?.parse().map_err(|e| bad(format!("bad index: {e}")))?;
        let re: f64 = field(5)?.parse().map_err(|e| bad(format!("bad value: {e}")))?;
        let im: f64 = field(6)?.parse().map_err(|e| bad(format!("bad value: {e}")))?;
        *values.get_mut(i).ok_or_else(|| bad(format!("index {i} outside grid")))? = Complex64::new(re, im);
        seen += 1;
    }
    if seen != header.grid.len() {
        return Err(bad(format!("expected {} rows, found {seen}", header.grid.len())));
    }
    WaveField::new(&header.grid, values, header.t, header.kind, header.params).map_err(|e: WaveError| bad(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Boundary, Coord};
    use crate::wave::init;

    #[test]
    fn snapshot_round_trip() {
        let g = GridSpec::line(Coord::X, -3.0, 3.0, 31, Boundary::OneSided).unwrap();
        let psi = init::gaussian(&g, [0.2, 0.0, 0.0], 0.7, [1.1, 0.0, 0.0], &ParticleParams::default(), SolverKind::Schrodinger).unwrap();
        let mut buf = Vec::new();
        write_snapshot_csv(&psi, &mut buf).unwrap();
        let back = read_snapshot_csv(buf.as_slice()).unwrap();
        assert_eq!(back, psi);
    }

    #[test]
    fn truncated_snapshot_is_rejected() {
        let g = GridSpec::line(Coord::X, 0.0, 1.0, 5, Boundary::OneSided).unwrap();
        let psi = init::plane_wave(&g, [1.0, 0.0, 0.0], 0.0, &ParticleParams::default(), SolverKind::Schrodinger).unwrap();
        let mut buf = Vec::new();
        write_snapshot_csv(&psi, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
        assert!(read_snapshot_csv(cut.as_bytes()).is_err());
    }
}
