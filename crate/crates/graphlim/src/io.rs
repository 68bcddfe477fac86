//! Output artifacts: CSV tables, JSON manifests and a small binary container
//! for step-function fields. All floating-point text output carries 17
//! significant digits so values round-trip exactly.

use crate::convergence::ConvergenceReport;
use crate::discrete::Trajectory;
use crate::grid::{StepFunction1D, StepFunction2D, UnitGrid};
use crate::picard::PicardSolution;
use crate::{Error, Result};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// 17 significant digits: enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    Ok(BufWriter::new(std::fs::File::create(path)?))
}

/// Write a trajectory as `u.csv` and `K.csv` in `dir`.
///
/// `u.csv`: one row per stored time, `t` followed by the flattened state
/// values (N * d columns). `K.csv`: `t` followed by the row-major kernel
/// entries (N^2 columns).
pub fn write_trajectory(traj: &Trajectory, dir: &Path) -> Result<()> {
    let mut fu = create(&dir.join("u.csv"))?;
    let mut fk = create(&dir.join("K.csv"))?;
    let n = traj.states[0].u.grid.len();
    let d = traj.states[0].u.dim;
    let u_header: Vec<String> = (0..n * d).map(|i| format!("u{i}")).collect();
    writeln!(fu, "t,{}", u_header.join(","))?;
    let k_header: Vec<String> = (0..n * n).map(|i| format!("K{}_{}", i / n, i % n)).collect();
    writeln!(fk, "t,{}", k_header.join(","))?;
    for s in &traj.states {
        let row: Vec<String> = s.u.values.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(fu, "{},{}", fmt_f64(s.t), row.join(","))?;
        let row: Vec<String> = s.k.values.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(fk, "{},{}", fmt_f64(s.t), row.join(","))?;
    }
    fu.flush()?;
    fk.flush()?;
    Ok(())
}

/// Write `monitors.csv`: the a-priori envelope record at each stored time.
pub fn write_monitors(traj: &Trajectory, dir: &Path) -> Result<()> {
    let mut f = create(&dir.join("monitors.csv"))?;
    writeln!(f, "t,u_sup,u_envelope,k_sup,k_envelope,within_envelope")?;
    for m in &traj.monitors {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            fmt_f64(m.t),
            fmt_f64(m.u_sup),
            fmt_f64(m.u_envelope),
            fmt_f64(m.k_sup),
            fmt_f64(m.k_envelope),
            m.within_envelope
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Run manifest written next to every artifact set.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Manifest {
    pub command: String,
    pub model: String,
    pub n: usize,
    pub dt: Option<f64>,
    pub t_final: f64,
    pub store_every: Option<usize>,
    pub config_hash: String,
    pub all_monitors_ok: Option<bool>,
    /// Last time with a finite state; set only when the solver aborted.
    pub aborted_at: Option<f64>,
    pub abort_detail: Option<String>,
}

pub fn write_manifest(manifest: &Manifest, dir: &Path) -> Result<()> {
    let mut f = create(&dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut f, manifest).map_err(|e| Error::Io(e.into()))?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Write the convergence study as `report.csv` plus `summary.json`.
pub fn write_convergence(report: &ConvergenceReport, config_hash: &str, dir: &Path) -> Result<()> {
    let mut f = create(&dir.join("report.csv"))?;
    writeln!(f, "N,e_sup,err_u0,err_K0,residual_integral,envelope,converged")?;
    for r in &report.rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.n,
            fmt_f64(r.e_sup),
            fmt_f64(r.err_u0),
            fmt_f64(r.err_k0),
            fmt_f64(r.residual_integral),
            fmt_f64(r.envelope),
            r.converged
        )?;
    }
    f.flush()?;

    #[derive(serde::Serialize)]
    struct Summary<'a> {
        fit: &'a Option<crate::convergence::RateFit>,
        monotone: bool,
        config_hash: &'a str,
    }
    let mut f = create(&dir.join("summary.json"))?;
    serde_json::to_writer_pretty(
        &mut f,
        &Summary {
            fit: &report.fit,
            monotone: report.monotone,
            config_hash,
        },
    )
    .map_err(|e| Error::Io(e.into()))?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Write Picard output: the solution at stored nodes (`u.csv`, `K.csv`) and
/// per-window diagnostics (`windows.json`).
pub fn write_picard(sol: &PicardSolution, dir: &Path) -> Result<()> {
    let mut fu = create(&dir.join("u.csv"))?;
    let mut fk = create(&dir.join("K.csv"))?;
    let n = sol.states[0].0.grid.len();
    let d = sol.states[0].0.dim;
    let u_header: Vec<String> = (0..n * d).map(|i| format!("u{i}")).collect();
    writeln!(fu, "t,{}", u_header.join(","))?;
    let k_header: Vec<String> = (0..n * n).map(|i| format!("K{}_{}", i / n, i % n)).collect();
    writeln!(fk, "t,{}", k_header.join(","))?;
    for (t, (u, k)) in sol.times.iter().zip(&sol.states) {
        let row: Vec<String> = u.values.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(fu, "{},{}", fmt_f64(*t), row.join(","))?;
        let row: Vec<String> = k.values.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(fk, "{},{}", fmt_f64(*t), row.join(","))?;
    }
    fu.flush()?;
    fk.flush()?;

    let mut f = create(&dir.join("windows.json"))?;
    serde_json::to_writer_pretty(&mut f, &sol.windows).map_err(|e| Error::Io(e.into()))?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Write a 1D step function as CSV: `k,v0,...,v{d-1}` per cell.
pub fn write_step_1d_csv(s: &StepFunction1D, path: &Path) -> Result<()> {
    let mut f = create(path)?;
    let header: Vec<String> = (0..s.dim).map(|i| format!("v{i}")).collect();
    writeln!(f, "k,{}", header.join(","))?;
    for k in 0..s.grid.len() {
        let row: Vec<String> = s.cell(k).iter().map(|v| fmt_f64(*v)).collect();
        writeln!(f, "{k},{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// Write a 2D step kernel as CSV: `k,l,value` per entry.
pub fn write_step_2d_csv(s: &StepFunction2D, path: &Path) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "k,l,value")?;
    let n = s.grid.len();
    for k in 0..n {
        for l in 0..n {
            writeln!(f, "{k},{l},{}", fmt_f64(s.entry(k, l)))?;
        }
    }
    f.flush()?;
    Ok(())
}

const MAGIC: &[u8; 8] = b"GLIMSTEP";
const BIN_VERSION: u32 = 1;

/// Binary container for step-function fields: 8-byte magic, u32 version,
/// u32 N, u32 d (0 marks a 2D kernel), then the values as little-endian f64,
/// row-major for kernels.
pub fn write_step_binary(path: &Path, n: usize, dim: Option<usize>, values: &[f64]) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&BIN_VERSION.to_le_bytes())?;
    f.write_all(&(n as u32).to_le_bytes())?;
    f.write_all(&(dim.unwrap_or(0) as u32).to_le_bytes())?;
    for v in values {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_step_1d_binary(s: &StepFunction1D, path: &Path) -> Result<()> {
    write_step_binary(path, s.grid.len(), Some(s.dim), &s.values)
}

pub fn write_step_2d_binary(s: &StepFunction2D, path: &Path) -> Result<()> {
    write_step_binary(path, s.grid.len(), None, &s.values)
}

/// A field read back from the binary container.
pub enum StepField {
    One(StepFunction1D),
    Two(StepFunction2D),
}

pub fn read_step_binary(path: &Path) -> Result<StepField> {
    let mut f = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Config("not a step-function container".into()));
    }
    let mut word = [0u8; 4];
    f.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != BIN_VERSION {
        return Err(Error::Config(format!("unsupported container version {version}")));
    }
    f.read_exact(&mut word)?;
    let n = u32::from_le_bytes(word) as usize;
    f.read_exact(&mut word)?;
    let d = u32::from_le_bytes(word) as usize;
    let count = if d == 0 { n * n } else { n * d };
    let mut values = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        f.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    // the payload must end exactly here
    if f.read(&mut buf)? != 0 {
        return Err(Error::Config("trailing bytes in container".into()));
    }
    let grid = UnitGrid::new(n);
    if d == 0 {
        Ok(StepField::Two(StepFunction2D::new(grid, values)?))
    } else {
        Ok(StepField::One(StepFunction1D::new(grid, d, values)?))
    }
}

/// Parse a trajectory CSV written by [`write_trajectory`] back into rows of
/// `(t, values)`.
pub fn read_csv_rows(path: &Path) -> Result<Vec<(f64, Vec<f64>)>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if i == 0 {
            continue; // header
        }
        let mut parts = line.split(',');
        let t: f64 = parts
            .next()
            .ok_or_else(|| Error::Config("empty CSV row".into()))?
            .parse()
            .map_err(|e| Error::Config(format!("bad CSV value: {e}")))?;
        let values: std::result::Result<Vec<f64>, _> = parts.map(|p| p.parse::<f64>()).collect();
        rows.push((t, values.map_err(|e| Error::Config(format!("bad CSV value: {e}")))?));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_round_trips() {
        for v in [0.1, 1.0 / 3.0, std::f64::consts::PI, 1e-300, -7.25e200] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
    }

    #[test]
    fn binary_container_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let grid = UnitGrid::new(3);
        let u = StepFunction1D::new(grid, 2, vec![1.0, -2.0, 0.5, 3.0, 1.0 / 3.0, -0.0]).unwrap();
        let p = dir.path().join("u.bin");
        write_step_1d_binary(&u, &p).unwrap();
        match read_step_binary(&p).unwrap() {
            StepField::One(v) => assert_eq!(v, u),
            StepField::Two(_) => panic!("wrong arity"),
        }

        let k = StepFunction2D::new(grid, (0..9).map(|i| i as f64 * 0.7).collect()).unwrap();
        let p = dir.path().join("k.bin");
        write_step_2d_binary(&k, &p).unwrap();
        match read_step_binary(&p).unwrap() {
            StepField::Two(v) => assert_eq!(v, k),
            StepField::One(_) => panic!("wrong arity"),
        }
    }

    #[test]
    fn binary_container_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        std::fs::write(&p, b"not a container at all").unwrap();
        assert!(read_step_binary(&p).is_err());
    }

    #[test]
    fn trajectory_csv_round_trips() {
        use crate::discrete::{integrate, DiscreteState, IntegrateOptions};
        let m = crate::model::kuramoto_adaptive(0.5, 0.0, 0.0, 0.5).unwrap();
        let grid = UnitGrid::new(4);
        let s0 = DiscreteState::new(
            0.0,
            StepFunction1D::new(grid, 1, vec![0.0, 0.1, 0.2, 0.3]).unwrap(),
            StepFunction2D::constant(grid, 1.0),
        )
        .unwrap();
        let traj = integrate(
            &m,
            s0,
            &IntegrateOptions { dt: 0.1, t_final: 0.5, store_every: 1, quadrature_order: 4 },
        );
        let dir = tempfile::tempdir().unwrap();
        write_trajectory(&traj, dir.path()).unwrap();
        let rows = read_csv_rows(&dir.path().join("u.csv")).unwrap();
        assert_eq!(rows.len(), traj.states.len());
        for (row, s) in rows.iter().zip(&traj.states) {
            assert_eq!(row.0, s.t);
            assert_eq!(row.1, s.u.values);
        }
        let rows = read_csv_rows(&dir.path().join("K.csv")).unwrap();
        for (row, s) in rows.iter().zip(&traj.states) {
            assert_eq!(row.1, s.k.values);
        }
    }
}
