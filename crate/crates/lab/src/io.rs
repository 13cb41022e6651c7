//! File formats: binary field dumps, monitor CSVs, manifests.
//!
//! # Field dump layout (little-endian)
//!
//! ```text
//! magic  b"FDE1"
//! tag    u8      1 = interval, 2 = radial, 3 = polar2d
//! interval: a f64, b f64, n u32
//! radial:   dim u32, a f64, b f64, n u32
//! polar2d:  a f64, b f64, n_r u32, n_theta u32
//! count  u64     number of interior nodal values
//! values count × f64
//! ```
//!
//! `read ∘ write` is the identity bit for bit.

use anyhow::{bail, Context};
use fde_core::geometry::{build_grid, Field, Grid, GridShape};
use fde_core::rescaled::RescaledTrajectory;
use fde_core::evolution::Trajectory;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

const MAGIC: &[u8; 4] = b"FDE1";

fn shape_tag(shape: &GridShape) -> u8 {
    match shape {
        GridShape::Interval { .. } => 1,
        GridShape::Radial { .. } => 2,
        GridShape::Polar2d { .. } => 3,
    }
}

/// Writes a field dump at `path`.
pub fn write_field(path: &Path, field: &Field) -> anyhow::Result<()> {
    let grid = field.grid();
    let mut buf: Vec<u8> = Vec::with_capacity(64 + 8 * field.len());
    buf.extend_from_slice(MAGIC);
    buf.push(shape_tag(&grid.shape()));
    match grid.shape() {
        GridShape::Interval { a, b } => {
            buf.extend_from_slice(&a.to_le_bytes());
            buf.extend_from_slice(&b.to_le_bytes());
            buf.extend_from_slice(&(grid.resolution() as u32).to_le_bytes());
        }
        GridShape::Radial { dim, a, b } => {
            buf.extend_from_slice(&dim.to_le_bytes());
            buf.extend_from_slice(&a.to_le_bytes());
            buf.extend_from_slice(&b.to_le_bytes());
            buf.extend_from_slice(&(grid.resolution() as u32).to_le_bytes());
        }
        GridShape::Polar2d { a, b, n_theta } => {
            buf.extend_from_slice(&a.to_le_bytes());
            buf.extend_from_slice(&b.to_le_bytes());
            buf.extend_from_slice(&(grid.resolution() as u32).to_le_bytes());
            buf.extend_from_slice(&(n_theta as u32).to_le_bytes());
        }
    }
    buf.extend_from_slice(&(field.len() as u64).to_le_bytes());
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).with_context(|| format!("create {}", path.display()))?;
    file.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> anyhow::Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            bail!("truncated field dump");
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f64(&mut self) -> anyhow::Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> anyhow::Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> anyhow::Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads a field dump, reconstructing its grid from the descriptor.
pub fn read_field(path: &Path) -> anyhow::Result<Field> {
    let data = fs::read(path).with_context(|| format!("read {}", path.display()))?;
    let mut cur = Cursor { data: &data, pos: 0 };
    if cur.take(4)? != MAGIC {
        bail!("bad magic in {}", path.display());
    }
    let tag = cur.take(1)?[0];
    let (shape, resolution) = match tag {
        1 => {
            let a = cur.f64()?;
            let b = cur.f64()?;
            let n = cur.u32()? as usize;
            (GridShape::Interval { a, b }, n)
        }
        2 => {
            let dim = cur.u32()?;
            let a = cur.f64()?;
            let b = cur.f64()?;
            let n = cur.u32()? as usize;
            (GridShape::Radial { dim, a, b }, n)
        }
        3 => {
            let a = cur.f64()?;
            let b = cur.f64()?;
            let n = cur.u32()? as usize;
            let n_theta = cur.u32()? as usize;
            (GridShape::Polar2d { a, b, n_theta }, n)
        }
        other => bail!("unknown shape tag {other}"),
    };
    let count = cur.u64()? as usize;
    let grid = build_grid(shape, resolution)?;
    if count != grid.interior_count() {
        bail!("node count {count} does not match grid ({})", grid.interior_count());
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(cur.f64()?);
    }
    if cur.pos != data.len() {
        bail!("trailing bytes in {}", path.display());
    }
    Ok(Field::from_values(&grid, values)?)
}

/// Typed read: the dump must describe exactly the given grid.
pub fn read_field_on(path: &Path, grid: &Arc<Grid>) -> anyhow::Result<Field> {
    let field = read_field(path)?;
    if !(field.grid().layout_eq(grid)) {
        bail!(
            "grid descriptor mismatch: dump has {:?} n={}, expected {:?} n={}",
            field.grid().shape(),
            field.grid().resolution(),
            grid.shape(),
            grid.resolution()
        );
    }
    Field::from_values(grid, field.values().to_vec()).map_err(Into::into)
}

/// Physical trajectory monitors as CSV: `t,J,R,h10,lm,linf`.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> anyhow::Result<()> {
    let mut out = String::from("t,J,R,h10,lm,linf\n");
    for (t, rep) in traj.times.iter().zip(&traj.monitors) {
        out.push_str(&format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            t, rep.j, rep.rayleigh, rep.h10, rep.lm, rep.linf
        ));
    }
    fs::write(path, out).with_context(|| format!("write {}", path.display()))
}

/// Rescaled trajectory monitors as CSV:
/// `s,J,R,h10,lm,linf,dissipation,jprime_hminus1`. The dissipation column
/// carries the pure-step value of the step ending at the row (0 on row 0).
pub fn write_rescaled_csv(path: &Path, traj: &RescaledTrajectory) -> anyhow::Result<()> {
    let mut out = String::from("s,J,R,h10,lm,linf,dissipation,jprime_hminus1\n");
    for (k, (s, rep)) in traj.s_times.iter().zip(&traj.monitors).enumerate() {
        let diss = if k == 0 { 0.0 } else { traj.dissipation[k - 1] };
        out.push_str(&format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            s, rep.j, rep.rayleigh, rep.h10, rep.lm, rep.linf, diss, traj.jprime[k]
        ));
    }
    fs::write(path, out).with_context(|| format!("write {}", path.display()))
}

/// Writes the run manifest: config echo, version, seed, wall time and the
/// CSV column documentation, enough to re-run the experiment exactly.
pub fn write_manifest(
    dir: &Path,
    config_toml: &str,
    seed: u64,
    wall_seconds: f64,
) -> anyhow::Result<()> {
    let manifest = format!(
        "# fde-lab run manifest\nversion = \"{}\"\nseed = {}\nwall_seconds = {:.3}\n\n\
         # monitor CSV columns\n\
         # physical:  t,J,R,h10,lm,linf\n\
         # rescaled:  s,J,R,h10,lm,linf,dissipation,jprime_hminus1\n\n\
         # ---- configuration echo ----\n{}",
        env!("CARGO_PKG_VERSION"),
        seed,
        wall_seconds,
        config_toml
    );
    fs::write(dir.join("manifest.toml"), manifest).context("write manifest")
}
