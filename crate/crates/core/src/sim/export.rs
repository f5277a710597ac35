use std::io::{self, Read, Write};

use super::engine::SampleKind;
use super::path::{compensated_path, Path};
use super::{JumpSampling, SimConfig, SimError, Terminal};
use crate::process::ProcessSpec;
use crate::scalar::Scalar;

pub const MANIFEST_MAGIC: [u8; 4] = *b"HJPM";
const MANIFEST_VERSION: u16 = 1;

/// Shortest decimal string that parses back to the same value. Plain notation in
/// `[1e-5, 1e16)`, scientific otherwise.
pub fn format_shortest<S: Scalar>(v: S) -> String {
    let a = v.abs();
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > S::zero() { "inf" } else { "-inf" }.to_string()
    } else if v == S::zero() || (a >= S::lit(1e-5) && a < S::lit(1e16)) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn flag(kind: SampleKind) -> u8 {
    match kind {
        SampleKind::Grid => 0,
        SampleKind::PreJump => 1,
        SampleKind::PostJump => 2,
        SampleKind::Final => 3,
    }
}

/// Writes the path as CSV. One-dimensional paths use the header `t,x,M,qvar,event_flag`;
/// higher dimensions expand each of `x`, `M`, `qvar` into per-coordinate columns.
pub fn write_path_csv<S: Scalar, W: Write>(spec: &ProcessSpec<S>, path: &Path<S>, mut out: W) -> Result<(), SimError> {
    let stats = compensated_path(spec, path)?;
    let d = stats.dim;
    let io = |e: io::Error| SimError::Config(format!("write failed: {e}"));
    let mut header = vec!["t".to_string()];
    for prefix in ["x", "M", "qvar"] {
        if d == 1 {
            header.push(prefix.to_string());
        } else {
            header.extend((0..d).map(|i| format!("{prefix}{i}")));
        }
    }
    header.push("event_flag".into());
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for (i, g) in path.grid.iter().enumerate() {
        let mut row = vec![format_shortest(g.t)];
        row.extend(g.x.iter().map(|&v| format_shortest(v)));
        row.extend(stats.martingale_at(i).iter().map(|&v| format_shortest(v)));
        row.extend(stats.qvar_at(i).iter().map(|&v| format_shortest(v)));
        row.push(flag(g.kind).to_string());
        writeln!(out, "{}", row.join(",")).map_err(io)?;
    }
    Ok(())
}

/// Decoded binary manifest header.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryManifest {
    pub version: u16,
    pub fingerprint: u64,
    pub seed: u64,
    pub path_index: u64,
    pub horizon: f64,
    pub dt_grid: f64,
    pub ode_step: f64,
    pub hazard_tol: f64,
    pub q_max: f64,
    pub x_max: f64,
    /// Thinning rate bound; `None` for hazard inversion.
    pub thinning_bound: Option<f64>,
    pub n_events: u64,
    pub n_grid: u64,
    pub terminal: Terminal,
}

impl BinaryManifest {
    pub fn of_path<S: Scalar>(path: &Path<S>) -> Self {
        let c: &SimConfig<S> = &path.cfg;
        Self {
            version: MANIFEST_VERSION,
            fingerprint: path.fingerprint,
            seed: c.seed,
            path_index: c.path_index,
            horizon: c.horizon.as_f64(),
            dt_grid: c.dt_grid.as_f64(),
            ode_step: c.ode_step.as_f64(),
            hazard_tol: c.hazard_tol.as_f64(),
            q_max: c.q_max.as_f64(),
            x_max: c.x_max.as_f64(),
            thinning_bound: match c.sampling {
                JumpSampling::HazardInversion => None,
                JumpSampling::Thinning { rate_bound } => Some(rate_bound.as_f64()),
            },
            n_events: path.events.len() as u64,
            n_grid: path.grid.len() as u64,
            terminal: path.terminal,
        }
    }
}

/// Little-endian layout: magic, u16 version, u64 fingerprint, seed, path index, six f64
/// config fields, f64 thinning bound (NaN for hazard inversion), u64 event and grid
/// counts, u8 terminal code.
pub fn write_manifest<W: Write>(m: &BinaryManifest, mut out: W) -> io::Result<()> {
    out.write_all(&MANIFEST_MAGIC)?;
    out.write_all(&m.version.to_le_bytes())?;
    for v in [m.fingerprint, m.seed, m.path_index] {
        out.write_all(&v.to_le_bytes())?;
    }
    let thin = m.thinning_bound.unwrap_or(f64::NAN);
    for v in [m.horizon, m.dt_grid, m.ode_step, m.hazard_tol, m.q_max, m.x_max, thin] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&m.n_events.to_le_bytes())?;
    out.write_all(&m.n_grid.to_le_bytes())?;
    out.write_all(&[m.terminal.code()])
}

pub fn read_manifest<R: Read>(mut input: R) -> io::Result<BinaryManifest> {
    let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != MANIFEST_MAGIC {
        return Err(bad("not a path manifest"));
    }
    let mut b2 = [0u8; 2];
    input.read_exact(&mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != MANIFEST_VERSION {
        return Err(bad("unsupported manifest version"));
    }
    let mut b8 = [0u8; 8];
    let mut u64s = [0u64; 3];
    for v in &mut u64s {
        input.read_exact(&mut b8)?;
        *v = u64::from_le_bytes(b8);
    }
    let mut f64s = [0f64; 7];
    for v in &mut f64s {
        input.read_exact(&mut b8)?;
        *v = f64::from_le_bytes(b8);
    }
    input.read_exact(&mut b8)?;
    let n_events = u64::from_le_bytes(b8);
    input.read_exact(&mut b8)?;
    let n_grid = u64::from_le_bytes(b8);
    let mut b1 = [0u8; 1];
    input.read_exact(&mut b1)?;
    let terminal = Terminal::from_code(b1[0]).ok_or_else(|| bad("unknown terminal code"))?;
    Ok(BinaryManifest {
        version,
        fingerprint: u64s[0],
        seed: u64s[1],
        path_index: u64s[2],
        horizon: f64s[0],
        dt_grid: f64s[1],
        ode_step: f64s[2],
        hazard_tol: f64s[3],
        q_max: f64s[4],
        x_max: f64s[5],
        thinning_bound: (!f64s[6].is_nan()).then_some(f64s[6]),
        n_events,
        n_grid,
        terminal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{Channel, JumpKernel};
    use crate::sim::simulate;

    #[test]
    fn shortest_round_trips() {
        for v in [0.1f64, 1.0 / 3.0, 1e-7, 2.5e20, -0.0, 123456.789, 1e-5, 9.999e15] {
            let s = format_shortest(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(format_shortest(0.1), "0.1");
        assert_eq!(format_shortest(1e-7), "1e-7");
        assert_eq!(format_shortest(0.1f32), "0.1");
    }

    #[test]
    fn csv_and_manifest() {
        let k = JumpKernel::Discrete(vec![Channel::constant(1.0, vec![1.0])]);
        let spec = ProcessSpec::new(1, k, 1.0, "counter").unwrap();
        let cfg = SimConfig::new(2.0).with_grid(0.5).with_seed(5);
        let path = simulate(&spec, &[0.0], &cfg, None).unwrap();
        let mut buf = Vec::new();
        write_path_csv(&spec, &path, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x,M,qvar,event_flag"));
        assert_eq!(lines.count(), path.grid.len());
        assert!(text.trim_end().ends_with(",3"));

        let m = BinaryManifest::of_path(&path);
        let mut bytes = Vec::new();
        write_manifest(&m, &mut bytes).unwrap();
        assert_eq!(read_manifest(bytes.as_slice()).unwrap(), m);
        bytes[0] = b'X';
        assert!(read_manifest(bytes.as_slice()).is_err());
    }
}
