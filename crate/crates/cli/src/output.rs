//! Artifact writing: trajectory CSV and JSON reports, 17 significant
//! digits, written atomically (temp file + rename).

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use devroll_core::{DevelopmentResult, DevelopmentStatus};
use serde_json::{json, Value};

/// One tolerance gate of a command: written machine-readable and folded
/// into the exit code.
#[derive(Clone, Debug)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Gate {
    /// value ≤ threshold passes.
    pub fn upper(name: &str, value: f64, threshold: f64) -> Gate {
        Gate {
            name: name.to_string(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "name": self.name,
            "value": self.value,
            "threshold": self.threshold,
            "pass": self.pass,
        })
    }
}

pub fn gates_json(gates: &[Gate]) -> Value {
    Value::Array(gates.iter().map(Gate::to_json).collect())
}

pub fn status_json(status: &DevelopmentStatus<f64>) -> Value {
    match status {
        DevelopmentStatus::Completed => json!({"kind": "completed"}),
        DevelopmentStatus::HitBoundary(t) => json!({"kind": "hit_boundary", "t": t}),
        DevelopmentStatus::LeftChart(t) => json!({"kind": "left_chart", "t": t}),
        DevelopmentStatus::FrameDegenerate(t) => json!({"kind": "frame_degenerate", "t": t}),
    }
}

/// 17 significant digits, the format every float in CSV artifacts uses.
pub fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:e}")
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(dir) => tempfile::NamedTempFile::new_in(dir)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Serializes with 17-significant-digit floats and writes atomically.
pub fn write_json(path: &Path, value: &Value) -> io::Result<()> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter);
    serde::Serialize::serialize(value, &mut ser)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    buf.push(b'\n');
    atomic_write(path, &buf)
}

/// Trajectory CSV: `t,x0,...,x{n-1}[,f00,...,f{n-1}{n-1}]`.
pub fn write_trajectory(
    path: &Path,
    dev: &DevelopmentResult<f64>,
    with_frames: bool,
) -> io::Result<()> {
    let n = dev.start().x.len();
    let mut out = String::new();
    out.push('t');
    for i in 0..n {
        out.push_str(&format!(",x{i}"));
    }
    if with_frames {
        for i in 0..n {
            for j in 0..n {
                out.push_str(&format!(",f{i}{j}"));
            }
        }
    }
    out.push('\n');
    for (t, state) in &dev.samples {
        out.push_str(&sci(*t));
        for i in 0..n {
            out.push(',');
            out.push_str(&sci(state.x[i]));
        }
        if with_frames {
            for i in 0..n {
                for j in 0..n {
                    out.push(',');
                    out.push_str(&sci(state.frame[(i, j)]));
                }
            }
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Variation CSV: `t,U0,...,U{n-1}[,X00,...,X{n-1}{n-1}]`.
pub fn write_variation(
    path: &Path,
    field: &devroll_core::variation::VariationField<f64>,
    with_x: bool,
) -> io::Result<()> {
    let n = field.u[0].len();
    let mut out = String::new();
    out.push('t');
    for i in 0..n {
        out.push_str(&format!(",U{i}"));
    }
    if with_x {
        for i in 0..n {
            for j in 0..n {
                out.push_str(&format!(",X{i}{j}"));
            }
        }
    }
    out.push('\n');
    for (k, &t) in field.ts.iter().enumerate() {
        out.push_str(&sci(t));
        for i in 0..n {
            out.push(',');
            out.push_str(&sci(field.u[k][i]));
        }
        if with_x {
            for i in 0..n {
                for j in 0..n {
                    out.push(',');
                    out.push_str(&sci(field.x[k][(i, j)]));
                }
            }
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
