//! JSON-lines demonstration files.
//!
//! Line 1 is a [`DemoHeader`]; every following line is one transition:
//!
//! ```text
//! {"traj_id":0,"step":0,"s":[...],"a":[...],"r":-1.5,"terminal":false,"noise_level":0.25}
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a file and
//! writing it back reproduces it byte for byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::demo::{DemoStore, Trajectory, Transition};
use crate::error::{Error, Result};

pub const DEMO_FORMAT: &str = "smile-demos";
pub const DEMO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoHeader {
    pub format: String,
    pub version: u32,
    pub env: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl DemoHeader {
    pub fn new(env: &str, state_dim: usize, action_dim: usize, horizon: usize, seed: u64) -> Self {
        Self {
            format: DEMO_FORMAT.to_string(),
            version: DEMO_VERSION,
            env: env.to_string(),
            state_dim,
            action_dim,
            horizon,
            seed,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    traj_id: u64,
    step: usize,
    s: Vec<f64>,
    a: Vec<f64>,
    r: Option<f64>,
    terminal: bool,
    noise_level: Option<f64>,
}

pub fn write_demos(path: &Path, header: &DemoHeader, store: &DemoStore) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_demos_to(&mut w, header, store).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_demos_to<W: Write>(w: &mut W, header: &DemoHeader, store: &DemoStore) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, header)?;
    w.write_all(b"\n")?;
    for traj in store.trajectories() {
        for (step, t) in traj.steps.iter().enumerate() {
            let rec = Record {
                traj_id: traj.id,
                step,
                s: t.s.clone(),
                a: t.a.clone(),
                r: t.r,
                terminal: t.terminal,
                noise_level: traj.noise_level,
            };
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Reads a demo file. With `keep_rewards = false` every reward is dropped on
/// load, which is how training code paths open demonstrations.
pub fn read_demos(path: &Path, keep_rewards: bool) -> Result<(DemoHeader, DemoStore)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_demos_from(BufReader::new(file), path, keep_rewards)
}

pub fn read_demos_from<R: BufRead>(
    reader: R,
    path: &Path,
    keep_rewards: bool,
) -> Result<(DemoHeader, DemoStore)> {
    let fail = |line: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = reader.lines().enumerate();
    let header: DemoHeader = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| fail(1, format!("bad header: {e}")))?
        }
        None => return Err(Error::invalid(format!("{}: empty demo file", path.display()))),
    };
    if header.format != DEMO_FORMAT {
        return Err(fail(1, format!("not a demo file (format {:?})", header.format)));
    }
    if header.version != DEMO_VERSION {
        return Err(Error::Version {
            what: "demo file",
            found: header.version,
            expected: DEMO_VERSION,
        });
    }

    let mut store = DemoStore::default();
    let mut current: Option<Trajectory> = None;
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| fail(lineno, e.to_string()))?;
        if rec.s.len() != header.state_dim || rec.a.len() != header.action_dim {
            return Err(fail(
                lineno,
                format!(
                    "record dims ({}, {}) differ from header ({}, {})",
                    rec.s.len(),
                    rec.a.len(),
                    header.state_dim,
                    header.action_dim
                ),
            ));
        }
        if rec.s.iter().chain(&rec.a).chain(rec.r.iter()).any(|v| !v.is_finite()) {
            return Err(fail(lineno, "non-finite value".into()));
        }
        let continues = current.as_ref().is_some_and(|t| t.id == rec.traj_id);
        if !continues {
            if let Some(done) = current.take() {
                store.push(done).map_err(|e| fail(lineno, e.to_string()))?;
            }
            current = Some(Trajectory {
                id: rec.traj_id,
                steps: Vec::new(),
                noise_level: rec.noise_level,
            });
        }
        let traj = current.as_mut().unwrap();
        if rec.step != traj.steps.len() {
            return Err(fail(
                lineno,
                format!("trajectory {} expected step {}, found {}", rec.traj_id, traj.steps.len(), rec.step),
            ));
        }
        if rec.noise_level != traj.noise_level {
            return Err(fail(lineno, "noise_level changes within a trajectory".into()));
        }
        traj.steps.push(Transition {
            s: rec.s,
            a: rec.a,
            r: if keep_rewards { rec.r } else { None },
            terminal: rec.terminal,
        });
    }
    if let Some(done) = current.take() {
        store.push(done)?;
    }
    if store.is_empty() {
        return Err(Error::invalid(format!("{}: demo file has no trajectories", path.display())));
    }
    Ok((header, store))
}
