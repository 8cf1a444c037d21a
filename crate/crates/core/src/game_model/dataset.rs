//! Offline datasets and their text format.
//!
//! The observed file starts with `#confgame v1 H=<H> n=<n>` followed by rows
//! `traj,step,s,u,a,r_a,s_half,u_half,b,r_b`. Each trajectory contributes one
//! `init` row carrying `B_{1/2}` in the `b` column, one row per step `1..=H`,
//! and one `term` row carrying `S_{H+1}` in the `s` column. Hidden traces live in
//! a sibling file `<path>.hidden` with header `#confgame-hidden v1 H=<H> n=<n>`
//! and rows `traj,step,v1,v2,v1_half,v2_half`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::spec::Spaces;
use crate::error::{Error, Result};

/// Observed variables of one Alice step and the following half step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub s: u8,
    pub u: u8,
    pub a: u8,
    pub r_a: f64,
    pub s_half: u8,
    pub u_half: u8,
    pub b: u8,
    pub r_b: f64,
}

/// One observed trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Bob's initial action `B_{1/2}`.
    pub initial_bob: u8,
    /// Steps `1..=H`.
    pub steps: Vec<StepRecord>,
    /// Terminal state `S_{H+1}`.
    pub terminal: u8,
}

/// Observed offline data; contains no trace of Bob's private information.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub horizon: usize,
    pub trajectories: Vec<Trajectory>,
}

/// Bob's private information at one step and half step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HiddenStep {
    pub v1: u8,
    pub v2: u8,
    pub v1_half: u8,
    pub v2_half: u8,
}

/// Hidden traces keyed by trajectory index, readable only by the oracle side.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTrace {
    pub horizon: usize,
    pub rows: Vec<Vec<HiddenStep>>,
}

/// Output of the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub observed: OfflineDataset,
    pub hidden: HiddenTrace,
}

impl OfflineDataset {
    /// Empty dataset of the given horizon.
    pub fn empty(horizon: usize) -> Self {
        OfflineDataset {
            horizon,
            trajectories: Vec::new(),
        }
    }

    /// Number of trajectories.
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    /// True when there are no trajectories.
    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Checks that every categorical value lies within the declared spaces.
    pub fn check(&self, spaces: Spaces) -> Result<()> {
        if self.horizon != spaces.horizon {
            return Err(Error::SchemaMismatch(format!(
                "dataset horizon {} differs from spec horizon {}",
                self.horizon, spaces.horizon
            )));
        }
        let (ns, np) = (spaces.n_states as u8, spaces.n_private as u8);
        for (i, t) in self.trajectories.iter().enumerate() {
            let bad = t.initial_bob > 1
                || t.terminal >= ns
                || t.steps.len() != self.horizon
                || t.steps.iter().any(|r| r.s >= ns || r.s_half >= ns || r.u >= np || r.u_half >= np || r.a > 1 || r.b > 1);
            if bad {
                return Err(Error::SchemaMismatch(format!("trajectory {i} has values outside the declared spaces")));
            }
        }
        Ok(())
    }

    /// Keeps the trajectories whose index satisfies `keep`.
    pub fn subset(&self, keep: impl Fn(usize) -> bool) -> OfflineDataset {
        OfflineDataset {
            horizon: self.horizon,
            trajectories: self
                .trajectories
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, t)| t.clone())
                .collect(),
        }
    }
}

/// Renders the observed table.
pub fn render_dataset(d: &OfflineDataset) -> String {
    let mut out = String::with_capacity(64 * d.len() * (d.horizon + 2));
    let _ = writeln!(out, "#confgame v1 H={} n={}", d.horizon, d.len());
    for (i, t) in d.trajectories.iter().enumerate() {
        let _ = writeln!(out, "{i},init,,,,,,,{},", t.initial_bob);
        for (h, r) in t.steps.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{},{},{},{},{}",
                h + 1,
                r.s,
                r.u,
                r.a,
                r.r_a,
                r.s_half,
                r.u_half,
                r.b,
                r.r_b
            );
        }
        let _ = writeln!(out, "{i},term,{},,,,,,,", t.terminal);
    }
    out
}

/// Renders the hidden-trace table.
pub fn render_hidden(h: &HiddenTrace) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "#confgame-hidden v1 H={} n={}", h.horizon, h.rows.len());
    for (i, row) in h.rows.iter().enumerate() {
        for (step, v) in row.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{},{},{},{}", step + 1, v.v1, v.v2, v.v1_half, v.v2_half);
        }
    }
    out
}

fn parse_header(line: Option<&str>, tag: &str) -> Result<(usize, usize)> {
    let line = line.ok_or_else(|| Error::SchemaMismatch("missing header".into()))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) || parts.next() != Some("v1") {
        return Err(Error::SchemaMismatch(format!("header must start with '{tag} v1'")));
    }
    let mut field = |key: &str| -> Result<usize> {
        parts
            .next()
            .and_then(|p| p.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::SchemaMismatch(format!("header lacks {key}<integer>")))
    };
    let h = field("H=")?;
    let n = field("n=")?;
    Ok((h, n))
}

fn parse_u8(field: &str, line: usize, what: &str) -> Result<u8> {
    field.parse().map_err(|_| Error::CorruptRow {
        line,
        reason: format!("{what} '{field}' is not a small non-negative integer"),
    })
}

fn parse_f64(field: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::CorruptRow {
        line,
        reason: format!("{what} '{field}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::CorruptRow {
            line,
            reason: format!("{what} is not finite"),
        });
    }
    Ok(v)
}

/// Parses the observed table.
pub fn parse_dataset(text: &str) -> Result<OfflineDataset> {
    let mut lines = text.lines();
    let (horizon, n) = parse_header(lines.next(), "#confgame")?;
    let mut trajectories: Vec<Trajectory> = Vec::with_capacity(n.min(1 << 20));
    let mut current: Option<Trajectory> = None;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(Error::CorruptRow {
                line: line_no,
                reason: format!("expected 10 fields, found {}", f.len()),
            });
        }
        let traj: usize = f[0].parse().map_err(|_| Error::CorruptRow {
            line: line_no,
            reason: "bad trajectory id".into(),
        })?;
        match f[1] {
            "init" => {
                if current.is_some() || traj != trajectories.len() {
                    return Err(Error::SchemaMismatch(format!("line {line_no}: unexpected init row for trajectory {traj}")));
                }
                current = Some(Trajectory {
                    initial_bob: parse_u8(f[8], line_no, "b")?,
                    steps: Vec::with_capacity(horizon),
                    terminal: 0,
                });
            }
            "term" => {
                let mut t = current.take().ok_or_else(|| Error::SchemaMismatch(format!("line {line_no}: term row without init")))?;
                if t.steps.len() != horizon || traj != trajectories.len() {
                    return Err(Error::SchemaMismatch(format!(
                        "line {line_no}: trajectory {traj} has {} steps, header says H={horizon}",
                        t.steps.len()
                    )));
                }
                t.terminal = parse_u8(f[2], line_no, "s")?;
                trajectories.push(t);
            }
            step => {
                let h: usize = step.parse().map_err(|_| Error::CorruptRow {
                    line: line_no,
                    reason: format!("unknown step tag '{step}'"),
                })?;
                let t = current.as_mut().ok_or_else(|| Error::SchemaMismatch(format!("line {line_no}: step row without init")))?;
                if h != t.steps.len() + 1 || h > horizon || traj != trajectories.len() {
                    return Err(Error::SchemaMismatch(format!(
                        "line {line_no}: step {h} out of order or beyond H={horizon}"
                    )));
                }
                t.steps.push(StepRecord {
                    s: parse_u8(f[2], line_no, "s")?,
                    u: parse_u8(f[3], line_no, "u")?,
                    a: parse_u8(f[4], line_no, "a")?,
                    r_a: parse_f64(f[5], line_no, "r_a")?,
                    s_half: parse_u8(f[6], line_no, "s_half")?,
                    u_half: parse_u8(f[7], line_no, "u_half")?,
                    b: parse_u8(f[8], line_no, "b")?,
                    r_b: parse_f64(f[9], line_no, "r_b")?,
                });
            }
        }
    }
    if current.is_some() {
        return Err(Error::SchemaMismatch("last trajectory lacks a term row".into()));
    }
    if trajectories.len() != n {
        return Err(Error::SchemaMismatch(format!("header says n={n}, found {} trajectories", trajectories.len())));
    }
    Ok(OfflineDataset { horizon, trajectories })
}

/// Parses the hidden-trace table.
pub fn parse_hidden(text: &str) -> Result<HiddenTrace> {
    let mut lines = text.lines();
    let (horizon, n) = parse_header(lines.next(), "#confgame-hidden")?;
    let mut rows: Vec<Vec<HiddenStep>> = Vec::with_capacity(n.min(1 << 20));
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::CorruptRow {
                line: line_no,
                reason: "expected 6 fields".into(),
            });
        }
        let traj: usize = f[0].parse().map_err(|_| Error::CorruptRow {
            line: line_no,
            reason: "bad trajectory id".into(),
        })?;
        let step: usize = f[1].parse().map_err(|_| Error::CorruptRow {
            line: line_no,
            reason: "bad step".into(),
        })?;
        if step == 1 && traj == rows.len() {
            rows.push(Vec::with_capacity(horizon));
        }
        let in_order = traj + 1 == rows.len() && step <= horizon && rows.last().map(|r| r.len() + 1) == Some(step);
        if !in_order {
            return Err(Error::SchemaMismatch(format!("line {line_no}: hidden row out of order")));
        }
        let row = rows.last_mut().expect("row exists when in order");
        row.push(HiddenStep {
            v1: parse_u8(f[2], line_no, "v1")?,
            v2: parse_u8(f[3], line_no, "v2")?,
            v1_half: parse_u8(f[4], line_no, "v1_half")?,
            v2_half: parse_u8(f[5], line_no, "v2_half")?,
        });
    }
    if rows.len() != n || rows.iter().any(|r| r.len() != horizon) {
        return Err(Error::SchemaMismatch("hidden trace does not match its header".into()));
    }
    Ok(HiddenTrace { horizon, rows })
}

/// Path of the hidden-trace file paired with `path`.
pub fn hidden_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".hidden");
    PathBuf::from(p)
}

/// Writes the observed table to `path`.
pub fn write_dataset(d: &OfflineDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_dataset(d))?;
    Ok(())
}

/// Reads the observed table from `path`.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<OfflineDataset> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

/// Writes the observed table to `path` and the hidden traces to `path.hidden`.
pub fn write_simulated(data: &SimulatedData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_dataset(&data.observed, path)?;
    std::fs::write(hidden_path(path), render_hidden(&data.hidden))?;
    Ok(())
}

/// Reads the hidden traces paired with `path`.
pub fn read_hidden(path: impl AsRef<Path>) -> Result<HiddenTrace> {
    parse_hidden(&std::fs::read_to_string(hidden_path(path.as_ref()))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> OfflineDataset {
        OfflineDataset {
            horizon: 2,
            trajectories: vec![
                Trajectory {
                    initial_bob: 1,
                    steps: vec![
                        StepRecord {
                            s: 0,
                            u: 1,
                            a: 1,
                            r_a: 0.1 + 0.2,
                            s_half: 1,
                            u_half: 0,
                            b: 0,
                            r_b: -1e-300,
                        },
                        StepRecord {
                            s: 1,
                            u: 0,
                            a: 0,
                            r_a: 1.0 / 3.0,
                            s_half: 0,
                            u_half: 1,
                            b: 1,
                            r_b: 2.5,
                        },
                    ],
                    terminal: 1,
                };
                2
            ],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let d = sample();
        assert_eq!(parse_dataset(&render_dataset(&d)).unwrap(), d);
        let e = OfflineDataset::empty(3);
        assert_eq!(parse_dataset(&render_dataset(&e)).unwrap(), e);
    }

    #[test]
    fn horizon_mismatch_is_schema_error() {
        let text = render_dataset(&sample()).replacen("H=2", "H=3", 1);
        assert!(matches!(parse_dataset(&text), Err(Error::SchemaMismatch(_))));
        let text = render_dataset(&sample()).replacen("H=2", "H=1", 1);
        assert!(matches!(parse_dataset(&text), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn corrupt_row_reports_line() {
        let text = render_dataset(&sample()).replacen("0.30000000000000004", "abc", 1);
        match parse_dataset(&text) {
            Err(Error::CorruptRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn count_mismatch_is_schema_error() {
        let text = render_dataset(&sample()).replacen("n=2", "n=3", 1);
        assert!(matches!(parse_dataset(&text), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn hidden_round_trip() {
        let h = HiddenTrace {
            horizon: 2,
            rows: vec![vec![HiddenStep { v1: 1, v2: 0, v1_half: 0, v2_half: 1 }; 2]; 3],
        };
        assert_eq!(parse_hidden(&render_hidden(&h)).unwrap(), h);
    }

    #[test]
    fn values_are_checked_against_spaces() {
        let sp = Spaces {
            horizon: 2,
            n_states: 1,
            n_private: 2,
        };
        assert!(matches!(sample().check(sp), Err(Error::SchemaMismatch(_))));
    }
}
