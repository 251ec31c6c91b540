//! Text formats for measures, policies and threshold rules.
//!
//! Every float is written with 17 significant digits so files round-trip
//! exactly. Files are replaced atomically.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::construction::{ThresholdPolicy, ThresholdRule};
use crate::model::{discretize_channel, ChannelDiscretization, SystemConfig};
use crate::occupancy::{OccupancyMeasure, Policy};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

/// `x` with 17 significant digits.
pub fn float17(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| IoError::Io(e.error))?;
    Ok(())
}

fn to_text(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// `q,s,k,g`, one row per variable.
pub fn measure_csv(m: &OccupancyMeasure) -> String {
    let mut rows = vec![vec!["q".into(), "s".into(), "k".into(), "g".into()]];
    for q in 0..m.queue_states() {
        for s in 0..m.rates() {
            for k in 0..m.bins() {
                rows.push(vec![q.to_string(), s.to_string(), k.to_string(), float17(m.get(q, s, k))]);
            }
        }
    }
    to_text(rows)
}

/// `q,k,h_lo,h_hi,transient,f0..fS`, one row per `(q, k)`.
pub fn policy_csv(p: &Policy) -> String {
    let disc = p.discretization();
    let mut header: Vec<String> = ["q", "k", "h_lo", "h_hi", "transient"].map(String::from).to_vec();
    header.extend((0..p.rates()).map(|s| format!("f{s}")));
    let mut rows = vec![header];
    for q in 0..p.queue_states() {
        for k in 0..p.bins() {
            let mut r = vec![
                q.to_string(),
                k.to_string(),
                float17(disc.edges[k]),
                float17(disc.edges[k + 1]),
                u8::from(p.is_transient(q, k)).to_string(),
            ];
            r.extend(p.probs(q, k).iter().map(|&x| float17(x)));
            rows.push(r);
        }
    }
    to_text(rows)
}

/// `q,h_lo,h_hi,s`, one row per rule.
pub fn threshold_csv(p: &ThresholdPolicy) -> String {
    let mut rows = vec![["q", "h_lo", "h_hi", "s"].map(String::from).to_vec()];
    for (q, rules) in p.rules.iter().enumerate() {
        for r in rules {
            rows.push(vec![q.to_string(), float17(r.lo), float17(r.hi), r.s.to_string()]);
        }
    }
    to_text(rows)
}

/// A policy read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyFile {
    Binned(Policy),
    Threshold(ThresholdPolicy),
}

fn records(text: &str) -> Result<(Vec<String>, Vec<csv::StringRecord>), IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers()?.iter().map(String::from).collect();
    let rows = rdr.records().collect::<Result<Vec<_>, _>>()?;
    Ok((header, rows))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T, IoError> {
    let raw = rec.get(i).ok_or_else(|| IoError::Parse {
        line,
        msg: format!("missing column {i}"),
    })?;
    raw.parse().map_err(|_| IoError::Parse {
        line,
        msg: format!("bad value {raw:?} in column {i}"),
    })
}

/// Reads either policy format, telling them apart by header.
pub fn parse_policy(cfg: &SystemConfig, text: &str) -> Result<PolicyFile, IoError> {
    let (header, _) = records(text)?;
    match header.get(1).map(String::as_str) {
        Some("k") => parse_policy_csv(cfg, text).map(PolicyFile::Binned),
        Some("h_lo") => parse_threshold_csv(cfg, text).map(PolicyFile::Threshold),
        _ => Err(IoError::Invalid("unrecognised policy header".into())),
    }
}

pub fn parse_policy_csv(cfg: &SystemConfig, text: &str) -> Result<Policy, IoError> {
    let (header, rows) = records(text)?;
    let sn = cfg.max_rate + 1;
    if header.len() != 5 + sn {
        return Err(IoError::Invalid(format!(
            "expected {} columns for S_max = {}, found {}",
            5 + sn,
            cfg.max_rate,
            header.len()
        )));
    }
    let qn = cfg.buffer + 1;
    if rows.is_empty() || rows.len() % qn != 0 {
        return Err(IoError::Invalid(format!("row count {} is not a multiple of {qn}", rows.len())));
    }
    let bins = rows.len() / qn;
    let disc: ChannelDiscretization =
        discretize_channel(&cfg.channel, bins).map_err(|e| IoError::Invalid(e.to_string()))?;
    let mut probs = vec![vec![vec![0.0; sn]; bins]; qn];
    let mut transient = vec![vec![false; bins]; qn];
    let mut seen = vec![vec![false; bins]; qn];
    for (i, rec) in rows.iter().enumerate() {
        let line = i + 2;
        let q: usize = field(rec, 0, line)?;
        let k: usize = field(rec, 1, line)?;
        if q >= qn || k >= bins || seen[q][k] {
            return Err(IoError::Parse {
                line,
                msg: format!("unexpected cell (q = {q}, k = {k})"),
            });
        }
        seen[q][k] = true;
        let lo: f64 = field(rec, 2, line)?;
        let hi: f64 = field(rec, 3, line)?;
        if lo != disc.edges[k] || hi != disc.edges[k + 1] {
            return Err(IoError::Parse {
                line,
                msg: format!("bin {k} edges do not match an equal-mass split into {bins} bins"),
            });
        }
        transient[q][k] = field::<u8>(rec, 4, line)? != 0;
        for s in 0..sn {
            probs[q][k][s] = field(rec, 5 + s, line)?;
        }
    }
    Policy::from_rows(cfg, &disc, probs, transient).map_err(|e| IoError::Invalid(e.to_string()))
}

pub fn parse_threshold_csv(cfg: &SystemConfig, text: &str) -> Result<ThresholdPolicy, IoError> {
    let (_, rows) = records(text)?;
    let qn = cfg.buffer + 1;
    let mut rules: Vec<Vec<ThresholdRule>> = vec![Vec::new(); qn];
    for (i, rec) in rows.iter().enumerate() {
        let line = i + 2;
        let q: usize = field(rec, 0, line)?;
        let s: usize = field(rec, 3, line)?;
        if q >= qn || s > cfg.max_rate {
            return Err(IoError::Parse {
                line,
                msg: format!("(q = {q}, s = {s}) out of range"),
            });
        }
        rules[q].push(ThresholdRule {
            lo: field(rec, 1, line)?,
            hi: field(rec, 2, line)?,
            s,
            conventional: false,
        });
    }
    for (q, list) in rules.iter().enumerate() {
        let mut cursor = cfg.channel.h_min;
        for r in list {
            if r.lo != cursor || !(r.hi > r.lo) {
                return Err(IoError::Invalid(format!("rules for q = {q} do not tile the gain range")));
            }
            cursor = r.hi;
        }
        if cursor != cfg.channel.h_max {
            return Err(IoError::Invalid(format!("rules for q = {q} do not reach h_max")));
        }
    }
    Ok(ThresholdPolicy { rules })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float17_round_trips() {
        for x in [0.1, 1.0 / 3.0, 9.5, 1e-300, -2.5e17, 0.0] {
            let s = float17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(float17(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn policy_round_trip() {
        let cfg = SystemConfig::paper_iv();
        let disc = discretize_channel(&cfg.channel, 3).unwrap();
        let p = Policy::deterministic(&cfg, &disc, |q, k| (q + k) % 3);
        let text = policy_csv(&p);
        assert!(text.starts_with("q,k,h_lo,h_hi,transient,f0,f1,f2\n"));
        assert_eq!(parse_policy(&cfg, &text).unwrap(), PolicyFile::Binned(p));
    }

    #[test]
    fn threshold_round_trip() {
        let cfg = SystemConfig::paper_iv();
        let mut rules = Vec::new();
        for q in 0..=10 {
            rules.push(vec![
                ThresholdRule { lo: 0.5, hi: 1.0 / 3.0 + 2.0, s: 0, conventional: false },
                ThresholdRule { lo: 1.0 / 3.0 + 2.0, hi: 10.0, s: q.min(2), conventional: false },
            ]);
        }
        let p = ThresholdPolicy { rules };
        let text = threshold_csv(&p);
        assert_eq!(parse_policy(&cfg, &text).unwrap(), PolicyFile::Threshold(p));
    }

    #[test]
    fn gaps_rejected() {
        let cfg = SystemConfig::paper_iv();
        let mut text = String::from("q,h_lo,h_hi,s\n");
        for q in 0..=10 {
            text.push_str(&format!("{q},0.5,5,0\n{q},6,10,1\n"));
        }
        assert!(parse_threshold_csv(&cfg, &text).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/x.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path().join("sub")).unwrap().count(), 1);
    }
}
