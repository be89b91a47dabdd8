//! On-disk formats.
//!
//! * JSON documents (configs, reports, manifests, sidecars) all carry
//!   `schema_version`.
//! * Events: JSON lines `{"t", "kind", "x", "y", "flips", "jumps"}`.
//! * Traces: CSV `t,signal,mask[,hidden]` plus a JSON sidecar
//!   ([`TraceMeta`]). `mask` is 1 for kept samples.
//! * Plot data: CSV `x,y,yerr`.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back reproduces the values bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Event, EventStream};
use crate::fit::{FitFlag, FitResult};
use crate::synth::ParityTrace;

use super::config::SCHEMA_VERSION;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.to_path_buf())
        } else {
            io_err(path)(e)
        }
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(open(path)?);
    serde_json::from_reader(r).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Header line of an events file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EventsHeader {
    schema_version: u32,
    qubit_ids: Vec<String>,
}

/// The first line holds `{"schema_version", "qubit_ids"}`, then one event per
/// line.
pub fn write_events(path: &Path, stream: &EventStream) -> Result<()> {
    let mut w = create(path)?;
    let header = EventsHeader {
        schema_version: SCHEMA_VERSION,
        qubit_ids: stream.qubit_ids.clone(),
    };
    let json_err = |source| Error::Json {
        path: path.to_path_buf(),
        source,
    };
    serde_json::to_writer(&mut w, &header).map_err(json_err)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    for e in &stream.events {
        serde_json::to_writer(&mut w, e).map_err(json_err)?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_events(path: &Path) -> Result<EventStream> {
    let r = BufReader::new(open(path)?);
    let mut lines = r.lines();
    let json_err = |source| Error::Json {
        path: path.to_path_buf(),
        source,
    };
    let first = lines
        .next()
        .ok_or_else(|| Error::Csv {
            path: path.to_path_buf(),
            line: 1,
            reason: "empty events file".into(),
        })?
        .map_err(io_err(path))?;
    let header: EventsHeader = serde_json::from_str(&first).map_err(json_err)?;
    check_version(path, header.schema_version)?;
    let mut events = Vec::new();
    for line in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Event = serde_json::from_str(&line).map_err(json_err)?;
        events.push(e);
    }
    let stream = EventStream {
        qubit_ids: header.qubit_ids,
        events,
    };
    stream.validate()?;
    Ok(stream)
}

fn check_version(path: &Path, v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(Error::Mismatch(format!(
            "{} has schema_version {v}, expected {SCHEMA_VERSION}",
            path.display()
        )));
    }
    Ok(())
}

/// Sidecar of a trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub schema_version: u32,
    pub qubit: String,
    /// s.
    pub dt: f64,
    /// s since day 0.
    pub t_start: f64,
    pub samples: usize,
    pub seed: u64,
    pub config_hash: String,
    /// Protocol label, e.g. `campaign`, `fast_on`, `off`.
    pub protocol: String,
    pub time_days: f64,
    pub pulse_tube_on: bool,
}

/// Sidecar path next to a trace CSV: `x.csv` → `x.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes the trace CSV and its sidecar. `t` is relative to `t_start`.
pub fn write_trace(path: &Path, trace: &ParityTrace, meta: &TraceMeta, with_hidden: bool) -> Result<()> {
    let mut w = create(path)?;
    let header: &[u8] = if with_hidden {
        b"t,signal,mask,hidden\n"
    } else {
        b"t,signal,mask\n"
    };
    w.write_all(header).map_err(io_err(path))?;
    for k in 0..trace.len() {
        let t = k as f64 * trace.dt;
        let m = u8::from(trace.mask[k]);
        if with_hidden {
            writeln!(w, "{t},{},{m},{}", trace.samples[k], trace.hidden_parity[k])
        } else {
            writeln!(w, "{t},{},{m}", trace.samples[k])
        }
        .map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    write_json(&sidecar_path(path), meta)
}

/// Reads a trace CSV and its sidecar. Without a `hidden` column the hidden
/// parity is left empty.
pub fn read_trace(path: &Path) -> Result<(ParityTrace, TraceMeta)> {
    let meta: TraceMeta = read_json(&sidecar_path(path))?;
    check_version(&sidecar_path(path), meta.schema_version)?;
    let r = BufReader::new(open(path)?);
    let csv_err = |line: usize, reason: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| csv_err(1, "empty trace file".into()))?
        .map_err(io_err(path))?;
    let with_hidden = match header.trim() {
        "t,signal,mask" => false,
        "t,signal,mask,hidden" => true,
        other => return Err(csv_err(1, format!("unexpected header {other:?}"))),
    };
    let mut samples = Vec::with_capacity(meta.samples);
    let mut mask = Vec::with_capacity(meta.samples);
    let mut hidden = Vec::new();
    for (i, line) in lines.enumerate() {
        let no = i + 2;
        let line = line.map_err(io_err(path))?;
        let mut cols = line.split(',');
        let mut next = |what: &str| {
            cols.next()
                .ok_or_else(|| csv_err(no, format!("missing {what} column")))
        };
        next("t")?;
        let s: f64 = next("signal")?
            .parse()
            .map_err(|e| csv_err(no, format!("signal: {e}")))?;
        let m = match next("mask")? {
            "1" => true,
            "0" => false,
            other => return Err(csv_err(no, format!("mask must be 0 or 1, got {other:?}"))),
        };
        if with_hidden {
            let h: i8 = next("hidden")?
                .parse()
                .map_err(|e| csv_err(no, format!("hidden: {e}")))?;
            hidden.push(h);
        }
        samples.push(s);
        mask.push(m);
    }
    if samples.len() != meta.samples {
        return Err(Error::Mismatch(format!(
            "{} holds {} samples, its sidecar promises {}",
            path.display(),
            samples.len(),
            meta.samples
        )));
    }
    let trace = ParityTrace {
        qubit_id: meta.qubit.clone(),
        dt: meta.dt,
        t_start: meta.t_start,
        samples,
        hidden_parity: hidden,
        mask,
    };
    Ok((trace, meta))
}

/// One analysis result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    /// `psd_fit`, `hmm`, `coincidence`, `powerlaw`, `tomography`,
    /// `impact_rate`, `injection`, `mechanics` or `pulse_tube`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qubit_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_days: Option<f64>,
    /// Non-finite values are written as `null`.
    pub params: BTreeMap<String, Option<f64>>,
    pub uncertainties: BTreeMap<String, Option<f64>>,
    pub residual: Option<f64>,
    pub flags: Vec<FitFlag>,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl Report {
    pub fn new(kind: &str, config_hash: &str) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: kind.into(),
            qubit_id: None,
            time_days: None,
            params: BTreeMap::new(),
            uncertainties: BTreeMap::new(),
            residual: None,
            flags: Vec::new(),
            config_hash: config_hash.into(),
            extra: serde_json::Value::Null,
        }
    }

    pub fn from_fit(kind: &str, config_hash: &str, fit: &FitResult) -> Self {
        let mut r = Self::new(kind, config_hash);
        for (i, name) in fit.names.iter().enumerate() {
            r.params.insert(name.clone(), finite(fit.params[i]));
            r.uncertainties.insert(name.clone(), finite(fit.uncertainties[i]));
        }
        r.residual = finite(fit.residual_norm);
        r.flags = fit.flags.clone();
        r
    }

    pub fn with_param(mut self, name: &str, value: f64, sigma: f64) -> Self {
        self.params.insert(name.into(), finite(value));
        self.uncertainties.insert(name.into(), finite(sigma));
        self
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied().flatten()
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.uncertainties.get(name).copied().flatten()
    }

    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }
}

/// Plot-data row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub yerr: f64,
}

pub fn write_plot_csv(path: &Path, points: &[PlotPoint]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(b"x,y,yerr\n").map_err(io_err(path))?;
    for p in points {
        writeln!(w, "{},{},{}", p.x, p.y, p.yerr).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::EventKind;

    fn trace() -> ParityTrace {
        ParityTrace {
            qubit_id: "Q1".into(),
            dt: 1e-3,
            t_start: 86_400.0,
            samples: vec![0.9, -1.0, 1.0 / 3.0, 1e-300],
            hidden_parity: vec![1, -1, 1, 1],
            mask: vec![true, true, false, true],
        }
    }

    fn meta(n: usize) -> TraceMeta {
        TraceMeta {
            schema_version: SCHEMA_VERSION,
            qubit: "Q1".into(),
            dt: 1e-3,
            t_start: 86_400.0,
            samples: n,
            seed: 9,
            config_hash: "abc".into(),
            protocol: "campaign".into(),
            time_days: 1.0,
            pulse_tube_on: true,
        }
    }

    #[test]
    fn trace_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let tr = trace();
        write_trace(&p, &tr, &meta(4), true).unwrap();
        let (back, m) = read_trace(&p).unwrap();
        assert_eq!(back, tr);
        assert_eq!(m, meta(4));
        write_trace(&p, &tr, &meta(4), false).unwrap();
        let (back, _) = read_trace(&p).unwrap();
        assert!(back.hidden_parity.is_empty());
        assert_eq!(back.samples, tr.samples);
    }

    #[test]
    fn trace_length_must_match_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_trace(&p, &trace(), &meta(5), false).unwrap();
        assert!(matches!(read_trace(&p), Err(Error::Mismatch(_))));
    }

    #[test]
    fn missing_files_are_missing_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nope.csv");
        assert!(matches!(read_trace(&p), Err(Error::MissingArtifact(_))));
        assert!(matches!(
            read_json::<Report>(&dir.path().join("r.json")),
            Err(Error::MissingArtifact(_))
        ));
    }

    #[test]
    fn events_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        let s = EventStream {
            qubit_ids: vec!["a".into(), "b".into()],
            events: vec![
                Event {
                    t: 1.5,
                    kind: EventKind::Impact,
                    x: Some(1.0),
                    y: Some(2.0),
                    flips: vec![true, false],
                    jumps: vec![0.2, 0.0],
                },
                Event {
                    t: 2.5,
                    kind: EventKind::Burst,
                    x: None,
                    y: None,
                    flips: vec![true, true],
                    jumps: vec![0.0, 0.0],
                },
            ],
        };
        write_events(&p, &s).unwrap();
        assert_eq!(read_events(&p).unwrap(), s);
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("{\"t\":1.5,\"kind\":\"impact\""));
    }

    #[test]
    fn report_nulls_non_finite_values() {
        let fit = FitResult {
            names: vec!["s".into(), "g".into()],
            params: vec![f64::NAN, 1.0],
            uncertainties: vec![f64::INFINITY, 0.1],
            residual_norm: 0.5,
            dof: 3,
            iterations: 1,
            converged: true,
            flags: vec![FitFlag::Unidentifiable("s".into())],
        };
        let r = Report::from_fit("injection", "h", &fit);
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"s\":null"), "{text}");
        let back: Report = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        assert!(back.is_flagged());
        assert_eq!(back.param("g"), Some(1.0));
    }
}
