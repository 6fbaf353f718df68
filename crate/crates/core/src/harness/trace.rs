//! Error traces and their CSV form.
//!
//! Schema: header `algo,seed,buffer,samples,agent,error`, one row per
//! agent per recorded buffer, floats written with 17 significant digits so
//! they parse back to the same bits.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 6] = ["algo", "seed", "buffer", "samples", "agent", "error"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub buffer: usize,
    /// Samples consumed per agent when the row was recorded.
    pub samples: usize,
    pub agent: usize,
    /// Spectral-norm error of the agent's tail average.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTrace {
    /// Algorithm tag, optionally qualified with the setting, e.g.
    /// `dsgd-rer@m5/cyclic`.
    pub algo: String,
    pub seed: u64,
    /// Hash of the resolved config that produced the trace. Not part of the
    /// CSV; the manifest maps files to hashes.
    pub config_hash: String,
    pub rows: Vec<TraceRow>,
}

impl ErrorTrace {
    pub fn new(algo: impl Into<String>) -> Self {
        Self {
            algo: algo.into(),
            seed: 0,
            config_hash: String::new(),
            rows: Vec::new(),
        }
    }

    pub fn agents(&self) -> usize {
        self.rows.iter().map(|r| r.agent + 1).max().unwrap_or(0)
    }

    /// `(buffer, samples, mean error over agents)` per recorded buffer, in
    /// buffer order.
    pub fn agent_mean(&self) -> Vec<(usize, usize, f64)> {
        let mut out: Vec<(usize, usize, f64, usize)> = Vec::new();
        for row in &self.rows {
            match out.iter_mut().find(|e| e.0 == row.buffer) {
                Some(e) => {
                    e.2 += row.error;
                    e.3 += 1;
                }
                None => out.push((row.buffer, row.samples, row.error, 1)),
            }
        }
        out.sort_by_key(|e| e.0);
        out.into_iter().map(|(b, s, sum, n)| (b, s, sum / n as f64)).collect()
    }

    /// Agent-averaged error at the last recorded buffer.
    pub fn final_mean_error(&self) -> Option<f64> {
        self.agent_mean().last().map(|e| e.2)
    }

    /// Buffer indices must increase strictly for every agent.
    pub fn check_monotone(&self) -> Result<()> {
        let mut last: Vec<Option<usize>> = vec![None; self.agents()];
        for row in &self.rows {
            if let Some(prev) = last[row.agent] {
                if row.buffer <= prev {
                    return Err(Error::InvalidArgument(format!(
                        "trace {}: agent {} buffer {} after {}",
                        self.algo, row.agent, row.buffer, prev
                    )));
                }
            }
            last[row.agent] = Some(row.buffer);
        }
        Ok(())
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(CSV_HEADER)?;
        let seed = self.seed.to_string();
        for row in &self.rows {
            writer.write_record([
                self.algo.as_str(),
                seed.as_str(),
                &row.buffer.to_string(),
                &row.samples.to_string(),
                &row.agent.to_string(),
                &format_float(row.error),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Writes to a sibling temp file, then renames into place.
    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("csv.tmp");
        {
            let file = std::fs::File::create(&tmp)?;
            self.write_csv(std::io::BufWriter::new(file))?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// 17 significant digits in scientific notation.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parses one CSV document into traces, one per `(algo, seed)` in order of
/// first appearance.
pub fn read_csv(r: impl Read) -> Result<Vec<ErrorTrace>> {
    let mut reader = csv::Reader::from_reader(r);
    let header = reader.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::InvalidArgument(format!(
            "unexpected CSV header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut traces: Vec<ErrorTrace> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let bad = |what: &str| Error::InvalidArgument(format!("CSV row {}: bad {what}", line + 2));
        let algo = field(0).to_string();
        let seed: u64 = field(1).parse().map_err(|_| bad("seed"))?;
        let row = TraceRow {
            buffer: field(2).parse().map_err(|_| bad("buffer"))?,
            samples: field(3).parse().map_err(|_| bad("samples"))?,
            agent: field(4).parse().map_err(|_| bad("agent"))?,
            error: field(5).parse().map_err(|_| bad("error"))?,
        };
        match traces.iter_mut().find(|t| t.algo == algo && t.seed == seed) {
            Some(t) => t.rows.push(row),
            None => {
                let mut t = ErrorTrace::new(algo);
                t.seed = seed;
                t.rows.push(row);
                traces.push(t);
            }
        }
    }
    Ok(traces)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<ErrorTrace>> {
    read_csv(std::fs::File::open(path)?)
}
