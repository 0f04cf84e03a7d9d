//! Recorded sensor angles, one row per sample.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReservoirTrace {
    pub times: Vec<f64>,
    pub hinge_ids: Vec<usize>,
    /// Row-major `times.len() × hinge_ids.len()` angles (rad).
    pub data: Vec<f64>,
}

impl ReservoirTrace {
    pub fn new(hinge_ids: Vec<usize>) -> Self {
        Self::with_capacity(hinge_ids, 0)
    }

    pub fn with_capacity(hinge_ids: Vec<usize>, rows: usize) -> Self {
        let data = Vec::with_capacity(rows * hinge_ids.len());
        Self {
            times: Vec::with_capacity(rows),
            hinge_ids,
            data,
        }
    }

    pub fn push(&mut self, t: f64, row: &[f64]) {
        debug_assert_eq!(row.len(), self.hinge_ids.len());
        self.times.push(t);
        self.data.extend_from_slice(row);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn width(&self) -> usize {
        self.hinge_ids.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.width();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|r| self.row(r)[c]).collect()
    }

    /// Appends `other`, which must record the same hinges.
    pub fn extend(&mut self, other: &ReservoirTrace) -> Result<()> {
        if other.hinge_ids != self.hinge_ids {
            return Err(Error::LengthMismatch("traces record different hinges".into()));
        }
        self.times.extend_from_slice(&other.times);
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.times.len() * self.width() {
            return Err(Error::LengthMismatch(format!(
                "{} values for {} rows of width {}",
                self.data.len(),
                self.times.len(),
                self.width()
            )));
        }
        if self.data.iter().chain(&self.times).any(|v| !v.is_finite()) {
            return Err(Error::Parse("trace holds non-finite values".into()));
        }
        Ok(())
    }

    /// CSV with header `t,phi_<hinge>,...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.hinge_ids.iter().map(|h| format!("phi_{h}")));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.width() + 1);
        for r in 0..self.len() {
            record.clear();
            record.push(format!("{:e}", self.times[r]));
            record.extend(self.row(r).iter().map(|v| format!("{v:e}")));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = rd.headers()?.clone();
        let mut cols = header.iter();
        if cols.next().map(str::trim) != Some("t") {
            return Err(Error::Parse("trace csv: first column must be `t`".into()));
        }
        let hinge_ids = cols
            .map(|c| {
                c.trim()
                    .strip_prefix("phi_")
                    .and_then(|id| id.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("trace csv: bad column `{c}`")))
            })
            .collect::<Result<Vec<usize>>>()?;
        let mut trace = Self::new(hinge_ids);
        let mut row = Vec::with_capacity(trace.width());
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != trace.width() + 1 {
                return Err(Error::Parse("trace csv: ragged row".into()));
            }
            let mut vals = rec.iter().map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("trace csv: bad number `{s}`")))
            });
            let t = vals.next().expect("row has a time")?;
            row.clear();
            for v in vals {
                row.push(v?);
            }
            trace.push(t, &row);
        }
        trace.validate()?;
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut t = ReservoirTrace::new(vec![3, 17]);
        t.push(0.0, &[1.0, 2.5]);
        t.push(1e-3, &[std::f64::consts::PI, -0.1]);
        let text = t.to_csv_string();
        assert!(text.starts_with("t,phi_3,phi_17\n"));
        assert_eq!(ReservoirTrace::read_csv(text.as_bytes()).unwrap(), t);
    }

    #[test]
    fn rejects_bad_csv() {
        for bad in ["x,phi_1\n0,1\n", "t,phi_a\n0,1\n", "t,phi_1\n0,1,2\n", "t,phi_1\n0,nan\n", "t,phi_1\n0,abc\n"] {
            assert!(ReservoirTrace::read_csv(bad.as_bytes()).is_err(), "{bad}");
        }
    }

    #[test]
    fn columns_and_rows() {
        let mut t = ReservoirTrace::new(vec![0, 1]);
        t.push(0.0, &[1.0, 2.0]);
        t.push(1.0, &[3.0, 4.0]);
        assert_eq!(t.column(1), vec![2.0, 4.0]);
        assert_eq!(t.row(1), &[3.0, 4.0]);
    }
}
