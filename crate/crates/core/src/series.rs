//! Time series of frame potentials and `Δ₂`, with the CSV layout
//! `t,k,F,F_stderr,delta2,method,n_samples`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::theory::haar_frame_potential;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Enumerate,
    Sample,
    Replica,
    Perm,
}

/// How `Δ₂` is read off an exactly evolved moment operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delta2Route {
    /// `F/F_H − 1`.
    #[default]
    Purity,
    /// `‖ρ − ρ_H‖²/F_H` from an explicit residual; accurate down to ~1e-30.
    Projected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub t: usize,
    pub k: usize,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "F_stderr")]
    pub f_stderr: f64,
    pub delta2: f64,
    pub method: Method,
    pub n_samples: u64,
}

impl MomentRow {
    /// Row with `Δ₂ = F/F_H − 1`.
    pub fn new(t: usize, k: usize, f: f64, f_stderr: f64, f_haar: f64, method: Method, n_samples: u64) -> Self {
        MomentRow { t, k, f, f_stderr, delta2: f / f_haar - 1.0, method, n_samples }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MomentSeries {
    pub rows: Vec<MomentRow>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
}

impl MomentSeries {
    pub fn new(rows: Vec<MomentRow>) -> Self {
        MomentSeries { rows, config_hash: None, seed: None }
    }

    pub fn orders(&self) -> Vec<usize> {
        let mut ks: Vec<usize> = self.rows.iter().map(|r| r.k).collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    /// Rows of one design order, sorted by `t`.
    pub fn for_order(&self, k: usize) -> Vec<&MomentRow> {
        let mut rows: Vec<&MomentRow> = self.rows.iter().filter(|r| r.k == k).collect();
        rows.sort_by_key(|r| r.t);
        rows
    }

    /// `(t, Δ₂)` pairs of one order.
    pub fn delta2(&self, k: usize) -> Vec<(f64, f64)> {
        self.for_order(k).into_iter().map(|r| (r.t as f64, r.delta2)).collect()
    }

    /// Largest deviation between the stored `Δ₂` and `F/F_H − 1` recomputed
    /// for a system of `2L` qudits of dimension `d`.
    pub fn consistency_defect(&self, d: usize, l: usize) -> f64 {
        self.rows
            .iter()
            .map(|r| {
                let expect = r.f / haar_frame_potential(d, l, r.k) - 1.0;
                (expect - r.delta2).abs() / expect.abs().max(1.0)
            })
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd.deserialize().collect::<std::result::Result<Vec<MomentRow>, _>>()?;
        Ok(MomentSeries::new(rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            MomentRow::new(0, 2, 1.0, 0.0, 1.0 / 136.0, Method::Enumerate, 1),
            MomentRow::new(1, 2, 0.25, 1e-3, 1.0 / 136.0, Method::Sample, 1000),
            MomentRow::new(1, 3, 0.1 + 0.2, 0.0, 1.0 / 816.0, Method::Perm, 0),
        ];
        let s = MomentSeries::new(rows);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,k,F,F_stderr,delta2,method,n_samples\n"));
        assert!(text.contains(",enumerate,"));
        let back = MomentSeries::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, s);
        assert!((s.rows[0].delta2 - 135.0).abs() < 1e-12);
        assert!(s.consistency_defect(2, 2) < 1e-12);
        assert_eq!(s.orders(), vec![2, 3]);
        assert_eq!(s.delta2(3).len(), 1);
    }

    #[test]
    fn malformed_csv_is_an_error() {
        let bad = "t,k,F,F_stderr,delta2,method,n_samples\n1,2,x,0,0,sample,3\n";
        assert!(MomentSeries::read_csv(bad.as_bytes()).is_err());
    }
}
