//! CSV outputs. Column orders are fixed:
//!
//! * `roc.csv`: `method, tau, p_fa, p_d`
//! * `auc.csv`: `method, axis, value, auc, best_accuracy`
//! * `cdf.csv`: `snr_db, cdf`
//! * `pareto.csv`: `v, z, params, train_loss, pareto_flag`
//! * `timing.csv`: `method, median_s, mean_s, reps`

use std::path::Path;

use super::{RocCurve, SnrCdf, TimingReport};
use crate::error::Result;

pub fn write_roc_csv(path: &Path, curves: &[RocCurve]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "tau", "p_fa", "p_d"])?;
    for c in curves {
        for p in &c.points {
            w.write_record([c.method.clone(), p.tau.to_string(), p.p_fa.to_string(), p.p_d.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucRow {
    pub method: String,
    /// Swept parameter (`none` outside sweeps).
    pub axis: String,
    pub value: f64,
    pub auc: f64,
    pub best_accuracy: f64,
}

pub fn write_auc_csv(path: &Path, rows: &[AucRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "axis", "value", "auc", "best_accuracy"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.axis.clone(),
            r.value.to_string(),
            r.auc.to_string(),
            r.best_accuracy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cdf_csv(path: &Path, cdf: &SnrCdf) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["snr_db", "cdf"])?;
    for (g, c) in cdf.grid_db.iter().zip(&cdf.cdf) {
        w.write_record([g.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoRow {
    pub v: usize,
    pub z: usize,
    pub params: usize,
    pub train_loss: f64,
    pub pareto_flag: bool,
}

pub fn write_pareto_csv(path: &Path, rows: &[ParetoRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["v", "z", "params", "train_loss", "pareto_flag"])?;
    for r in rows {
        w.write_record([
            r.v.to_string(),
            r.z.to_string(),
            r.params.to_string(),
            r.train_loss.to_string(),
            u8::from(r.pareto_flag).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timing_csv(path: &Path, report: &TimingReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "median_s", "mean_s", "reps"])?;
    for e in &report.entries {
        w.write_record([e.method.clone(), e.median_s.to_string(), e.mean_s.to_string(), e.reps.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{RocPoint, TimingEntry};
    use super::*;

    #[test]
    fn headers_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let roc = dir.path().join("roc.csv");
        let curve = RocCurve {
            method: "m".into(),
            points: vec![RocPoint { tau: 0.0, p_fa: 1.0, p_d: 1.0 }, RocPoint { tau: 1.0, p_fa: 0.0, p_d: 0.5 }],
            auc: 0.75,
        };
        write_roc_csv(&roc, &[curve]).unwrap();
        let text = std::fs::read_to_string(&roc).unwrap();
        assert_eq!(text, "method,tau,p_fa,p_d\nm,0,1,1\nm,1,0,0.5\n");

        let t = dir.path().join("timing.csv");
        let rep = TimingReport {
            entries: vec![TimingEntry { method: "x".into(), median_s: 0.5, mean_s: 0.25, reps: 5 }],
            warmup: 1,
            slots_per_rep: 3,
        };
        write_timing_csv(&t, &rep).unwrap();
        assert_eq!(std::fs::read_to_string(&t).unwrap(), "method,median_s,mean_s,reps\nx,0.5,0.25,5\n");

        let p = dir.path().join("pareto.csv");
        write_pareto_csv(&p, &[ParetoRow { v: 8, z: 1, params: 4, train_loss: 0.5, pareto_flag: true }]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "v,z,params,train_loss,pareto_flag\n8,1,4,0.5,1\n");
    }
}
