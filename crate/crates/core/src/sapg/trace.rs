//! Per-iteration history of a parameter search and its CSV export.

use std::io::Write;

use crate::error::{Error, Result};
use crate::sapg::schedule::WeightedMean;

/// Everything recorded about iteration `n` before the parameter update:
/// the schedule value and averaging weight at `n`, the current iterate,
/// the running weighted average, the sup-norm of the stochastic ascent
/// direction, and the sampled statistic means. The noise-variance fields
/// are only present for joint estimation runs.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub n: u64,
    pub delta: f64,
    pub weight: f64,
    pub theta: Vec<f64>,
    pub theta_bar: Vec<f64>,
    pub grad_norm: f64,
    pub stat_mean: Vec<f64>,
    pub sigma2: Option<f64>,
    pub sigma2_bar: Option<f64>,
}

/// Full iteration history. When `log_scale` is set the recorded values
/// are still in the original parameter space, but averages were formed
/// on logarithms (so `theta_bar` is a weighted geometric mean).
#[derive(Debug, Clone)]
pub struct ThetaTrace {
    pub records: Vec<IterationRecord>,
    pub theta_dim: usize,
    pub log_scale: bool,
}

impl ThetaTrace {
    pub fn new(theta_dim: usize, log_scale: bool) -> Self {
        Self { records: Vec::new(), theta_dim, log_scale }
    }

    pub fn push(&mut self, record: IterationRecord) {
        debug_assert_eq!(record.theta.len(), self.theta_dim);
        debug_assert_eq!(record.theta_bar.len(), self.theta_dim);
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_theta_bar(&self) -> Option<&[f64]> {
        self.records.last().map(|r| r.theta_bar.as_slice())
    }

    /// Recomputes every running average from the stored iterates and
    /// weights and verifies the recorded values to 1e-12 relative. A
    /// mismatch means the search loop and the trace disagree about the
    /// averaging semantics, which would silently invalidate results.
    pub fn verify_averages(&self) -> Result<()> {
        let mut acc = WeightedMean::new(self.theta_dim);
        let mut coord = vec![0.0; self.theta_dim];
        for rec in &self.records {
            for (c, t) in coord.iter_mut().zip(&rec.theta) {
                *c = if self.log_scale { t.ln() } else { *t };
            }
            acc.push(rec.weight, &coord);
            let bar = acc.mean(&coord);
            for (j, (computed, stored)) in bar.iter().zip(&rec.theta_bar).enumerate() {
                let computed = if self.log_scale { computed.exp() } else { *computed };
                let tol = 1e-12 * stored.abs().max(1.0);
                if (computed - stored).abs() > tol {
                    return Err(Error::Validation(format!(
                        "running average mismatch at n={} component {}: recomputed {computed}, stored {stored}",
                        rec.n, j
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes the trace as CSV. `header_comment` (for provenance such as
    /// a config hash and seed) is emitted first as a `#` line. Averages
    /// are re-verified before anything is written.
    pub fn write_csv<W: Write>(&self, mut w: W, header_comment: &str) -> Result<()> {
        self.verify_averages()?;
        if !header_comment.is_empty() {
            writeln!(w, "# {header_comment}")?;
        }
        let mut cols = vec!["n".to_string(), "delta".into(), "weight".into()];
        for j in 1..=self.theta_dim {
            cols.push(format!("theta_{j}"));
        }
        for j in 1..=self.theta_dim {
            cols.push(format!("theta_bar_{j}"));
        }
        cols.push("grad_norm".into());
        let stat_dim = self.records.first().map_or(0, |r| r.stat_mean.len());
        for j in 1..=stat_dim {
            cols.push(format!("stat_{j}"));
        }
        let with_sigma = self.records.first().map_or(false, |r| r.sigma2.is_some());
        if with_sigma {
            cols.push("sigma2".into());
            cols.push("sigma2_bar".into());
        }
        writeln!(w, "{}", cols.join(","))?;

        for rec in &self.records {
            let mut fields = vec![
                rec.n.to_string(),
                format_float(rec.delta),
                format_float(rec.weight),
            ];
            fields.extend(rec.theta.iter().map(|v| format_float(*v)));
            fields.extend(rec.theta_bar.iter().map(|v| format_float(*v)));
            fields.push(format_float(rec.grad_norm));
            fields.extend(rec.stat_mean.iter().map(|v| format_float(*v)));
            if with_sigma {
                fields.push(format_float(rec.sigma2.unwrap_or(f64::NAN)));
                fields.push(format_float(rec.sigma2_bar.unwrap_or(f64::NAN)));
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Shortest decimal form that round-trips to the same f64, so exports
/// are byte-stable and lossless.
fn format_float(v: f64) -> String {
    let mut buf = ryu_like(v);
    if buf.is_empty() {
        buf = v.to_string();
    }
    buf
}

fn ryu_like(v: f64) -> String {
    // `{:?}` on f64 produces the shortest representation that parses
    // back exactly; `{}` does the same in current Rust but `{:?}` makes
    // the roundtrip contract explicit.
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(n: u64, theta: f64, bar: f64, weight: f64) -> IterationRecord {
        IterationRecord {
            n,
            delta: 0.1,
            weight,
            theta: vec![theta],
            theta_bar: vec![bar],
            grad_norm: 0.5,
            stat_mean: vec![theta * 2.0],
            sigma2: None,
            sigma2_bar: None,
        }
    }

    #[test]
    fn verify_accepts_consistent_averages() {
        let mut trace = ThetaTrace::new(1, false);
        trace.push(record(0, 4.0, 4.0, 0.0)); // zero weight: fallback = current
        trace.push(record(1, 2.0, 2.0, 1.0));
        trace.push(record(2, 4.0, 3.0, 1.0));
        trace.verify_averages().unwrap();
    }

    #[test]
    fn verify_rejects_tampered_average() {
        let mut trace = ThetaTrace::new(1, false);
        trace.push(record(0, 2.0, 2.0, 1.0));
        trace.push(record(1, 4.0, 3.5, 1.0)); // true average is 3.0
        assert!(trace.verify_averages().is_err());
    }

    #[test]
    fn verify_handles_log_scale_geometric_mean() {
        let mut trace = ThetaTrace::new(1, true);
        let gm = (2.0f64 * 8.0).sqrt();
        trace.push(record(0, 2.0, 2.0, 1.0));
        trace.push(record(1, 8.0, gm, 1.0));
        trace.verify_averages().unwrap();
    }

    #[test]
    fn csv_layout_and_roundtrip() {
        let mut trace = ThetaTrace::new(1, false);
        trace.push(record(0, 0.1 + 0.2, 0.1 + 0.2, 1.0));
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, "seed=42").unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# seed=42");
        assert_eq!(
            lines.next().unwrap(),
            "n,delta,weight,theta_1,theta_bar_1,grad_norm,stat_1"
        );
        let data: Vec<&str> = lines.next().unwrap().split(',').collect();
        // Exact roundtrip of an awkward double.
        assert_eq!(data[3].parse::<f64>().unwrap(), 0.1 + 0.2);
    }

    #[test]
    fn csv_includes_noise_columns_when_present() {
        let mut trace = ThetaTrace::new(1, false);
        let mut r = record(0, 1.0, 1.0, 1.0);
        r.sigma2 = Some(0.02);
        r.sigma2_bar = Some(0.02);
        trace.push(r);
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, "").unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().ends_with("sigma2,sigma2_bar"));
    }
}
