use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative suboptimality at which a run counts as solved.
pub const THETA_TARGET: f64 = 0.05;

/// `(F_k - F*) / F*`.
pub fn theta(f_k: f64, f_star: f64) -> Result<f64> {
    if !(f_star > 0.0 && f_star.is_finite()) {
        return Err(Error::input(format!(
            "reference objective must be positive, got {f_star}; the reference is broken"
        )));
    }
    Ok((f_k - f_star) / f_star)
}

/// One row per outer iteration (ADMM), Newton step (single node) or epoch
/// (SGD). Fields that do not apply to a solver are `null`, never missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub solver: String,
    pub iteration: usize,
    /// Cumulative solver time; excluded from determinism comparisons.
    pub wall_seconds: f64,
    /// Training objective at the consensus / current iterate.
    pub objective: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub primal_residual: Option<f64>,
    pub dual_residual: Option<f64>,
    pub rho: Vec<f64>,
    pub messages: u64,
    pub bytes: u64,
    pub rounds: u64,
    /// Inner iterations per worker this iteration (CG steps for
    /// newton-single, empty for SGD).
    pub inner_iterations: Vec<u32>,
    pub theta: Option<f64>,
}

/// Penalty re-estimation events are logged on their own lines so the
/// safeguard decisions can be audited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyRecord {
    pub iteration: usize,
    pub worker: usize,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub rho_before: f64,
    pub rho_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepTrial {
    pub eta: f64,
    /// `None` when the run diverged.
    pub final_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub solver: String,
    pub n_workers: usize,
    /// Whether features were max-abs scaled before training.
    pub normalized: bool,
    pub iterations: usize,
    pub total_wall_seconds: f64,
    pub final_objective: f64,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: Option<f64>,
    pub final_theta: Option<f64>,
    /// First iteration with `theta <= 0.05`.
    pub iterations_to_theta: Option<usize>,
    pub converged: bool,
    pub messages: u64,
    pub rounds: u64,
    /// SGD step size actually used.
    pub eta: Option<f64>,
    /// Why the run ended: `converged`, `max_iterations`, `theta`,
    /// `time_budget`.
    pub stop_reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
pub enum MetricsLine {
    Iteration(MetricsRecord),
    Penalty(PenaltyRecord),
    Sweep(SweepTrial),
    Summary(RunSummary),
}

impl MetricsLine {
    /// Copy with every wall-clock field zeroed, for determinism checks.
    pub fn without_wall_clock(&self) -> Self {
        let mut line = self.clone();
        match &mut line {
            MetricsLine::Iteration(r) => r.wall_seconds = 0.0,
            MetricsLine::Summary(s) => s.total_wall_seconds = 0.0,
            MetricsLine::Penalty(_) | MetricsLine::Sweep(_) => {}
        }
        line
    }
}

/// Writes one JSON object per line and flushes after each, so a failed
/// run still leaves the rows it produced.
pub struct MetricsWriter<W: Write> {
    out: W,
    lines: Vec<MetricsLine>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out, lines: Vec::new() }
    }

    pub fn write(&mut self, line: MetricsLine) -> Result<()> {
        serde_json::to_writer(&mut self.out, &line)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        self.lines.push(line);
        Ok(())
    }

    pub fn lines(&self) -> &[MetricsLine] {
        &self.lines
    }

    pub fn into_lines(self) -> Vec<MetricsLine> {
        self.lines
    }
}

pub fn read_metrics<R: BufRead>(reader: R) -> Result<Vec<MetricsLine>> {
    reader
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|(i, line)| {
            let line = line?;
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Accumulates solver time only; bookkeeping such as objective and
/// accuracy evaluation for the metrics runs while paused.
#[derive(Debug)]
pub struct Stopwatch {
    elapsed: Duration,
    started: Option<Instant>,
}

impl Stopwatch {
    pub fn started() -> Self {
        Self {
            elapsed: Duration::ZERO,
            started: Some(Instant::now()),
        }
    }

    pub fn pause(&mut self) {
        if let Some(t) = self.started.take() {
            self.elapsed += t.elapsed();
        }
    }

    pub fn resume(&mut self) {
        if self.started.is_none() {
            self.started = Some(Instant::now());
        }
    }

    pub fn seconds(&self) -> f64 {
        (self.elapsed + self.started.map_or(Duration::ZERO, |t| t.elapsed())).as_secs_f64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_examples() {
        assert_eq!(theta(3.0, 3.0).unwrap(), 0.0);
        assert!((theta(1.05 * 0.8, 0.8).unwrap() - THETA_TARGET).abs() < 1e-12);
        assert_eq!(theta(4.0, 2.0).unwrap(), 1.0);
        assert!(theta(1.0, 0.0).is_err());
        assert!(theta(1.0, -1.0).is_err());
    }

    #[test]
    fn lines_round_trip() {
        let rec = MetricsRecord {
            solver: "sync-sgd".into(),
            iteration: 3,
            wall_seconds: 0.5,
            objective: 1.25,
            train_accuracy: 0.9,
            test_accuracy: None,
            primal_residual: None,
            dual_residual: None,
            rho: vec![],
            messages: 24,
            bytes: 1000,
            rounds: 12,
            inner_iterations: vec![],
            theta: Some(0.1),
        };
        let mut w = MetricsWriter::new(Vec::new());
        w.write(MetricsLine::Iteration(rec.clone())).unwrap();
        w.write(MetricsLine::Sweep(SweepTrial {
            eta: 0.1,
            final_objective: None,
        }))
        .unwrap();
        let text = String::from_utf8(w.out.clone()).unwrap();
        assert!(text.starts_with(r#"{"record":"iteration","solver":"sync-sgd""#));
        assert!(text.contains(r#""test_accuracy":null"#));
        let back = read_metrics(text.as_bytes()).unwrap();
        assert_eq!(back, w.lines());
        assert_eq!(back[0].without_wall_clock(), {
            let mut r = rec;
            r.wall_seconds = 0.0;
            MetricsLine::Iteration(r)
        });
        assert!(read_metrics(&br#"{"record":"iteration","extra":1}"#[..]).is_err());
    }

    #[test]
    fn stopwatch_excludes_paused_time() {
        let mut s = Stopwatch::started();
        s.pause();
        let a = s.seconds();
        std::thread::sleep(Duration::from_millis(20));
        assert_eq!(s.seconds(), a);
        s.resume();
        assert!(s.seconds() >= a);
    }
}
