//! Coordinator/worker transport: one scatter and one gather per round.
//!
//! The coordinator talks to workers through a [`Transport`]; workers see a
//! [`WorkerEndpoint`]. Both backends ([`inproc`] channels and [`tcp`]
//! sockets) share the same framing, round discipline and accounting, so a
//! run produces identical numbers over either.

mod envelope;
pub mod inproc;
pub mod tcp;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use envelope::{read_frame, write_frame, Control, Envelope, InnerStats, HEADER_LEN, WIRE_VERSION};
pub use inproc::{in_process, InProcessEndpoint, InProcessTransport};
pub use tcp::{TcpCoordinator, TcpWorkerEndpoint};

use crate::error::{Error, Result};

/// Per-phase timeout used when none is configured.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportStats {
    /// Scatter plus gather messages (point to point).
    pub messages_sent: u64,
    /// Encoded bytes of those messages.
    pub bytes_sent: u64,
    /// Completed scatter/gather rounds.
    pub rounds: u64,
    /// Registration, configuration and shutdown messages; not part of any
    /// round.
    pub control_messages: u64,
}

/// Average number of scatter/gather messages per completed round.
pub fn message_count_per_iteration(stats: &TransportStats) -> Result<u64> {
    if stats.rounds == 0 {
        return Err(Error::input("no completed rounds"));
    }
    if stats.messages_sent % stats.rounds != 0 {
        return Err(Error::Protocol(format!(
            "{} messages do not split evenly over {} rounds",
            stats.messages_sent, stats.rounds
        )));
    }
    Ok(stats.messages_sent / stats.rounds)
}

/// Messages an ADMM run of `iterations` outer iterations exchanges.
pub fn admm_messages(n_workers: usize, iterations: usize) -> u64 {
    2 * n_workers as u64 * iterations as u64
}

/// Mini-batch steps per synchronous-SGD epoch, `ceil(n / (m N))`.
pub fn sgd_steps_per_epoch(n: usize, batch: usize, n_workers: usize) -> usize {
    n.div_ceil(batch * n_workers)
}

/// Messages one synchronous-SGD epoch exchanges: `2 N ceil(n / (m N))`.
pub fn sgd_messages_per_epoch(n: usize, batch: usize, n_workers: usize) -> u64 {
    2 * n_workers as u64 * sgd_steps_per_epoch(n, batch, n_workers) as u64
}

/// Coordinator side of a transport.
pub trait Transport {
    fn num_workers(&self) -> usize;

    /// Delivers one `Scatter` per worker (any order; each worker id exactly
    /// once) and opens a round.
    fn scatter(&mut self, payloads: Vec<Envelope>) -> Result<()>;

    /// Collects one `Gather` per worker for the open round, ordered by
    /// worker id, and closes the round.
    fn gather(&mut self) -> Result<Vec<Envelope>>;

    /// Sends a control message to every worker.
    fn broadcast(&mut self, command: Control) -> Result<()>;

    fn stats(&self) -> TransportStats;
}

/// Worker side of a transport.
pub trait WorkerEndpoint: Send {
    fn worker_id(&self) -> u32;

    fn recv(&mut self) -> Result<Envelope>;

    fn send(&mut self, envelope: Envelope) -> Result<()>;
}

/// Round bookkeeping shared by both backends: a scatter must be followed
/// by exactly one gather for the same iteration.
#[derive(Debug, Default)]
pub(crate) struct RoundTracker {
    pending: Option<u32>,
    stats: TransportStats,
}

impl RoundTracker {
    /// Validates a scatter batch and returns its iteration tag.
    pub(crate) fn begin(&mut self, payloads: &[Envelope], n_workers: usize) -> Result<u32> {
        if let Some(k) = self.pending {
            return Err(Error::Protocol(format!(
                "scatter issued while round {k} is still waiting for its gather"
            )));
        }
        if payloads.len() != n_workers {
            return Err(Error::Protocol(format!(
                "scatter needs one payload per worker: got {} for {n_workers} workers",
                payloads.len()
            )));
        }
        let iteration = payloads.first().map_or(0, Envelope::iteration);
        let mut seen = vec![false; n_workers];
        for env in payloads {
            let Envelope::Scatter { worker_id, iteration: k, .. } = env else {
                return Err(Error::Protocol("scatter payloads must be Scatter envelopes".into()));
            };
            if *k != iteration {
                return Err(Error::Protocol(format!(
                    "mixed iteration tags {k} and {iteration} in one scatter"
                )));
            }
            let id = *worker_id as usize;
            if id >= n_workers || std::mem::replace(&mut seen[id], true) {
                return Err(Error::Protocol(format!(
                    "scatter payload for unknown or repeated worker {worker_id}"
                )));
            }
        }
        self.pending = Some(iteration);
        for env in payloads {
            self.count(env);
        }
        Ok(iteration)
    }

    pub(crate) fn expecting(&self) -> Result<u32> {
        self.pending
            .ok_or_else(|| Error::Protocol("gather without a preceding scatter".into()))
    }

    /// Checks one received envelope against the open round; `slots` holds
    /// what has been collected so far.
    pub(crate) fn accept(&mut self, env: Envelope, slots: &mut [Option<Envelope>]) -> Result<()> {
        let k = self.expecting()?;
        match &env {
            Envelope::Gather { iteration, worker_id, .. } => {
                let id = *worker_id as usize;
                if *iteration != k {
                    return Err(Error::Protocol(format!(
                        "stale envelope from worker {worker_id}: tagged {iteration}, expected {k}"
                    )));
                }
                if id >= slots.len() || slots[id].is_some() {
                    return Err(Error::Protocol(format!(
                        "unexpected or duplicate gather from worker {worker_id}"
                    )));
                }
                self.count(&env);
                slots[id] = Some(env);
                Ok(())
            }
            Envelope::Control {
                worker_id,
                command: Control::Stop,
                ..
            } => Err(Error::Transport(format!("worker {worker_id} aborted"))),
            other => Err(Error::Protocol(format!(
                "unexpected message during gather: {other:?}"
            ))),
        }
    }

    pub(crate) fn finish(&mut self, slots: Vec<Option<Envelope>>) -> Result<Vec<Envelope>> {
        let missing = Self::missing(&slots);
        if !missing.is_empty() {
            return Err(Error::Timeout { missing });
        }
        self.pending = None;
        self.stats.rounds += 1;
        Ok(slots.into_iter().flatten().collect())
    }

    pub(crate) fn missing(slots: &[Option<Envelope>]) -> Vec<u32> {
        slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| i as u32)
            .collect()
    }

    fn count(&mut self, env: &Envelope) {
        self.stats.messages_sent += 1;
        self.stats.bytes_sent += env.encoded_len() as u64;
    }

    pub(crate) fn count_control(&mut self, messages: usize) {
        self.stats.control_messages += messages as u64;
    }

    pub(crate) fn stats(&self) -> TransportStats {
        self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_formulas() {
        assert_eq!(admm_messages(4, 10), 80);
        assert_eq!(admm_messages(1, 1), 2);
        assert_eq!(sgd_steps_per_epoch(1000, 100, 2), 5);
        assert_eq!(sgd_messages_per_epoch(1000, 100, 2), 20);
        assert_eq!(sgd_messages_per_epoch(1001, 100, 2), 24);
    }

    #[test]
    fn per_iteration_count() {
        let stats = TransportStats {
            messages_sent: 80,
            rounds: 10,
            ..TransportStats::default()
        };
        assert_eq!(message_count_per_iteration(&stats).unwrap(), 8);
        assert!(message_count_per_iteration(&TransportStats::default()).is_err());
    }
}
