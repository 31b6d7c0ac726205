//! Channel-backed transport for workers running as threads.

use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::time::{Duration, Instant};

use super::{Control, Envelope, RoundTracker, Transport, TransportStats, WorkerEndpoint, DEFAULT_TIMEOUT};
use crate::error::{Error, Result};

pub struct InProcessTransport {
    outboxes: Vec<Sender<Envelope>>,
    inbox: Receiver<Envelope>,
    rounds: RoundTracker,
    timeout: Duration,
}

pub struct InProcessEndpoint {
    id: u32,
    inbox: Receiver<Envelope>,
    outbox: Sender<Envelope>,
}

/// Creates a coordinator transport and one endpoint per worker.
pub fn in_process(n_workers: usize) -> (InProcessTransport, Vec<InProcessEndpoint>) {
    let (to_coord, inbox) = channel();
    let mut outboxes = Vec::with_capacity(n_workers);
    let mut endpoints = Vec::with_capacity(n_workers);
    for id in 0..n_workers {
        let (tx, rx) = channel();
        outboxes.push(tx);
        endpoints.push(InProcessEndpoint {
            id: id as u32,
            inbox: rx,
            outbox: to_coord.clone(),
        });
    }
    let transport = InProcessTransport {
        outboxes,
        inbox,
        rounds: RoundTracker::default(),
        timeout: DEFAULT_TIMEOUT,
    };
    (transport, endpoints)
}

impl InProcessTransport {
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn deliver(&self, worker: usize, env: Envelope) -> Result<()> {
        self.outboxes[worker]
            .send(env)
            .map_err(|_| Error::Transport(format!("worker {worker} has disconnected")))
    }
}

impl Transport for InProcessTransport {
    fn num_workers(&self) -> usize {
        self.outboxes.len()
    }

    fn scatter(&mut self, payloads: Vec<Envelope>) -> Result<()> {
        self.rounds.begin(&payloads, self.num_workers())?;
        for env in payloads {
            self.deliver(env.worker_id() as usize, env)?;
        }
        Ok(())
    }

    fn gather(&mut self) -> Result<Vec<Envelope>> {
        self.rounds.expecting()?;
        let deadline = Instant::now() + self.timeout;
        let mut slots: Vec<Option<Envelope>> = vec![None; self.num_workers()];
        while slots.iter().any(Option::is_none) {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match self.inbox.recv_timeout(remaining) {
                Ok(env) => self.rounds.accept(env, &mut slots)?,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::Timeout {
                        missing: RoundTracker::missing(&slots),
                    })
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Transport("all workers have disconnected".into()))
                }
            }
        }
        self.rounds.finish(slots)
    }

    fn broadcast(&mut self, command: Control) -> Result<()> {
        let iteration = self.rounds.stats().rounds as u32;
        for id in 0..self.num_workers() {
            self.deliver(
                id,
                Envelope::Control {
                    iteration,
                    worker_id: id as u32,
                    command: command.clone(),
                },
            )?;
        }
        self.rounds.count_control(self.num_workers());
        Ok(())
    }

    fn stats(&self) -> TransportStats {
        self.rounds.stats()
    }
}

impl InProcessEndpoint {
    /// Non-blocking receive; `None` when nothing is queued.
    pub fn try_recv(&mut self) -> Option<Envelope> {
        match self.inbox.try_recv() {
            Ok(env) => Some(env),
            Err(TryRecvError::Empty | TryRecvError::Disconnected) => None,
        }
    }
}

impl WorkerEndpoint for InProcessEndpoint {
    fn worker_id(&self) -> u32 {
        self.id
    }

    fn recv(&mut self) -> Result<Envelope> {
        self.inbox
            .recv()
            .map_err(|_| Error::Transport("coordinator has disconnected".into()))
    }

    fn send(&mut self, envelope: Envelope) -> Result<()> {
        self.outbox
            .send(envelope)
            .map_err(|_| Error::Transport("coordinator has disconnected".into()))
    }
}
