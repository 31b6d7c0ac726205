//! TCP transport: one stream per worker, length-prefixed frames.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use super::{
    read_frame, write_frame, Control, Envelope, RoundTracker, Transport, TransportStats,
    WorkerEndpoint, DEFAULT_TIMEOUT,
};
use crate::error::{Error, Result};

struct Link {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Link {
    fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self {
            reader,
            writer: BufWriter::new(stream),
        })
    }

    /// Reads a frame, returning `None` when the deadline passes first.
    fn read_until(&mut self, deadline: Instant) -> Result<Option<Envelope>> {
        let remaining = deadline.saturating_duration_since(Instant::now());
        if remaining.is_zero() {
            return Ok(None);
        }
        self.reader.get_ref().set_read_timeout(Some(remaining))?;
        match read_frame(&mut self.reader) {
            Ok(env) => Ok(Some(env)),
            Err(Error::Io(e)) if is_timeout(&e) => Ok(None),
            Err(Error::Io(e)) => Err(Error::Transport(format!("connection lost: {e}"))),
            Err(e) => Err(e),
        }
    }

    fn write(&mut self, env: &Envelope) -> Result<()> {
        write_frame(&mut self.writer, env).map_err(|e| match e {
            Error::Io(e) => Error::Transport(format!("send failed: {e}")),
            other => other,
        })
    }
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

/// Coordinator side. Workers connect and register with a `Start` frame
/// carrying their id.
pub struct TcpCoordinator {
    listener: TcpListener,
    n_workers: usize,
    links: Vec<Link>,
    rounds: RoundTracker,
    timeout: Duration,
}

impl TcpCoordinator {
    pub fn bind(addr: impl ToSocketAddrs, n_workers: usize) -> Result<Self> {
        if n_workers == 0 {
            return Err(Error::config("at least one worker is required"));
        }
        let listener = TcpListener::bind(addr)
            .map_err(|e| Error::Transport(format!("cannot bind listener: {e}")))?;
        Ok(Self {
            listener,
            n_workers,
            links: Vec::new(),
            rounds: RoundTracker::default(),
            timeout: DEFAULT_TIMEOUT,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Waits for every worker to connect and register.
    pub fn accept_workers(&mut self) -> Result<()> {
        let deadline = Instant::now() + self.timeout;
        let mut slots: Vec<Option<Link>> = (0..self.n_workers).map(|_| None).collect();
        self.listener.set_nonblocking(true)?;
        while slots.iter().any(Option::is_none) {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    let mut link = Link::new(stream)?;
                    let Some(env) = link.read_until(deadline)? else {
                        break;
                    };
                    let Envelope::Control {
                        worker_id,
                        command: Control::Start,
                        ..
                    } = env
                    else {
                        return Err(Error::Protocol(format!(
                            "expected a registration frame, got {env:?}"
                        )));
                    };
                    let id = worker_id as usize;
                    if id >= self.n_workers || slots[id].is_some() {
                        return Err(Error::Protocol(format!(
                            "registration for unknown or repeated worker {worker_id}"
                        )));
                    }
                    slots[id] = Some(link);
                    self.rounds.count_control(1);
                }
                Err(e) if is_timeout(&e) => {
                    if Instant::now() >= deadline {
                        break;
                    }
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(Error::Transport(format!("accept failed: {e}"))),
            }
        }
        self.listener.set_nonblocking(false)?;
        let missing: Vec<u32> = slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| i as u32)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Timeout { missing });
        }
        self.links = slots.into_iter().flatten().collect();
        Ok(())
    }

    fn connected(&self) -> Result<()> {
        if self.links.len() == self.n_workers {
            Ok(())
        } else {
            Err(Error::Protocol("workers have not been accepted yet".into()))
        }
    }
}

impl Transport for TcpCoordinator {
    fn num_workers(&self) -> usize {
        self.n_workers
    }

    fn scatter(&mut self, payloads: Vec<Envelope>) -> Result<()> {
        self.connected()?;
        self.rounds.begin(&payloads, self.n_workers)?;
        for env in &payloads {
            self.links[env.worker_id() as usize].write(env)?;
        }
        Ok(())
    }

    fn gather(&mut self) -> Result<Vec<Envelope>> {
        self.connected()?;
        self.rounds.expecting()?;
        let deadline = Instant::now() + self.timeout;
        let mut slots: Vec<Option<Envelope>> = vec![None; self.n_workers];
        for id in 0..self.n_workers {
            let Some(env) = self.links[id].read_until(deadline)? else {
                return Err(Error::Timeout {
                    missing: RoundTracker::missing(&slots),
                });
            };
            if env.worker_id() as usize != id {
                return Err(Error::Protocol(format!(
                    "worker {id} sent a frame tagged for worker {}",
                    env.worker_id()
                )));
            }
            self.rounds.accept(env, &mut slots)?;
        }
        self.rounds.finish(slots)
    }

    fn broadcast(&mut self, command: Control) -> Result<()> {
        self.connected()?;
        let iteration = self.rounds.stats().rounds as u32;
        for (id, link) in self.links.iter_mut().enumerate() {
            link.write(&Envelope::Control {
                iteration,
                worker_id: id as u32,
                command: command.clone(),
            })?;
        }
        self.rounds.count_control(self.n_workers);
        Ok(())
    }

    fn stats(&self) -> TransportStats {
        self.rounds.stats()
    }
}

/// Worker side of the TCP transport.
pub struct TcpWorkerEndpoint {
    id: u32,
    link: Link,
}

impl TcpWorkerEndpoint {
    /// Connects (retrying until `timeout`) and registers as `worker_id`.
    pub fn connect(addr: impl ToSocketAddrs, worker_id: u32, timeout: Duration) -> Result<Self> {
        let addrs: Vec<SocketAddr> = addr
            .to_socket_addrs()
            .map_err(|e| Error::config(format!("bad coordinator address: {e}")))?
            .collect();
        let deadline = Instant::now() + timeout;
        let stream = loop {
            match addrs.iter().find_map(|a| TcpStream::connect(a).ok()) {
                Some(s) => break s,
                None if Instant::now() >= deadline => {
                    return Err(Error::Transport(format!(
                        "could not reach coordinator at {addrs:?}"
                    )))
                }
                None => std::thread::sleep(Duration::from_millis(20)),
            }
        };
        let mut link = Link::new(stream)?;
        link.write(&Envelope::Control {
            iteration: 0,
            worker_id,
            command: Control::Start,
        })?;
        link.writer.flush()?;
        Ok(Self { id: worker_id, link })
    }
}

impl WorkerEndpoint for TcpWorkerEndpoint {
    fn worker_id(&self) -> u32 {
        self.id
    }

    fn recv(&mut self) -> Result<Envelope> {
        self.link.reader.get_ref().set_read_timeout(None)?;
        read_frame(&mut self.link.reader).map_err(|e| match e {
            Error::Io(e) => Error::Transport(format!("coordinator connection lost: {e}")),
            other => other,
        })
    }

    fn send(&mut self, envelope: Envelope) -> Result<()> {
        self.link.write(&envelope)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::InnerStats;

    #[test]
    fn round_trip_over_loopback() {
        let mut coord = TcpCoordinator::bind("127.0.0.1:0", 2)
            .unwrap()
            .with_timeout(Duration::from_secs(10));
        let addr = coord.local_addr().unwrap();
        let handles: Vec<_> = (0..2u32)
            .map(|id| {
                std::thread::spawn(move || {
                    let mut ep = TcpWorkerEndpoint::connect(addr, id, Duration::from_secs(10)).unwrap();
                    loop {
                        match ep.recv().unwrap() {
                            Envelope::Scatter { iteration, z, .. } => ep
                                .send(Envelope::Gather {
                                    iteration,
                                    worker_id: id,
                                    x: z.iter().map(|v| v + id as f64).collect(),
                                    stats: InnerStats::default(),
                                })
                                .unwrap(),
                            Envelope::Control { command: Control::Stop, .. } => break,
                            _ => {}
                        }
                    }
                })
            })
            .collect();
        coord.accept_workers().unwrap();
        for k in 0..3u32 {
            let payloads = (0..2u32)
                .map(|i| Envelope::Scatter {
                    iteration: k,
                    worker_id: i,
                    z: vec![0.1 * k as f64],
                    y: vec![0.0],
                    rho: 1.0,
                })
                .collect();
            coord.scatter(payloads).unwrap();
            let got = coord.gather().unwrap();
            match &got[1] {
                Envelope::Gather { x, .. } => assert_eq!(x[0], 0.1 * k as f64 + 1.0),
                other => panic!("{other:?}"),
            }
        }
        coord.broadcast(Control::Stop).unwrap();
        for h in handles {
            h.join().unwrap();
        }
        let stats = coord.stats();
        assert_eq!(stats.messages_sent, 12);
        assert_eq!(stats.rounds, 3);
        assert_eq!(stats.control_messages, 4);
    }

    #[test]
    fn missing_worker_times_out_at_accept() {
        let mut coord = TcpCoordinator::bind("127.0.0.1:0", 2)
            .unwrap()
            .with_timeout(Duration::from_millis(200));
        let addr = coord.local_addr().unwrap();
        let _ep = TcpWorkerEndpoint::connect(addr, 1, Duration::from_secs(5)).unwrap();
        match coord.accept_workers() {
            Err(Error::Timeout { missing }) => assert_eq!(missing, vec![0]),
            other => panic!("expected timeout, got {other:?}"),
        }
    }
}
