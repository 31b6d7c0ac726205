//! Wire format.
//!
//! Every frame is
//! `[u8 version][u8 kind][u32 iteration][u32 worker_id][u64 payload_len][payload]`,
//! all integers little-endian. Vectors inside payloads are a `u64` length
//! followed by that many little-endian `f64`s, so every value round-trips
//! bit-exactly.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 18;
const MAX_PAYLOAD: u64 = 1 << 36;

const KIND_SCATTER: u8 = 1;
const KIND_GATHER: u8 = 2;
const KIND_START: u8 = 3;
const KIND_STOP: u8 = 4;
const KIND_CONFIG: u8 = 5;

/// Summary of a worker's local solve, carried back with its iterate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InnerStats {
    pub iterations: u32,
    pub cg_iterations: u32,
    pub function_evals: u32,
    /// Local objective at the returned point.
    pub objective: f64,
    /// Local gradient norm, NaN when not evaluated.
    pub grad_norm: f64,
    /// Bit 0: a line search hit its cap. Bit 1: a steepest-descent fallback
    /// was taken.
    pub flags: u8,
}

impl InnerStats {
    pub const LINE_SEARCH_CAPPED: u8 = 1;
    pub const STEEPEST_DESCENT: u8 = 2;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    /// Worker registration (worker to coordinator) or run start.
    Start,
    /// Shutdown request (coordinator to worker) or abort notice (worker to
    /// coordinator).
    Stop,
    /// JSON-encoded worker configuration.
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Envelope {
    Scatter {
        iteration: u32,
        worker_id: u32,
        z: Vec<f64>,
        y: Vec<f64>,
        rho: f64,
    },
    Gather {
        iteration: u32,
        worker_id: u32,
        x: Vec<f64>,
        stats: InnerStats,
    },
    Control {
        iteration: u32,
        worker_id: u32,
        command: Control,
    },
}

impl Envelope {
    pub fn iteration(&self) -> u32 {
        match self {
            Envelope::Scatter { iteration, .. }
            | Envelope::Gather { iteration, .. }
            | Envelope::Control { iteration, .. } => *iteration,
        }
    }

    pub fn worker_id(&self) -> u32 {
        match self {
            Envelope::Scatter { worker_id, .. }
            | Envelope::Gather { worker_id, .. }
            | Envelope::Control { worker_id, .. } => *worker_id,
        }
    }

    fn kind(&self) -> u8 {
        match self {
            Envelope::Scatter { .. } => KIND_SCATTER,
            Envelope::Gather { .. } => KIND_GATHER,
            Envelope::Control { command, .. } => match command {
                Control::Start => KIND_START,
                Control::Stop => KIND_STOP,
                Control::Config(_) => KIND_CONFIG,
            },
        }
    }

    fn payload_len(&self) -> usize {
        let vec_len = |v: &[f64]| 8 + 8 * v.len();
        match self {
            Envelope::Scatter { z, y, .. } => 8 + vec_len(z) + vec_len(y),
            Envelope::Gather { x, .. } => vec_len(x) + 3 * 4 + 2 * 8 + 1,
            Envelope::Control { command, .. } => match command {
                Control::Config(text) => text.len(),
                Control::Start | Control::Stop => 0,
            },
        }
    }

    /// Size of the encoded frame in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload_len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(WIRE_VERSION);
        out.push(self.kind());
        out.extend(self.iteration().to_le_bytes());
        out.extend(self.worker_id().to_le_bytes());
        out.extend((self.payload_len() as u64).to_le_bytes());
        match self {
            Envelope::Scatter { z, y, rho, .. } => {
                out.extend(rho.to_le_bytes());
                put_vec(&mut out, z);
                put_vec(&mut out, y);
            }
            Envelope::Gather { x, stats, .. } => {
                put_vec(&mut out, x);
                out.extend(stats.iterations.to_le_bytes());
                out.extend(stats.cg_iterations.to_le_bytes());
                out.extend(stats.function_evals.to_le_bytes());
                out.extend(stats.objective.to_le_bytes());
                out.extend(stats.grad_norm.to_le_bytes());
                out.push(stats.flags);
            }
            Envelope::Control { command, .. } => {
                if let Control::Config(text) = command {
                    out.extend_from_slice(text.as_bytes());
                }
            }
        }
        debug_assert_eq!(out.len(), self.encoded_len());
        out
    }

    pub fn decode(frame: &[u8]) -> Result<Self> {
        if frame.len() < HEADER_LEN {
            return Err(Error::Protocol(format!(
                "frame of {} bytes is shorter than the {HEADER_LEN}-byte header",
                frame.len()
            )));
        }
        let header = Header::parse(frame[..HEADER_LEN].try_into().unwrap())?;
        let payload = &frame[HEADER_LEN..];
        if payload.len() as u64 != header.payload_len {
            return Err(Error::Protocol(format!(
                "payload length {} does not match header value {}",
                payload.len(),
                header.payload_len
            )));
        }
        header.decode_payload(payload)
    }
}

struct Header {
    kind: u8,
    iteration: u32,
    worker_id: u32,
    payload_len: u64,
}

impl Header {
    fn parse(bytes: &[u8; HEADER_LEN]) -> Result<Self> {
        if bytes[0] != WIRE_VERSION {
            return Err(Error::Protocol(format!(
                "unsupported wire version {} (expected {WIRE_VERSION})",
                bytes[0]
            )));
        }
        let payload_len = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
        if payload_len > MAX_PAYLOAD {
            return Err(Error::Protocol(format!("payload length {payload_len} is implausible")));
        }
        Ok(Self {
            kind: bytes[1],
            iteration: u32::from_le_bytes(bytes[2..6].try_into().unwrap()),
            worker_id: u32::from_le_bytes(bytes[6..10].try_into().unwrap()),
            payload_len,
        })
    }

    fn decode_payload(&self, payload: &[u8]) -> Result<Envelope> {
        let mut cur = Cursor { buf: payload, pos: 0 };
        let (iteration, worker_id) = (self.iteration, self.worker_id);
        let env = match self.kind {
            KIND_SCATTER => {
                let rho = cur.f64()?;
                let z = cur.vec()?;
                let y = cur.vec()?;
                Envelope::Scatter {
                    iteration,
                    worker_id,
                    z,
                    y,
                    rho,
                }
            }
            KIND_GATHER => {
                let x = cur.vec()?;
                let stats = InnerStats {
                    iterations: cur.u32()?,
                    cg_iterations: cur.u32()?,
                    function_evals: cur.u32()?,
                    objective: cur.f64()?,
                    grad_norm: cur.f64()?,
                    flags: cur.u8()?,
                };
                Envelope::Gather {
                    iteration,
                    worker_id,
                    x,
                    stats,
                }
            }
            KIND_START | KIND_STOP | KIND_CONFIG => {
                let command = match self.kind {
                    KIND_START => Control::Start,
                    KIND_STOP => Control::Stop,
                    _ => {
                        let text = String::from_utf8(cur.rest().to_vec())
                            .map_err(|_| Error::Protocol("config payload is not UTF-8".into()))?;
                        Control::Config(text)
                    }
                };
                Envelope::Control {
                    iteration,
                    worker_id,
                    command,
                }
            }
            other => return Err(Error::Protocol(format!("unknown frame kind {other}"))),
        };
        if cur.pos != payload.len() {
            return Err(Error::Protocol(format!(
                "{} trailing payload bytes",
                payload.len() - cur.pos
            )));
        }
        Ok(env)
    }
}

fn put_vec(out: &mut Vec<u8>, v: &[f64]) {
    out.extend((v.len() as u64).to_le_bytes());
    for x in v {
        out.extend(x.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Protocol(format!(
                "payload truncated: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len()
            ))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn vec(&mut self) -> Result<Vec<f64>> {
        let len = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        let bytes = self.take(
            usize::try_from(len)
                .ok()
                .and_then(|l| l.checked_mul(8))
                .ok_or_else(|| Error::Protocol(format!("vector length {len} overflows")))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }
}

/// Reads one frame from a byte stream.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Envelope> {
    let mut header = [0u8; HEADER_LEN];
    reader.read_exact(&mut header)?;
    let parsed = Header::parse(&header)?;
    let mut payload = vec![0u8; parsed.payload_len as usize];
    reader.read_exact(&mut payload)?;
    parsed.decode_payload(&payload)
}

pub fn write_frame<W: Write>(writer: &mut W, envelope: &Envelope) -> Result<()> {
    writer.write_all(&envelope.encode())?;
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn header_layout() {
        let env = Envelope::Control {
            iteration: 7,
            worker_id: 3,
            command: Control::Config("{}".into()),
        };
        let bytes = env.encode();
        assert_eq!(bytes[0], WIRE_VERSION);
        assert_eq!(bytes[1], KIND_CONFIG);
        assert_eq!(&bytes[2..6], &7u32.to_le_bytes());
        assert_eq!(&bytes[6..10], &3u32.to_le_bytes());
        assert_eq!(&bytes[10..18], &2u64.to_le_bytes());
        assert_eq!(&bytes[18..], b"{}");
    }

    #[test]
    fn extreme_values_survive() {
        let env = Envelope::Scatter {
            iteration: 1,
            worker_id: 0,
            z: vec![0.1, -3.5e300, 7.0, f64::MIN_POSITIVE / 2.0, -0.0],
            y: vec![f64::NAN],
            rho: 1e-300,
        };
        match Envelope::decode(&env.encode()).unwrap() {
            Envelope::Scatter { z, y, rho, .. } => {
                assert_eq!(bits(&z), bits(&[0.1, -3.5e300, 7.0, f64::MIN_POSITIVE / 2.0, -0.0]));
                assert_eq!(y[0].to_bits(), f64::NAN.to_bits());
                assert_eq!(rho, 1e-300);
            }
            other => panic!("decoded {other:?}"),
        }
    }

    #[test]
    fn malformed_frames_rejected() {
        let env = Envelope::Control {
            iteration: 0,
            worker_id: 0,
            command: Control::Stop,
        };
        let mut bytes = env.encode();
        bytes[0] = 9;
        assert!(matches!(Envelope::decode(&bytes), Err(Error::Protocol(_))));
        let mut bytes = env.encode();
        bytes[1] = 42;
        assert!(matches!(Envelope::decode(&bytes), Err(Error::Protocol(_))));
        assert!(Envelope::decode(&bytes[..5]).is_err());
        let mut gather = Envelope::Gather {
            iteration: 0,
            worker_id: 0,
            x: vec![1.0],
            stats: InnerStats::default(),
        }
        .encode();
        gather.pop();
        assert!(Envelope::decode(&gather).is_err());
    }

    proptest! {
        #[test]
        fn gather_round_trips_bit_exactly(
            x in proptest::collection::vec(any::<f64>(), 0..64),
            iteration in any::<u32>(),
            worker_id in any::<u32>(),
            objective in any::<f64>(),
            iters in any::<u32>(),
            flags in any::<u8>(),
        ) {
            let env = Envelope::Gather {
                iteration,
                worker_id,
                x: x.clone(),
                stats: InnerStats { iterations: iters, cg_iterations: 3, function_evals: 2, objective, grad_norm: 0.5, flags },
            };
            let bytes = env.encode();
            prop_assert_eq!(bytes.len(), env.encoded_len());
            let back = read_frame(&mut bytes.as_slice()).unwrap();
            match back {
                Envelope::Gather { iteration: i, worker_id: w, x: bx, stats } => {
                    prop_assert_eq!(i, iteration);
                    prop_assert_eq!(w, worker_id);
                    prop_assert_eq!(bits(&bx), bits(&x));
                    prop_assert_eq!(stats.objective.to_bits(), objective.to_bits());
                    prop_assert_eq!(stats.iterations, iters);
                    prop_assert_eq!(stats.flags, flags);
                }
                other => prop_assert!(false, "decoded {:?}", other),
            }
        }
    }
}
