//! Message passing between worker tasks with exact traffic accounting.
//!
//! Two in-process backends share one [`Endpoint`] API: plain channels, and a
//! seeded scheduler that serializes every delivery (see [`Transport::scheduled`]).
//! Only [`Envelope::Data`] traffic is counted in [`MessageStats`].

mod collective;
mod frame;
mod message;
mod scheduler;
mod stats;

use std::any::Any;
use std::collections::VecDeque;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

pub use collective::allgather_hypercube;
pub use frame::{read_frame, write_frame, FRAME_HEADER_LEN};
pub use message::{Envelope, Message, Tag, WorkerId};
pub use scheduler::Delivery;
pub use stats::{MessageStats, StatsCounter, TagStats};

use scheduler::Scheduler;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

enum Backend {
    Channel {
        rx: Receiver<Envelope>,
        peers: Vec<Sender<Envelope>>,
    },
    Scheduled(Arc<Scheduler>),
}

/// Handle on a group of connected endpoints: owns the shared counters.
#[derive(Clone)]
pub struct Transport {
    size: usize,
    stats: Arc<StatsCounter>,
    scheduler: Option<Arc<Scheduler>>,
}

impl Transport {
    /// `size` endpoints connected by unbounded FIFO channels.
    pub fn channel(size: usize, timeout: Duration) -> (Transport, Vec<Endpoint>) {
        let stats = Arc::new(StatsCounter::default());
        let (txs, rxs): (Vec<_>, Vec<_>) = (0..size).map(|_| mpsc::channel()).unzip();
        let endpoints = rxs
            .into_iter()
            .enumerate()
            .map(|(i, rx)| Endpoint {
                id: WorkerId(i),
                size,
                timeout,
                stats: stats.clone(),
                pending: VecDeque::new(),
                backend: Backend::Channel {
                    rx,
                    peers: txs.clone(),
                },
            })
            .collect();
        (
            Transport {
                size,
                stats,
                scheduler: None,
            },
            endpoints,
        )
    }

    /// `size` endpoints whose deliveries are serialized in a seeded order.
    pub fn scheduled(size: usize, seed: u64, timeout: Duration) -> (Transport, Vec<Endpoint>) {
        let stats = Arc::new(StatsCounter::default());
        let sched = Arc::new(Scheduler::new(size, seed));
        let endpoints = (0..size)
            .map(|i| Endpoint {
                id: WorkerId(i),
                size,
                timeout,
                stats: stats.clone(),
                pending: VecDeque::new(),
                backend: Backend::Scheduled(sched.clone()),
            })
            .collect();
        (
            Transport {
                size,
                stats,
                scheduler: Some(sched),
            },
            endpoints,
        )
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn stats_snapshot(&self) -> MessageStats {
        self.stats.snapshot()
    }

    /// Zeroes the counters, returning what they held.
    pub fn stats_reset(&self) -> MessageStats {
        self.stats.reset()
    }

    /// Delivery order so far; empty for the channel backend.
    pub fn delivery_log(&self) -> Vec<Delivery> {
        self.scheduler.as_ref().map(|s| s.log()).unwrap_or_default()
    }
}

/// One task's connection to its peers. Owned by exactly one task.
pub struct Endpoint {
    id: WorkerId,
    size: usize,
    timeout: Duration,
    stats: Arc<StatsCounter>,
    /// Received but not yet claimed by a matching receive.
    pending: VecDeque<Envelope>,
    backend: Backend,
}

impl Endpoint {
    pub fn id(&self) -> WorkerId {
        self.id
    }

    /// Number of tasks in the group, `F`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    fn push(&self, to: WorkerId, env: Envelope) -> Result<()> {
        if to.0 >= self.size || to == self.id {
            return Err(Error::Transport(format!("{} cannot send to {to}", self.id)));
        }
        let ok = match &self.backend {
            Backend::Channel { peers, .. } => peers[to.0].send(env).is_ok(),
            Backend::Scheduled(s) => s.send(self.id.0, to.0, env).is_ok(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Transport(format!("{to} is disconnected")))
        }
    }

    /// Sends one counted data message.
    pub fn send(&self, to: WorkerId, tag: Tag, layer: usize, payload: Vec<f64>) -> Result<()> {
        // Counted before delivery so a receiver never sees an unrecorded message.
        self.stats.record(tag, payload.len());
        self.push(to, Envelope::Data(Message::new(tag, layer, self.id, payload)))
    }

    /// Sends an uncounted orchestration command.
    pub fn send_control(&self, to: WorkerId, body: Box<dyn Any + Send>) -> Result<()> {
        self.push(
            to,
            Envelope::Control {
                sender: self.id,
                body,
            },
        )
    }

    /// Identical copy to each of the other `F - 1` tasks.
    pub fn broadcast(&self, tag: Tag, layer: usize, payload: &[f64]) -> Result<()> {
        for peer in (0..self.size).map(WorkerId).filter(|&p| p != self.id) {
            self.send(peer, tag, layer, payload.to_vec())?;
        }
        Ok(())
    }

    fn raw_recv(&mut self, deadline: Instant) -> Option<Envelope> {
        match &self.backend {
            Backend::Channel { rx, .. } => {
                let wait = deadline.saturating_duration_since(Instant::now());
                match rx.recv_timeout(wait) {
                    Ok(env) => Some(env),
                    Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => None,
                }
            }
            Backend::Scheduled(s) => s.recv(self.id.0, deadline).ok(),
        }
    }

    /// Next envelope in arrival order.
    pub fn recv(&mut self) -> Result<Envelope> {
        if let Some(env) = self.pending.pop_front() {
            return Ok(env);
        }
        let deadline = Instant::now() + self.timeout;
        self.raw_recv(deadline).ok_or(Error::Timeout {
            waiting_on: self.id,
            missing: vec![],
        })
    }

    /// First envelope satisfying `accept`, buffering everything else.
    fn recv_where(
        &mut self,
        deadline: Instant,
        mut accept: impl FnMut(&Envelope) -> bool,
    ) -> Option<Envelope> {
        if let Some(pos) = self.pending.iter().position(&mut accept) {
            return self.pending.remove(pos);
        }
        loop {
            let env = self.raw_recv(deadline)?;
            if accept(&env) {
                return Some(env);
            }
            self.pending.push_back(env);
        }
    }

    /// First envelope satisfying `accept`, with no deadline. Used by tasks
    /// idling between commands; everything else is buffered.
    pub fn wait_for(&mut self, mut accept: impl FnMut(&Envelope) -> bool) -> Result<Envelope> {
        if let Some(pos) = self.pending.iter().position(&mut accept) {
            return Ok(self.pending.remove(pos).expect("position is in range"));
        }
        loop {
            let env = match &self.backend {
                Backend::Channel { rx, .. } => rx
                    .recv()
                    .map_err(|_| Error::Transport(format!("{} lost all peers", self.id)))?,
                Backend::Scheduled(s) => match s.recv(self.id.0, Instant::now() + self.timeout) {
                    Ok(env) => env,
                    Err(_) => continue,
                },
            };
            if accept(&env) {
                return Ok(env);
            }
            self.pending.push_back(env);
        }
    }

    /// Next data message with this tag and layer, optionally from one sender.
    pub fn recv_data(&mut self, tag: Tag, layer: usize, from: Option<WorkerId>) -> Result<Message> {
        let deadline = Instant::now() + self.timeout;
        let layer = layer as u16;
        let env = self.recv_where(deadline, |env| match env {
            Envelope::Data(m) => {
                m.tag == tag && m.layer == layer && from.is_none_or(|f| f == m.sender)
            }
            Envelope::Control { .. } => false,
        });
        match env {
            Some(Envelope::Data(m)) => Ok(m),
            _ => Err(Error::Timeout {
                waiting_on: self.id,
                missing: from.into_iter().collect(),
            }),
        }
    }

    /// Next control command, buffering data messages.
    pub fn recv_control(&mut self) -> Result<(WorkerId, Box<dyn Any + Send>)> {
        let deadline = Instant::now() + self.timeout;
        match self.recv_where(deadline, |env| matches!(env, Envelope::Control { .. })) {
            Some(Envelope::Control { sender, body }) => Ok((sender, body)),
            _ => Err(Error::Timeout {
                waiting_on: self.id,
                missing: vec![],
            }),
        }
    }

    /// Collects one `tag`/`layer` message from each of the `expected` peers,
    /// ordered by ascending sender.
    pub fn gather(&mut self, tag: Tag, layer: usize, expected: usize) -> Result<Vec<Message>> {
        if expected != self.size - 1 {
            return Err(Error::Transport(format!(
                "gather expects F - 1 = {} messages, asked for {expected}",
                self.size - 1
            )));
        }
        let deadline = Instant::now() + self.timeout;
        let me = self.id;
        let mut got: Vec<Option<Message>> = (0..self.size).map(|_| None).collect();
        let layer16 = layer as u16;
        for _ in 0..expected {
            let seen: Vec<bool> = got.iter().map(Option::is_some).collect();
            let env = self.recv_where(deadline, |env| match env {
                Envelope::Data(m) => {
                    m.tag == tag && m.layer == layer16 && m.sender != me && !seen[m.sender.0]
                }
                Envelope::Control { .. } => false,
            });
            match env {
                Some(Envelope::Data(m)) => {
                    let s = m.sender.0;
                    got[s] = Some(m);
                }
                _ => {
                    let missing = (0..self.size)
                        .filter(|&i| i != me.0 && got[i].is_none())
                        .map(WorkerId)
                        .collect();
                    return Err(Error::Timeout {
                        waiting_on: me,
                        missing,
                    });
                }
            }
        }
        Ok(got.into_iter().flatten().collect())
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        if let Backend::Scheduled(s) = &self.backend {
            s.depart(self.id.0);
        }
    }
}

pub fn broadcast_from(src: &Endpoint, tag: Tag, layer: usize, payload: &[f64]) -> Result<()> {
    src.broadcast(tag, layer, payload)
}

pub fn gather_to(dst: &mut Endpoint, tag: Tag, layer: usize, expected: usize) -> Result<Vec<Message>> {
    dst.gather(tag, layer, expected)
}
