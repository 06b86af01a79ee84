//! Seeded delivery scheduler.
//!
//! Messages are held back until every live endpoint is blocked in a receive;
//! then exactly one queued message is chosen by the seeded generator and
//! delivered. Every task's behaviour between receives is a function of what
//! it received, so a seed fixes the whole delivery order.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use crate::tensor::Rng;
use crate::transport::message::{Envelope, WorkerId};

/// One delivery event in the order it happened.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub from: WorkerId,
    pub to: WorkerId,
    pub what: String,
}

struct State {
    queues: Vec<VecDeque<Envelope>>,
    inbox: Vec<VecDeque<Envelope>>,
    waiting: Vec<bool>,
    alive: Vec<bool>,
    rng: Rng,
    log: Vec<Delivery>,
}

pub(crate) struct Scheduler {
    size: usize,
    state: Mutex<State>,
    cv: Condvar,
}

pub(crate) enum RecvError {
    Timeout,
}

impl Scheduler {
    pub(crate) fn new(size: usize, seed: u64) -> Self {
        Self {
            size,
            state: Mutex::new(State {
                queues: (0..size * size).map(|_| VecDeque::new()).collect(),
                inbox: (0..size).map(|_| VecDeque::new()).collect(),
                waiting: vec![false; size],
                alive: vec![true; size],
                rng: Rng::new(seed),
                log: Vec::new(),
            }),
            cv: Condvar::new(),
        }
    }

    pub(crate) fn send(&self, from: usize, to: usize, env: Envelope) -> Result<(), Envelope> {
        let mut st = self.state.lock().expect("scheduler lock");
        if !st.alive[to] {
            return Err(env);
        }
        st.queues[from * self.size + to].push_back(env);
        Ok(())
    }

    fn try_deliver(&self, st: &mut State) {
        let quiescent = (0..self.size).all(|i| !st.alive[i] || st.waiting[i]);
        if !quiescent {
            return;
        }
        let ready: Vec<usize> = (0..st.queues.len())
            .filter(|&q| st.alive[q % self.size] && !st.queues[q].is_empty())
            .collect();
        if ready.is_empty() {
            return;
        }
        let q = ready[st.rng.index(ready.len())];
        let (from, to) = (q / self.size, q % self.size);
        let env = st.queues[q].pop_front().expect("non-empty queue");
        st.log.push(Delivery {
            from: WorkerId(from),
            to: WorkerId(to),
            what: env.describe(),
        });
        st.inbox[to].push_back(env);
        st.waiting[to] = false;
        self.cv.notify_all();
    }

    pub(crate) fn recv(&self, me: usize, deadline: Instant) -> Result<Envelope, RecvError> {
        let mut st = self.state.lock().expect("scheduler lock");
        loop {
            if let Some(env) = st.inbox[me].pop_front() {
                st.waiting[me] = false;
                return Ok(env);
            }
            st.waiting[me] = true;
            self.try_deliver(&mut st);
            if !st.inbox[me].is_empty() {
                continue;
            }
            let now = Instant::now();
            if now >= deadline {
                st.waiting[me] = false;
                return Err(RecvError::Timeout);
            }
            st = self.cv.wait_timeout(st, deadline - now).expect("scheduler lock").0;
        }
    }

    pub(crate) fn depart(&self, me: usize) {
        let mut st = self.state.lock().expect("scheduler lock");
        st.alive[me] = false;
        st.waiting[me] = false;
        self.try_deliver(&mut st);
        self.cv.notify_all();
    }

    pub(crate) fn log(&self) -> Vec<Delivery> {
        self.state.lock().expect("scheduler lock").log.clone()
    }
}
