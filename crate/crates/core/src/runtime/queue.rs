//! Bounded hand-off between a running pipeline and its consumer.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverflowPolicy {
    /// The producer waits for room.
    #[default]
    Block,
    /// The oldest queued item is discarded to make room.
    DropOldest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("stream queue is closed")]
pub struct QueueClosed;

struct State<T> {
    buf: VecDeque<T>,
    closed: bool,
    dropped: u64,
}

pub struct StreamQueue<T> {
    state: Mutex<State<T>>,
    readable: Condvar,
    writable: Condvar,
    capacity: usize,
    policy: OverflowPolicy,
}

impl<T> StreamQueue<T> {
    pub fn new(capacity: usize, policy: OverflowPolicy) -> Self {
        Self {
            state: Mutex::new(State { buf: VecDeque::with_capacity(capacity.max(1)), closed: false, dropped: 0 }),
            readable: Condvar::new(),
            writable: Condvar::new(),
            capacity: capacity.max(1),
            policy,
        }
    }

    pub fn push(&self, item: T) -> Result<(), QueueClosed> {
        let mut st = self.state.lock().unwrap();
        loop {
            if st.closed {
                return Err(QueueClosed);
            }
            if st.buf.len() < self.capacity {
                break;
            }
            match self.policy {
                OverflowPolicy::Block => st = self.writable.wait(st).unwrap(),
                OverflowPolicy::DropOldest => {
                    st.buf.pop_front();
                    st.dropped += 1;
                }
            }
        }
        st.buf.push_back(item);
        self.readable.notify_one();
        Ok(())
    }

    /// Next item; waits while the queue is empty and open. `None` once closed and drained.
    pub fn pop(&self) -> Option<T> {
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(item) = st.buf.pop_front() {
                self.writable.notify_one();
                return Some(item);
            }
            if st.closed {
                return None;
            }
            st = self.readable.wait(st).unwrap();
        }
    }

    pub fn try_pop(&self) -> Option<T> {
        let item = self.state.lock().unwrap().buf.pop_front();
        if item.is_some() {
            self.writable.notify_one();
        }
        item
    }

    /// Ends the stream: pending items stay readable, further pushes fail.
    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.readable.notify_all();
        self.writable.notify_all();
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.state.lock().unwrap().dropped
    }
}

/// Moves every item of `items` into `queue`, then closes it. Returns the
/// number pushed; stops early if the consumer closed the queue.
pub fn pump<T>(items: impl IntoIterator<Item = T>, queue: &StreamQueue<T>) -> usize {
    let mut n = 0;
    for item in items {
        if queue.push(item).is_err() {
            break;
        }
        n += 1;
    }
    queue.close();
    n
}
