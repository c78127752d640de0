//! Deterministic simulated message passing among ranks.
//!
//! Every rank runs the same program on its own thread. In
//! [`ExecMode::Sequential`] only one rank thread executes at a time: a rank
//! runs until it blocks in `recv` or finishes, and the turn then passes
//! round-robin to the next rank that can make progress. In
//! [`ExecMode::Parallel`] all rank threads run freely. Receives always name
//! their source and tag and collectives reduce in a fixed order, so both modes
//! produce identical results.
//!
//! Deadlock is detected by a quiescence scan: when every unfinished rank is
//! blocked on a receive with nothing to deliver, all blocked receives fail with
//! [`FabricError::Deadlock`].

mod collective;
mod counters;
mod halo;

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::Write;
use std::sync::{Condvar, Mutex, MutexGuard};

use thiserror::Error;

pub use collective::tree_sum;
pub use counters::{RankTraffic, TrafficClass, TrafficCounters};
pub use halo::halo_exchange;

use crate::real::{decode, encode, Real};

/// Tags at or above this value are reserved for collectives and layers.
pub const INTERNAL_TAG_BASE: u64 = 1 << 32;

pub(crate) mod tags {
    use super::INTERNAL_TAG_BASE;

    pub const ALLREDUCE_UP: u64 = INTERNAL_TAG_BASE + 1;
    pub const ALLREDUCE_DOWN: u64 = INTERNAL_TAG_BASE + 2;
    pub const BARRIER: u64 = INTERNAL_TAG_BASE + 3;
    pub const REDISTRIBUTE: u64 = INTERNAL_TAG_BASE + 4;
    pub const DATA_EXCHANGE: u64 = INTERNAL_TAG_BASE + 5;
    /// Halo messages use `HALO + direction index` (27 slots).
    pub const HALO: u64 = INTERNAL_TAG_BASE + 64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// One rank executes at a time, deterministic round-robin hand-off.
    #[default]
    Sequential,
    /// One free-running thread per rank.
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockedRank {
    pub rank: usize,
    pub src: usize,
    pub tag: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FabricError {
    #[error("deadlock: {}", DisplayBlocked(.blocked))]
    Deadlock { blocked: Vec<BlockedRank> },
    #[error("allreduce length mismatch in group {group:?}")]
    LengthMismatch { group: Vec<usize> },
    #[error("rank {rank} is not a member of group {group:?}")]
    NotInGroup { rank: usize, group: Vec<usize> },
    #[error("rank {rank} out of range for a fabric of {size}")]
    BadRank { rank: usize, size: usize },
    #[error("malformed message from rank {src}: {reason}")]
    Malformed { src: usize, reason: String },
}

struct DisplayBlocked<'a>(&'a [BlockedRank]);

impl fmt::Display for DisplayBlocked<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "rank {} waiting on (src {}, tag {:#x})", b.rank, b.src, b.tag)?;
        }
        Ok(())
    }
}

/// One line of the optional message trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub step: u64,
    pub src: usize,
    pub dst: usize,
    pub tag: u64,
    pub bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Waiting,
    Running,
    Blocked { src: usize, tag: u64 },
    Done,
}

struct Message {
    payload: Vec<u8>,
    class: TrafficClass,
}

struct State {
    queues: HashMap<(usize, usize, u64), VecDeque<Message>>,
    status: Vec<Status>,
    turn: Option<usize>,
    deadlock: Option<Vec<BlockedRank>>,
    counters: TrafficCounters,
    trace: Option<Vec<TraceRecord>>,
    step: u64,
}

impl State {
    fn deliverable(&self, rank: usize) -> bool {
        match self.status[rank] {
            Status::Blocked { src, tag } => self.queues.get(&(src, rank, tag)).is_some_and(|q| !q.is_empty()),
            _ => false,
        }
    }

    fn blocked_ranks(&self) -> Vec<BlockedRank> {
        self.status
            .iter()
            .enumerate()
            .filter_map(|(rank, s)| match *s {
                Status::Blocked { src, tag } => Some(BlockedRank { rank, src, tag }),
                _ => None,
            })
            .collect()
    }

    /// Sequential mode: hand the turn to the next runnable rank after `from`.
    fn pass_turn(&mut self, from: usize) {
        let size = self.status.len();
        for i in 1..=size {
            let r = (from + i) % size;
            if self.status[r] == Status::Waiting || self.deliverable(r) {
                self.turn = Some(r);
                return;
            }
        }
        self.turn = None;
        if self.deadlock.is_none() && self.status.iter().any(|s| matches!(s, Status::Blocked { .. })) {
            self.deadlock = Some(self.blocked_ranks());
        }
    }

    /// Parallel mode: declare deadlock when nobody can make progress.
    fn check_quiescence(&mut self) {
        let size = self.status.len();
        let stuck = (0..size).all(|r| match self.status[r] {
            Status::Done => true,
            Status::Blocked { .. } => !self.deliverable(r),
            _ => false,
        });
        if stuck && self.deadlock.is_none() && self.status.iter().any(|s| matches!(s, Status::Blocked { .. })) {
            self.deadlock = Some(self.blocked_ranks());
        }
    }
}

struct Shared {
    state: Mutex<State>,
    cv: Condvar,
}

/// The simulated interconnect shared by `size` ranks.
pub struct Fabric {
    size: usize,
    mode: ExecMode,
    shared: Shared,
}

impl Fabric {
    pub fn new(size: usize, mode: ExecMode) -> Self {
        assert!(size > 0, "fabric needs at least one rank");
        Fabric {
            size,
            mode,
            shared: Shared {
                state: Mutex::new(State {
                    queues: HashMap::new(),
                    status: vec![Status::Done; size],
                    turn: None,
                    deadlock: None,
                    counters: TrafficCounters::new(size),
                    trace: None,
                    step: 0,
                }),
                cv: Condvar::new(),
            },
        }
    }

    /// Record every send as a [`TraceRecord`].
    pub fn with_trace(self) -> Self {
        self.lock().trace = Some(Vec::new());
        self
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mode(&self) -> ExecMode {
        self.mode
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.shared.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Run `program` once per rank and collect the per-rank results.
    ///
    /// A panic on any rank is re-raised here after all ranks have stopped.
    pub fn run<R, F>(&self, program: F) -> Vec<crate::Result<R>>
    where
        R: Send,
        F: Fn(&Comm) -> crate::Result<R> + Sync,
    {
        {
            let mut st = self.lock();
            st.status = vec![Status::Waiting; self.size];
            st.deadlock = None;
            st.turn = match self.mode {
                ExecMode::Sequential => Some(0),
                ExecMode::Parallel => None,
            };
        }
        let program = &program;
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..self.size)
                .map(|rank| {
                    scope.spawn(move || {
                        let comm = Comm { rank, fabric: self };
                        let _done = DoneGuard(&comm);
                        comm.start()?;
                        program(&comm)
                    })
                })
                .collect();
            let joined: Vec<_> = handles.into_iter().map(|h| h.join()).collect();
            joined.into_iter().map(|r| r.unwrap_or_else(|panic| std::panic::resume_unwind(panic))).collect()
        })
    }

    /// Like [`run`](Self::run) but fails with the root-cause error if any rank
    /// failed. Deadlock reports caused by another rank's failure are skipped in
    /// favour of that failure.
    pub fn run_all<R, F>(&self, program: F) -> crate::Result<Vec<R>>
    where
        R: Send,
        F: Fn(&Comm) -> crate::Result<R> + Sync,
    {
        let results = self.run(program);
        if results.iter().all(|r| r.is_ok()) {
            return Ok(results.into_iter().map(|r| r.ok().unwrap()).collect());
        }
        let mut first_deadlock = None;
        for r in results {
            match r {
                Err(e) if e.is_deadlock() => {
                    first_deadlock.get_or_insert(e);
                }
                Err(e) => return Err(e),
                Ok(_) => {}
            }
        }
        Err(first_deadlock.expect("some rank failed"))
    }

    /// Snapshot of the traffic counters.
    pub fn counters(&self) -> TrafficCounters {
        self.lock().counters.clone()
    }

    pub fn trace(&self) -> Vec<TraceRecord> {
        self.lock().trace.clone().unwrap_or_default()
    }

    /// Write the trace as `step,src,dst,tag,bytes` lines.
    pub fn write_trace(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "step,src,dst,tag,bytes")?;
        for t in self.trace() {
            writeln!(out, "{},{},{},{},{}", t.step, t.src, t.dst, t.tag, t.bytes)?;
        }
        Ok(())
    }
}

struct DoneGuard<'a>(&'a Comm<'a>);

impl Drop for DoneGuard<'_> {
    fn drop(&mut self) {
        let comm = self.0;
        let mut st = comm.fabric.lock();
        st.status[comm.rank] = Status::Done;
        match comm.fabric.mode {
            ExecMode::Sequential => {
                if st.turn == Some(comm.rank) {
                    st.pass_turn(comm.rank);
                }
            }
            ExecMode::Parallel => st.check_quiescence(),
        }
        comm.fabric.shared.cv.notify_all();
    }
}

/// A rank's handle to the fabric.
pub struct Comm<'a> {
    rank: usize,
    fabric: &'a Fabric,
}

impl<'a> Comm<'a> {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.fabric.size
    }

    pub fn mode(&self) -> ExecMode {
        self.fabric.mode
    }

    fn wait<'g>(&self, guard: MutexGuard<'g, State>) -> MutexGuard<'g, State> {
        self.fabric.shared.cv.wait(guard).unwrap_or_else(|e| e.into_inner())
    }

    fn start(&self) -> Result<(), FabricError> {
        let mut st = self.fabric.lock();
        if self.fabric.mode == ExecMode::Sequential {
            while st.turn != Some(self.rank) {
                if let Some(blocked) = &st.deadlock {
                    return Err(FabricError::Deadlock { blocked: blocked.clone() });
                }
                st = self.wait(st);
            }
        }
        st.status[self.rank] = Status::Running;
        Ok(())
    }

    fn check_rank(&self, rank: usize) -> Result<(), FabricError> {
        if rank >= self.size() {
            return Err(FabricError::BadRank { rank, size: self.size() });
        }
        Ok(())
    }

    /// Buffered send; never blocks.
    pub fn send(&self, dst: usize, tag: u64, payload: Vec<u8>) -> Result<(), FabricError> {
        self.send_class(dst, tag, payload, TrafficClass::PointToPoint)
    }

    /// Blocking receive of the next message from `src` with `tag`.
    pub fn recv(&self, src: usize, tag: u64) -> Result<Vec<u8>, FabricError> {
        self.recv_class(src, tag)
    }

    pub(crate) fn send_class(
        &self,
        dst: usize,
        tag: u64,
        payload: Vec<u8>,
        class: TrafficClass,
    ) -> Result<(), FabricError> {
        self.check_rank(dst)?;
        let mut st = self.fabric.lock();
        let bytes = payload.len();
        st.counters.record_send(self.rank, bytes, class);
        let step = st.step;
        st.step += 1;
        if let Some(trace) = st.trace.as_mut() {
            trace.push(TraceRecord { step, src: self.rank, dst, tag, bytes });
        }
        st.queues.entry((self.rank, dst, tag)).or_default().push_back(Message { payload, class });
        if self.fabric.mode == ExecMode::Parallel {
            self.fabric.shared.cv.notify_all();
        }
        Ok(())
    }

    pub(crate) fn recv_class(&self, src: usize, tag: u64) -> Result<Vec<u8>, FabricError> {
        self.check_rank(src)?;
        let key = (src, self.rank, tag);
        let mut st = self.fabric.lock();
        loop {
            if let Some(blocked) = &st.deadlock {
                return Err(FabricError::Deadlock { blocked: blocked.clone() });
            }
            let my_turn = match self.fabric.mode {
                ExecMode::Sequential => st.turn == Some(self.rank),
                ExecMode::Parallel => true,
            };
            if my_turn {
                if let Some(msg) = st.queues.get_mut(&key).and_then(|q| q.pop_front()) {
                    st.status[self.rank] = Status::Running;
                    st.counters.record_recv(self.rank, msg.payload.len(), msg.class);
                    return Ok(msg.payload);
                }
                if !matches!(st.status[self.rank], Status::Blocked { .. }) {
                    st.status[self.rank] = Status::Blocked { src, tag };
                    match self.fabric.mode {
                        ExecMode::Sequential => st.pass_turn(self.rank),
                        ExecMode::Parallel => st.check_quiescence(),
                    }
                    self.fabric.shared.cv.notify_all();
                    if st.deadlock.is_some() {
                        continue;
                    }
                }
            }
            st = self.wait(st);
        }
    }

    pub fn send_values<T: Real>(&self, dst: usize, tag: u64, values: &[T]) -> Result<(), FabricError> {
        self.send(dst, tag, encode(values))
    }

    pub fn recv_values<T: Real>(&self, src: usize, tag: u64) -> Result<Vec<T>, FabricError> {
        let bytes = self.recv(src, tag)?;
        if bytes.len() % T::BYTES != 0 {
            return Err(FabricError::Malformed {
                src,
                reason: format!("{} bytes is not a whole number of {}", bytes.len(), T::NAME),
            });
        }
        Ok(decode(&bytes))
    }

    /// All ranks of the fabric, ascending.
    pub fn world(&self) -> Vec<usize> {
        (0..self.size()).collect()
    }
}
