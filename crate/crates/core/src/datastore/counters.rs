use std::collections::BTreeMap;
use std::sync::Mutex;

/// File and exchange traffic of one epoch (or a whole run).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EpochIo {
    /// Payload bytes read from sample files; headers are not counted.
    pub file_bytes_read: u64,
    pub file_opens: u64,
    /// Hyperslab bytes shipped between ranks.
    pub exchange_bytes: u64,
}

impl EpochIo {
    fn add(&mut self, o: EpochIo) {
        self.file_bytes_read += o.file_bytes_read;
        self.file_opens += o.file_opens;
        self.exchange_bytes += o.exchange_bytes;
    }
}

/// I/O counters shared by every rank of a run.
#[derive(Debug, Default)]
pub struct IoCounters {
    per_epoch: Mutex<BTreeMap<usize, EpochIo>>,
}

impl IoCounters {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, epoch: usize, delta: EpochIo) {
        self.per_epoch.lock().unwrap_or_else(|e| e.into_inner()).entry(epoch).or_default().add(delta);
    }

    pub fn record_read(&self, epoch: usize, bytes: u64) {
        self.record(epoch, EpochIo { file_bytes_read: bytes, ..Default::default() });
    }

    pub fn record_open(&self, epoch: usize) {
        self.record(epoch, EpochIo { file_opens: 1, ..Default::default() });
    }

    pub fn record_exchange(&self, epoch: usize, bytes: u64) {
        self.record(epoch, EpochIo { exchange_bytes: bytes, ..Default::default() });
    }

    pub fn epoch(&self, epoch: usize) -> EpochIo {
        self.per_epoch.lock().unwrap_or_else(|e| e.into_inner()).get(&epoch).copied().unwrap_or_default()
    }

    pub fn per_epoch(&self) -> BTreeMap<usize, EpochIo> {
        self.per_epoch.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn total(&self) -> EpochIo {
        let mut t = EpochIo::default();
        for v in self.per_epoch().into_values() {
            t.add(v);
        }
        t
    }
}
