/// What a message was sent for. Every byte is also counted in the plain
/// sent/received totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrafficClass {
    PointToPoint,
    Halo,
    Allreduce,
    Redistribute,
    DataExchange,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 5] = [
        TrafficClass::PointToPoint,
        TrafficClass::Halo,
        TrafficClass::Allreduce,
        TrafficClass::Redistribute,
        TrafficClass::DataExchange,
    ];

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RankTraffic {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub messages_sent: u64,
    pub messages_received: u64,
    pub allreduce_calls: u64,
    pub allreduce_elements: u64,
    class_sent: [u64; 5],
    class_received: [u64; 5],
}

impl RankTraffic {
    pub fn class_bytes_sent(&self, class: TrafficClass) -> u64 {
        self.class_sent[class.slot()]
    }

    pub fn class_bytes_received(&self, class: TrafficClass) -> u64 {
        self.class_received[class.slot()]
    }

    pub fn halo_bytes_sent(&self) -> u64 {
        self.class_bytes_sent(TrafficClass::Halo)
    }

    pub fn halo_bytes_received(&self) -> u64 {
        self.class_bytes_received(TrafficClass::Halo)
    }
}

/// Per-rank traffic totals of a [`Fabric`](super::Fabric).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrafficCounters {
    pub ranks: Vec<RankTraffic>,
}

impl TrafficCounters {
    pub(crate) fn new(size: usize) -> Self {
        TrafficCounters { ranks: vec![RankTraffic::default(); size] }
    }

    pub(crate) fn record_send(&mut self, src: usize, bytes: usize, class: TrafficClass) {
        let r = &mut self.ranks[src];
        r.bytes_sent += bytes as u64;
        r.messages_sent += 1;
        r.class_sent[class.slot()] += bytes as u64;
    }

    pub(crate) fn record_recv(&mut self, dst: usize, bytes: usize, class: TrafficClass) {
        let r = &mut self.ranks[dst];
        r.bytes_received += bytes as u64;
        r.messages_received += 1;
        r.class_received[class.slot()] += bytes as u64;
    }

    pub(crate) fn record_allreduce(&mut self, rank: usize, elements: usize) {
        let r = &mut self.ranks[rank];
        r.allreduce_calls += 1;
        r.allreduce_elements += elements as u64;
    }

    pub fn total_sent(&self) -> u64 {
        self.ranks.iter().map(|r| r.bytes_sent).sum()
    }

    pub fn total_received(&self) -> u64 {
        self.ranks.iter().map(|r| r.bytes_received).sum()
    }

    pub fn total_messages(&self) -> u64 {
        self.ranks.iter().map(|r| r.messages_sent).sum()
    }

    /// Bytes sent across all ranks for one traffic class.
    pub fn class_bytes(&self, class: TrafficClass) -> u64 {
        self.ranks.iter().map(|r| r.class_bytes_sent(class)).sum()
    }

    pub fn halo_bytes(&self) -> u64 {
        self.class_bytes(TrafficClass::Halo)
    }

    /// Field-wise difference `self - earlier`.
    pub fn since(&self, earlier: &TrafficCounters) -> TrafficCounters {
        let ranks = self
            .ranks
            .iter()
            .zip(&earlier.ranks)
            .map(|(a, b)| RankTraffic {
                bytes_sent: a.bytes_sent - b.bytes_sent,
                bytes_received: a.bytes_received - b.bytes_received,
                messages_sent: a.messages_sent - b.messages_sent,
                messages_received: a.messages_received - b.messages_received,
                allreduce_calls: a.allreduce_calls - b.allreduce_calls,
                allreduce_elements: a.allreduce_elements - b.allreduce_elements,
                class_sent: std::array::from_fn(|i| a.class_sent[i] - b.class_sent[i]),
                class_received: std::array::from_fn(|i| a.class_received[i] - b.class_received[i]),
            })
            .collect();
        TrafficCounters { ranks }
    }
}
