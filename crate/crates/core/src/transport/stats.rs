use std::sync::Mutex;

use crate::transport::message::Tag;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TagStats {
    pub messages: u64,
    pub units: u64,
}

/// Counts of data messages and payload units, in total and per tag.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MessageStats {
    pub message_count: u64,
    pub data_units: u64,
    pub per_tag: [TagStats; 9],
}

impl MessageStats {
    pub fn tag(&self, tag: Tag) -> TagStats {
        self.per_tag[tag.code() as usize]
    }

    pub fn record(&mut self, tag: Tag, units: usize) {
        let entry = &mut self.per_tag[tag.code() as usize];
        entry.messages += 1;
        entry.units += units as u64;
        self.message_count += 1;
        self.data_units += units as u64;
    }

    /// Traffic accumulated since `earlier`.
    pub fn since(&self, earlier: &MessageStats) -> MessageStats {
        let mut per_tag = [TagStats::default(); 9];
        for (i, t) in per_tag.iter_mut().enumerate() {
            t.messages = self.per_tag[i].messages - earlier.per_tag[i].messages;
            t.units = self.per_tag[i].units - earlier.per_tag[i].units;
        }
        MessageStats {
            message_count: self.message_count - earlier.message_count,
            data_units: self.data_units - earlier.data_units,
            per_tag,
        }
    }

    /// Sum of two tallies.
    pub fn plus(&self, other: &MessageStats) -> MessageStats {
        let mut out = *self;
        for (t, o) in out.per_tag.iter_mut().zip(&other.per_tag) {
            t.messages += o.messages;
            t.units += o.units;
        }
        out.message_count += other.message_count;
        out.data_units += other.data_units;
        out
    }

    /// True when the totals equal the sum of the per-tag entries.
    pub fn is_consistent(&self) -> bool {
        let (m, u) = self
            .per_tag
            .iter()
            .fold((0, 0), |(m, u), t| (m + t.messages, u + t.units));
        m == self.message_count && u == self.data_units
    }
}

/// Shared counter updated by every endpoint of one transport.
#[derive(Debug, Default)]
pub struct StatsCounter(Mutex<MessageStats>);

impl StatsCounter {
    pub fn record(&self, tag: Tag, units: usize) {
        self.0.lock().expect("stats lock").record(tag, units);
    }

    pub fn snapshot(&self) -> MessageStats {
        *self.0.lock().expect("stats lock")
    }

    pub fn reset(&self) -> MessageStats {
        std::mem::take(&mut *self.0.lock().expect("stats lock"))
    }
}
