//! The switch: one flow table, ports, the SYN-proxy flag and the arrival
//! statistics the controller polls.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use super::event::SimTime;
use super::table::FlowTable;
use super::types::PacketHeader;
use super::SwitchId;

/// Key identifying an exact flow for statistics purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct FlowStatKey {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
}

impl FlowStatKey {
    pub fn of(header: &PacketHeader) -> Self {
        FlowStatKey {
            src: header.src,
            dst: header.dst,
            src_port: header.src_port,
            dst_port: header.dst_port,
        }
    }
}

/// Ring of time buckets used for windowed rates.
#[derive(Debug, Clone, Default)]
pub struct BucketRing {
    /// (bucket index, value) pairs; old buckets are pruned lazily.
    buckets: BTreeMap<u64, u64>,
    pub total: u64,
}

impl BucketRing {
    pub fn add(&mut self, bucket: u64, amount: u64) {
        *self.buckets.entry(bucket).or_insert(0) += amount;
        self.total += amount;
    }

    /// Sum over the complete buckets in `[from_bucket, to_bucket)`. The
    /// bucket containing the query instant is still filling and is left out.
    pub fn window_sum(&self, from_bucket: u64, to_bucket: u64) -> u64 {
        if from_bucket >= to_bucket {
            return 0;
        }
        self.buckets
            .range(from_bucket..to_bucket)
            .map(|(_, v)| v)
            .sum()
    }

    pub fn prune_before(&mut self, bucket: u64) {
        self.buckets.retain(|&b, _| b >= bucket);
    }
}

/// A single-table OpenFlow-style switch.
#[derive(Debug)]
pub struct Switch {
    pub id: SwitchId,
    pub table: FlowTable,
    pub syn_proxy_enabled: bool,
    /// Per-exact-flow byte counters in 100 ms buckets, polled for
    /// aggregation thresholds.
    pub flow_bytes: BTreeMap<FlowStatKey, BucketRing>,
    /// Per-exact-flow cumulative bytes.
    pub flow_cumulative: BTreeMap<FlowStatKey, u64>,
    /// Per-source packet counters in 100 ms buckets, polled for DoS
    /// thresholds.
    pub src_packets: BTreeMap<Ipv4Addr, BucketRing>,
}

/// Width of one statistics bucket in microseconds (100 ms).
pub const STAT_BUCKET_US: u64 = 100_000;

impl Switch {
    pub fn new(id: SwitchId, capacity: usize, syn_proxy_enabled: bool) -> Self {
        Switch {
            id,
            table: FlowTable::new(capacity),
            syn_proxy_enabled,
            flow_bytes: BTreeMap::new(),
            flow_cumulative: BTreeMap::new(),
            src_packets: BTreeMap::new(),
        }
    }

    /// Records an arrival in the statistics counters.
    pub fn record_arrival(&mut self, header: &PacketHeader, size: u64, now: SimTime) {
        let bucket = now.micros() / STAT_BUCKET_US;
        let key = FlowStatKey::of(header);
        self.flow_bytes.entry(key).or_default().add(bucket, size);
        *self.flow_cumulative.entry(key).or_insert(0) += size;
        self.src_packets
            .entry(header.src)
            .or_default()
            .add(bucket, 1);
    }

    /// Bytes seen for `key` in the trailing window ending at `now`.
    pub fn flow_rate_bytes_per_sec(&self, key: &FlowStatKey, now: SimTime, window_us: u64) -> f64 {
        let Some(ring) = self.flow_bytes.get(key) else {
            return 0.0;
        };
        let to_bucket = now.micros() / STAT_BUCKET_US;
        let from_bucket = to_bucket.saturating_sub(window_us / STAT_BUCKET_US);
        let bytes = ring.window_sum(from_bucket, to_bucket);
        bytes as f64 / (window_us as f64 / 1e6)
    }

    /// Packets from `src` in the trailing window ending at `now`.
    pub fn src_packets_per_sec(&self, src: Ipv4Addr, now: SimTime, window_us: u64) -> f64 {
        let Some(ring) = self.src_packets.get(&src) else {
            return 0.0;
        };
        let to_bucket = now.micros() / STAT_BUCKET_US;
        let from_bucket = to_bucket.saturating_sub(window_us / STAT_BUCKET_US);
        let packets = ring.window_sum(from_bucket, to_bucket);
        packets as f64 / (window_us as f64 / 1e6)
    }

    pub fn cumulative_bytes(&self, key: &FlowStatKey) -> u64 {
        self.flow_cumulative.get(key).copied().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::types::{IpProto, TcpFlags};

    fn header() -> PacketHeader {
        PacketHeader {
            src: [10, 0, 0, 1].into(),
            dst: [10, 0, 1, 1].into(),
            proto: IpProto::Tcp,
            src_port: 4000,
            dst_port: 80,
            tcp_flags: TcpFlags::ACK,
            tenant_tag: None,
        }
    }

    #[test]
    fn windowed_rate_counts_recent_buckets_only() {
        let mut sw = Switch::new(1, 100, false);
        let h = header();
        // 10 packets of 1250 bytes in the first second
        for i in 0..10 {
            sw.record_arrival(&h, 1250, SimTime::from_micros(i * 100_000));
        }
        let key = FlowStatKey::of(&h);
        // window [0.0s, 1.0s): all ten arrivals land in complete buckets
        let rate = sw.flow_rate_bytes_per_sec(&key, SimTime::from_secs_f64(1.0), 1_000_000);
        assert_eq!(rate, 10.0 * 1250.0);
        // much later the window is empty
        let rate = sw.flow_rate_bytes_per_sec(&key, SimTime::from_secs_f64(10.0), 1_000_000);
        assert_eq!(rate, 0.0);
        assert_eq!(sw.cumulative_bytes(&key), 12_500);
    }

    #[test]
    fn per_source_packet_rate() {
        let mut sw = Switch::new(1, 100, false);
        let h = header();
        for i in 0..50 {
            sw.record_arrival(&h, 60, SimTime::from_micros(200_000 + i * 10_000));
        }
        let pps = sw.src_packets_per_sec(h.src, SimTime::from_secs_f64(1.0), 1_000_000);
        assert!(pps > 40.0, "expected ~50 pps, got {pps}");
    }
}
