//! Evaluation metrics computed from a completed-transmission history.
//!
//! Only `Data` records count; reservation airtime is never treated as
//! useful airtime.

use std::collections::BTreeMap;

use crate::access::Priority;
use crate::engine::{NodeId, Network, Outcome, RecordKind, SimTime, TransmissionRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeMeta {
    pub id: NodeId,
    pub network: Network,
    pub priority: Priority,
}

/// Half-open measurement window `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub start: SimTime,
    pub end: SimTime,
}

impl Window {
    pub fn new(start: SimTime, end: SimTime) -> Self {
        assert!(start < end, "empty metrics window [{start}, {end})");
        Self { start, end }
    }

    pub fn len_us(&self) -> u64 {
        (self.end - self.start).as_us()
    }

    pub fn contains(&self, t: SimTime) -> bool {
        self.start <= t && t < self.end
    }

    fn clip(&self, r: &TransmissionRecord) -> u64 {
        let s = r.start.max(self.start);
        let e = r.end.min(self.end);
        e.as_us().saturating_sub(s.as_us())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum JfiMode {
    /// Two aggregates: NR-U airtime vs Wi-Fi airtime.
    #[default]
    Network,
    /// One entry per node.
    PerNode,
}

fn data_in<'a>(
    history: &'a [TransmissionRecord],
    window: Window,
) -> impl Iterator<Item = &'a TransmissionRecord> {
    history
        .iter()
        .filter(move |r| r.kind == RecordKind::Data && window.contains(r.start))
}

/// Share of a network's data transmissions (started in the window) that
/// collided with a same-network transmission.
pub fn intra_collision_probability(
    history: &[TransmissionRecord],
    network: Network,
    window: Window,
) -> f64 {
    let (mut total, mut intra) = (0u64, 0u64);
    for r in data_in(history, window).filter(|r| r.network == network) {
        total += 1;
        if r.outcome == Outcome::IntraCollision {
            intra += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        intra as f64 / total as f64
    }
}

/// Successful data airtime per node, clipped to the window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AirtimeLedger {
    per_node: BTreeMap<NodeId, u64>,
    per_network: BTreeMap<Network, u64>,
}

impl AirtimeLedger {
    pub fn from_history(history: &[TransmissionRecord], window: Window) -> Self {
        let mut ledger = Self::default();
        for r in history
            .iter()
            .filter(|r| r.kind == RecordKind::Data && r.outcome == Outcome::Success)
        {
            let t = window.clip(r);
            if t > 0 {
                *ledger.per_node.entry(r.owner).or_default() += t;
                *ledger.per_network.entry(r.network).or_default() += t;
            }
        }
        ledger
    }

    pub fn node(&self, id: NodeId) -> u64 {
        self.per_node.get(&id).copied().unwrap_or(0)
    }

    pub fn network(&self, network: Network) -> u64 {
        self.per_network.get(&network).copied().unwrap_or(0)
    }

    pub fn nodes(&self, ids: &[NodeId]) -> u64 {
        ids.iter().map(|&id| self.node(id)).sum()
    }

    pub fn total(&self) -> u64 {
        self.per_network.values().sum()
    }
}

pub fn channel_efficiency(ledger: &AirtimeLedger, network: Network, window: Window) -> f64 {
    ledger.network(network) as f64 / window.len_us() as f64
}

pub fn nodes_efficiency(ledger: &AirtimeLedger, ids: &[NodeId], window: Window) -> f64 {
    ledger.nodes(ids) as f64 / window.len_us() as f64
}

/// Gaps between consecutive successful data starts of each listed node,
/// attributed to the window of the later start.
pub fn access_delay_samples(
    history: &[TransmissionRecord],
    nodes: &[NodeId],
    window: Window,
) -> Vec<u64> {
    let mut starts: BTreeMap<NodeId, Vec<SimTime>> =
        nodes.iter().map(|&id| (id, Vec::new())).collect();
    for r in history.iter().filter(|r| {
        r.kind == RecordKind::Data && r.outcome == Outcome::Success && r.start < window.end
    }) {
        if let Some(v) = starts.get_mut(&r.owner) {
            v.push(r.start);
        }
    }
    let mut gaps = Vec::new();
    for mut v in starts.into_values() {
        v.sort_unstable();
        gaps.extend(
            v.windows(2)
                .filter(|w| window.contains(w[1]))
                .map(|w| (w[1] - w[0]).as_us()),
        );
    }
    gaps
}

/// Pooled mean access delay in microseconds; `None` when no listed node has
/// two successes.
pub fn channel_access_delay(
    history: &[TransmissionRecord],
    nodes: &[NodeId],
    window: Window,
) -> Option<f64> {
    let gaps = access_delay_samples(history, nodes, window);
    if gaps.is_empty() {
        None
    } else {
        Some(gaps.iter().sum::<u64>() as f64 / gaps.len() as f64)
    }
}

/// PC1 share of the NR-U delay. A PC1 node without a sample, or with no PC3
/// delay to compare against, maps to the worst case 1.
pub fn pc1_delay_share(pc1: Option<f64>, pc3: Option<f64>) -> f64 {
    match (pc1, pc3) {
        (Some(d1), Some(d3)) => {
            if d1 + d3 <= 0.0 {
                0.0
            } else {
                d1 / (d1 + d3)
            }
        }
        _ => 1.0,
    }
}

/// Jain's fairness index. All-zero input is perfectly (vacuously) fair.
pub fn jain_index(x: &[f64]) -> f64 {
    assert!(!x.is_empty(), "jain index of an empty set");
    let sum: f64 = x.iter().sum();
    let sq: f64 = x.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        return 1.0;
    }
    (sum * sum / (x.len() as f64 * sq)).min(1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsSnapshot {
    pub window: Window,
    pub p_coll_nru: f64,
    pub p_coll_wifi: f64,
    pub eff_nru: f64,
    pub eff_pc3: f64,
    pub eff_wifi: f64,
    pub delay_pc1_us: Option<f64>,
    pub delay_pc3_us: Option<f64>,
    pub delay_nru_us: Option<f64>,
    pub delay_wifi_us: Option<f64>,
    /// PC1 share of the NR-U delay; `None` when the scenario has no PC1 node.
    pub d_l_pc1: Option<f64>,
    pub jfi: f64,
    pub per_node_delay_us: BTreeMap<NodeId, Option<f64>>,
}

fn ids_where(roster: &[NodeMeta], f: impl Fn(&NodeMeta) -> bool) -> Vec<NodeId> {
    roster.iter().filter(|m| f(m)).map(|m| m.id).collect()
}

pub fn snapshot(
    history: &[TransmissionRecord],
    roster: &[NodeMeta],
    window: Window,
    jfi_mode: JfiMode,
) -> MetricsSnapshot {
    let ledger = AirtimeLedger::from_history(history, window);
    let pc1 = ids_where(roster, |m| m.priority == Priority::Pc1);
    let pc3 = ids_where(roster, |m| m.priority == Priority::Pc3);
    let nru = ids_where(roster, |m| m.network == Network::Nru);
    let wifi = ids_where(roster, |m| m.network == Network::WiFi);

    let delay_pc1_us = channel_access_delay(history, &pc1, window);
    let delay_pc3_us = channel_access_delay(history, &pc3, window);
    let d_l_pc1 = (!pc1.is_empty()).then(|| pc1_delay_share(delay_pc1_us, delay_pc3_us));

    let jfi = match jfi_mode {
        JfiMode::Network => jain_index(&[
            ledger.network(Network::Nru) as f64,
            ledger.network(Network::WiFi) as f64,
        ]),
        JfiMode::PerNode => {
            let v: Vec<f64> = roster.iter().map(|m| ledger.node(m.id) as f64).collect();
            if v.is_empty() {
                1.0
            } else {
                jain_index(&v)
            }
        }
    };

    let per_node_delay_us = roster
        .iter()
        .map(|m| (m.id, channel_access_delay(history, &[m.id], window)))
        .collect();

    MetricsSnapshot {
        window,
        p_coll_nru: intra_collision_probability(history, Network::Nru, window),
        p_coll_wifi: intra_collision_probability(history, Network::WiFi, window),
        eff_nru: channel_efficiency(&ledger, Network::Nru, window),
        eff_pc3: nodes_efficiency(&ledger, &pc3, window),
        eff_wifi: channel_efficiency(&ledger, Network::WiFi, window),
        delay_pc1_us,
        delay_pc3_us,
        delay_nru_us: channel_access_delay(history, &nru, window),
        delay_wifi_us: channel_access_delay(history, &wifi, window),
        d_l_pc1,
        jfi,
        per_node_delay_us,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RecordId;
    use approx::assert_abs_diff_eq;

    fn data(owner: u32, net: Network, start: u64, dur: u64, outcome: Outcome) -> TransmissionRecord {
        TransmissionRecord {
            id: RecordId(start),
            owner: NodeId(owner),
            network: net,
            kind: RecordKind::Data,
            start: SimTime(start),
            end: SimTime(start + dur),
            outcome,
        }
    }

    fn w(a: u64, b: u64) -> Window {
        Window::new(SimTime(a), SimTime(b))
    }

    #[test]
    fn intra_probability_examples() {
        let mut h: Vec<_> = (0..10)
            .map(|i| {
                let o = if i < 3 { Outcome::IntraCollision } else { Outcome::Success };
                data(i, Network::Nru, i as u64 * 3000, 2000, o)
            })
            .collect();
        assert_abs_diff_eq!(intra_collision_probability(&h, Network::Nru, w(0, 100_000)), 0.3);
        assert_eq!(intra_collision_probability(&[], Network::Nru, w(0, 10)), 0.0);
        h = vec![
            data(0, Network::Nru, 0, 2000, Outcome::CrossCollision),
            data(1, Network::Nru, 3000, 2000, Outcome::CrossCollision),
            data(0, Network::Nru, 6000, 2000, Outcome::Success),
            data(1, Network::Nru, 9000, 2000, Outcome::Success),
        ];
        assert_eq!(intra_collision_probability(&h, Network::Nru, w(0, 100_000)), 0.0);
    }

    #[test]
    fn efficiency_examples() {
        let h = vec![
            data(0, Network::WiFi, 0, 2000, Outcome::Success),
            data(1, Network::WiFi, 5000, 2000, Outcome::Success),
        ];
        let win = w(0, 10_000);
        let l = AirtimeLedger::from_history(&h, win);
        assert_abs_diff_eq!(channel_efficiency(&l, Network::WiFi, win), 0.4);
        let l = AirtimeLedger::from_history(&[], win);
        assert_eq!(channel_efficiency(&l, Network::Nru, win), 0.0);
    }

    #[test]
    fn saturated_single_node_efficiency() {
        // 2000us data followed by 43us defer, zero backoff
        let h: Vec<_> = (0..1000)
            .map(|i| data(0, Network::WiFi, 43 + i * 2043, 2000, Outcome::Success))
            .collect();
        let win = w(0, 1000 * 2043);
        let l = AirtimeLedger::from_history(&h, win);
        let e = channel_efficiency(&l, Network::WiFi, win);
        assert_abs_diff_eq!(e, 2000.0 / 2043.0, epsilon = 1e-3);
        assert_abs_diff_eq!(e, 0.979, epsilon = 1e-3);
    }

    #[test]
    fn reservations_not_airtime() {
        let mut r = data(0, Network::Nru, 0, 500, Outcome::Success);
        r.kind = RecordKind::Reservation;
        let l = AirtimeLedger::from_history(&[r], w(0, 1000));
        assert_eq!(l.total(), 0);
    }

    #[test]
    fn delay_examples() {
        let h = vec![
            data(0, Network::Nru, 1000, 100, Outcome::Success),
            data(0, Network::Nru, 3000, 100, Outcome::Success),
            data(0, Network::Nru, 6000, 100, Outcome::Success),
        ];
        let win = w(0, 10_000);
        assert_eq!(channel_access_delay(&h, &[NodeId(0)], win), Some(2500.0));
        assert_eq!(channel_access_delay(&h[..1], &[NodeId(0)], win), None);

        let h = vec![
            data(0, Network::Nru, 0, 100, Outcome::Success),
            data(1, Network::Nru, 500, 100, Outcome::Success),
            data(0, Network::Nru, 2000, 100, Outcome::Success),
            data(1, Network::Nru, 4500, 100, Outcome::Success),
        ];
        assert_eq!(channel_access_delay(&h, &[NodeId(0), NodeId(1)], win), Some(3000.0));
    }

    #[test]
    fn delay_gap_attributed_to_later_start() {
        let h = vec![
            data(0, Network::Nru, 1000, 100, Outcome::Success),
            data(0, Network::Nru, 12_000, 100, Outcome::Success),
        ];
        assert_eq!(channel_access_delay(&h, &[NodeId(0)], w(10_000, 20_000)), Some(11_000.0));
        assert_eq!(channel_access_delay(&h, &[NodeId(0)], w(0, 10_000)), None);
    }

    #[test]
    fn pc1_share_examples() {
        assert_abs_diff_eq!(pc1_delay_share(Some(1000.0), Some(3000.0)), 0.25);
        assert_eq!(pc1_delay_share(None, Some(3000.0)), 1.0);
        assert_abs_diff_eq!(pc1_delay_share(Some(2000.0), Some(2000.0)), 0.5);
        assert_eq!(pc1_delay_share(Some(1000.0), None), 1.0);
        assert_eq!(pc1_delay_share(Some(0.0), Some(0.0)), 0.0);
    }

    #[test]
    fn jain_examples() {
        assert_abs_diff_eq!(jain_index(&[1.0, 1.0]), 1.0);
        assert_abs_diff_eq!(jain_index(&[1.0, 0.0]), 0.5);
        assert_abs_diff_eq!(jain_index(&[2.0, 1.0, 1.0]), 16.0 / 18.0, epsilon = 1e-12);
        assert_eq!(jain_index(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn snapshot_roster_split() {
        let roster = [
            NodeMeta { id: NodeId(0), network: Network::Nru, priority: Priority::Pc1 },
            NodeMeta { id: NodeId(1), network: Network::Nru, priority: Priority::Pc3 },
            NodeMeta { id: NodeId(2), network: Network::WiFi, priority: Priority::WiFiBe },
        ];
        let h = vec![
            data(0, Network::Nru, 0, 2000, Outcome::Success),
            data(1, Network::Nru, 2000, 2000, Outcome::Success),
            data(2, Network::WiFi, 4000, 2000, Outcome::Success),
            data(0, Network::Nru, 6000, 2000, Outcome::Success),
            data(1, Network::Nru, 12_000, 2000, Outcome::Success),
        ];
        let s = snapshot(&h, &roster, w(0, 20_000), JfiMode::Network);
        assert_abs_diff_eq!(s.eff_nru, 8000.0 / 20_000.0);
        assert_abs_diff_eq!(s.eff_pc3, 4000.0 / 20_000.0);
        assert_abs_diff_eq!(s.eff_wifi, 2000.0 / 20_000.0);
        assert_eq!(s.delay_pc1_us, Some(6000.0));
        assert_eq!(s.delay_pc3_us, Some(10_000.0));
        assert_abs_diff_eq!(s.d_l_pc1.unwrap(), 0.375);
        assert_abs_diff_eq!(s.jfi, jain_index(&[8000.0, 2000.0]));
        assert_eq!(s.delay_wifi_us, None);
        let p = snapshot(&h, &roster, w(0, 20_000), JfiMode::PerNode);
        assert_abs_diff_eq!(p.jfi, jain_index(&[4000.0, 4000.0, 2000.0]));
    }
}
