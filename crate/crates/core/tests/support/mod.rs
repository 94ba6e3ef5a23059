//! Independent re-implementations used as oracles by the integration tests.
//! Nothing here calls into the code under test except for plain data types.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

/// One trace line, parsed from text.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceLine {
    pub start: u64,
    pub end: u64,
    pub owner: u32,
    pub network: String,
    pub kind: String,
    pub outcome: String,
}

pub fn parse_trace(text: &str) -> Vec<TraceLine> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("start_us,end_us,owner,network,kind,outcome"));
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 6, "bad trace line {l:?}");
            TraceLine {
                start: f[0].parse().unwrap(),
                end: f[1].parse().unwrap(),
                owner: f[2].parse().unwrap(),
                network: f[3].to_string(),
                kind: f[4].to_string(),
                outcome: f[5].to_string(),
            }
        })
        .collect()
}

/// Pairwise outcome of interval `i`: any other-owner overlap in the same
/// network wins over an other-network overlap.
pub fn brute_force_outcomes(iv: &[(u32, u8, u64, u64)]) -> Vec<&'static str> {
    (0..iv.len())
        .map(|i| {
            let (oi, ni, si, ei) = iv[i];
            let mut intra = false;
            let mut cross = false;
            for (j, &(oj, nj, sj, ej)) in iv.iter().enumerate() {
                if i == j || oi == oj {
                    continue;
                }
                if si < ej && sj < ei {
                    if ni == nj {
                        intra = true;
                    } else {
                        cross = true;
                    }
                }
            }
            if intra {
                "intra"
            } else if cross {
                "cross"
            } else {
                "success"
            }
        })
        .collect()
}

/// Metrics recomputed straight from a trace over `[0, horizon)`.
#[derive(Debug, PartialEq)]
pub struct OracleMetrics {
    pub p_coll: BTreeMap<String, f64>,
    pub eff: BTreeMap<String, f64>,
    pub delay: Option<f64>,
    pub jfi: f64,
}

/// `delay_owners` selects whose access delay to pool.
pub fn oracle_metrics(trace: &[TraceLine], horizon: u64, delay_owners: &[u32]) -> OracleMetrics {
    let mut p_coll = BTreeMap::new();
    let mut eff = BTreeMap::new();
    let mut air = BTreeMap::new();
    for net in ["nru", "wifi"] {
        let data: Vec<&TraceLine> = trace
            .iter()
            .filter(|t| t.network == net && t.kind == "data" && t.start < horizon)
            .collect();
        let intra = data.iter().filter(|t| t.outcome == "intra").count();
        p_coll.insert(net.to_string(), if data.is_empty() { 0.0 } else { intra as f64 / data.len() as f64 });
        let a: u64 = trace
            .iter()
            .filter(|t| t.network == net && t.kind == "data" && t.outcome == "success")
            .map(|t| t.end.min(horizon).saturating_sub(t.start))
            .sum();
        air.insert(net, a);
        eff.insert(net.to_string(), a as f64 / horizon as f64);
    }
    let mut gaps: Vec<u64> = Vec::new();
    for &o in delay_owners {
        let mut starts: Vec<u64> = trace
            .iter()
            .filter(|t| t.owner == o && t.kind == "data" && t.outcome == "success")
            .map(|t| t.start)
            .collect();
        starts.sort_unstable();
        for w in starts.windows(2) {
            if w[1] < horizon {
                gaps.push(w[1] - w[0]);
            }
        }
    }
    let delay = (!gaps.is_empty()).then(|| gaps.iter().sum::<u64>() as f64 / gaps.len() as f64);
    let (x, y) = (air["nru"] as f64, air["wifi"] as f64);
    let jfi = if x == 0.0 && y == 0.0 { 1.0 } else { (x + y) * (x + y) / (2.0 * (x * x + y * y)) };
    OracleMetrics { p_coll, eff, delay, jfi }
}

/// Rectifier MLP forward pass with nalgebra, from flat row-major parameters.
pub fn nalgebra_forward(sizes: &[usize], params: &[f64], x: &[f64]) -> Vec<f64> {
    let mut a = DVector::from_column_slice(x);
    let mut off = 0;
    let layers = sizes.len() - 1;
    for l in 0..layers {
        let (i, o) = (sizes[l], sizes[l + 1]);
        let w = DMatrix::from_row_slice(o, i, &params[off..off + i * o]);
        off += i * o;
        let b = DVector::from_column_slice(&params[off..off + o]);
        off += o;
        a = w * a + b;
        if l + 1 < layers {
            a = a.map(|v| v.max(0.0));
        }
    }
    a.iter().copied().collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Coefficient of determination of the least-squares line through (x, y).
pub fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}
