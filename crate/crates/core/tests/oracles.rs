//! Property tests and oracle cross-checks.

mod support;

use std::fs;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coexsim::access::{cr_contention, mute_plan, ProtocolKind};
use coexsim::config::{parse_config, ScenarioConfig};
use coexsim::engine::{trace_hash, ChannelTimeline, Network, NodeId, RecordKind, SimTime};
use coexsim::experiment::{run_compare, write_rows};
use coexsim::metrics::{jain_index, JfiMode};
use coexsim::priority::{update_skip_level, SkipLevel};
use coexsim::rl::{argmax, reward, AgentRole, DqnAgent, DqnParams, DqnState, Experience, Mlp, ReplayBuffer, STATE_DIM};
use coexsim::sim::Simulation;
use support::*;

/// Feeds intervals through the channel timeline in event order.
fn engine_outcomes(iv: &[(u32, u8, u64, u64)]) -> Vec<&'static str> {
    let mut events: Vec<(u64, bool, usize)> = Vec::new();
    for (i, &(_, _, s, e)) in iv.iter().enumerate() {
        events.push((s, true, i));
        events.push((e, false, i));
    }
    // at equal times ends go first: intervals are half-open
    events.sort_by_key(|&(t, is_start, i)| (t, is_start, i));
    let mut ch = ChannelTimeline::new();
    let mut ids = vec![None; iv.len()];
    let mut out = vec![""; iv.len()];
    for (_, is_start, i) in events {
        let (owner, net, s, e) = iv[i];
        let network = if net == 0 { Network::Nru } else { Network::WiFi };
        if is_start {
            ids[i] = Some(ch.begin_transmission(NodeId(owner), network, RecordKind::Data, SimTime(s), e - s).unwrap());
        } else {
            out[i] = ch.complete(ids[i].unwrap()).unwrap().outcome.as_str();
        }
    }
    out
}

fn intervals() -> impl Strategy<Value = Vec<(u32, u8, u64, u64)>> {
    prop::collection::vec((0u32..8, 0u64..200, 1u64..60), 1..14).prop_map(|v| {
        v.into_iter()
            .map(|(owner, start, len)| (owner, (owner % 2) as u8, start, start + len))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn collisions_match_pairwise_oracle(iv in intervals()) {
        prop_assert_eq!(engine_outcomes(&iv), brute_force_outcomes(&iv));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn jain_bounds_and_scale(x in prop::collection::vec(0.0f64..1e6, 1..20), c in 1e-3f64..1e3) {
        prop_assume!(x.iter().any(|v| *v > 0.0));
        let n = x.len() as f64;
        let j = jain_index(&x);
        prop_assert!(j >= 1.0 / n - 1e-12 && j <= 1.0);
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        prop_assert!((jain_index(&scaled) - j).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cr_survivors_are_contenders(n in 1usize..8, n_sl in 1usize..6, seed in any::<u64>(), busy in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = ProtocolKind::GcrLbt { n_sl, p_rs: 0.5 };
        let contenders: Vec<(NodeId, Vec<bool>)> =
            (0..n).map(|i| (NodeId(i as u32), mute_plan(&p, 0, &mut rng))).collect();
        let slots: Vec<usize> = (0..n_sl).collect();
        let r = cr_contention(&contenders, &slots, |_| busy);
        prop_assert!(r.survivors.iter().all(|s| contenders.iter().any(|(c, _)| c == s)));
        prop_assert_eq!(r.survivors.len() + r.deferred.len(), n);
        if n == 1 && !busy {
            prop_assert_eq!(r.survivors, vec![NodeId(0)]);
        }
    }

    #[test]
    fn skip_level_monotone_above_target(delays in prop::collection::vec(501.0f64..1e5, 1..30), start in 0u8..=4) {
        let mut l = SkipLevel::new(start).unwrap();
        for d in delays {
            let next = update_skip_level(l, Some(d), 500.0, 0.5);
            prop_assert!(next >= l);
            l = next;
        }
    }

    #[test]
    fn argmax_invariant_under_scaling(q in prop::collection::vec(-10.0f64..10.0, 7), c in 1e-3f64..1e3) {
        let scaled: Vec<f64> = q.iter().map(|v| v * c).collect();
        prop_assert_eq!(argmax(&q), argmax(&scaled));
    }

    #[test]
    fn reward_monotone(alpha in 0.5f64..1.0, d in 0.0f64..0.99, j in 0.0f64..0.99, e in 0.001f64..0.01) {
        prop_assert!(reward(alpha, d + e, j) < reward(alpha, d, j));
        if alpha < 1.0 {
            prop_assert!(reward(alpha, d, j + e) > reward(alpha, d, j));
        }
        let r = reward(alpha, d, j);
        prop_assert!((0.0..=1.0).contains(&r));
    }
}

#[test]
fn reward_ignores_fairness_at_alpha_one() {
    for d in [0.0, 0.3, 1.0] {
        assert_eq!(reward(1.0, d, 0.0), reward(1.0, d, 1.0));
    }
}

const ALL: [&str; 8] = [
    "rs-lbt",
    "gap-lbt",
    "gap-lbt-desync",
    "cr-lbt",
    "ecr-lbt",
    "gcr-lbt",
    "db-lbt",
    "db-lbt-both",
];

fn small_config(extra: &str) -> ScenarioConfig {
    parse_config(&format!("sim_time = 0.5\nruns = 2\n{extra}")).unwrap()
}

#[test]
fn simulated_histories_are_physical() {
    let cfg = small_config("");
    for name in ALL {
        let nru = cfg.protocols.protocol(name).unwrap();
        for n in [1, 4, 9] {
            for seed in 0..3 {
                let sc = cfg.build_scenario(nru, cfg.wifi_for(name), 0, n, n, seed);
                let out = Simulation::new(&sc).unwrap().run().unwrap();
                let h = &out.history;
                assert!(h.iter().all(|r| r.outcome.as_str() != "pending"));
                let mut ok: Vec<_> = h.iter().filter(|r| r.outcome.as_str() == "success").collect();
                ok.sort_by_key(|r| r.start);
                assert!(ok.windows(2).all(|w| w[0].end <= w[1].start), "{name}: overlapping successes");
                let m = out.metrics(JfiMode::Network);
                assert!(m.eff_nru + m.eff_wifi <= 1.0 + 1e-12);
                for v in [m.p_coll_nru, m.p_coll_wifi, m.eff_nru, m.eff_pc3, m.eff_wifi, m.jfi] {
                    assert!((0.0..=1.0).contains(&v));
                }
                if matches!(nru, ProtocolKind::RsLbt | ProtocolKind::GcrLbt { .. } | ProtocolKind::CrLbt { .. } | ProtocolKind::GapLbt { desync: false }) {
                    for r in h.iter().filter(|r| r.network == Network::Nru && r.kind == RecordKind::Data) {
                        assert_eq!(r.start.as_us() % 500, 0, "{name}: data off the slot grid");
                    }
                }
            }
        }
    }
}

#[test]
fn trace_recomputation_matches_engine_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&format!(
        "trace = {:?}\n[compare]\nprotocols = {:?}\nn = [3, 8]\n",
        dir.path().display().to_string(),
        ALL
    ));
    let rows = run_compare(&cfg).unwrap();
    assert_eq!(rows.len(), ALL.len() * 2 * 2);
    for r in &rows {
        let file = dir.path().join(format!("{}_nru{}_wifi{}_none_s{}.csv", r.protocol, r.n_nrus, r.n_wifi, r.seed));
        let trace = parse_trace(&fs::read_to_string(&file).unwrap());
        let owners: Vec<u32> = (0..r.n_nrus).collect();
        let o = oracle_metrics(&trace, 500_000, &owners);
        assert_eq!(o.p_coll["nru"], r.p_coll_nru, "{file:?}");
        assert_eq!(o.p_coll["wifi"], r.p_coll_wifi, "{file:?}");
        assert_eq!(o.eff["nru"], r.eff_nru, "{file:?}");
        assert_eq!(o.eff["wifi"], r.eff_wifi, "{file:?}");
        assert_eq!(o.delay, r.delay_pc3_us, "{file:?}");
        assert_eq!(o.jfi, r.jfi, "{file:?}");
    }
}

#[test]
fn identical_invocations_give_identical_bytes() {
    let cfg = small_config("[compare]\nprotocols = [\"gcr-lbt\", \"db-lbt\"]\nn = [2, 6]\n");
    let render = |c: &ScenarioConfig| {
        let mut buf = Vec::new();
        write_rows(&mut buf, &run_compare(c).unwrap()).unwrap();
        buf
    };
    let a = render(&cfg);
    assert_eq!(a, render(&cfg));
    let header = String::from_utf8(a.clone()).unwrap();
    assert!(header.starts_with(
        "protocol,n_nrus,n_wifi,n_pc3,alpha,seed,window_start_us,p_coll_nru,p_coll_wifi,eff_nru,eff_pc3,eff_wifi,delay_pc1_us,delay_pc3_us,delay_wifi_us,d_l_pc1,jfi"
    ));
    let mut other = cfg.clone();
    other.seed = 99;
    assert_ne!(a, render(&other));
}

#[test]
fn trace_hash_is_seed_determined() {
    let cfg = small_config("");
    for name in ALL {
        let p = cfg.protocols.protocol(name).unwrap();
        let sc = cfg.build_scenario(p, cfg.wifi_for(name), 1, 4, 5, 7);
        let a = trace_hash(&Simulation::new(&sc).unwrap().run().unwrap().history);
        let b = trace_hash(&Simulation::new(&sc).unwrap().run().unwrap().history);
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn forward_matches_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let net = Mlp::new(&[5, 128, 64, 7], &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.gen()).collect();
        let ours = net.forward(&x);
        let theirs = nalgebra_forward(net.sizes(), net.params(), &x);
        for (a, b) in ours.iter().zip(&theirs) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(100);
    for i in 0..100 {
        buf.push(Experience {
            state: [i as f64; STATE_DIM],
            action: 0,
            reward: 0.0,
            next_state: [0.0; STATE_DIM],
            terminal: false,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut counts = [0f64; 100];
    for i in buf.sample_indices(&mut rng, 100_000) {
        counts[i] += 1.0;
    }
    let chi2: f64 = counts.iter().map(|c| (c - 1000.0).powi(2) / 1000.0).sum();
    // chi-square 99 dof, upper 1% point
    assert!(chi2 < 134.64, "chi2 = {chi2}");
}

#[test]
fn training_is_deterministic() {
    let cfg = small_config("[dqn]\ntrain_interactions = 60\nk = 3\n");
    let sc = cfg.build_scenario(
        cfg.protocols.protocol("gcr-lbt").unwrap(),
        ProtocolKind::Edca,
        1,
        3,
        3,
        4,
    );
    let settings = coexsim::rl::InteractionSettings { alpha: 0.75, period_us: 10_000, obs_periods: 1, jfi_mode: JfiMode::Network };
    let (a, ca) = coexsim::rl::train(&sc, &settings, &DqnParams::default(), 60).unwrap();
    let (b, cb) = coexsim::rl::train(&sc, &settings, &DqnParams::default(), 60).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(ca.len(), 60);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.net, y.net);
    }
}

#[test]
fn td_update_moves_q_towards_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = DqnParams { gamma: 0.0, lr: 1e-2, ..DqnParams::default() };
    let mut agent = DqnAgent::new(AgentRole::Gnb, params, &mut rng);
    let s = DqnState { e_w: 0.2, e_l_pc3: 0.3, d_l_pc1: 0.4, cw_w_norm: 0.5, cw_l_norm: 0.6 };
    for _ in 0..32 {
        agent.remember(Experience { state: s.to_array(), action: 2, reward: 0.9, next_state: s.to_array(), terminal: false });
    }
    for _ in 0..300 {
        agent.learn(&mut rng);
    }
    assert!((agent.q_values(&s)[2] - 0.9).abs() < 1e-3);
}
