use rand::Rng;

use super::adam::Adam;
use super::mlp::{Mlp, Sample};
use super::replay::{Experience, ReplayBuffer, STATE_DIM};
use crate::metrics::MetricsSnapshot;

pub const N_ACTIONS: usize = 7;
pub const LAYERS: [usize; 4] = [STATE_DIM, 128, 64, N_ACTIONS];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentRole {
    /// Controls the PC3 contention window of the NR-U network.
    Gnb,
    /// Controls the Wi-Fi contention window.
    Ap,
}

impl AgentRole {
    pub fn as_u8(self) -> u8 {
        match self {
            AgentRole::Gnb => 0,
            AgentRole::Ap => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(AgentRole::Gnb),
            1 => Some(AgentRole::Ap),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DqnParams {
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of all iterations over which ε decays.
    pub eps_decay_fraction: f64,
    /// Copy the online network into a target network every this many
    /// updates; 0 bootstraps from the online network.
    pub target_update: u64,
}

impl Default for DqnParams {
    fn default() -> Self {
        Self {
            gamma: 0.7,
            lr: 1e-3,
            batch_size: 32,
            replay_capacity: 10_000,
            eps_start: 0.9,
            eps_end: 0.001,
            eps_decay_fraction: 0.2,
            target_update: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DqnState {
    pub e_w: f64,
    pub e_l_pc3: f64,
    pub d_l_pc1: f64,
    pub cw_w_norm: f64,
    pub cw_l_norm: f64,
}

impl DqnState {
    pub fn to_array(self) -> [f64; STATE_DIM] {
        [self.e_w, self.e_l_pc3, self.d_l_pc1, self.cw_w_norm, self.cw_l_norm]
    }
}

pub fn cw_from_action(a: usize) -> u32 {
    assert!(a < N_ACTIONS, "action {a} out of range");
    (1u32 << (a + 4)) - 1
}

pub fn reward(alpha: f64, d_l_pc1: f64, jfi: f64) -> f64 {
    alpha * (1.0 - d_l_pc1) + (1.0 - alpha) * jfi
}

/// Linear decay from `start` to `end` over the first `fraction` of the run.
pub fn epsilon(iter: u64, total: u64, p: &DqnParams) -> f64 {
    let horizon = p.eps_decay_fraction * total as f64;
    if horizon <= 0.0 || iter as f64 >= horizon {
        return p.eps_end;
    }
    p.eps_start + (p.eps_end - p.eps_start) * iter as f64 / horizon
}

pub fn td_target(r: f64, next_q_max: f64, gamma: f64, terminal: bool) -> f64 {
    if terminal {
        r
    } else {
        r + gamma * next_q_max
    }
}

/// Shared observation. The delay share defaults to the worst case when the
/// period has no PC1 node at all.
pub fn build_state(s: &MetricsSnapshot, action_w: usize, action_l: usize) -> DqnState {
    let last = (N_ACTIONS - 1) as f64;
    DqnState {
        e_w: s.eff_wifi,
        e_l_pc3: s.eff_pc3,
        d_l_pc1: s.d_l_pc1.unwrap_or(1.0),
        cw_w_norm: action_w as f64 / last,
        cw_l_norm: action_l as f64 / last,
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct DqnAgent {
    pub role: AgentRole,
    pub net: Mlp,
    pub target: Option<Mlp>,
    pub adam: Adam,
    pub replay: ReplayBuffer,
    pub params: DqnParams,
    pub updates: u64,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(role: AgentRole, params: DqnParams, rng: &mut R) -> Self {
        let net = Mlp::new(&LAYERS, rng);
        Self::from_net(role, net, params)
    }

    pub fn from_net(role: AgentRole, net: Mlp, params: DqnParams) -> Self {
        let adam = Adam::new(net.params().len(), params.lr);
        let target = (params.target_update > 0).then(|| net.clone());
        Self {
            role,
            net,
            target,
            adam,
            replay: ReplayBuffer::new(params.replay_capacity),
            params,
            updates: 0,
        }
    }

    pub fn q_values(&self, state: &DqnState) -> Vec<f64> {
        self.net.forward(&state.to_array())
    }

    /// ε-greedy action.
    pub fn act<R: Rng + ?Sized>(&self, state: &DqnState, eps: f64, rng: &mut R) -> usize {
        if eps > 0.0 && rng.gen::<f64>() < eps {
            rng.gen_range(0..N_ACTIONS)
        } else {
            argmax(&self.q_values(state))
        }
    }

    pub fn remember(&mut self, e: Experience) {
        self.replay.push(e);
    }

    /// One Adam update on a sampled batch once the buffer holds a full batch.
    /// Returns the pre-update loss.
    pub fn learn<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<f64> {
        if self.replay.len() < self.params.batch_size {
            return None;
        }
        let idx = self.replay.sample_indices(rng, self.params.batch_size);
        let bootstrap = self.target.as_ref().unwrap_or(&self.net);
        let targets: Vec<f64> = idx
            .iter()
            .map(|&i| {
                let e = self.replay.get(i);
                let next = bootstrap.forward(&e.next_state);
                td_target(e.reward, next[argmax(&next)], self.params.gamma, e.terminal)
            })
            .collect();
        let batch: Vec<Sample<'_>> = idx
            .iter()
            .zip(&targets)
            .map(|(&i, &target)| {
                let e = self.replay.get(i);
                Sample { input: &e.state, action: e.action, target }
            })
            .collect();
        let (loss, grad) = self.net.loss_and_grad(&batch);
        self.adam.step(self.net.params_mut(), &grad);
        self.updates += 1;
        if self.params.target_update > 0 && self.updates % self.params.target_update == 0 {
            self.target = Some(self.net.clone());
        }
        Some(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::substream;

    #[test]
    fn cw_mapping() {
        assert_eq!(cw_from_action(0), 15);
        assert_eq!(cw_from_action(3), 127);
        assert_eq!(cw_from_action(6), 1023);
    }

    #[test]
    fn reward_examples() {
        assert!((reward(1.0, 0.25, 0.6) - 0.75).abs() < 1e-12);
        assert!((reward(0.5, 0.2, 0.9) - 0.85).abs() < 1e-12);
        assert!((reward(0.5, 0.0, 1.0) - 1.0).abs() < 1e-12);
        assert_eq!(reward(1.0, 0.3, 0.0), reward(1.0, 0.3, 1.0));
    }

    #[test]
    fn epsilon_schedule() {
        let p = DqnParams::default();
        assert_eq!(epsilon(0, 1000, &p), 0.9);
        assert!((epsilon(100, 1000, &p) - 0.4505).abs() < 1e-12);
        assert_eq!(epsilon(200, 1000, &p), 0.001);
        assert_eq!(epsilon(999, 1000, &p), 0.001);
    }

    #[test]
    fn td_examples() {
        assert!((td_target(0.5, 1.0, 0.7, false) - 1.2).abs() < 1e-12);
        assert_eq!(td_target(0.5, 1.0, 0.0, false), 0.5);
        assert_eq!(td_target(0.5, 1.0, 0.7, true), 0.5);
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0]), 3);
        assert_eq!(argmax(&[1.0, 2.0, 2.0, 0.0]), 1);
        assert_eq!(argmax(&[0.0; 7]), 0);
    }

    #[test]
    fn greedy_and_random_actions() {
        let mut rng = substream(1, 0);
        let agent = DqnAgent::new(AgentRole::Gnb, DqnParams::default(), &mut rng);
        let s = DqnState { e_w: 0.3, e_l_pc3: 0.3, d_l_pc1: 0.5, cw_w_norm: 0.0, cw_l_norm: 0.0 };
        let greedy = argmax(&agent.q_values(&s));
        assert!((0..20).all(|_| agent.act(&s, 0.0, &mut rng) == greedy));
        let mut seen = [0usize; N_ACTIONS];
        for _ in 0..7000 {
            seen[agent.act(&s, 1.0, &mut rng)] += 1;
        }
        assert!(seen.iter().all(|&c| (800..1200).contains(&c)), "{seen:?}");
    }

    #[test]
    fn no_update_before_warmup() {
        let mut rng = substream(2, 0);
        let mut agent = DqnAgent::new(AgentRole::Ap, DqnParams::default(), &mut rng);
        let e = Experience {
            state: [0.1; STATE_DIM],
            action: 1,
            reward: 0.5,
            next_state: [0.2; STATE_DIM],
            terminal: false,
        };
        for _ in 0..31 {
            agent.remember(e);
            assert!(agent.learn(&mut rng).is_none());
        }
        agent.remember(e);
        assert!(agent.learn(&mut rng).is_some());
        assert_eq!(agent.adam.t, 1);
    }
}
