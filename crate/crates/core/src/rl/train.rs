//! Agent/environment interaction on top of [`Simulation`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::agent::{build_state, cw_from_action, epsilon, reward, AgentRole, DqnAgent, DqnParams, DqnState};
use super::replay::Experience;
use crate::access::Priority;
use crate::engine::{substream, Network, SimTime};
use crate::metrics::{JfiMode, MetricsSnapshot, NodeMeta, Window};
use crate::sim::{RunOutput, Scenario, SimError, Simulation};

#[derive(Clone, Debug)]
pub struct InteractionSettings {
    pub alpha: f64,
    pub period_us: u64,
    /// Observations and rewards are measured over this many trailing periods.
    pub obs_periods: u32,
    pub jfi_mode: JfiMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub iteration: u64,
    pub episode: u32,
    pub reward: f64,
    pub epsilon: f64,
    pub action_gnb: usize,
    pub action_ap: usize,
    pub loss_gnb: Option<f64>,
    pub loss_ap: Option<f64>,
}

fn controls(role: AgentRole, m: &NodeMeta) -> bool {
    match role {
        AgentRole::Gnb => m.network == Network::Nru && m.priority == Priority::Pc3,
        AgentRole::Ap => m.network == Network::WiFi,
    }
}

struct Env {
    sim: Simulation,
    settings: InteractionSettings,
    actions: [usize; 2],
}

impl Env {
    fn new(scenario: &Scenario, settings: &InteractionSettings) -> Result<Self, SimError> {
        let mut sc = scenario.clone();
        sc.interaction_period = Some(settings.period_us);
        let mut env = Env {
            sim: Simulation::new(&sc)?,
            settings: settings.clone(),
            actions: [0, 0],
        };
        env.apply([0, 0])?;
        Ok(env)
    }

    fn apply(&mut self, actions: [usize; 2]) -> Result<(), SimError> {
        self.actions = actions;
        for (role, a) in [(AgentRole::Gnb, actions[0]), (AgentRole::Ap, actions[1])] {
            self.sim.pin_cw(|m| controls(role, m), cw_from_action(a))?;
        }
        Ok(())
    }

    fn observe_at(&self, t: SimTime) -> (MetricsSnapshot, DqnState, f64) {
        let span = self.settings.period_us * self.settings.obs_periods as u64;
        let start = SimTime(t.as_us().saturating_sub(span));
        let snap = self.sim.snapshot(Window::new(start, t), self.settings.jfi_mode);
        let state = build_state(&snap, self.actions[1], self.actions[0]);
        let r = reward(self.settings.alpha, state.d_l_pc1, snap.jfi);
        (snap, state, r)
    }
}

/// Trains a gNB and an AP agent for `iterations` interaction periods, running
/// as many episodes of `scenario.sim_time` as needed.
pub fn train(
    scenario: &Scenario,
    settings: &InteractionSettings,
    params: &DqnParams,
    iterations: u64,
) -> Result<(Vec<DqnAgent>, Vec<CurvePoint>), SimError> {
    let seed = scenario.seed;
    let mut agents = [AgentRole::Gnb, AgentRole::Ap]
        .map(|role| DqnAgent::new(role, params.clone(), &mut substream(seed, 1_000 + role.as_u8() as u64)));
    let mut rngs = [substream(seed, 2_000), substream(seed, 2_001)];
    let mut episode_seeds = ChaCha8Rng::from_rng(substream(seed, 3_000)).expect("seeding from a prng");
    let mut curve = Vec::with_capacity(iterations as usize);
    let mut iter = 0u64;
    let mut episode = 0u32;

    while iter < iterations {
        let mut sc = scenario.clone();
        sc.seed = episode_seeds.gen();
        let mut env = Env::new(&sc, settings)?;
        let mut prev: Option<(DqnState, [usize; 2])> = None;
        while iter < iterations {
            let Some(t) = env.sim.run_until_agent_tick()? else {
                break;
            };
            let (_, state, r) = env.observe_at(t);
            let mut losses = [None, None];
            if let Some((s, a)) = prev {
                for k in 0..2 {
                    agents[k].remember(Experience {
                        state: s.to_array(),
                        action: a[k],
                        reward: r,
                        next_state: state.to_array(),
                        terminal: false,
                    });
                    losses[k] = agents[k].learn(&mut rngs[k]);
                }
            }
            let eps = epsilon(iter, iterations, params);
            let a = [0, 1].map(|k| agents[k].act(&state, eps, &mut rngs[k]));
            env.apply(a)?;
            curve.push(CurvePoint {
                iteration: iter,
                episode,
                reward: r,
                epsilon: eps,
                action_gnb: a[0],
                action_ap: a[1],
                loss_gnb: losses[0],
                loss_ap: losses[1],
            });
            prev = Some((state, a));
            iter += 1;
        }
        // the last decision of the episode is scored on the closing window
        if let Some((s, a)) = prev {
            while env.sim.run_until_agent_tick()?.is_some() {}
            let end = env.sim.end_time();
            let (_, state, r) = env.observe_at(end);
            for k in 0..2 {
                agents[k].remember(Experience {
                    state: s.to_array(),
                    action: a[k],
                    reward: r,
                    next_state: state.to_array(),
                    terminal: true,
                });
            }
        }
        episode += 1;
    }
    Ok((agents.into(), curve))
}

/// Runs `scenario` with both agents acting greedily every period.
pub fn run_greedy(
    scenario: &Scenario,
    settings: &InteractionSettings,
    gnb: &DqnAgent,
    ap: &DqnAgent,
) -> Result<RunOutput, SimError> {
    let mut env = Env::new(scenario, settings)?;
    let mut rng = substream(scenario.seed, 4_000);
    while let Some(t) = env.sim.run_until_agent_tick()? {
        let (_, state, _) = env.observe_at(t);
        let a = [gnb.act(&state, 0.0, &mut rng), ap.act(&state, 0.0, &mut rng)];
        env.apply(a)?;
    }
    Ok(env.sim.run()?)
}
