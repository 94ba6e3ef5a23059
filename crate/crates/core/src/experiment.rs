//! Experiment sweeps behind the CLI subcommands.
//!
//! Runs are independent single-threaded simulations executed on a rayon
//! pool; rows are sorted before they are written so output never depends on
//! scheduling.

use std::cmp::Ordering;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::access::ProtocolKind;
use crate::config::{ConfigError, ScenarioConfig};
use crate::engine::{write_trace, SimTime, TransmissionRecord};
use crate::metrics::{snapshot, JfiMode, MetricsSnapshot, Window};
use crate::priority::{SkipLevel, SkipMode};
use crate::rl::checkpoint::{self, CheckpointEntry};
use crate::rl::{cw_from_action, run_greedy, train, AgentRole, CheckpointError, CurvePoint, InteractionSettings};
use crate::sim::{RunOutput, Scenario, SimError, Simulation};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run {run}: {source}")]
    Run { run: String, source: SimError },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("no checkpoint entry for alpha = {0}")]
    MissingAgents(f64),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

/// One CSV row. Absent values (no delay sample, no α) are empty fields.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct MetricsRow {
    pub protocol: String,
    pub n_nrus: u32,
    pub n_wifi: u32,
    pub n_pc3: u32,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub window_start_us: u64,
    pub p_coll_nru: f64,
    pub p_coll_wifi: f64,
    pub eff_nru: f64,
    pub eff_pc3: f64,
    pub eff_wifi: f64,
    pub delay_pc1_us: Option<f64>,
    pub delay_pc3_us: Option<f64>,
    pub delay_wifi_us: Option<f64>,
    pub d_l_pc1: Option<f64>,
    pub jfi: f64,
    pub skip: String,
    pub skip_mean_level: Option<f64>,
    pub skip_max_level: Option<u8>,
    pub config_hash: String,
}

impl MetricsRow {
    fn sort_key(&self, other: &Self) -> Ordering {
        let alpha = |r: &Self| r.alpha.unwrap_or(f64::NEG_INFINITY);
        self.protocol
            .cmp(&other.protocol)
            .then(self.n_nrus.cmp(&other.n_nrus))
            .then(self.n_wifi.cmp(&other.n_wifi))
            .then(self.skip.cmp(&other.skip))
            .then(alpha(self).total_cmp(&alpha(other)))
            .then(self.seed.cmp(&other.seed))
            .then(self.window_start_us.cmp(&other.window_start_us))
    }
}

pub fn sort_rows(rows: &mut [MetricsRow]) {
    rows.sort_by(|a, b| a.sort_key(b));
}

pub fn write_rows<W: Write>(w: W, rows: &[MetricsRow]) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| ExperimentError::Csv(e.into()))?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
struct CurveRow {
    alpha: f64,
    seed: u64,
    iteration: u64,
    episode: u32,
    reward: f64,
    epsilon: f64,
    action_gnb: usize,
    action_ap: usize,
    cw_gnb: u32,
    cw_ap: u32,
    loss_gnb: Option<f64>,
    loss_ap: Option<f64>,
}

/// Identity of one simulation inside a sweep.
#[derive(Clone, Debug)]
struct RunSpec {
    label: String,
    n_pc1: u32,
    n_pc3: u32,
    n_wifi: u32,
    alpha: Option<f64>,
    skip: String,
    scenario: Scenario,
}

impl RunSpec {
    fn id(&self) -> String {
        let alpha = self.alpha.map(|a| format!("_a{a}")).unwrap_or_default();
        format!(
            "{}_nru{}_wifi{}_{}{}_s{}",
            self.label,
            self.n_pc1 + self.n_pc3,
            self.n_wifi,
            self.skip.replace(':', "-"),
            alpha,
            self.scenario.seed
        )
    }
}

fn skip_label(mode: Option<SkipMode>) -> String {
    match mode {
        None => "none".into(),
        Some(SkipMode::Fixed(l)) => format!("fixed:{}", l.get()),
        Some(SkipMode::Dynamic { target_delay_us, .. }) => format!("dynamic:{target_delay_us}"),
    }
}

fn rows_for(
    cfg: &ScenarioConfig,
    hash: &str,
    spec: &RunSpec,
    out: &RunOutput,
) -> Vec<MetricsRow> {
    let jfi: JfiMode = cfg.jfi.into();
    let (mean, max) = match &out.skip {
        Some(c) => (Some(c.mean_level()), Some(c.max_level().get())),
        None => (None, None),
    };
    let row = |m: MetricsSnapshot| MetricsRow {
        protocol: spec.label.clone(),
        n_nrus: spec.n_pc1 + spec.n_pc3,
        n_wifi: spec.n_wifi,
        n_pc3: spec.n_pc3,
        alpha: spec.alpha,
        seed: spec.scenario.seed,
        window_start_us: m.window.start.as_us(),
        p_coll_nru: m.p_coll_nru,
        p_coll_wifi: m.p_coll_wifi,
        eff_nru: m.eff_nru,
        eff_pc3: m.eff_pc3,
        eff_wifi: m.eff_wifi,
        delay_pc1_us: m.delay_pc1_us,
        delay_pc3_us: m.delay_pc3_us,
        delay_wifi_us: m.delay_wifi_us,
        d_l_pc1: m.d_l_pc1,
        jfi: m.jfi,
        skip: spec.skip.clone(),
        skip_mean_level: mean,
        skip_max_level: max,
        config_hash: hash.to_string(),
    };
    let mut rows = vec![row(out.metrics(jfi))];
    if let Some(w) = cfg.window_us {
        let end = out.sim_time.as_us();
        let mut t = 0;
        while t < end {
            let win = Window::new(SimTime(t), SimTime((t + w).min(end)));
            rows.push(row(snapshot(&out.history, &out.roster, win, jfi)));
            t += w;
        }
    }
    rows
}

fn dump_trace(dir: &Path, spec: &RunSpec, history: &[TransmissionRecord]) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(format!("{}.csv", spec.id()));
    let f = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = io::BufWriter::new(f);
    write_trace(history, &mut w).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))
}

fn pool(parallel: usize) -> Result<rayon::ThreadPool, ExperimentError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))
}

/// Runs every spec with `run` on the pool, dumping traces if requested, and
/// returns the sorted rows.
fn execute<F>(cfg: &ScenarioConfig, specs: Vec<RunSpec>, run: F) -> Result<Vec<MetricsRow>, ExperimentError>
where
    F: Fn(&RunSpec) -> Result<RunOutput, SimError> + Sync,
{
    let hash = cfg.hash();
    info!("{} runs, config {hash}", specs.len());
    let per_run: Vec<Vec<MetricsRow>> = pool(cfg.parallel)?.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                let out = run(spec).map_err(|source| ExperimentError::Run { run: spec.id(), source })?;
                if let Some(dir) = &cfg.trace {
                    dump_trace(dir, spec, &out.history)?;
                }
                Ok(rows_for(cfg, &hash, spec, &out))
            })
            .collect::<Result<_, ExperimentError>>()
    })?;
    let mut rows: Vec<MetricsRow> = per_run.into_iter().flatten().collect();
    sort_rows(&mut rows);
    Ok(rows)
}

fn plain_run(spec: &RunSpec) -> Result<RunOutput, SimError> {
    Simulation::new(&spec.scenario)?.run()
}

fn protocol(cfg: &ScenarioConfig, name: &str) -> ProtocolKind {
    cfg.protocols.protocol(name).expect("validated protocol name")
}

/// Every roster protocol at every `n_gnb = n_ap = n`, for every seed.
pub fn run_compare(cfg: &ScenarioConfig) -> Result<Vec<MetricsRow>, ExperimentError> {
    let n_pc1 = cfg.scenario.n_pc1;
    let mut specs = Vec::new();
    for name in &cfg.compare.protocols {
        let nru = protocol(cfg, name);
        let wifi = cfg.wifi_for(name);
        for &n in &cfg.compare.n {
            let pc1 = n_pc1.min(n);
            for seed in cfg.seeds() {
                let scenario = cfg.build_scenario(nru, wifi, pc1, n - pc1, n, seed);
                specs.push(RunSpec {
                    label: name.clone(),
                    n_pc1: pc1,
                    n_pc3: n - pc1,
                    n_wifi: n,
                    alpha: None,
                    skip: skip_label(scenario.skip),
                    scenario,
                });
            }
        }
    }
    execute(cfg, specs, plain_run)
}

/// PC1 delay under every fixed skip level and dynamic target, for each PC3
/// count `k`.
pub fn run_skip(cfg: &ScenarioConfig) -> Result<Vec<MetricsRow>, ExperimentError> {
    let s = &cfg.skip;
    let name = &cfg.scenario.nru_protocol;
    let nru = protocol(cfg, name);
    let wifi = protocol(cfg, &cfg.scenario.wifi_protocol);
    let mut modes: Vec<SkipMode> = s
        .levels
        .iter()
        .map(|&l| SkipMode::Fixed(SkipLevel::new(l).expect("validated level")))
        .collect();
    modes.extend(s.targets_us.iter().map(|&t| SkipMode::Dynamic {
        target_delay_us: t,
        deescalate_factor: s.deescalate_factor,
    }));
    let mut specs = Vec::new();
    for &k in &s.k {
        let n_wifi = if s.coexistence { k } else { 0 };
        for &mode in &modes {
            for seed in cfg.seeds() {
                let mut scenario = cfg.build_scenario(nru, wifi, s.n_pc1, k, n_wifi, seed);
                scenario.skip = Some(mode);
                specs.push(RunSpec {
                    label: name.clone(),
                    n_pc1: s.n_pc1,
                    n_pc3: k,
                    n_wifi,
                    alpha: None,
                    skip: skip_label(Some(mode)),
                    scenario,
                });
            }
        }
    }
    execute(cfg, specs, plain_run)
}

fn interaction(cfg: &ScenarioConfig, alpha: f64) -> InteractionSettings {
    InteractionSettings {
        alpha,
        period_us: cfg.dqn.interaction_period_us,
        obs_periods: cfg.dqn.obs_periods,
        jfi_mode: cfg.jfi.into(),
    }
}

fn dqn_scenario(cfg: &ScenarioConfig, k: u32, seed: u64) -> Scenario {
    let nru = protocol(cfg, &cfg.scenario.nru_protocol);
    let wifi = protocol(cfg, &cfg.scenario.wifi_protocol);
    cfg.build_scenario(nru, wifi, cfg.dqn.n_pc1, k, k, seed)
}

pub struct TrainOutput {
    pub entries: Vec<CheckpointEntry>,
    curve: Vec<CurveRow>,
}

impl TrainOutput {
    pub fn curve_len(&self) -> usize {
        self.curve.len()
    }

    pub fn write_curve<W: Write>(&self, w: W) -> Result<(), ExperimentError> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.curve {
            out.serialize(r)?;
        }
        out.flush().map_err(|e| ExperimentError::Csv(e.into()))?;
        Ok(())
    }
}

/// Trains one agent pair per (α, seed).
pub fn run_train(cfg: &ScenarioConfig) -> Result<TrainOutput, ExperimentError> {
    let params = cfg.dqn.params();
    let jobs: Vec<(f64, u64)> = cfg
        .dqn
        .alpha
        .iter()
        .flat_map(|&a| cfg.seeds().map(move |s| (a, s)))
        .collect();
    info!("training {} agent pairs", jobs.len());
    let results: Vec<(CheckpointEntry, Vec<CurvePoint>)> = pool(cfg.parallel)?.install(|| {
        jobs.par_iter()
            .map(|&(alpha, seed)| {
                let scenario = dqn_scenario(cfg, cfg.dqn.k, seed);
                let (agents, curve) = train(&scenario, &interaction(cfg, alpha), &params, cfg.dqn.train_interactions)
                    .map_err(|source| ExperimentError::Run { run: format!("train_a{alpha}_s{seed}"), source })?;
                Ok((CheckpointEntry { alpha, seed, agents }, curve))
            })
            .collect::<Result<_, ExperimentError>>()
    })?;
    let mut entries = Vec::new();
    let mut curve = Vec::new();
    for (e, points) in results {
        curve.extend(points.into_iter().map(|p| CurveRow {
            alpha: e.alpha,
            seed: e.seed,
            iteration: p.iteration,
            episode: p.episode,
            reward: p.reward,
            epsilon: p.epsilon,
            action_gnb: p.action_gnb,
            action_ap: p.action_ap,
            cw_gnb: cw_from_action(p.action_gnb),
            cw_ap: cw_from_action(p.action_ap),
            loss_gnb: p.loss_gnb,
            loss_ap: p.loss_ap,
        }));
        entries.push(e);
    }
    Ok(TrainOutput { entries, curve })
}

pub fn save_checkpoint(cfg: &ScenarioConfig, entries: &[CheckpointEntry]) -> Result<PathBuf, ExperimentError> {
    let path = cfg.dqn.checkpoint.clone().expect("checked by for_mode");
    checkpoint::save(&path, entries)?;
    Ok(path)
}

/// Agents trained for `alpha`, preferring the ones trained with `seed`.
fn pick(entries: &[CheckpointEntry], alpha: f64, seed: u64) -> Option<&CheckpointEntry> {
    let same_alpha = || entries.iter().filter(|e| e.alpha == alpha);
    same_alpha().find(|e| e.seed == seed).or_else(|| same_alpha().min_by_key(|e| e.seed))
}

/// Greedy evaluation of checkpointed agents for every (k, α, seed), plus
/// untrained baseline rows when enabled.
pub fn run_eval(cfg: &ScenarioConfig) -> Result<Vec<MetricsRow>, ExperimentError> {
    let path = cfg.dqn.checkpoint.clone().expect("checked by for_mode");
    let entries = checkpoint::load(&path, &cfg.dqn.params())?;
    for &a in &cfg.dqn.alpha {
        if pick(&entries, a, cfg.seed).is_none() {
            return Err(ExperimentError::MissingAgents(a));
        }
    }
    let name = cfg.scenario.nru_protocol.clone();
    let mut specs = Vec::new();
    for &k in &cfg.dqn.eval_k {
        for seed in cfg.seeds() {
            let scenario = dqn_scenario(cfg, k, seed);
            let base = RunSpec {
                label: name.clone(),
                n_pc1: cfg.dqn.n_pc1,
                n_pc3: k,
                n_wifi: k,
                alpha: None,
                skip: skip_label(scenario.skip),
                scenario,
            };
            for &a in &cfg.dqn.alpha {
                specs.push(RunSpec { label: format!("dqn:{name}"), alpha: Some(a), ..base.clone() });
            }
            if cfg.dqn.baseline {
                specs.push(base);
            }
        }
    }
    execute(cfg, specs, |spec| match spec.alpha {
        None => plain_run(spec),
        Some(alpha) => {
            let e = pick(&entries, alpha, spec.scenario.seed).expect("checked above");
            let gnb = e.agent(AgentRole::Gnb).ok_or_else(|| SimError::Invalid("checkpoint lacks a gNB agent".into()))?;
            let ap = e.agent(AgentRole::Ap).ok_or_else(|| SimError::Invalid("checkpoint lacks an AP agent".into()))?;
            run_greedy(&spec.scenario, &interaction(cfg, alpha), gnb, ap)
        }
    })
}
