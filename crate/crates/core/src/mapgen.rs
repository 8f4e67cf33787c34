//! Map-creation orchestrators.
//!
//! `run_mmprl` drives several independent DDPG agents against one shared
//! archive: each agent keeps training its own policy, except that every
//! `freq`-th iteration past its warm-up it restarts from a uniformly random
//! stored cell. Every iteration runs one training episode, then a separate
//! deterministic evaluation rollout whose stance-fraction descriptor and
//! covered distance feed an elitist insertion attempt.
//!
//! `run_mapelites` is the random-perturbation baseline over the same archive
//! shape: random parameter vectors first, then Gaussian perturbations of
//! random stored elites, each policy evaluated for a fixed number of episodes
//! with an insertion attempt after every episode.

use crate::archive::{quantize_stance, stats_csv_row, Archive, BehaviorDescriptor, InsertOutcome};
use crate::ddpg::{DdpgAgent, DdpgConfig};
use crate::env::{stance_fractions, CrawlerEnv, DamageConfig, EnvSpec};
use crate::error::{Error, Result};
use crate::nnet::ParamNet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmprlConfig {
    pub n_agents: usize,
    /// Per-agent warm-up iterations before random map selection kicks in.
    pub i_init: Vec<u64>,
    /// Past warm-up, adopt a random stored cell every `freq` iterations.
    pub freq: u64,
    /// Total insertion attempts across all agents.
    pub budget: u64,
    pub snapshot_every: u64,
    pub descriptor_bins: usize,
    /// Explicit per-agent seeds; derived from the run seed when absent.
    #[serde(default)]
    pub agent_seeds: Option<Vec<u64>>,
}

impl Default for MmprlConfig {
    fn default() -> Self {
        Self {
            n_agents: 8,
            i_init: vec![10_000, 10_000, 10_000, 10_000, 20_000, 20_000, 20_000, 20_000],
            freq: 10,
            budget: 5_000,
            snapshot_every: 250,
            descriptor_bins: 5,
            agent_seeds: None,
        }
    }
}

impl MmprlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::Config("need at least one agent".into()));
        }
        if self.i_init.len() != self.n_agents {
            return Err(Error::Config(format!(
                "i_init has {} entries for {} agents",
                self.i_init.len(),
                self.n_agents
            )));
        }
        if self.i_init.iter().any(|&i| i == 0) {
            return Err(Error::Config("i_init entries must be >= 1".into()));
        }
        if self.freq == 0 {
            return Err(Error::Config("freq must be >= 1".into()));
        }
        if self.snapshot_every == 0 {
            return Err(Error::Config("snapshot_every must be >= 1".into()));
        }
        if let Some(seeds) = &self.agent_seeds {
            if seeds.len() != self.n_agents {
                return Err(Error::Config(format!(
                    "agent_seeds has {} entries for {} agents",
                    seeds.len(),
                    self.n_agents
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapElitesConfig {
    /// Number of policies drawn uniformly at random before mutation starts.
    pub init_iterations: u64,
    pub init_range: (f64, f64),
    /// Standard deviation of the per-parameter Gaussian perturbation.
    pub mutation_std: f64,
    pub episodes_per_policy: u64,
}

impl Default for MapElitesConfig {
    fn default() -> Self {
        Self {
            init_iterations: 4000,
            init_range: (-5.0, 5.0),
            mutation_std: 0.1,
            episodes_per_policy: 10,
        }
    }
}

impl MapElitesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.init_iterations == 0 || self.episodes_per_policy == 0 {
            return Err(Error::Config("iteration counts must be positive".into()));
        }
        if self.init_range.0 >= self.init_range.1 {
            return Err(Error::Config("init_range is empty".into()));
        }
        if self.mutation_std < 0.0 {
            return Err(Error::Config("mutation_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// Everything the map-creation phase needs to build environments and agents.
#[derive(Clone, Copy)]
pub struct MapCreationContext<'a> {
    pub env_spec: &'a EnvSpec,
    pub damage: &'a DamageConfig,
    pub ddpg: &'a DdpgConfig,
}

/// Outcome of a deterministic evaluation rollout.
#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub distance: f64,
    pub episode_return: f64,
    pub steps: usize,
    pub stance_fractions: Vec<f64>,
}

/// Roll a policy through one noise-free episode.
pub fn evaluate_policy(
    actor: &ParamNet,
    env: &mut CrawlerEnv,
    max_steps: usize,
    env_seed: u64,
) -> Result<EvalOutcome> {
    let mut obs = env.reset(env_seed);
    let mut distance = 0.0;
    let mut episode_return = 0.0;
    let mut stance_trace = Vec::new();
    let mut steps = 0;
    while steps < max_steps {
        let action = actor.forward(&obs)?;
        let out = env.step(&action)?;
        distance += out.delta_x;
        episode_return += out.reward;
        stance_trace.push(out.stance);
        obs = out.obs;
        steps += 1;
        if out.done {
            break;
        }
    }
    Ok(EvalOutcome {
        distance,
        episode_return,
        steps,
        stance_fractions: stance_fractions(&stance_trace),
    })
}

/// True when the loop body should restart from a random stored cell.
pub fn adoption_scheduled(iter: u64, i_init: u64, freq: u64) -> bool {
    iter >= i_init && iter % freq == 0
}

/// Per-agent state for the map-creation loop.
pub struct MmprlAgent {
    pub id: usize,
    pub agent: DdpgAgent,
    pub env: CrawlerEnv,
    pub env_seed: u64,
    pub i_init: u64,
    pub iter: u64,
}

impl MmprlAgent {
    pub fn new(
        id: usize,
        ctx: &MapCreationContext,
        i_init: u64,
        seed: u64,
    ) -> Result<Self> {
        let agent = DdpgAgent::new(ctx.ddpg.clone(), ctx.env_spec, seed)?;
        let env = CrawlerEnv::new(ctx.env_spec.clone(), ctx.damage.clone())?;
        Ok(Self {
            id,
            agent,
            env,
            env_seed: seed,
            i_init,
            iter: 0,
        })
    }
}

/// What one loop-body execution did.
#[derive(Clone, Debug)]
pub struct AgentStepRecord {
    pub agent_id: usize,
    pub iteration: u64,
    pub adopted: bool,
    /// Scheduled adoption found an empty archive and fell back to the agent's
    /// own policy.
    pub adoption_fallback: bool,
    pub outcome: InsertOutcome,
    pub descriptor: BehaviorDescriptor,
    pub performance: f64,
    pub episode_return: f64,
    pub critic_loss: Option<f64>,
}

/// Access to the shared map used by the loop body; locking (if any) lives
/// behind the two calls so no lock is held while episodes run.
pub trait MapHandle {
    fn bins(&self) -> usize;
    /// A uniformly random stored cell's parameters, or `None` when empty.
    fn adopt_random(&self, rng: &mut ChaCha8Rng) -> Result<Option<(Vec<f64>, Vec<f64>)>>;
    fn insert(
        &self,
        descriptor: BehaviorDescriptor,
        performance: f64,
        actor: Vec<f64>,
        critic: Vec<f64>,
    ) -> Result<InsertOutcome>;
}

/// Plain single-threaded handle.
pub struct LocalMap<'a>(pub &'a std::cell::RefCell<Archive>);

impl MapHandle for LocalMap<'_> {
    fn bins(&self) -> usize {
        self.0.borrow().bins()
    }

    fn adopt_random(&self, rng: &mut ChaCha8Rng) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let archive = self.0.borrow();
        if archive.is_empty() {
            return Ok(None);
        }
        let cell = archive.random_cell(rng)?;
        Ok(Some((cell.actor_params.clone(), cell.critic_params.clone())))
    }

    fn insert(
        &self,
        descriptor: BehaviorDescriptor,
        performance: f64,
        actor: Vec<f64>,
        critic: Vec<f64>,
    ) -> Result<InsertOutcome> {
        self.0
            .borrow_mut()
            .try_insert(descriptor, performance, actor, critic)
    }
}

/// Shared map plus the stats snapshots taken as the update counter crosses
/// multiples of `snapshot_every`; all under one mutex so snapshot rows carry
/// exact counter values.
pub struct SharedMap {
    inner: Mutex<SharedMapInner>,
    snapshot_every: u64,
}

struct SharedMapInner {
    archive: Archive,
    snapshots: Vec<(u64, String)>,
}

impl SharedMap {
    pub fn new(archive: Archive, snapshot_every: u64) -> Self {
        Self {
            inner: Mutex::new(SharedMapInner {
                archive,
                snapshots: Vec::new(),
            }),
            snapshot_every,
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, SharedMapInner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn into_parts(self) -> (Archive, Vec<(u64, String)>) {
        let inner = self.inner.into_inner().unwrap_or_else(|e| e.into_inner());
        (inner.archive, inner.snapshots)
    }

    /// Final snapshot row if the budget did not land on a cadence boundary.
    pub fn finalize_snapshots(&self) {
        let mut inner = self.lock();
        let c = inner.archive.update_counter();
        if c > 0 && inner.snapshots.last().map(|(at, _)| *at) != Some(c) {
            let row = stats_csv_row(c, &inner.archive.stats());
            inner.snapshots.push((c, row));
        }
    }
}

impl MapHandle for &SharedMap {
    fn bins(&self) -> usize {
        self.lock().archive.bins()
    }

    fn adopt_random(&self, rng: &mut ChaCha8Rng) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let inner = self.lock();
        if inner.archive.is_empty() {
            return Ok(None);
        }
        let cell = inner.archive.random_cell(rng)?;
        Ok(Some((cell.actor_params.clone(), cell.critic_params.clone())))
    }

    fn insert(
        &self,
        descriptor: BehaviorDescriptor,
        performance: f64,
        actor: Vec<f64>,
        critic: Vec<f64>,
    ) -> Result<InsertOutcome> {
        let mut inner = self.lock();
        let outcome = inner
            .archive
            .try_insert(descriptor, performance, actor, critic)?;
        let c = inner.archive.update_counter();
        if c % self.snapshot_every == 0 {
            let row = stats_csv_row(c, &inner.archive.stats());
            inner.snapshots.push((c, row));
        }
        Ok(outcome)
    }
}

/// One loop body: optionally adopt a random stored policy, train for one
/// episode, evaluate deterministically, attempt an elitist insertion.
pub fn mmprl_agent_step<H: MapHandle>(
    state: &mut MmprlAgent,
    map: &H,
    freq: u64,
) -> Result<AgentStepRecord> {
    state.iter += 1;
    let scheduled = adoption_scheduled(state.iter, state.i_init, freq);
    let mut adopted = false;
    let mut adoption_fallback = false;
    if scheduled {
        match map.adopt_random(state.agent.rng_mut())? {
            Some((actor, critic)) => {
                state.agent.set_policy(&actor, &critic)?;
                adopted = true;
            }
            None => adoption_fallback = true,
        }
    }

    let max_steps = state.env.spec().max_steps;
    let train = state
        .agent
        .run_episode(&mut state.env, true, max_steps, state.env_seed)?;
    let eval = evaluate_policy(state.agent.actor(), &mut state.env, max_steps, state.env_seed)?;
    let descriptor = quantize_stance(&eval.stance_fractions, map.bins())?;
    let outcome = map.insert(
        descriptor.clone(),
        eval.distance,
        state.agent.actor().params().to_vec(),
        state.agent.critic().params().to_vec(),
    )?;
    Ok(AgentStepRecord {
        agent_id: state.id,
        iteration: state.iter,
        adopted,
        adoption_fallback,
        outcome,
        descriptor,
        performance: eval.distance,
        episode_return: train.episode_return,
        critic_loss: train.critic_loss,
    })
}

/// Result of a map-creation run: the archive plus the two CSV streams.
pub struct MapRunResult {
    pub archive: Archive,
    pub stats_csv: String,
    pub agents_csv: String,
}

pub const AGENTS_CSV_HEADER: &str = "agent_id,iteration,critic_loss,episode_return,distance";

fn agent_csv_row(r: &AgentStepRecord) -> String {
    let loss = match r.critic_loss {
        Some(l) => format!("{l}"),
        None => "nan".to_string(),
    };
    format!(
        "{},{},{},{},{}",
        r.agent_id, r.iteration, loss, r.episode_return, r.performance
    )
}

/// Per-agent seeds derived from the run seed.
pub fn derive_agent_seeds(seed: u64, n_agents: usize) -> Vec<u64> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..n_agents).map(|_| master.random()).collect()
}

fn assemble_result(
    archive: Archive,
    mut snapshots: Vec<(u64, String)>,
    mut rows: Vec<AgentStepRecord>,
) -> MapRunResult {
    snapshots.sort_by_key(|(at, _)| *at);
    let mut stats_csv = String::from(STATS_HEADER);
    stats_csv.push('\n');
    for (_, row) in snapshots {
        stats_csv.push_str(&row);
        stats_csv.push('\n');
    }
    rows.sort_by_key(|r| (r.agent_id, r.iteration));
    let mut agents_csv = String::from(AGENTS_CSV_HEADER);
    agents_csv.push('\n');
    for r in &rows {
        agents_csv.push_str(&agent_csv_row(r));
        agents_csv.push('\n');
    }
    MapRunResult {
        archive,
        stats_csv,
        agents_csv,
    }
}

const STATS_HEADER: &str = crate::archive::STATS_CSV_HEADER;

/// Run the multi-agent map-creation phase until `budget` insertion attempts
/// have been spent. With `workers == 1` the agents advance in strict
/// round-robin order, which makes the whole run reproducible byte for byte;
/// with more workers the agents are partitioned across threads and only the
/// archive's elitism and counting invariants are guaranteed.
pub fn run_mmprl(
    cfg: &MmprlConfig,
    ctx: &MapCreationContext,
    seed: u64,
    workers: usize,
) -> Result<MapRunResult> {
    cfg.validate()?;
    ctx.ddpg.validate()?;
    ctx.env_spec.validate()?;
    let archive = Archive::new(
        ctx.env_spec.n_legs,
        cfg.descriptor_bins,
        ctx.ddpg
            .actor_spec(ctx.env_spec.observation_dim(), ctx.env_spec.action_dim())?,
        ctx.ddpg
            .critic_spec(ctx.env_spec.observation_dim(), ctx.env_spec.action_dim())?,
    )?;
    let seeds = match &cfg.agent_seeds {
        Some(s) => s.clone(),
        None => derive_agent_seeds(seed, cfg.n_agents),
    };
    let mut agents = Vec::with_capacity(cfg.n_agents);
    for id in 0..cfg.n_agents {
        agents.push(MmprlAgent::new(id, ctx, cfg.i_init[id], seeds[id])?);
    }

    let shared = SharedMap::new(archive, cfg.snapshot_every);
    let tickets = AtomicU64::new(0);
    let failures: Mutex<Vec<(usize, String)>> = Mutex::new(Vec::new());
    let workers = workers.clamp(1, cfg.n_agents);

    let mut all_rows: Vec<AgentStepRecord> = Vec::new();
    if workers == 1 {
        let mut rows = Vec::new();
        let mut dead = vec![false; agents.len()];
        'outer: loop {
            for state in agents.iter_mut() {
                if dead[state.id] {
                    continue;
                }
                if tickets.fetch_add(1, Ordering::SeqCst) >= cfg.budget {
                    break 'outer;
                }
                match mmprl_agent_step(state, &&shared, cfg.freq) {
                    Ok(rec) => rows.push(rec),
                    Err(e) => {
                        dead[state.id] = true;
                        failures
                            .lock()
                            .unwrap_or_else(|p| p.into_inner())
                            .push((state.id, e.to_string()));
                    }
                }
            }
            if dead.iter().all(|&d| d) {
                break;
            }
        }
        all_rows = rows;
    } else {
        let mut partitions: Vec<Vec<MmprlAgent>> = (0..workers).map(|_| Vec::new()).collect();
        for (i, agent) in agents.into_iter().enumerate() {
            partitions[i % workers].push(agent);
        }
        let results: Vec<Vec<AgentStepRecord>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for mut part in partitions {
                let shared = &shared;
                let tickets = &tickets;
                let failures = &failures;
                handles.push(scope.spawn(move || {
                    let mut rows = Vec::new();
                    let mut dead = vec![false; part.len()];
                    'outer: loop {
                        let mut any_alive = false;
                        for (slot, state) in part.iter_mut().enumerate() {
                            if dead[slot] {
                                continue;
                            }
                            any_alive = true;
                            if tickets.fetch_add(1, Ordering::SeqCst) >= cfg.budget {
                                break 'outer;
                            }
                            match mmprl_agent_step(state, &shared, cfg.freq) {
                                Ok(rec) => rows.push(rec),
                                Err(e) => {
                                    dead[slot] = true;
                                    failures
                                        .lock()
                                        .unwrap_or_else(|p| p.into_inner())
                                        .push((state.id, e.to_string()));
                                }
                            }
                        }
                        if !any_alive {
                            break;
                        }
                    }
                    rows
                }));
            }
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for rows in results {
            all_rows.extend(rows);
        }
    }

    let failures = failures.into_inner().unwrap_or_else(|p| p.into_inner());
    if failures.len() == cfg.n_agents && cfg.n_agents > 0 && cfg.budget > 0 {
        let detail: Vec<String> = failures
            .iter()
            .map(|(id, msg)| format!("agent {id}: {msg}"))
            .collect();
        return Err(Error::Numeric(format!(
            "all agents failed: {}",
            detail.join("; ")
        )));
    }
    shared.finalize_snapshots();
    let (archive, snapshots) = shared.into_parts();
    Ok(assemble_result(archive, snapshots, all_rows))
}

/// Uniformly random parameter vector for the baseline's init phase.
pub fn random_params(n: usize, range: (f64, f64), rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(range.0..=range.1)).collect()
}

/// Gaussian perturbation of a parent parameter vector.
pub fn mutate_params(parent: &[f64], std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    parent
        .iter()
        .map(|&p| {
            let z: f64 = rng.sample(StandardNormal);
            p + std * z
        })
        .collect()
}

/// The random-perturbation baseline at the same update budget and archive
/// shape as the learner-driven runs.
pub fn run_mapelites(
    cfg: &MapElitesConfig,
    ctx: &MapCreationContext,
    bins: usize,
    snapshot_every: u64,
    budget: u64,
    seed: u64,
) -> Result<MapRunResult> {
    cfg.validate()?;
    ctx.env_spec.validate()?;
    let actor_spec = ctx
        .ddpg
        .actor_spec(ctx.env_spec.observation_dim(), ctx.env_spec.action_dim())?;
    let critic_spec = ctx
        .ddpg
        .critic_spec(ctx.env_spec.observation_dim(), ctx.env_spec.action_dim())?;
    let critic_len = critic_spec.param_count();
    let archive = Archive::new(ctx.env_spec.n_legs, bins, actor_spec.clone(), critic_spec)?;
    let shared = SharedMap::new(archive, snapshot_every);
    let handle = &shared;

    let mut env = CrawlerEnv::new(ctx.env_spec.clone(), ctx.damage.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut updates = 0u64;
    let mut policy_idx = 0u64;
    let n_params = actor_spec.param_count();

    while updates < budget {
        let params = {
            let inner = handle.lock();
            let use_random = policy_idx < cfg.init_iterations || inner.archive.is_empty();
            if use_random {
                drop(inner);
                random_params(n_params, cfg.init_range, &mut rng)
            } else {
                let parent = inner.archive.random_cell(&mut rng)?.actor_params.clone();
                drop(inner);
                mutate_params(&parent, cfg.mutation_std, &mut rng)
            }
        };
        let actor = ParamNet::from_params(actor_spec.clone(), params)?;
        for _ in 0..cfg.episodes_per_policy {
            if updates >= budget {
                break;
            }
            let eval = evaluate_policy(&actor, &mut env, ctx.env_spec.max_steps, seed)?;
            let descriptor = quantize_stance(&eval.stance_fractions, bins)?;
            handle.insert(
                descriptor,
                eval.distance,
                actor.params().to_vec(),
                vec![0.0; critic_len],
            )?;
            updates += 1;
        }
        policy_idx += 1;
    }

    shared.finalize_snapshots();
    let (archive, snapshots) = shared.into_parts();
    Ok(assemble_result(archive, snapshots, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;

    fn desk_ctx() -> (EnvSpec, DamageConfig, DdpgConfig) {
        let env_spec = EnvSpec {
            max_steps: 40,
            ..Default::default()
        };
        let ddpg = DdpgConfig {
            buffer_capacity: 5_000,
            update_every: 40,
            update_samples: 20,
            actor_hidden: vec![8],
            critic_obs_units: 8,
            critic_action_units: 4,
            critic_hidden: vec![8],
            ..Default::default()
        };
        (env_spec, DamageConfig::default(), ddpg)
    }

    fn small_cfg(n_agents: usize, budget: u64) -> MmprlConfig {
        MmprlConfig {
            n_agents,
            i_init: vec![10; n_agents],
            freq: 5,
            budget,
            snapshot_every: 10,
            descriptor_bins: 5,
            agent_seeds: None,
        }
    }

    #[test]
    fn adoption_branch_condition() {
        // Before warm-up the agent always continues its own policy.
        assert!(!adoption_scheduled(5, 10_000, 10));
        // Past warm-up, multiples of freq adopt from the map.
        assert!(adoption_scheduled(20_000, 10_000, 10));
        assert!(!adoption_scheduled(20_001, 10_000, 10));
        assert!(adoption_scheduled(10_000, 10_000, 10));
    }

    #[test]
    fn zero_budget_yields_an_empty_archive() {
        let (env_spec, damage, ddpg) = desk_ctx();
        let ctx = MapCreationContext {
            env_spec: &env_spec,
            damage: &damage,
            ddpg: &ddpg,
        };
        let result = run_mmprl(&small_cfg(2, 0), &ctx, 1, 1).unwrap();
        assert_eq!(result.archive.len(), 0);
        assert_eq!(result.archive.update_counter(), 0);
    }

    #[test]
    fn seeded_runs_reproduce_the_archive_bitwise() {
        let (env_spec, damage, ddpg) = desk_ctx();
        let ctx = MapCreationContext {
            env_spec: &env_spec,
            damage: &damage,
            ddpg: &ddpg,
        };
        let cfg = small_cfg(1, 50);
        let a = run_mmprl(&cfg, &ctx, 7, 1).unwrap();
        let b = run_mmprl(&cfg, &ctx, 7, 1).unwrap();
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        a.archive.write_to(&mut bytes_a).unwrap();
        b.archive.write_to(&mut bytes_b).unwrap();
        assert_eq!(bytes_a, bytes_b);
        assert_eq!(a.stats_csv, b.stats_csv);
        assert_eq!(a.agents_csv, b.agents_csv);
        assert!(a.archive.update_counter() == 50);
    }

    #[test]
    fn single_agent_run_equals_a_plain_sequential_loop() {
        let (env_spec, damage, ddpg) = desk_ctx();
        let ctx = MapCreationContext {
            env_spec: &env_spec,
            damage: &damage,
            ddpg: &ddpg,
        };
        let cfg = small_cfg(1, 40);
        let via_runner = run_mmprl(&cfg, &ctx, 3, 1).unwrap();

        // Reference: the loop body driven directly, no worker machinery.
        let seeds = derive_agent_seeds(3, 1);
        let archive = Archive::new(
            env_spec.n_legs,
            cfg.descriptor_bins,
            ddpg.actor_spec(env_spec.observation_dim(), env_spec.action_dim())
                .unwrap(),
            ddpg.critic_spec(env_spec.observation_dim(), env_spec.action_dim())
                .unwrap(),
        )
        .unwrap();
        let cell = RefCell::new(archive);
        let local = LocalMap(&cell);
        let mut state = MmprlAgent::new(0, &ctx, cfg.i_init[0], seeds[0]).unwrap();
        for _ in 0..cfg.budget {
            mmprl_agent_step(&mut state, &local, cfg.freq).unwrap();
        }
        let reference = cell.into_inner();

        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        via_runner.archive.write_to(&mut bytes_a).unwrap();
        reference.write_to(&mut bytes_b).unwrap();
        assert_eq!(bytes_a, bytes_b, "runner must equal the sequential loop");
    }

    #[test]
    fn occupancy_is_nondecreasing_across_snapshots() {
        let (env_spec, damage, ddpg) = desk_ctx();
        let ctx = MapCreationContext {
            env_spec: &env_spec,
            damage: &damage,
            ddpg: &ddpg,
        };
        let result = run_mmprl(&small_cfg(2, 60), &ctx, 11, 1).unwrap();
        let mut last = 0usize;
        for line in result.stats_csv.lines().skip(1) {
            let occupied: usize = line.split(',').nth(1).unwrap().parse().unwrap();
            assert!(occupied >= last, "occupancy dropped: {line}");
            last = occupied;
        }
        assert!(last > 0);
    }

    #[test]
    fn multi_worker_run_keeps_counter_and_elitism() {
        let (env_spec, damage, ddpg) = desk_ctx();
        let ctx = MapCreationContext {
            env_spec: &env_spec,
            damage: &damage,
            ddpg: &ddpg,
        };
        let result = run_mmprl(&small_cfg(2, 40), &ctx, 5, 2).unwrap();
        assert_eq!(result.archive.update_counter(), 40);
        for cell in result.archive.cells() {
            assert!(cell.performance.is_finite());
        }
    }

    #[test]
    fn baseline_zero_budget_is_empty() {
        let (env_spec, damage, ddpg) = desk_ctx();
        let ctx = MapCreationContext {
            env_spec: &env_spec,
            damage: &damage,
            ddpg: &ddpg,
        };
        let result = run_mapelites(&MapElitesConfig::default(), &ctx, 5, 10, 0, 1).unwrap();
        assert_eq!(result.archive.len(), 0);
    }

    #[test]
    fn baseline_init_parameters_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let p = random_params(100, (-5.0, 5.0), &mut rng);
            assert!(p.iter().all(|v| (-5.0..=5.0).contains(v)));
        }
    }

    #[test]
    fn zero_mutation_std_copies_the_parent_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let parent = random_params(50, (-5.0, 5.0), &mut rng);
        let child = mutate_params(&parent, 0.0, &mut rng);
        assert_eq!(parent, child);
    }

    #[test]
    fn baseline_run_is_seed_deterministic_and_counts_updates() {
        let (env_spec, damage, ddpg) = desk_ctx();
        let ctx = MapCreationContext {
            env_spec: &env_spec,
            damage: &damage,
            ddpg: &ddpg,
        };
        let cfg = MapElitesConfig {
            init_iterations: 3,
            episodes_per_policy: 4,
            ..Default::default()
        };
        let a = run_mapelites(&cfg, &ctx, 5, 10, 30, 9).unwrap();
        let b = run_mapelites(&cfg, &ctx, 5, 10, 30, 9).unwrap();
        assert_eq!(a.archive.update_counter(), 30);
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        a.archive.write_to(&mut bytes_a).unwrap();
        b.archive.write_to(&mut bytes_b).unwrap();
        assert_eq!(bytes_a, bytes_b);
        assert_eq!(a.stats_csv, b.stats_csv);
        assert!(a.archive.len() > 0);
    }

    #[test]
    fn mmprl_and_baseline_share_the_archive_shape() {
        let (env_spec, damage, ddpg) = desk_ctx();
        let ctx = MapCreationContext {
            env_spec: &env_spec,
            damage: &damage,
            ddpg: &ddpg,
        };
        let a = run_mmprl(&small_cfg(1, 10), &ctx, 2, 1).unwrap();
        let b = run_mapelites(&MapElitesConfig::default(), &ctx, 5, 10, 10, 2).unwrap();
        assert_eq!(a.archive.dims(), b.archive.dims());
        assert_eq!(a.archive.bins(), b.archive.bins());
        assert_eq!(a.archive.actor_spec(), b.archive.actor_spec());
        // Stats CSVs share one schema for joint plotting.
        assert_eq!(
            a.stats_csv.lines().next(),
            b.stats_csv.lines().next()
        );
    }
}
