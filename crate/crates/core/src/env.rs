//! Deterministic planar crawler with injectable damage.
//!
//! The crawler is a kinematic stand-in for a legged robot: each leg takes a
//! lift command and a push command, legs with the lift at or below zero are in
//! stance, and stance legs convert their (nonnegative) push into forward
//! progress. Damage is injected as per-leg push-gain reduction (appendage
//! loss), observation delay, terrain difficulty segments, and a constant
//! slope drag. Everything is deterministic given spec, damage, seed and the
//! action sequence, which is what makes map creation and adaptation runs
//! replayable.

use crate::archive::{Archive, ArchiveCell, BehaviorDescriptor};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Static parameters of the crawler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub n_legs: usize,
    pub control_min: f64,
    pub control_max: f64,
    /// Meters gained per step when every leg pushes at full strength.
    pub step_gain: f64,
    pub max_steps: usize,
    /// The crawler falls after this many consecutive steps with fewer than
    /// `fall_stance_min` stance legs.
    pub fall_stance_min: usize,
    pub fall_window: usize,
    pub survival_reward: f64,
    pub stance_weight: f64,
    /// Kept for configuration completeness; the kinematic model has no torque.
    pub torque_weight: f64,
    pub action_weight: f64,
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self {
            n_legs: 6,
            control_min: -1.0,
            control_max: 1.0,
            step_gain: 0.05,
            max_steps: 1000,
            fall_stance_min: 2,
            fall_window: 3,
            survival_reward: 0.1,
            stance_weight: 0.03,
            torque_weight: 0.0005,
            action_weight: 0.05,
        }
    }
}

impl EnvSpec {
    pub fn action_dim(&self) -> usize {
        2 * self.n_legs
    }

    /// contacts + previous action + body velocity + terrain difficulty.
    pub fn observation_dim(&self) -> usize {
        self.n_legs + 2 * self.n_legs + 2
    }

    pub fn control_width(&self) -> f64 {
        self.control_max - self.control_min
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_legs < 2 {
            return Err(Error::Config("crawler needs at least 2 legs".into()));
        }
        if self.control_min >= self.control_max {
            return Err(Error::Config("control range is empty".into()));
        }
        if self.step_gain <= 0.0 {
            return Err(Error::Config("step gain must be positive".into()));
        }
        if self.max_steps == 0 || self.fall_window == 0 {
            return Err(Error::Config("step limits must be positive".into()));
        }
        Ok(())
    }
}

/// A leg whose push effectiveness is scaled down; gain 0.3 models a damaged
/// but still useful appendage, gain 0.0 a complete loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisabledLeg {
    pub leg: usize,
    pub gain: f64,
}

/// Terrain difficulty from `start_x` onward (until the next segment).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainSegment {
    pub start_x: f64,
    pub difficulty: f64,
}

/// Seeded random terrain: segments of random depth and difficulty after an
/// initial clear stretch, the stairs-course analog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainGen {
    pub max_difficulty: f64,
    pub first_clear: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    pub extent: f64,
}

/// The injected body/environment change. The default is an intact crawler on
/// flat ground.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DamageConfig {
    #[serde(default)]
    pub obs_delay: usize,
    #[serde(default)]
    pub gravity_slope: f64,
    #[serde(default)]
    pub disabled_legs: Vec<DisabledLeg>,
    #[serde(default)]
    pub terrain: Vec<TerrainSegment>,
    #[serde(default)]
    pub terrain_gen: Option<TerrainGen>,
}

impl DamageConfig {
    pub fn validate(&self, spec: &EnvSpec) -> Result<()> {
        for d in &self.disabled_legs {
            if d.leg >= spec.n_legs {
                return Err(Error::Config(format!(
                    "disabled leg index {} out of range for {} legs",
                    d.leg, spec.n_legs
                )));
            }
            if !(0.0..=1.0).contains(&d.gain) {
                return Err(Error::Config(format!(
                    "disabled leg gain {} outside [0,1]",
                    d.gain
                )));
            }
        }
        if self.obs_delay > spec.max_steps {
            return Err(Error::Config(format!(
                "observation delay {} exceeds episode length {}",
                self.obs_delay, spec.max_steps
            )));
        }
        if !self.terrain.is_empty() && self.terrain_gen.is_some() {
            return Err(Error::Config(
                "terrain segments and terrain_gen are mutually exclusive".into(),
            ));
        }
        for seg in &self.terrain {
            if !(0.0..=1.0).contains(&seg.difficulty) {
                return Err(Error::Config(format!(
                    "terrain difficulty {} outside [0,1]",
                    seg.difficulty
                )));
            }
        }
        if let Some(gen) = &self.terrain_gen {
            if !(0.0..=1.0).contains(&gen.max_difficulty)
                || gen.depth_min <= 0.0
                || gen.depth_max < gen.depth_min
                || gen.extent <= 0.0
            {
                return Err(Error::Config("invalid terrain generator".into()));
            }
        }
        if !(-1.0..=1.0).contains(&self.gravity_slope) {
            return Err(Error::Config(format!(
                "gravity slope {} outside [-1,1]",
                self.gravity_slope
            )));
        }
        Ok(())
    }
}

/// What one environment step reports besides the (possibly delayed) observation.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// True when the episode ended through the fall rule rather than the step
    /// limit; only these transitions drop the bootstrap term in learning.
    pub fell: bool,
    pub delta_x: f64,
    pub stance_count: usize,
    pub stance: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct CrawlerEnv {
    spec: EnvSpec,
    damage: DamageConfig,
    /// Per-leg push gain after damage.
    gains: Vec<f64>,
    terrain: Vec<TerrainSegment>,
    body_x: f64,
    stance: Vec<bool>,
    low_stance_streak: usize,
    step_index: usize,
    done: bool,
    obs_queue: VecDeque<Vec<f64>>,
}

impl CrawlerEnv {
    pub fn new(spec: EnvSpec, damage: DamageConfig) -> Result<Self> {
        spec.validate()?;
        damage.validate(&spec)?;
        let mut gains = vec![1.0; spec.n_legs];
        for d in &damage.disabled_legs {
            gains[d.leg] = d.gain;
        }
        let n = spec.n_legs;
        Ok(Self {
            spec,
            damage,
            gains,
            terrain: Vec::new(),
            body_x: 0.0,
            stance: vec![true; n],
            low_stance_streak: 0,
            step_index: 0,
            done: false,
            obs_queue: VecDeque::new(),
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Start a fresh episode. The seed only drives terrain realization, so an
    /// intact flat run is identical for every seed.
    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.terrain = match &self.damage.terrain_gen {
            Some(gen) => realize_terrain(gen, seed),
            None => {
                let mut t = self.damage.terrain.clone();
                t.sort_by(|a, b| a.start_x.partial_cmp(&b.start_x).unwrap());
                t
            }
        };
        self.body_x = 0.0;
        self.stance.iter_mut().for_each(|s| *s = true);
        self.low_stance_streak = 0;
        self.step_index = 0;
        self.done = false;

        let initial = self.undelayed_obs(&vec![0.0; self.spec.action_dim()], 0.0);
        self.obs_queue.clear();
        for _ in 0..self.damage.obs_delay {
            self.obs_queue.push_back(initial.clone());
        }
        initial
    }

    fn difficulty_at(&self, x: f64) -> f64 {
        let mut d = 0.0;
        for seg in &self.terrain {
            if seg.start_x <= x {
                d = seg.difficulty;
            } else {
                break;
            }
        }
        d
    }

    fn undelayed_obs(&self, prev_action: &[f64], velocity: f64) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.spec.observation_dim());
        obs.extend(self.stance.iter().map(|&s| if s { 1.0 } else { 0.0 }));
        obs.extend_from_slice(prev_action);
        obs.push(velocity);
        obs.push(self.difficulty_at(self.body_x));
        obs
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if action.len() != self.spec.action_dim() {
            return Err(Error::Shape(format!(
                "action has {} entries, crawler takes {}",
                action.len(),
                self.spec.action_dim()
            )));
        }
        if action.iter().any(|a| a.is_nan()) {
            return Err(Error::Numeric("NaN in action".into()));
        }
        let clipped: Vec<f64> = action
            .iter()
            .map(|&a| a.clamp(self.spec.control_min, self.spec.control_max))
            .collect();

        for (leg, s) in self.stance.iter_mut().enumerate() {
            *s = clipped[2 * leg] <= 0.0;
        }
        let stance_count = self.stance.iter().filter(|&&s| s).count();

        let difficulty = self.difficulty_at(self.body_x);
        let mut push_sum = 0.0;
        for leg in 0..self.spec.n_legs {
            if self.stance[leg] {
                push_sum += clipped[2 * leg + 1].max(0.0) * self.gains[leg];
            }
        }
        let delta_x = self.spec.step_gain / self.spec.n_legs as f64 * push_sum * (1.0 - difficulty)
            - self.damage.gravity_slope * self.spec.step_gain;
        self.body_x += delta_x;
        self.step_index += 1;

        if stance_count < self.spec.fall_stance_min {
            self.low_stance_streak += 1;
        } else {
            self.low_stance_streak = 0;
        }
        let fell = self.low_stance_streak >= self.spec.fall_window;
        self.done = fell || self.step_index >= self.spec.max_steps;

        let survival = if fell { 0.0 } else { self.spec.survival_reward };
        let action_sq: f64 = clipped.iter().map(|a| a * a).sum();
        let reward = delta_x + survival + self.spec.stance_weight * stance_count as f64
            - self.spec.action_weight * action_sq;

        let fresh = self.undelayed_obs(&clipped, delta_x);
        self.obs_queue.push_back(fresh);
        let obs = self.obs_queue.pop_front().unwrap();

        Ok(StepOutcome {
            obs,
            reward,
            done: self.done,
            fell,
            delta_x,
            stance_count,
            stance: self.stance.clone(),
        })
    }

    pub fn body_x(&self) -> f64 {
        self.body_x
    }

    pub fn done(&self) -> bool {
        self.done
    }
}

fn realize_terrain(gen: &TerrainGen, seed: u64) -> Vec<TerrainSegment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = vec![TerrainSegment {
        start_x: 0.0,
        difficulty: 0.0,
    }];
    let mut x = gen.first_clear;
    while x < gen.extent {
        segments.push(TerrainSegment {
            start_x: x,
            difficulty: rng.random_range(0.0..=gen.max_difficulty),
        });
        x += rng.random_range(gen.depth_min..=gen.depth_max);
    }
    segments
}

/// Per-leg share of episode steps spent in stance.
pub fn stance_fractions(stance_trace: &[Vec<bool>]) -> Vec<f64> {
    if stance_trace.is_empty() {
        return Vec::new();
    }
    let n_legs = stance_trace[0].len();
    let mut fractions = vec![0.0; n_legs];
    for step in stance_trace {
        for (f, &s) in fractions.iter_mut().zip(step) {
            if s {
                *f += 1.0;
            }
        }
    }
    let len = stance_trace.len() as f64;
    fractions.iter_mut().for_each(|f| *f /= len);
    fractions
}

/// CSV export of an episode trace: step, actions, stance bits, delta_x, reward.
pub fn episode_trace_csv(actions: &[Vec<f64>], outcomes: &[StepOutcome]) -> String {
    let mut out = String::from("step");
    if let Some(a0) = actions.first() {
        for i in 0..a0.len() / 2 {
            out.push_str(&format!(",lift_{i},push_{i}"));
        }
    }
    if let Some(o0) = outcomes.first() {
        for i in 0..o0.stance.len() {
            out.push_str(&format!(",stance_{i}"));
        }
    }
    out.push_str(",delta_x,reward\n");
    for (t, (action, outcome)) in actions.iter().zip(outcomes).enumerate() {
        out.push_str(&t.to_string());
        for a in action {
            out.push_str(&format!(",{a}"));
        }
        for &s in &outcome.stance {
            out.push_str(if s { ",1" } else { ",0" });
        }
        out.push_str(&format!(",{},{}\n", outcome.delta_x, outcome.reward));
    }
    out
}

/// Evaluation callback for adaptation tests: the stored performance of each
/// cell is replaced by `perturbation(descriptor, stored)` instead of running
/// a rollout, so the true post-change optimum is known by exhaustive scan.
pub fn synthetic_perturbation_env<'a, F>(
    _archive: &'a Archive,
    perturbation: F,
) -> impl FnMut(&ArchiveCell) -> Result<f64> + 'a
where
    F: Fn(&BehaviorDescriptor, f64) -> f64 + 'a,
{
    move |cell: &ArchiveCell| Ok(perturbation(&cell.descriptor, cell.performance))
}

/// Exhaustive scan for the best cell under a perturbation; the oracle the
/// adaptation loop is checked against.
pub fn perturbed_optimum<F>(archive: &Archive, perturbation: F) -> Option<(BehaviorDescriptor, f64)>
where
    F: Fn(&BehaviorDescriptor, f64) -> f64,
{
    let mut best: Option<(BehaviorDescriptor, f64)> = None;
    for cell in archive.cells() {
        let p = perturbation(&cell.descriptor, cell.performance);
        match &best {
            None => best = Some((cell.descriptor.clone(), p)),
            Some((_, bp)) if p > *bp => best = Some((cell.descriptor.clone(), p)),
            _ => {}
        }
    }
    best
}
