//! Adaptation by Bayesian optimization over the behavior-performance map.
//!
//! A Gaussian process models how performance has shifted after a change: the
//! map's stored performance is the prior mean, a Matérn 5/2 kernel over
//! normalized descriptor coordinates is the covariance, and each trial
//! evaluates the policy at the upper-confidence-bound argmax. The loop stops
//! once the best observed performance reaches the fraction `alpha` of the
//! best upper confidence bound still on the table.
//!
//! With observations `(chi_i, P_i)` the posterior at an occupied cell `x` is
//!
//! ```text
//! mu(x)      = P(x) + k^T K^-1 (P_1:t - P(chi_1:t))
//! sigma2(x)  = k(x,x) - k^T K^-1 k
//! K          = [k(chi_i, chi_j)] + sigma_noise^2 I
//! k          = [k(x, chi_1), ..., k(x, chi_t)]
//! ```
//!
//! solved through a Cholesky factorization of `K` with jitter escalation.

use crate::archive::{Archive, ArchiveCell, BehaviorDescriptor};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    /// Matérn length-scale over normalized `[0,1]` coordinates.
    pub rho: f64,
    /// Observation noise variance added to the kernel diagonal.
    pub sigma_noise_sq: f64,
    /// UCB exploration weight.
    pub kappa: f64,
    /// Termination fraction: stop once best observed >= alpha * max UCB.
    pub alpha: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            rho: 0.3,
            sigma_noise_sq: 0.001,
            kappa: 0.05,
            alpha: 0.95,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho <= 0.0 {
            return Err(Error::Config(format!("kernel length-scale {} <= 0", self.rho)));
        }
        if self.sigma_noise_sq < 0.0 {
            return Err(Error::Config("observation noise variance < 0".into()));
        }
        if self.kappa < 0.0 {
            return Err(Error::Config("UCB weight < 0".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "termination fraction {} outside [0,1]",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Matérn 5/2 correlation at distance `d` with length-scale `rho`.
pub fn matern52(d: f64, rho: f64) -> f64 {
    let s = 5.0_f64.sqrt() * d / rho;
    (1.0 + s + 5.0 * d * d / (3.0 * rho * rho)) * (-s).exp()
}

/// Kernel between two descriptors, coordinates normalized to `[0,1]` per
/// dimension before taking the Euclidean distance.
pub fn matern_kernel(
    x: &BehaviorDescriptor,
    y: &BehaviorDescriptor,
    bins: usize,
    rho: f64,
) -> Result<f64> {
    if rho <= 0.0 {
        return Err(Error::Config(format!("kernel length-scale {rho} <= 0")));
    }
    if x.coords.len() != y.coords.len() {
        return Err(Error::Shape(format!(
            "descriptor dimensions differ: {} vs {}",
            x.coords.len(),
            y.coords.len()
        )));
    }
    let denom = (bins - 1).max(1) as f64;
    let d2: f64 = x
        .coords
        .iter()
        .zip(&y.coords)
        .map(|(&a, &b)| {
            let d = (a as f64 - b as f64) / denom;
            d * d
        })
        .sum();
    Ok(matern52(d2.sqrt(), rho))
}

/// One adaptation-phase observation: a selected coordinate and the
/// performance its stored policy achieved under the changed conditions.
#[derive(Clone, Debug)]
pub struct GpObservation {
    pub coords: BehaviorDescriptor,
    pub performance: f64,
    prior: f64,
}

/// Gaussian-process posterior over the occupied cells of an archive.
///
/// The Cholesky factor of the regularized Gram matrix grows one row per
/// observation, and every occupied cell carries its solved vector
/// `v = L^-1 k(cell, chi_1:t)` plus two running reductions of it, which makes
/// a posterior query O(1) and a new observation O(cells x t).
pub struct GpPosterior<'a> {
    archive: &'a Archive,
    cfg: GpConfig,
    observations: Vec<GpObservation>,
    /// Lower-triangular Cholesky rows of `Gram + noise I`; row `i` has `i+1` entries.
    chol_rows: Vec<Vec<f64>>,
    /// `z = L^-1 (P_1:t - P(chi_1:t))`, extended per observation.
    z: Vec<f64>,
    /// Noise variance actually used (escalated when factorization fails).
    effective_noise: f64,
    /// Occupied cells in lexicographic coordinate order, frozen at creation.
    cells: Vec<&'a ArchiveCell>,
    index: std::collections::BTreeMap<Vec<u8>, usize>,
    /// Per cell: `v = L^-1 k`, its squared norm, and `v . z`.
    v: Vec<Vec<f64>>,
    v_sumsq: Vec<f64>,
    v_dot_z: Vec<f64>,
}

impl<'a> GpPosterior<'a> {
    pub fn new(archive: &'a Archive, cfg: GpConfig) -> Result<Self> {
        cfg.validate()?;
        let cells: Vec<&ArchiveCell> = archive.cells().collect();
        let index = cells
            .iter()
            .enumerate()
            .map(|(i, c)| (c.descriptor.coords.clone(), i))
            .collect();
        let n = cells.len();
        Ok(Self {
            archive,
            cfg,
            observations: Vec::new(),
            chol_rows: Vec::new(),
            z: Vec::new(),
            effective_noise: cfg.sigma_noise_sq,
            cells,
            index,
            v: vec![Vec::new(); n],
            v_sumsq: vec![0.0; n],
            v_dot_z: vec![0.0; n],
        })
    }

    pub fn config(&self) -> &GpConfig {
        &self.cfg
    }

    pub fn observations(&self) -> &[GpObservation] {
        &self.observations
    }

    fn kernel(&self, x: &BehaviorDescriptor, y: &BehaviorDescriptor) -> f64 {
        // rho > 0 and equal dims hold by construction here.
        matern_kernel(x, y, self.archive.bins(), self.cfg.rho).unwrap()
    }

    /// Record an observed performance at an occupied coordinate. Re-observing
    /// a coordinate is allowed and simply adds a row.
    pub fn observe(&mut self, coords: BehaviorDescriptor, performance: f64) -> Result<()> {
        let cell = self.archive.get(&coords).ok_or_else(|| {
            Error::Shape(format!("observation at unoccupied coordinate {coords}"))
        })?;
        if !performance.is_finite() {
            return Err(Error::Numeric(format!(
                "observed performance must be finite, got {performance}"
            )));
        }
        self.observations.push(GpObservation {
            coords,
            performance,
            prior: cell.performance,
        });
        if self.extend_factorization().is_ok() {
            return Ok(());
        }
        // Near-singular extension: rebuild from scratch with escalated jitter.
        self.rebuild_with_escalation()
    }

    /// Append one row to `L`, `z`, and every cell's solved vector.
    fn extend_factorization(&mut self) -> std::result::Result<(), ()> {
        let t = self.chol_rows.len();
        let new = &self.observations[t];
        // l = L^-1 k(chi_new, chi_1:t), d^2 = 1 + noise - |l|^2.
        let mut l: Vec<f64> = (0..t)
            .map(|i| self.kernel(&new.coords, &self.observations[i].coords))
            .collect();
        for i in 0..t {
            let mut s = l[i];
            for k in 0..i {
                s -= self.chol_rows[i][k] * l[k];
            }
            l[i] = s / self.chol_rows[i][i];
        }
        let d2 = 1.0 + self.effective_noise - l.iter().map(|v| v * v).sum::<f64>();
        if d2 <= 1e-12 || !d2.is_finite() {
            return Err(());
        }
        let d = d2.sqrt();
        let z_new = (new.performance - new.prior - dot(&l, &self.z)) / d;
        self.z.push(z_new);
        for (ci, cell) in self.cells.iter().enumerate() {
            let k_new = self.kernel(&cell.descriptor, &new.coords);
            let v_new = (k_new - dot(&l, &self.v[ci])) / d;
            self.v[ci].push(v_new);
            self.v_sumsq[ci] += v_new * v_new;
            self.v_dot_z[ci] += v_new * z_new;
        }
        l.push(d);
        self.chol_rows.push(l);
        Ok(())
    }

    /// Full refactorization with jitter escalation: retry with 10x the noise
    /// variance, three times, rebuilding every cached solve.
    fn rebuild_with_escalation(&mut self) -> Result<()> {
        let t = self.observations.len();
        let mut noise = self.effective_noise;
        for attempt in 0..4 {
            if attempt > 0 {
                noise = if noise > 0.0 { noise * 10.0 } else { 1e-12 };
            }
            if self.try_rebuild(noise) {
                self.effective_noise = noise;
                return Ok(());
            }
        }
        // Gershgorin-based condition estimate for the error report.
        let mut upper: f64 = 0.0;
        let mut lower = f64::INFINITY;
        for i in 0..t {
            let off: f64 = (0..t)
                .filter(|&j| j != i)
                .map(|j| self.kernel(&self.observations[i].coords, &self.observations[j].coords).abs())
                .sum();
            let d = 1.0 + noise;
            upper = upper.max(d + off);
            lower = lower.min(d - off);
        }
        let cond = upper / lower.max(f64::MIN_POSITIVE);
        Err(Error::Numeric(format!(
            "gram matrix of {t} observations not positive definite after jitter escalation \
             (condition number estimate {cond:.3e})"
        )))
    }

    fn try_rebuild(&mut self, noise: f64) -> bool {
        let t = self.observations.len();
        let saved_noise = self.effective_noise;
        self.effective_noise = noise;
        self.chol_rows.clear();
        self.z.clear();
        for v in self.v.iter_mut() {
            v.clear();
        }
        self.v_sumsq.iter_mut().for_each(|s| *s = 0.0);
        self.v_dot_z.iter_mut().for_each(|s| *s = 0.0);
        for _ in 0..t {
            if self.extend_factorization().is_err() {
                self.effective_noise = saved_noise;
                return false;
            }
        }
        true
    }

    /// Posterior mean and variance at an occupied coordinate.
    pub fn predict(&mut self, x: &BehaviorDescriptor) -> Result<(f64, f64)> {
        let ci = *self
            .index
            .get(&x.coords)
            .ok_or_else(|| Error::Shape(format!("prediction at unoccupied coordinate {x}")))?;
        Ok(self.predict_indexed(ci))
    }

    fn predict_indexed(&self, ci: usize) -> (f64, f64) {
        let mu = self.cells[ci].performance + self.v_dot_z[ci];
        // sigma^2 = k(x,x) - |L^-1 k|^2, clamped against round-off.
        let var = (1.0 - self.v_sumsq[ci]).max(0.0);
        (mu, var)
    }

    /// Best UCB cell among occupied cells not in `exclude`; ties go to the
    /// lexicographically smallest coordinate. Also reports the posterior-mean
    /// maximum and UCB maximum of the scanned cells.
    pub fn scan(
        &mut self,
        exclude: &BTreeSet<Vec<u8>>,
    ) -> Result<(BehaviorDescriptor, f64, f64)> {
        if self.cells.is_empty() {
            return Err(Error::EmptyArchive);
        }
        let mut best: Option<(usize, f64)> = None;
        let mut max_mu = f64::NEG_INFINITY;
        for ci in 0..self.cells.len() {
            if !exclude.is_empty() && exclude.contains(&self.cells[ci].descriptor.coords) {
                continue;
            }
            let (mu, var) = self.predict_indexed(ci);
            let ucb = mu + self.cfg.kappa * var.sqrt();
            max_mu = max_mu.max(mu);
            match best {
                None => best = Some((ci, ucb)),
                Some((_, b)) if ucb > b => best = Some((ci, ucb)),
                _ => {}
            }
        }
        let (ci, ucb) = best.ok_or_else(|| {
            Error::Numeric("every occupied cell is excluded from selection".into())
        })?;
        Ok((self.cells[ci].descriptor.clone(), max_mu, ucb))
    }

    /// Next coordinate to try: the UCB argmax over occupied cells.
    pub fn select_next(&mut self) -> Result<BehaviorDescriptor> {
        Ok(self.scan(&BTreeSet::new())?.0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One row of the adaptation trace.
#[derive(Clone, Debug)]
pub struct TrialRecord {
    pub trial: usize,
    pub coords: BehaviorDescriptor,
    /// `-inf` marks an evaluation fault.
    pub observed_perf: f64,
    pub posterior_max: f64,
    pub ucb_max: f64,
    pub stopped: bool,
}

#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    pub best_coords: BehaviorDescriptor,
    pub best_performance: f64,
    pub trials: usize,
    pub stopped_early: bool,
    pub trace: Vec<TrialRecord>,
}

/// The adaptation loop: select by UCB, evaluate the stored policy once,
/// condition the posterior on the outcome, and stop at the `alpha` bound or
/// the trial budget. Evaluation faults are recorded with a `-inf` sentinel
/// and the faulted cell is withheld from later selections.
pub fn adapt<F>(
    archive: &Archive,
    mut evaluate: F,
    cfg: &GpConfig,
    max_trials: usize,
) -> Result<AdaptOutcome>
where
    F: FnMut(&ArchiveCell) -> Result<f64>,
{
    if archive.is_empty() {
        return Err(Error::EmptyArchive);
    }
    cfg.validate()?;
    let mut gp = GpPosterior::new(archive, *cfg)?;
    let mut failed: BTreeSet<Vec<u8>> = BTreeSet::new();
    let mut best: Option<(BehaviorDescriptor, f64)> = None;
    let mut trace = Vec::new();
    let mut stopped_early = false;

    for trial in 1..=max_trials {
        let (coords, _, _) = gp.scan(&failed)?;
        let cell = archive.get(&coords).unwrap();
        let observed = match evaluate(cell) {
            Ok(p) if p.is_finite() => Some(p),
            _ => None,
        };
        match observed {
            Some(p) => {
                gp.observe(coords.clone(), p)?;
                if best.as_ref().map_or(true, |(_, b)| p > *b) {
                    best = Some((coords.clone(), p));
                }
            }
            None => {
                failed.insert(coords.coords.clone());
            }
        }
        let (posterior_max, ucb_max) = match gp.scan(&failed) {
            Ok((_, max_mu, max_ucb)) => (max_mu, max_ucb),
            // Every remaining cell failed; fall back to the trace so far.
            Err(_) => (f64::NEG_INFINITY, f64::NEG_INFINITY),
        };
        let stopped = match &best {
            Some((_, b)) => *b >= cfg.alpha * ucb_max,
            None => false,
        };
        trace.push(TrialRecord {
            trial,
            coords,
            observed_perf: observed.unwrap_or(f64::NEG_INFINITY),
            posterior_max,
            ucb_max,
            stopped,
        });
        if stopped {
            stopped_early = true;
            break;
        }
        if failed.len() == archive.len() {
            break;
        }
    }

    let (best_coords, best_performance) = best.ok_or_else(|| {
        Error::Numeric("no evaluation succeeded during adaptation".into())
    })?;
    Ok(AdaptOutcome {
        best_coords,
        best_performance,
        trials: trace.len(),
        stopped_early,
        trace,
    })
}

pub const ADAPT_TRACE_CSV_HEADER: &str = "trial,coords,observed_perf,posterior_max,ucb_max,stopped";

/// Trace rows as CSV; coordinates are `;`-joined to stay a single field.
pub fn adapt_trace_csv(trace: &[TrialRecord]) -> String {
    let mut out = String::new();
    for r in trace {
        let coords: Vec<String> = r.coords.coords.iter().map(|c| c.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.trial,
            coords.join(";"),
            r.observed_perf,
            r.posterior_max,
            r.ucb_max,
            r.stopped as u8
        ));
    }
    out
}
