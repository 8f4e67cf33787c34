//! The behavior-performance map: a discrete multi-dimensional grid of cells,
//! each holding at most one policy (actor and critic parameters) together with
//! its measured performance. Insertion is elitist: a stored cell is only ever
//! replaced by a strictly better performer, so per-cell performance is
//! monotonically non-decreasing over the archive's lifetime.

use crate::error::{Error, Result};
use crate::nnet::NetSpec;
use crate::wire;
use rand::Rng;
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 6] = b"QDMAP1";

/// Discrete archive coordinate: `dims` integers, each in `[0, bins)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BehaviorDescriptor {
    pub coords: Vec<u8>,
}

impl BehaviorDescriptor {
    pub fn new(coords: Vec<u8>) -> Self {
        Self { coords }
    }

    /// Coordinates scaled to `[0,1]` per dimension (bin 0 maps to 0, the top
    /// bin to 1), the space in which kernel distances are measured.
    pub fn normalized(&self, bins: usize) -> Vec<f64> {
        let denom = (bins - 1).max(1) as f64;
        self.coords.iter().map(|&c| c as f64 / denom).collect()
    }
}

impl std::fmt::Display for BehaviorDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.coords.iter().map(|c| c.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// One stored policy with its performance (forward distance in meters).
#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveCell {
    pub descriptor: BehaviorDescriptor,
    pub performance: f64,
    pub actor_params: Vec<f64>,
    pub critic_params: Vec<f64>,
}

/// Result of an insertion attempt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    NewCell,
    Improved,
    Rejected,
}

/// Occupancy and performance summary over the occupied cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArchiveStats {
    pub occupied: usize,
    pub occupancy_ratio: f64,
    pub mean_perf: Option<f64>,
    pub std_perf: Option<f64>,
    pub max_perf: Option<f64>,
    pub p25_perf: Option<f64>,
    pub p75_perf: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Archive {
    dims: usize,
    bins: usize,
    actor_spec: NetSpec,
    critic_spec: NetSpec,
    cells: BTreeMap<Vec<u8>, ArchiveCell>,
    update_counter: u64,
}

impl Archive {
    pub fn new(dims: usize, bins: usize, actor_spec: NetSpec, critic_spec: NetSpec) -> Result<Self> {
        if dims == 0 {
            return Err(Error::Config("archive needs at least one dimension".into()));
        }
        if !(2..=256).contains(&bins) {
            return Err(Error::Config(format!(
                "bins per dimension must be in 2..=256, got {bins}"
            )));
        }
        Ok(Self {
            dims,
            bins,
            actor_spec,
            critic_spec,
            cells: BTreeMap::new(),
            update_counter: 0,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn actor_spec(&self) -> &NetSpec {
        &self.actor_spec
    }

    pub fn critic_spec(&self) -> &NetSpec {
        &self.critic_spec
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn update_counter(&self) -> u64 {
        self.update_counter
    }

    pub fn total_cells(&self) -> u64 {
        (self.bins as u64).pow(self.dims as u32)
    }

    pub fn get(&self, descriptor: &BehaviorDescriptor) -> Option<&ArchiveCell> {
        self.cells.get(&descriptor.coords)
    }

    /// Occupied cells in lexicographic coordinate order.
    pub fn cells(&self) -> impl Iterator<Item = &ArchiveCell> {
        self.cells.values()
    }

    fn check_descriptor(&self, descriptor: &BehaviorDescriptor) -> Result<()> {
        if descriptor.coords.len() != self.dims {
            return Err(Error::Shape(format!(
                "descriptor has {} coordinates, archive has {} dimensions",
                descriptor.coords.len(),
                self.dims
            )));
        }
        if let Some(&c) = descriptor.coords.iter().find(|&&c| c as usize >= self.bins) {
            return Err(Error::Shape(format!(
                "coordinate {c} out of range for {} bins",
                self.bins
            )));
        }
        Ok(())
    }

    /// Elitist insertion: stores iff the cell is empty or the candidate's
    /// performance is strictly greater. Counts every attempt.
    pub fn try_insert(
        &mut self,
        descriptor: BehaviorDescriptor,
        performance: f64,
        actor_params: Vec<f64>,
        critic_params: Vec<f64>,
    ) -> Result<InsertOutcome> {
        self.check_descriptor(&descriptor)?;
        if !performance.is_finite() {
            return Err(Error::Numeric(format!(
                "cell performance must be finite, got {performance}"
            )));
        }
        if actor_params.len() != self.actor_spec.param_count() {
            return Err(Error::Shape(format!(
                "actor parameter vector has {} entries, archive stores {}",
                actor_params.len(),
                self.actor_spec.param_count()
            )));
        }
        if critic_params.len() != self.critic_spec.param_count() {
            return Err(Error::Shape(format!(
                "critic parameter vector has {} entries, archive stores {}",
                critic_params.len(),
                self.critic_spec.param_count()
            )));
        }
        self.update_counter += 1;
        let outcome = match self.cells.get(&descriptor.coords) {
            None => InsertOutcome::NewCell,
            Some(cell) if cell.performance < performance => InsertOutcome::Improved,
            Some(_) => InsertOutcome::Rejected,
        };
        if outcome != InsertOutcome::Rejected {
            let coords = descriptor.coords.clone();
            self.cells.insert(
                coords,
                ArchiveCell {
                    descriptor,
                    performance,
                    actor_params,
                    critic_params,
                },
            );
        }
        Ok(outcome)
    }

    /// Uniform draw over occupied cells.
    pub fn random_cell<R: Rng>(&self, rng: &mut R) -> Result<&ArchiveCell> {
        if self.cells.is_empty() {
            return Err(Error::EmptyArchive);
        }
        let idx = rng.random_range(0..self.cells.len());
        Ok(self.cells.values().nth(idx).unwrap())
    }

    /// Cell with the highest stored performance (smallest coordinate on ties).
    pub fn best_cell(&self) -> Option<&ArchiveCell> {
        let mut best: Option<&ArchiveCell> = None;
        for cell in self.cells.values() {
            match best {
                None => best = Some(cell),
                Some(b) if cell.performance > b.performance => best = Some(cell),
                _ => {}
            }
        }
        best
    }

    pub fn stats(&self) -> ArchiveStats {
        let occupied = self.cells.len();
        let ratio = occupied as f64 / self.total_cells() as f64;
        if occupied == 0 {
            return ArchiveStats {
                occupied,
                occupancy_ratio: ratio,
                mean_perf: None,
                std_perf: None,
                max_perf: None,
                p25_perf: None,
                p75_perf: None,
            };
        }
        let n = occupied as f64;
        let mean = self.cells.values().map(|c| c.performance).sum::<f64>() / n;
        let var = self
            .cells
            .values()
            .map(|c| (c.performance - mean).powi(2))
            .sum::<f64>()
            / n;
        let mut sorted: Vec<f64> = self.cells.values().map(|c| c.performance).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ArchiveStats {
            occupied,
            occupancy_ratio: ratio,
            mean_perf: Some(mean),
            std_perf: Some(var.sqrt()),
            max_perf: Some(*sorted.last().unwrap()),
            p25_perf: Some(percentile(&sorted, 0.25)),
            p75_perf: Some(percentile(&sorted, 0.75)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        wire::write_u8(w, self.dims as u8)?;
        wire::write_u8(w, (self.bins - 1) as u8)?;
        wire::write_u64(w, self.update_counter)?;
        self.actor_spec.encode(w)?;
        self.critic_spec.encode(w)?;
        wire::write_u64(w, self.cells.len() as u64)?;
        for cell in self.cells.values() {
            w.write_all(&cell.descriptor.coords)?;
            wire::write_f64(w, cell.performance)?;
            write_param_payload(w, &self.actor_spec, &cell.actor_params)?;
            write_param_payload(w, &self.critic_spec, &cell.critic_params)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        Self::read_from(&mut r)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)
            .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "bad magic bytes {magic:?}, not an archive file"
            )));
        }
        let dims = wire::read_u8(r)? as usize;
        let bins = wire::read_u8(r)? as usize + 1;
        let update_counter = wire::read_u64(r)?;
        let actor_spec = NetSpec::decode(r)?;
        let critic_spec = NetSpec::decode(r)?;
        let n_cells = wire::read_u64(r)?;
        let mut archive = Self::new(dims, bins, actor_spec, critic_spec)?;
        archive.update_counter = update_counter;
        for i in 0..n_cells {
            let cell = read_cell(r, &archive).map_err(|e| match e {
                Error::Format(msg) => Error::Format(format!("cell {i}: {msg}")),
                other => other,
            })?;
            archive.cells.insert(cell.descriptor.coords.clone(), cell);
        }
        Ok(archive)
    }
}

fn read_cell<R: Read>(r: &mut R, archive: &Archive) -> Result<ArchiveCell> {
    let mut coords = vec![0u8; archive.dims];
    r.read_exact(&mut coords)
        .map_err(|e| Error::Format(format!("truncated coordinates: {e}")))?;
    if coords.iter().any(|&c| c as usize >= archive.bins) {
        return Err(Error::Format(format!(
            "coordinate out of range in {coords:?}"
        )));
    }
    let performance = wire::read_f64(r)?;
    let actor_params = read_param_payload(r, &archive.actor_spec, "actor")?;
    let critic_params = read_param_payload(r, &archive.critic_spec, "critic")?;
    Ok(ArchiveCell {
        descriptor: BehaviorDescriptor::new(coords),
        performance,
        actor_params,
        critic_params,
    })
}

/// Cell payloads carry their own layer-size header ahead of the little-endian
/// floats so a payload is decodable on its own; the loader checks it against
/// the archive header.
fn write_param_payload<W: Write>(w: &mut W, spec: &NetSpec, params: &[f64]) -> Result<()> {
    spec.encode(w)?;
    wire::write_u64(w, params.len() as u64)?;
    for &p in params {
        wire::write_f64(w, p)?;
    }
    Ok(())
}

fn read_param_payload<R: Read>(r: &mut R, expected: &NetSpec, which: &str) -> Result<Vec<f64>> {
    let spec = NetSpec::decode(r)?;
    if &spec != expected {
        return Err(Error::Format(format!(
            "{which} payload topology does not match the archive header"
        )));
    }
    let n = wire::read_u64(r)? as usize;
    if n != expected.param_count() {
        return Err(Error::Format(format!(
            "{which} payload has {n} parameters, topology needs {}",
            expected.param_count()
        )));
    }
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        params.push(wire::read_f64(r)?);
    }
    Ok(params)
}

/// Linear-interpolated percentile over an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Stance-time fractions to a descriptor: each fraction maps to the nearest of
/// `bins` uniformly spaced centers in `[0,1]`; exact midpoints round down.
pub fn quantize_stance(fractions: &[f64], bins: usize) -> Result<BehaviorDescriptor> {
    let mut coords = Vec::with_capacity(fractions.len());
    for &f in fractions {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Shape(format!(
                "stance fraction {f} outside [0,1]"
            )));
        }
        let x = f * (bins - 1) as f64;
        coords.push((x - 0.5).ceil().max(0.0) as u8);
    }
    Ok(BehaviorDescriptor::new(coords))
}

/// Joint-signature descriptor: per joint pair `(i, j)` the accumulated
/// absolute difference and absolute sum of the two angle traces, each entry
/// quantized uniformly into `bins` values between its configured bounds
/// (values are clamped to the bounds first). `bounds` holds one `(min, max)`
/// per descriptor entry: first all difference entries, then all sum entries.
pub fn joint_signature_descriptor(
    angle_traces: &[Vec<f64>],
    pairs: &[(usize, usize)],
    bounds: &[(f64, f64)],
    bins: usize,
) -> Result<BehaviorDescriptor> {
    if angle_traces.is_empty() {
        return Err(Error::Shape("angle trace is empty".into()));
    }
    let n_joints = angle_traces[0].len();
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= n_joints || j >= n_joints) {
        return Err(Error::Shape(format!(
            "joint pair ({i},{j}) out of range for {n_joints} joints"
        )));
    }
    if bounds.len() != 2 * pairs.len() {
        return Err(Error::Config(format!(
            "need {} bounds (one per descriptor entry), got {}",
            2 * pairs.len(),
            bounds.len()
        )));
    }
    if let Some((min, max)) = bounds.iter().find(|(min, max)| min >= max) {
        return Err(Error::Config(format!(
            "descriptor bound min {min} must be below max {max}"
        )));
    }
    let mut entries = Vec::with_capacity(2 * pairs.len());
    for &(i, j) in pairs {
        let diff: f64 = angle_traces
            .iter()
            .map(|step| (step[j] - step[i]).abs())
            .sum();
        entries.push(diff);
    }
    for &(i, j) in pairs {
        let sum: f64 = angle_traces
            .iter()
            .map(|step| (step[j] + step[i]).abs())
            .sum();
        entries.push(sum);
    }
    let coords = entries
        .iter()
        .zip(bounds)
        .map(|(&v, &(min, max))| {
            let clamped = v.clamp(min, max);
            let x = (clamped - min) / (max - min) * (bins - 1) as f64;
            (x - 0.5).ceil().max(0.0) as u8
        })
        .collect();
    Ok(BehaviorDescriptor::new(coords))
}

/// One snapshot row for the stats CSV stream.
pub fn stats_csv_row(update_counter: u64, stats: &ArchiveStats) -> String {
    fn num(v: Option<f64>) -> String {
        match v {
            Some(x) => format!("{x}"),
            None => "nan".to_string(),
        }
    }
    format!(
        "{},{},{},{},{},{},{}",
        update_counter,
        stats.occupied,
        stats.occupancy_ratio,
        num(stats.mean_perf),
        num(stats.p25_perf),
        num(stats.p75_perf),
        num(stats.max_perf),
    )
}

pub const STATS_CSV_HEADER: &str = "update_counter,occupied,ratio,mean,p25,p75,max";
