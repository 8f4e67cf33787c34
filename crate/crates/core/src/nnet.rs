//! Minimal feed-forward networks with exact reverse-mode gradients.
//!
//! Two fixed topologies are supported: a plain MLP (used for policies) and a
//! two-branch net whose input groups each pass through their own rectified
//! linear layer before a shared trunk (used for action-value functions).
//! Parameters live in one flat `Vec<f64>` so whole networks can be stored,
//! copied and serialized as plain vectors.

use crate::error::{Error, Result};
use crate::wire;
use rand::Rng;
use std::io::{Read, Write};

/// Activation applied to the final layer. Hidden layers are always rectified.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Tanh,
    Identity,
}

/// Wiring of a [`ParamNet`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Topology {
    /// Plain MLP; `sizes[0]` inputs through hidden layers to `sizes.last()` outputs.
    Mlp { sizes: Vec<usize> },
    /// Input splits into two groups of `left_in` and `right_in` components.
    /// Each group feeds its own rectified linear layer; the concatenated
    /// branch outputs feed an MLP trunk ending at `trunk.last()` outputs.
    TwoBranch {
        left_in: usize,
        left_units: usize,
        right_in: usize,
        right_units: usize,
        trunk: Vec<usize>,
    },
}

/// Topology plus output activation: everything needed to decode a parameter
/// vector back into a runnable network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetSpec {
    pub topology: Topology,
    pub output: OutputActivation,
}

impl NetSpec {
    pub fn mlp(sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!(
                "MLP needs at least two nonzero layer sizes, got {sizes:?}"
            )));
        }
        Ok(Self {
            topology: Topology::Mlp {
                sizes: sizes.to_vec(),
            },
            output,
        })
    }

    pub fn two_branch(
        left_in: usize,
        left_units: usize,
        right_in: usize,
        right_units: usize,
        trunk: &[usize],
        output: OutputActivation,
    ) -> Result<Self> {
        if left_in == 0 || left_units == 0 || right_in == 0 || right_units == 0 {
            return Err(Error::Config(
                "two-branch net needs nonzero branch dimensions".into(),
            ));
        }
        if trunk.is_empty() || trunk.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!(
                "two-branch trunk needs at least an output size, got {trunk:?}"
            )));
        }
        Ok(Self {
            topology: Topology::TwoBranch {
                left_in,
                left_units,
                right_in,
                right_units,
                trunk: trunk.to_vec(),
            },
            output,
        })
    }

    /// `(n_in, n_out)` of every weight layer, in parameter-vector order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        match &self.topology {
            Topology::Mlp { sizes } => sizes.windows(2).map(|w| (w[0], w[1])).collect(),
            Topology::TwoBranch {
                left_in,
                left_units,
                right_in,
                right_units,
                trunk,
            } => {
                let mut dims = vec![(*left_in, *left_units), (*right_in, *right_units)];
                let mut prev = left_units + right_units;
                for &s in trunk {
                    dims.push((prev, s));
                    prev = s;
                }
                dims
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(n_in, n_out)| (n_in + 1) * n_out)
            .sum()
    }

    pub fn input_len(&self) -> usize {
        match &self.topology {
            Topology::Mlp { sizes } => sizes[0],
            Topology::TwoBranch {
                left_in, right_in, ..
            } => left_in + right_in,
        }
    }

    pub fn output_len(&self) -> usize {
        match &self.topology {
            Topology::Mlp { sizes } => *sizes.last().unwrap(),
            Topology::TwoBranch { trunk, .. } => *trunk.last().unwrap(),
        }
    }

    pub fn encode<W: Write>(&self, w: &mut W) -> Result<()> {
        match &self.topology {
            Topology::Mlp { sizes } => {
                wire::write_u8(w, 0)?;
                wire::write_u8(w, self.output as u8)?;
                wire::write_u16(w, sizes.len() as u16)?;
                for &s in sizes {
                    wire::write_u32(w, s as u32)?;
                }
            }
            Topology::TwoBranch {
                left_in,
                left_units,
                right_in,
                right_units,
                trunk,
            } => {
                wire::write_u8(w, 1)?;
                wire::write_u8(w, self.output as u8)?;
                for &v in [left_in, left_units, right_in, right_units].iter() {
                    wire::write_u32(w, *v as u32)?;
                }
                wire::write_u16(w, trunk.len() as u16)?;
                for &s in trunk {
                    wire::write_u32(w, s as u32)?;
                }
            }
        }
        Ok(())
    }

    pub fn decode<R: Read>(r: &mut R) -> Result<Self> {
        let tag = wire::read_u8(r)?;
        let output = match wire::read_u8(r)? {
            0 => OutputActivation::Tanh,
            1 => OutputActivation::Identity,
            o => return Err(Error::Format(format!("unknown output activation tag {o}"))),
        };
        match tag {
            0 => {
                let n = wire::read_u16(r)? as usize;
                let mut sizes = Vec::with_capacity(n);
                for _ in 0..n {
                    sizes.push(wire::read_u32(r)? as usize);
                }
                Self::mlp(&sizes, output).map_err(|e| Error::Format(e.to_string()))
            }
            1 => {
                let left_in = wire::read_u32(r)? as usize;
                let left_units = wire::read_u32(r)? as usize;
                let right_in = wire::read_u32(r)? as usize;
                let right_units = wire::read_u32(r)? as usize;
                let n = wire::read_u16(r)? as usize;
                let mut trunk = Vec::with_capacity(n);
                for _ in 0..n {
                    trunk.push(wire::read_u32(r)? as usize);
                }
                Self::two_branch(left_in, left_units, right_in, right_units, &trunk, output)
                    .map_err(|e| Error::Format(e.to_string()))
            }
            t => Err(Error::Format(format!("unknown topology tag {t}"))),
        }
    }
}

/// Per-layer activation stages cached by a forward pass, plus backprop
/// scratch, reused across calls to avoid reallocating in training loops.
#[derive(Default)]
pub struct NetWorkspace {
    stages: Vec<Vec<f64>>,
    delta: Vec<f64>,
    prev_delta: Vec<f64>,
}

/// A network as an explicit parameter vector plus its wiring.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamNet {
    spec: NetSpec,
    params: Vec<f64>,
}

impl ParamNet {
    pub fn zeros(spec: NetSpec) -> Self {
        let params = vec![0.0; spec.param_count()];
        Self { spec, params }
    }

    /// Weights and biases drawn uniformly from ±1/sqrt(fan_in), layer by layer.
    pub fn random_init<R: Rng>(spec: NetSpec, rng: &mut R) -> Self {
        let mut net = Self::zeros(spec);
        let dims = net.spec.layer_dims();
        let mut offset = 0;
        for (n_in, n_out) in dims {
            let bound = 1.0 / (n_in as f64).sqrt();
            let len = (n_in + 1) * n_out;
            for p in &mut net.params[offset..offset + len] {
                *p = rng.random_range(-bound..=bound);
            }
            offset += len;
        }
        net
    }

    pub fn from_params(spec: NetSpec, params: Vec<f64>) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, topology needs {}",
                params.len(),
                spec.param_count()
            )));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, expected {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut ws = NetWorkspace::default();
        self.forward_ws(input, &mut ws)?;
        Ok(ws.stages.last().unwrap().clone())
    }

    /// Forward pass that records every stage in `ws`; returns the output slice.
    pub fn forward_ws<'w>(&self, input: &[f64], ws: &'w mut NetWorkspace) -> Result<&'w [f64]> {
        if input.len() != self.spec.input_len() {
            return Err(Error::Shape(format!(
                "input has {} entries, net expects {}",
                input.len(),
                self.spec.input_len()
            )));
        }
        let dims = self.spec.layer_dims();
        ws.stages.resize_with(self.stage_count(), Vec::new);
        ws.stages[0].clear();
        ws.stages[0].extend_from_slice(input);

        match &self.spec.topology {
            Topology::Mlp { .. } => {
                let n_layers = dims.len();
                let mut offset = 0;
                for (l, &(n_in, n_out)) in dims.iter().enumerate() {
                    let last = l == n_layers - 1;
                    let (prev, rest) = ws.stages.split_at_mut(l + 1);
                    let x = &prev[l];
                    let y = &mut rest[0];
                    affine(&self.params[offset..], n_in, n_out, x, y);
                    activate(y, last, self.spec.output);
                    offset += (n_in + 1) * n_out;
                }
            }
            Topology::TwoBranch {
                left_in,
                left_units,
                right_in: _,
                right_units,
                trunk,
            } => {
                // Stage 1 holds both rectified branch outputs back to back.
                let (l_in, l_units, r_units) = (*left_in, *left_units, *right_units);
                let (d0, d1) = (dims[0], dims[1]);
                let right_off = (d0.0 + 1) * d0.1;
                {
                    let (prev, rest) = ws.stages.split_at_mut(1);
                    let x = &prev[0];
                    let y = &mut rest[0];
                    y.clear();
                    y.resize(l_units + r_units, 0.0);
                    affine_into(&self.params[..], d0.0, d0.1, &x[..l_in], &mut y[..l_units]);
                    affine_into(
                        &self.params[right_off..],
                        d1.0,
                        d1.1,
                        &x[l_in..],
                        &mut y[l_units..],
                    );
                    for v in y.iter_mut() {
                        *v = v.max(0.0);
                    }
                }
                let mut offset = right_off + (d1.0 + 1) * d1.1;
                let n_trunk = trunk.len();
                for (t, &(n_in, n_out)) in dims[2..].iter().enumerate() {
                    let last = t == n_trunk - 1;
                    let (prev, rest) = ws.stages.split_at_mut(t + 2);
                    let x = &prev[t + 1];
                    let y = &mut rest[0];
                    affine(&self.params[offset..], n_in, n_out, x, y);
                    activate(y, last, self.spec.output);
                    offset += (n_in + 1) * n_out;
                }
            }
        }
        Ok(ws.stages.last().unwrap())
    }

    /// Activation stages a forward pass records: input, one per hidden stage,
    /// output. Branch layers of a two-branch net share one concatenated stage.
    fn stage_count(&self) -> usize {
        match &self.spec.topology {
            Topology::Mlp { sizes } => sizes.len(),
            Topology::TwoBranch { trunk, .. } => 2 + trunk.len(),
        }
    }

    /// Gradients of `dot(output, output_grad)` with respect to parameters and
    /// input, reusing the stages recorded by `forward_ws`.
    ///
    /// Either destination may be omitted to skip that half of the work.
    pub fn backward_ws(
        &self,
        ws: &mut NetWorkspace,
        output_grad: &[f64],
        mut param_grad: Option<&mut [f64]>,
        mut input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        let dims = self.spec.layer_dims();
        if ws.stages.len() != self.stage_count() {
            return Err(Error::Shape("workspace does not match a forward pass".into()));
        }
        if output_grad.len() != self.spec.output_len() {
            return Err(Error::Shape(format!(
                "output gradient has {} entries, net produces {}",
                output_grad.len(),
                self.spec.output_len()
            )));
        }
        if let Some(pg) = param_grad.as_deref() {
            if pg.len() != self.params.len() {
                return Err(Error::Shape("param_grad length mismatch".into()));
            }
        }
        if let Some(ig) = input_grad.as_deref() {
            if ig.len() != self.spec.input_len() {
                return Err(Error::Shape("input_grad length mismatch".into()));
            }
        }

        // Layer parameter offsets.
        let mut offsets = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for &(n_in, n_out) in &dims {
            offsets.push(acc);
            acc += (n_in + 1) * n_out;
        }

        let NetWorkspace {
            stages,
            delta,
            prev_delta,
        } = ws;

        // Output-stage delta: chain through the output activation.
        let out = stages.last().unwrap();
        delta.clear();
        match self.spec.output {
            OutputActivation::Tanh => {
                delta.extend(out.iter().zip(output_grad).map(|(&y, &g)| g * (1.0 - y * y)))
            }
            OutputActivation::Identity => delta.extend_from_slice(output_grad),
        }

        let first_trunk_layer = match &self.spec.topology {
            Topology::Mlp { .. } => 0,
            Topology::TwoBranch { .. } => 2,
        };

        // Walk trunk (or whole MLP) layers backwards down to the first stage
        // above the input.
        for l in (first_trunk_layer..dims.len()).rev() {
            let (n_in, n_out) = dims[l];
            let stage_in = &stages[stage_index(first_trunk_layer, l)];
            let layer = &self.params[offsets[l]..];
            if let Some(pg) = param_grad.as_deref_mut() {
                accumulate_layer_grads(&mut pg[offsets[l]..], n_in, n_out, stage_in, delta);
            }
            let reached_input = stage_index(first_trunk_layer, l) == 0;
            if reached_input && input_grad.is_none() {
                break;
            }
            prev_delta.clear();
            prev_delta.resize(n_in, 0.0);
            for o in 0..n_out {
                let row = &layer[o * n_in..(o + 1) * n_in];
                let d = delta[o];
                for (pd, &w) in prev_delta.iter_mut().zip(row) {
                    *pd += d * w;
                }
            }
            if reached_input {
                input_grad.as_deref_mut().unwrap().copy_from_slice(prev_delta);
                return Ok(());
            }
            // Hidden stages are rectified: zero where the stage output is zero.
            for (pd, &y) in prev_delta.iter_mut().zip(stage_in.iter()) {
                if y <= 0.0 {
                    *pd = 0.0;
                }
            }
            std::mem::swap(delta, prev_delta);
        }

        // Branch layers of a two-branch net: delta currently spans the
        // concatenated branch stage.
        if let Topology::TwoBranch {
            left_in,
            left_units,
            ..
        } = &self.spec.topology
        {
            let (d0, d1) = (dims[0], dims[1]);
            let input = &stages[0];
            let (delta_l, delta_r) = delta.split_at(*left_units);
            if let Some(pg) = param_grad.as_deref_mut() {
                accumulate_layer_grads(&mut pg[offsets[0]..], d0.0, d0.1, &input[..*left_in], delta_l);
                accumulate_layer_grads(&mut pg[offsets[1]..], d1.0, d1.1, &input[*left_in..], delta_r);
            }
            if let Some(ig) = input_grad.as_deref_mut() {
                for v in ig.iter_mut() {
                    *v = 0.0;
                }
                let (ig_l, ig_r) = ig.split_at_mut(*left_in);
                backprop_input(&self.params[offsets[0]..], d0.0, d0.1, delta_l, ig_l);
                backprop_input(&self.params[offsets[1]..], d1.0, d1.1, delta_r, ig_r);
            }
        }
        Ok(())
    }

    /// Gradients of `dot(output, output_grad)` as `(param_grad, input_grad)`.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut ws = NetWorkspace::default();
        self.forward_ws(input, &mut ws)?;
        let mut pg = vec![0.0; self.params.len()];
        let mut ig = vec![0.0; self.spec.input_len()];
        self.backward_ws(&mut ws, output_grad, Some(&mut pg), Some(&mut ig))?;
        Ok((pg, ig))
    }
}

/// Stage index holding the input of weight layer `l`.
fn stage_index(first_trunk_layer: usize, l: usize) -> usize {
    if first_trunk_layer == 0 {
        l
    } else {
        // Two-branch: layers 0/1 read stage 0, trunk layer l reads stage l-1.
        l - 1
    }
}

fn affine(layer: &[f64], n_in: usize, n_out: usize, x: &[f64], y: &mut Vec<f64>) {
    y.clear();
    y.resize(n_out, 0.0);
    affine_into(layer, n_in, n_out, x, y);
}

fn affine_into(layer: &[f64], n_in: usize, n_out: usize, x: &[f64], y: &mut [f64]) {
    let biases = &layer[n_in * n_out..(n_in + 1) * n_out];
    for o in 0..n_out {
        let row = &layer[o * n_in..(o + 1) * n_in];
        let mut acc = biases[o];
        for (w, xv) in row.iter().zip(x) {
            acc += w * xv;
        }
        y[o] = acc;
    }
}

fn activate(y: &mut [f64], last: bool, output: OutputActivation) {
    if last {
        if output == OutputActivation::Tanh {
            for v in y.iter_mut() {
                *v = v.tanh();
            }
        }
    } else {
        for v in y.iter_mut() {
            *v = v.max(0.0);
        }
    }
}

// Writes every slot of the layer's gradient region exactly once, so callers
// need not clear the buffer between passes.
fn accumulate_layer_grads(pg: &mut [f64], n_in: usize, n_out: usize, x: &[f64], delta: &[f64]) {
    for o in 0..n_out {
        let d = delta[o];
        let row = &mut pg[o * n_in..(o + 1) * n_in];
        for (g, &xv) in row.iter_mut().zip(x) {
            *g = d * xv;
        }
    }
    let biases = &mut pg[n_in * n_out..(n_in + 1) * n_out];
    for (b, &d) in biases.iter_mut().zip(delta) {
        *b = d;
    }
}

fn backprop_input(layer: &[f64], n_in: usize, n_out: usize, delta: &[f64], ig: &mut [f64]) {
    for o in 0..n_out {
        let row = &layer[o * n_in..(o + 1) * n_in];
        let d = delta[o];
        for (g, &w) in ig.iter_mut().zip(row) {
            *g += d * w;
        }
    }
}

/// Adam optimizer state for one parameter vector.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, alpha: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    /// One Adam update with bias correction, in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state holds {} entries, got params {} / grad {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient in adam step".into()));
        }
        self.t += 1;
        let inv_bc1 = 1.0 / (1.0 - self.beta1.powi(self.t as i32));
        let inv_bc2 = 1.0 / (1.0 - self.beta2.powi(self.t as i32));
        let (b1, b2) = (self.beta1, self.beta2);
        let (alpha, eps) = (self.alpha, self.epsilon);
        // Moments of parameters whose gradient stays at exactly zero (dead
        // rectifier paths) decay exponentially into the subnormal range,
        // where the multiplies stall the whole loop; anything this small is
        // numerically zero for the update, so flush it.
        const FLUSH: f64 = 1e-290;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let mut m_new = b1 * *m + (1.0 - b1) * g;
            let mut v_new = b2 * *v + (1.0 - b2) * g * g;
            if m_new.abs() < FLUSH {
                m_new = 0.0;
            }
            if v_new < FLUSH {
                v_new = 0.0;
            }
            *m = m_new;
            *v = v_new;
            let m_hat = m_new * inv_bc1;
            let v_hat = v_new * inv_bc2;
            *p -= alpha * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mlp(sizes: &[usize], output: OutputActivation) -> NetSpec {
        NetSpec::mlp(sizes, output).unwrap()
    }

    /// Straight-line re-evaluation of an MLP, written independently of the
    /// implementation's traversal (explicit index arithmetic, no shared code).
    fn oracle_mlp_forward(net: &ParamNet, input: &[f64]) -> Vec<f64> {
        let Topology::Mlp { sizes } = &net.spec().topology else {
            panic!("oracle only covers plain MLPs")
        };
        let p = net.params();
        let mut x = input.to_vec();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let mut y = vec![0.0; n_out];
            for o in 0..n_out {
                let mut acc = p[off + n_in * n_out + o];
                for i in 0..n_in {
                    acc += p[off + o * n_in + i] * x[i];
                }
                y[o] = acc;
            }
            if l + 1 == sizes.len() - 1 {
                if net.spec().output == OutputActivation::Tanh {
                    y.iter_mut().for_each(|v| *v = v.tanh());
                }
            } else {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            off += (n_in + 1) * n_out;
            x = y;
        }
        x
    }

    fn finite_difference_param_grad(net: &ParamNet, input: &[f64], og: &[f64], eps: f64) -> Vec<f64> {
        let mut grads = Vec::with_capacity(net.params().len());
        let mut probe = net.clone();
        for i in 0..net.params().len() {
            let orig = net.params()[i];
            probe.params_mut()[i] = orig + eps;
            let up: f64 = probe
                .forward(input)
                .unwrap()
                .iter()
                .zip(og)
                .map(|(y, g)| y * g)
                .sum();
            probe.params_mut()[i] = orig - eps;
            let down: f64 = probe
                .forward(input)
                .unwrap()
                .iter()
                .zip(og)
                .map(|(y, g)| y * g)
                .sum();
            probe.params_mut()[i] = orig;
            grads.push((up - down) / (2.0 * eps));
        }
        grads
    }

    fn assert_close_rel(actual: &[f64], expected: &[f64], rel: f64) {
        for (i, (&a, &e)) in actual.iter().zip(expected).enumerate() {
            let scale = e.abs().max(1e-3);
            assert!(
                (a - e).abs() <= rel * scale,
                "component {i}: got {a}, expected {e}"
            );
        }
    }

    #[test]
    fn zero_params_give_zero_output() {
        let net = ParamNet::zeros(mlp(&[4, 8, 2], OutputActivation::Tanh));
        let out = net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = mlp(&[3, 3], OutputActivation::Identity);
        let mut net = ParamNet::zeros(spec);
        for i in 0..3 {
            net.params_mut()[i * 3 + i] = 1.0;
        }
        let x = [0.3, -1.7, 2.5];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = ParamNet::random_init(mlp(&[4, 8, 2], OutputActivation::Tanh), &mut rng);
        let input: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = net.forward(&input).unwrap();
        let want = oracle_mlp_forward(&net, &input);
        assert_close_rel(&got, &want, 1e-12);
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = ParamNet::random_init(mlp(&[5, 6, 3], OutputActivation::Tanh), &mut rng);
        let input: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = net.forward(&input).unwrap();
        let b = net.forward(&input).unwrap();
        assert_eq!(a, b, "same params and input must give bitwise-equal output");
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let net = ParamNet::zeros(mlp(&[4, 2], OutputActivation::Tanh));
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn two_branch_forward_matches_hand_evaluation() {
        // left: 2 -> 2, right: 1 -> 1, trunk: 3 -> 1, identity output.
        let spec = NetSpec::two_branch(2, 2, 1, 1, &[1], OutputActivation::Identity).unwrap();
        let params = vec![
            1.0, 0.0, // left w row 0
            0.0, -1.0, // left w row 1
            0.1, 0.2, // left biases
            2.0, // right w
            -0.5, // right bias
            1.0, 1.0, 1.0, // trunk weights
            0.25, // trunk bias
        ];
        let net = ParamNet::from_params(spec, params).unwrap();
        // input [x0 x1 | x2] = [0.5, 0.3, 0.4]
        // left = relu([0.5+0.1, -0.3+0.2]) = [0.6, 0.0]
        // right = relu([0.8-0.5]) = [0.3]
        // out = 0.6 + 0.0 + 0.3 + 0.25 = 1.15
        let out = net.forward(&[0.5, 0.3, 0.4]).unwrap();
        assert!((out[0] - 1.15).abs() < 1e-12);
    }

    #[test]
    fn backward_zero_cotangent_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = ParamNet::random_init(mlp(&[3, 5, 2], OutputActivation::Tanh), &mut rng);
        let (pg, ig) = net.backward(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(pg.iter().all(|&g| g == 0.0));
        assert!(ig.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_scalar_chain_rule() {
        // y = w*x + b with w = 1.5, b = -0.25; cotangent 1.
        let spec = mlp(&[1, 1], OutputActivation::Identity);
        let net = ParamNet::from_params(spec, vec![1.5, -0.25]).unwrap();
        let (pg, ig) = net.backward(&[0.8], &[1.0]).unwrap();
        assert_eq!(pg, vec![0.8, 1.0]);
        assert_eq!(ig, vec![1.5]);
    }

    #[test]
    fn backward_matches_finite_differences_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = ParamNet::random_init(mlp(&[6, 8, 8, 3], OutputActivation::Tanh), &mut rng);
        let input: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let og: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (pg, _) = net.backward(&input, &og).unwrap();
        let fd = finite_difference_param_grad(&net, &input, &og, 1e-4);
        assert_close_rel(&pg, &fd, 1e-4);
    }

    #[test]
    fn backward_matches_finite_differences_two_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let spec = NetSpec::two_branch(4, 5, 3, 4, &[6, 1], OutputActivation::Identity).unwrap();
        let net = ParamNet::random_init(spec, &mut rng);
        let input: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (pg, ig) = net.backward(&input, &[1.0]).unwrap();
        let fd = finite_difference_param_grad(&net, &input, &[1.0], 1e-4);
        assert_close_rel(&pg, &fd, 1e-4);

        // Input gradient against finite differences too.
        let mut x = input.clone();
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + 1e-4;
            let up = net.forward(&x).unwrap()[0];
            x[i] = orig - 1e-4;
            let down = net.forward(&x).unwrap()[0];
            x[i] = orig;
            let fd = (up - down) / 2e-4;
            let scale = fd.abs().max(1e-3);
            assert!((ig[i] - fd).abs() <= 1e-4 * scale);
        }
    }

    #[test]
    fn gradient_check_random_small_nets() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hidden = rng.random_range(2..8);
            let spec = mlp(&[4, hidden, 2], OutputActivation::Tanh);
            assert!(spec.param_count() <= 500);
            let net = ParamNet::random_init(spec, &mut rng);
            let input: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let og: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (pg, _) = net.backward(&input, &og).unwrap();
            let fd = finite_difference_param_grad(&net, &input, &og, 1e-4);
            assert_close_rel(&pg, &fd, 1e-4);
        }
    }

    #[test]
    fn param_count_matches_layer_sum() {
        let spec = NetSpec::two_branch(20, 48, 12, 16, &[64, 32, 1], OutputActivation::Identity)
            .unwrap();
        let by_layers: usize = spec
            .layer_dims()
            .iter()
            .map(|&(i, o)| (i + 1) * o)
            .sum();
        assert_eq!(spec.param_count(), by_layers);
        assert_eq!(ParamNet::zeros(spec).params().len(), by_layers);
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut params = vec![0.5, -1.0, 2.0];
        let mut state = AdamState::new(3, 1e-4);
        state.step(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(params, vec![0.5, -1.0, 2.0]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_alpha_sign() {
        let alpha = 1e-3;
        let mut params = vec![1.0, 1.0];
        let mut state = AdamState::new(2, alpha);
        state.step(&mut params, &[0.7, -0.2]).unwrap();
        // First step with bias correction collapses to -alpha * sign(g) up to O(eps).
        assert!((params[0] - (1.0 - alpha)).abs() < 1e-6);
        assert!((params[1] - (1.0 + alpha)).abs() < 1e-6);
    }

    #[test]
    fn adam_matches_textbook_loop_on_quadratic() {
        // Minimize f(p) = 0.5 * sum((p - c)^2); gradient p - c.
        let c = [0.3, -0.7, 1.1];
        let alpha = 0.05;

        let mut params = vec![1.0, 1.0, 1.0];
        let mut state = AdamState::new(3, alpha);
        for _ in 0..3 {
            let grad: Vec<f64> = params.iter().zip(&c).map(|(p, c)| p - c).collect();
            state.step(&mut params, &grad).unwrap();
        }

        // Independent textbook Adam, written from the update equations.
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut p = vec![1.0, 1.0, 1.0];
        let mut m = vec![0.0; 3];
        let mut v = vec![0.0; 3];
        for t in 1..=3u32 {
            let g: Vec<f64> = p.iter().zip(&c).map(|(p, c)| p - c).collect();
            for i in 0..3 {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / (1.0 - b1.powi(t as i32));
                let vh = v[i] / (1.0 - b2.powi(t as i32));
                p[i] -= alpha * mh / (vh.sqrt() + eps);
            }
        }
        for i in 0..3 {
            assert!((params[i] - p[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_zero_alpha_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut params: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let orig = params.clone();
        let mut state = AdamState::new(10, 0.0);
        for _ in 0..5 {
            let grad: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            state.step(&mut params, &grad).unwrap();
        }
        assert_eq!(params, orig);
    }

    #[test]
    fn adam_rejects_nan_gradient() {
        let mut params = vec![0.0];
        let mut state = AdamState::new(1, 1e-4);
        assert!(matches!(
            state.step(&mut params, &[f64::NAN]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn netspec_roundtrips_through_encoding() {
        let specs = [
            mlp(&[20, 40, 40, 20, 12], OutputActivation::Tanh),
            NetSpec::two_branch(20, 48, 12, 16, &[64, 32, 1], OutputActivation::Identity)
                .unwrap(),
        ];
        for spec in specs {
            let mut buf = Vec::new();
            spec.encode(&mut buf).unwrap();
            let back = NetSpec::decode(&mut buf.as_slice()).unwrap();
            assert_eq!(spec, back);
        }
    }
}
