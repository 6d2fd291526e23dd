//! Two-branch feed-forward Q-network.
//!
//! CSI features and buffer features pass through separate rectified
//! branches whose outputs are concatenated and fed to a fusion stack. All
//! layers use ReLU except the last fusion layer, which is linear and emits
//! one Q-value per action. A branch with no layers passes its input through.

mod checkpoint;
mod replay;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use replay::{ReplayBuffer, Transition};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// He-normal weights, zero bias.
    pub fn he<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let std = (2.0 / inputs.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        Dense {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], relu: bool, out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs.max(1))
                .zip(&self.bias)
                .map(|(row, b)| {
                    let z = b + dot(row, x);
                    if relu {
                        z.max(0.0)
                    } else {
                        z
                    }
                }),
        );
        if self.inputs == 0 {
            out.clear();
            out.extend_from_slice(&self.bias);
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Dot product with four independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac
        .remainder()
        .iter()
        .zip(bc.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ac.zip(bc) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Layer widths of a network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub csi_inputs: usize,
    pub buf_inputs: usize,
    pub csi_hidden: Vec<usize>,
    pub buf_hidden: Vec<usize>,
    pub fusion_hidden: Vec<usize>,
    pub outputs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub csi_inputs: usize,
    pub buf_inputs: usize,
    pub csi: Vec<Dense>,
    pub buf: Vec<Dense>,
    pub fusion: Vec<Dense>,
}

/// Activations of one forward pass, kept for backpropagation.
struct Trace {
    csi: Vec<Vec<f64>>,
    buf: Vec<Vec<f64>>,
    fusion: Vec<Vec<f64>>,
}

/// One supervised example: inputs, the action whose value is regressed, and
/// its target.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub csi: &'a [f64],
    pub buf: &'a [f64],
    pub action: usize,
    pub target: f64,
}

impl MlpParams {
    pub fn new<R: Rng + ?Sized>(shape: &MlpShape, rng: &mut R) -> Self {
        let stack = |input: usize, widths: &[usize], rng: &mut R| {
            let mut layers = Vec::with_capacity(widths.len());
            let mut prev = input;
            for &w in widths {
                layers.push(Dense::he(prev, w, rng));
                prev = w;
            }
            layers
        };
        let csi = stack(shape.csi_inputs, &shape.csi_hidden, rng);
        let buf = stack(shape.buf_inputs, &shape.buf_hidden, rng);
        let fused = shape.csi_hidden.last().copied().unwrap_or(shape.csi_inputs)
            + shape.buf_hidden.last().copied().unwrap_or(shape.buf_inputs);
        let mut widths = shape.fusion_hidden.clone();
        widths.push(shape.outputs);
        let fusion = stack(fused, &widths, rng);
        MlpParams {
            csi_inputs: shape.csi_inputs,
            buf_inputs: shape.buf_inputs,
            csi,
            buf,
            fusion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let chain = |input: usize, layers: &[Dense]| -> Result<usize> {
            let mut prev = input;
            for l in layers {
                if l.inputs != prev
                    || l.weights.len() != l.inputs * l.outputs
                    || l.bias.len() != l.outputs
                {
                    return Err(Error::invalid("layer dimensions do not chain"));
                }
                prev = l.outputs;
            }
            Ok(prev)
        };
        let a = chain(self.csi_inputs, &self.csi)?;
        let b = chain(self.buf_inputs, &self.buf)?;
        if self.fusion.is_empty() {
            return Err(Error::invalid("fusion stack needs an output layer"));
        }
        chain(a + b, &self.fusion)?;
        if !self.iter_params().all(|x| x.is_finite()) {
            return Err(Error::invalid("non-finite weight"));
        }
        Ok(())
    }

    pub fn outputs(&self) -> usize {
        self.fusion.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn shape(&self) -> MlpShape {
        let widths = |ls: &[Dense]| ls.iter().map(|l| l.outputs).collect::<Vec<_>>();
        let mut fusion_hidden = widths(&self.fusion);
        let outputs = fusion_hidden.pop().unwrap_or(0);
        MlpShape {
            csi_inputs: self.csi_inputs,
            buf_inputs: self.buf_inputs,
            csi_hidden: widths(&self.csi),
            buf_hidden: widths(&self.buf),
            fusion_hidden,
            outputs,
        }
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.csi.iter().chain(&self.buf).chain(&self.fusion)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.csi
            .iter_mut()
            .chain(self.buf.iter_mut())
            .chain(self.fusion.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Dense::param_count).sum()
    }

    /// Weights then biases, layer by layer (CSI branch, buffer branch, fusion).
    pub fn iter_params(&self) -> impl Iterator<Item = &f64> {
        self.layers().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn iter_params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn zeros_like(&self) -> Self {
        let z = |ls: &[Dense]| {
            ls.iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect()
        };
        MlpParams {
            csi_inputs: self.csi_inputs,
            buf_inputs: self.buf_inputs,
            csi: z(&self.csi),
            buf: z(&self.buf),
            fusion: z(&self.fusion),
        }
    }

    fn check_inputs(&self, csi: &[f64], buf: &[f64]) -> Result<()> {
        if csi.len() != self.csi_inputs || buf.len() != self.buf_inputs {
            return Err(Error::invalid(format!(
                "feature dims ({}, {}) do not match network ({}, {})",
                csi.len(),
                buf.len(),
                self.csi_inputs,
                self.buf_inputs
            )));
        }
        Ok(())
    }

    pub fn forward(&self, csi: &[f64], buf: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(csi, buf)?;
        Ok(self.trace(csi, buf).fusion.pop().expect("output layer"))
    }

    fn trace(&self, csi: &[f64], buf: &[f64]) -> Trace {
        let run = |input: &[f64], layers: &[Dense], last_linear: bool| {
            let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
            for (i, l) in layers.iter().enumerate() {
                let x = acts.last().map(Vec::as_slice).unwrap_or(input);
                let mut out = Vec::with_capacity(l.outputs);
                l.apply(x, !(last_linear && i + 1 == layers.len()), &mut out);
                acts.push(out);
            }
            acts
        };
        let c = run(csi, &self.csi, false);
        let b = run(buf, &self.buf, false);
        let mut joined = c.last().map(Vec::as_slice).unwrap_or(csi).to_vec();
        joined.extend_from_slice(b.last().map(Vec::as_slice).unwrap_or(buf));
        let mut f = run(&joined, &self.fusion, true);
        f.insert(0, joined);
        Trace {
            csi: c,
            buf: b,
            fusion: f,
        }
    }

    /// Mean squared error `Σ (y − Q(s, a))² / |B|` and its gradient.
    pub fn loss_and_grad(&self, batch: &[Sample<'_>]) -> Result<(f64, MlpParams)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty minibatch"));
        }
        let n = batch.len() as f64;
        let mut grad = self.zeros_like();
        let mut loss = 0.0;
        for s in batch {
            self.check_inputs(s.csi, s.buf)?;
            if s.action >= self.outputs() {
                return Err(Error::invalid(format!("action {} out of range", s.action)));
            }
            let tr = self.trace(s.csi, s.buf);
            let q = tr.fusion.last().unwrap()[s.action];
            let err = s.target - q;
            loss += err * err / n;

            let mut delta = vec![0.0; self.outputs()];
            delta[s.action] = -2.0 * err / n;
            // fusion[0] in the trace is the concatenated input.
            let (joined, fusion_acts) = tr.fusion.split_first().expect("joined input");
            let d_joined = backprop(
                &self.fusion,
                &mut grad.fusion,
                joined,
                fusion_acts,
                delta,
                true,
            );
            let split = joined.len() - tr.buf.last().map(Vec::len).unwrap_or(self.buf_inputs);
            let (dc, db) = d_joined.split_at(split);
            if !self.csi.is_empty() {
                backprop(&self.csi, &mut grad.csi, s.csi, &tr.csi, dc.to_vec(), false);
            }
            if !self.buf.is_empty() {
                backprop(&self.buf, &mut grad.buf, s.buf, &tr.buf, db.to_vec(), false);
            }
        }
        Ok((loss, grad))
    }

    /// One plain SGD update, `θ ← θ − (α/|B|) ∂J/∂θ`. Returns the loss
    /// before the update.
    pub fn sgd_step(&mut self, batch: &[Sample<'_>], learning_rate: f64) -> Result<f64> {
        let (loss, grad) = self.loss_and_grad(batch)?;
        let scale = learning_rate / batch.len() as f64;
        if scale != 0.0 {
            for (p, g) in self.iter_params_mut().zip(grad.iter_params()) {
                *p -= scale * g;
            }
        }
        Ok(loss)
    }
}

/// Backpropagates `delta` (gradient w.r.t. the last layer's output) through
/// `layers`, given the stack `input` and `acts[i]` = output of layer `i`.
/// Returns the gradient w.r.t. the stack input.
fn backprop(
    layers: &[Dense],
    grads: &mut [Dense],
    input: &[f64],
    acts: &[Vec<f64>],
    mut delta: Vec<f64>,
    last_linear: bool,
) -> Vec<f64> {
    for i in (0..layers.len()).rev() {
        let l = &layers[i];
        let out = &acts[i];
        let relu = !(last_linear && i + 1 == layers.len());
        if relu {
            for (d, &o) in delta.iter_mut().zip(out) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let x = if i == 0 { input } else { &acts[i - 1] };
        let g = &mut grads[i];
        let mut dx = vec![0.0; l.inputs];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g.bias[o] += d;
            let row = o * l.inputs..(o + 1) * l.inputs;
            let pairs = g.weights[row.clone()].iter_mut().zip(&l.weights[row]);
            for ((gw, &w), (&xj, dxj)) in pairs.zip(x.iter().zip(dx.iter_mut())) {
                *gw += d * xj;
                *dxj += w * d;
            }
        }
        delta = dx;
    }
    delta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn small_shape() -> MlpShape {
        MlpShape {
            csi_inputs: 4,
            buf_inputs: 3,
            csi_hidden: vec![5],
            buf_hidden: vec![3],
            fusion_hidden: vec![6],
            outputs: 4,
        }
    }

    /// Reference forward pass written directly from the layer equations.
    // Plain index loops on purpose: an independent restatement of the layer maths.
    #[allow(clippy::needless_range_loop)]
    fn reference_forward(p: &MlpParams, csi: &[f64], buf: &[f64]) -> Vec<f64> {
        fn layer(l: &Dense, x: &[f64], relu: bool) -> Vec<f64> {
            let mut y = vec![0.0; l.outputs];
            for o in 0..l.outputs {
                let mut z = l.bias[o];
                for i in 0..l.inputs {
                    z += l.weights[o * l.inputs + i] * x[i];
                }
                y[o] = if relu { z.max(0.0) } else { z };
            }
            y
        }
        let mut c = csi.to_vec();
        for l in &p.csi {
            c = layer(l, &c, true);
        }
        let mut b = buf.to_vec();
        for l in &p.buf {
            b = layer(l, &b, true);
        }
        let mut x = [c, b].concat();
        let n = p.fusion.len();
        for (i, l) in p.fusion.iter().enumerate() {
            x = layer(l, &x, i + 1 < n);
        }
        x
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut p = MlpParams::new(&small_shape(), &mut seeded(1));
        p.iter_params_mut().for_each(|x| *x = 0.0);
        assert_eq!(
            p.forward(&[1.0, -2.0, 3.0, 0.5], &[1.0, 2.0, 3.0]).unwrap(),
            vec![0.0; 4]
        );
    }

    #[test]
    fn identity_layer_passes_concatenated_input() {
        let shape = MlpShape {
            csi_inputs: 2,
            buf_inputs: 2,
            csi_hidden: vec![],
            buf_hidden: vec![],
            fusion_hidden: vec![],
            outputs: 4,
        };
        let mut p = MlpParams::new(&shape, &mut seeded(1));
        let out = &mut p.fusion[0];
        out.weights.iter_mut().for_each(|w| *w = 0.0);
        for i in 0..4 {
            out.weights[i * 4 + i] = 1.0;
        }
        assert_eq!(
            p.forward(&[0.5, -1.0], &[2.0, 3.0]).unwrap(),
            vec![0.5, -1.0, 2.0, 3.0]
        );
    }

    #[test]
    fn forward_matches_reference_and_is_pure() {
        let mut rng = seeded(3);
        for _ in 0..20 {
            let p = MlpParams::new(&small_shape(), &mut rng);
            let csi: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let buf: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = p.forward(&csi, &buf).unwrap();
            let r = reference_forward(&p, &csi, &buf);
            for (x, y) in a.iter().zip(&r) {
                assert!((x - y).abs() < 1e-12);
            }
            assert_eq!(a, p.forward(&csi, &buf).unwrap());
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = MlpParams::new(&small_shape(), &mut seeded(1));
        assert!(matches!(
            p.forward(&[0.0; 3], &[0.0; 3]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut p = MlpParams::new(&small_shape(), &mut seeded(5));
        let before = p.clone();
        let csi = [0.1, 0.2, 0.3, 0.4];
        let buf = [1.0, 0.0, -1.0];
        let batch = [Sample {
            csi: &csi,
            buf: &buf,
            action: 1,
            target: 3.0,
        }];
        p.sgd_step(&batch, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn repeated_steps_reduce_loss() {
        let mut rng = seeded(9);
        // no hidden layers: the loss is convex in the parameters
        let shape = MlpShape {
            csi_hidden: vec![],
            buf_hidden: vec![],
            fusion_hidden: vec![],
            ..small_shape()
        };
        let mut p = MlpParams::new(&shape, &mut rng);
        let data: Vec<(Vec<f64>, Vec<f64>, usize, f64)> = (0..8)
            .map(|i| {
                (
                    (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    i % 4,
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let batch: Vec<Sample> = data
            .iter()
            .map(|(c, b, a, y)| Sample {
                csi: c,
                buf: b,
                action: *a,
                target: *y,
            })
            .collect();
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let l = p.sgd_step(&batch, 0.05).unwrap();
            assert!(l <= last + 1e-12, "{l} > {last}");
            last = l;
        }
    }
}
