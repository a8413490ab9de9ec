//! Multilayer perceptrons with tanh hidden layers and an affine output layer.
//!
//! Two evaluation paths share one parameter layout:
//!
//! * [`Mlp::on_tape`] records a network on an autodiff [`Tape`], one node per
//!   scalar operation. This is the reference path.
//! * [`Mlp::forward_batch`] / [`Mlp::backward_batch`] evaluate a whole batch of
//!   points at once, propagating the tangent with respect to one input
//!   coordinate alongside the values, and back-propagate adjoints of both the
//!   outputs and their input-derivatives. This is what the trainer runs.
//!
//! Flat parameter order is layer by layer; within a layer the weights in
//! row-major `(row = output unit, column = input unit)` order, then biases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{tanh, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self> {
        let spec = MlpSpec {
            input_dim,
            output_dim,
            hidden,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidInput(format!(
                "network widths must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// One or two hidden layers, each narrower than 30 units.
    pub fn is_standard(&self) -> bool {
        matches!(self.hidden.len(), 1 | 2) && self.hidden.iter().all(|&w| w < 30)
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn n_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    #[inline]
    fn w(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.n_in + col]
    }
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases; deterministic per seed.
    pub fn init(spec: &MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = spec.widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let bound = glorot_bound(n_in, n_out);
                let weights = (0..n_in * n_out)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect();
                Layer {
                    n_in,
                    n_out,
                    weights,
                    biases: vec![0.0; n_out],
                }
            })
            .collect();
        Ok(Mlp {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        let mut m = Self::init(spec, 0)?;
        for l in &mut m.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        Ok(m)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::LengthMismatch {
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Names matching [`Mlp::params`] order: `{prefix}.l{layer}.w.{row}.{col}`
    /// and `{prefix}.l{layer}.b.{row}`.
    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_params());
        for (li, l) in self.layers.iter().enumerate() {
            for r in 0..l.n_out {
                for c in 0..l.n_in {
                    names.push(format!("{prefix}.l{li}.w.{r}.{c}"));
                }
            }
            for r in 0..l.n_out {
                names.push(format!("{prefix}.l{li}.b.{r}"));
            }
        }
        names
    }

    /// Plain evaluation at one point.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.input_dim {
            return Err(Error::Dimension {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let mut z: Vec<f64> = (0..l.n_out)
                .map(|j| {
                    let row = &l.weights[j * l.n_in..(j + 1) * l.n_in];
                    row.iter().zip(&a).fold(l.biases[j], |s, (w, v)| s + w * v)
                })
                .collect();
            if li != last {
                z.iter_mut().for_each(|v| *v = tanh(*v));
            }
            a = z;
        }
        Ok(a)
    }

    /// Register every parameter as a leaf on `tape`.
    pub fn on_tape<'t>(&self, tape: &'t Tape) -> TapeMlp<'t> {
        let layers = self
            .layers
            .iter()
            .map(|l| TapeLayer {
                n_in: l.n_in,
                n_out: l.n_out,
                weights: l.weights.iter().map(|&w| tape.var(w)).collect(),
                biases: l.biases.iter().map(|&b| tape.var(b)).collect(),
            })
            .collect();
        TapeMlp {
            input_dim: self.spec.input_dim,
            layers,
        }
    }

    /// Evaluate a batch of `n` points laid out input-major (`inputs[d * n + p]`),
    /// carrying the derivative with respect to input coordinate `tangent_input`.
    pub fn forward_batch(&self, inputs: &[f64], n: usize, tangent_input: usize) -> BatchCache {
        let d_in = self.spec.input_dim;
        assert_eq!(inputs.len(), d_in * n, "batch input length");
        assert!(tangent_input < d_in);
        let mut tan0 = vec![0.0; d_in * n];
        tan0[tangent_input * n..(tangent_input + 1) * n].fill(1.0);
        let mut acts = vec![inputs.to_vec()];
        let mut tans = vec![tan0];
        for l in &self.layers {
            acts.push(vec![0.0; l.n_out * n]);
            tans.push(vec![0.0; l.n_out * n]);
        }
        let last = self.layers.len() - 1;
        for c0 in (0..n).step_by(CHUNK) {
            let c1 = (c0 + CHUNK).min(n);
            for (li, l) in self.layers.iter().enumerate() {
                let (a_prev, a_rest) = acts.split_at_mut(li + 1);
                let (t_prev, t_rest) = tans.split_at_mut(li + 1);
                let (a_in, t_in) = (&a_prev[li], &t_prev[li]);
                let (z, dz) = (&mut a_rest[0], &mut t_rest[0]);
                for j in 0..l.n_out {
                    let zj = &mut z[j * n + c0..j * n + c1];
                    let dzj = &mut dz[j * n + c0..j * n + c1];
                    zj.fill(l.biases[j]);
                    for k in 0..l.n_in {
                        let w = l.w(j, k);
                        axpy(w, &a_in[k * n + c0..k * n + c1], zj);
                        axpy(w, &t_in[k * n + c0..k * n + c1], dzj);
                    }
                    if li != last {
                        for (zv, dv) in zj.iter_mut().zip(dzj.iter_mut()) {
                            let a = tanh(*zv);
                            *zv = a;
                            *dv *= 1.0 - a * a;
                        }
                    }
                }
            }
        }
        BatchCache { n, acts, tans }
    }

    /// Back-propagate output adjoints `g_out` and tangent adjoints `g_tan`
    /// (both output-major, `out_dim * n`). Parameter gradients are added to
    /// `grad` (flat order); adjoints of the inputs are written to `g_inputs`
    /// when supplied.
    pub fn backward_batch(
        &self,
        cache: &BatchCache,
        g_out: &[f64],
        g_tan: &[f64],
        grad: &mut [f64],
        mut g_inputs: Option<&mut [f64]>,
    ) {
        let n = cache.n;
        assert_eq!(grad.len(), self.n_params());
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.n_params();
        }
        let n_out = self.spec.output_dim;
        for c0 in (0..n).step_by(CHUNK) {
            let c1 = (c0 + CHUNK).min(n);
            let m = c1 - c0;
            let mut gz = vec![0.0; n_out * m];
            let mut gdz = vec![0.0; n_out * m];
            for j in 0..n_out {
                gz[j * m..(j + 1) * m].copy_from_slice(&g_out[j * n + c0..j * n + c1]);
                gdz[j * m..(j + 1) * m].copy_from_slice(&g_tan[j * n + c0..j * n + c1]);
            }
            for li in (0..self.layers.len()).rev() {
                let l = &self.layers[li];
                let a_in = &cache.acts[li];
                let t_in = &cache.tans[li];
                let base = offsets[li];
                for j in 0..l.n_out {
                    let gzj = &gz[j * m..(j + 1) * m];
                    let gdzj = &gdz[j * m..(j + 1) * m];
                    for k in 0..l.n_in {
                        grad[base + j * l.n_in + k] += dot(gzj, &a_in[k * n + c0..k * n + c1])
                            + dot(gdzj, &t_in[k * n + c0..k * n + c1]);
                    }
                    grad[base + l.weights.len() + j] += sum(gzj);
                }
                if li == 0 && g_inputs.is_none() {
                    break;
                }
                let mut ga = vec![0.0; l.n_in * m];
                let mut gda = vec![0.0; l.n_in * m];
                for k in 0..l.n_in {
                    let gak = &mut ga[k * m..(k + 1) * m];
                    let gdak = &mut gda[k * m..(k + 1) * m];
                    for j in 0..l.n_out {
                        let w = l.w(j, k);
                        axpy(w, &gz[j * m..(j + 1) * m], gak);
                        axpy(w, &gdz[j * m..(j + 1) * m], gdak);
                    }
                }
                if li == 0 {
                    if let Some(gi) = g_inputs.as_deref_mut() {
                        for k in 0..l.n_in {
                            gi[k * n + c0..k * n + c1].copy_from_slice(&ga[k * m..(k + 1) * m]);
                        }
                    }
                    break;
                }
                // a_in = tanh(z), t_in = s * dz with s = 1 - a^2:
                //   dL/dz  = s * dL/da - 2 a * t_in * dL/dt_in
                //   dL/ddz = s * dL/dt_in
                for k in 0..l.n_in {
                    for i in 0..m {
                        let a = a_in[k * n + c0 + i];
                        let t = t_in[k * n + c0 + i];
                        let s = 1.0 - a * a;
                        let idx = k * m + i;
                        let new_g = s * ga[idx] - 2.0 * a * t * gda[idx];
                        gda[idx] *= s;
                        ga[idx] = new_g;
                    }
                }
                gz = ga;
                gdz = gda;
            }
        }
    }
}

/// Points per block in the batched passes; keeps a block's activations in
/// cache.
const CHUNK: usize = 256;


/// Forward state of a batch evaluation.
#[derive(Debug, Clone)]
pub struct BatchCache {
    n: usize,
    acts: Vec<Vec<f64>>,
    tans: Vec<Vec<f64>>,
}

impl BatchCache {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Network outputs, output-major.
    pub fn outputs(&self) -> &[f64] {
        self.acts.last().expect("at least one layer")
    }

    /// Derivatives of the outputs with respect to the tangent input.
    pub fn output_tangents(&self) -> &[f64] {
        self.tans.last().expect("at least one layer")
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight fixed-order partial sums.
#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for i in 0..8 {
            acc[i] += a[i] * b[i];
        }
    }
    let mut tail = 0.0;
    for (a, b) in xr.iter().zip(yr) {
        tail += a * b;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
pub(crate) fn sum(x: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let xc = x.chunks_exact(8);
    let xr = xc.remainder();
    for a in xc {
        for i in 0..8 {
            acc[i] += a[i];
        }
    }
    let tail: f64 = xr.iter().sum();
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

pub struct TapeLayer<'t> {
    n_in: usize,
    n_out: usize,
    weights: Vec<Var<'t>>,
    biases: Vec<Var<'t>>,
}

/// An [`Mlp`] whose parameters are tape leaves.
pub struct TapeMlp<'t> {
    input_dim: usize,
    layers: Vec<TapeLayer<'t>>,
}

impl<'t> TapeMlp<'t> {
    pub fn forward(&self, x: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(l.n_out);
            for j in 0..l.n_out {
                let mut acc = l.biases[j];
                for k in 0..l.n_in {
                    acc = acc + l.weights[j * l.n_in + k] * a[k];
                }
                z.push(if li == last { acc } else { acc.tanh() });
            }
            a = z;
        }
        Ok(a)
    }

    /// Parameter leaves in flat order.
    pub fn params(&self) -> Vec<Var<'t>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }
}

/// Trainable scalar constrained positive through `value = exp(raw)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositiveScalar {
    pub raw: f64,
}

impl PositiveScalar {
    pub fn from_value(value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "positive scalar needs a positive initial value, got {value}"
            )));
        }
        Ok(PositiveScalar { raw: value.ln() })
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.raw.exp()
    }

    pub fn on_tape<'t>(&self, tape: &'t Tape) -> (Var<'t>, Var<'t>) {
        let raw = tape.var(self.raw);
        (raw, raw.exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn init_is_deterministic() {
        let spec = MlpSpec::new(1, vec![15, 15], 2).unwrap();
        let a = Mlp::init(&spec, 7).unwrap();
        let b = Mlp::init(&spec, 7).unwrap();
        let c = Mlp::init(&spec, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn glorot_bounds_and_zero_biases() {
        let spec = MlpSpec::new(1, vec![15], 1).unwrap();
        let m = Mlp::init(&spec, 1).unwrap();
        let bound = glorot_bound(1, 15);
        assert_relative_eq!(bound, (6.0f64 / 16.0).sqrt(), max_relative = 1e-15);
        assert_relative_eq!(bound, 0.612_372_435_695_794_5, max_relative = 1e-15);
        assert!(m.layers()[0].weights.iter().all(|w| w.abs() <= bound));
        assert!(m.layers().iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn zero_weight_net_outputs_biases() {
        let spec = MlpSpec::new(2, vec![4], 3).unwrap();
        let mut m = Mlp::zeros(&spec).unwrap();
        m.layers_mut()[1].biases = vec![0.5, -1.0, 2.0];
        assert_eq!(m.forward(&[0.3, -0.7]).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let spec = MlpSpec::new(1, vec![15, 15], 2).unwrap();
        let m = Mlp::init(&spec, 0).unwrap();
        assert!(matches!(
            m.forward(&[0.1, 0.2]),
            Err(Error::Dimension { expected: 1, got: 2 })
        ));
        assert_eq!(m.forward(&[0.1]).unwrap().len(), 2);
    }

    #[test]
    fn standard_architectures() {
        assert!(MlpSpec::new(1, vec![15, 15], 2).unwrap().is_standard());
        assert!(!MlpSpec::new(1, vec![30], 2).unwrap().is_standard());
        assert!(!MlpSpec::new(1, vec![5, 5, 5], 2).unwrap().is_standard());
        assert!(MlpSpec::new(1, vec![0], 2).is_err());
    }

    #[test]
    fn param_round_trip_and_names() {
        let spec = MlpSpec::new(2, vec![3], 1).unwrap();
        let mut m = Mlp::init(&spec, 3).unwrap();
        let p: Vec<f64> = (0..m.n_params()).map(|i| i as f64).collect();
        m.set_params(&p).unwrap();
        assert_eq!(m.params(), p);
        let names = m.param_names("main");
        assert_eq!(names.len(), 13);
        assert_eq!(names[0], "main.l0.w.0.0");
        assert_eq!(names[1], "main.l0.w.0.1");
        assert_eq!(names[6], "main.l0.b.0");
        assert_eq!(names[12], "main.l1.b.0");
        assert!(m.set_params(&p[1..]).is_err());
    }

    #[test]
    fn tape_forward_matches_plain() {
        let spec = MlpSpec::new(2, vec![5, 4], 3).unwrap();
        let m = Mlp::init(&spec, 11).unwrap();
        let tape = Tape::new();
        let tm = m.on_tape(&tape);
        let x = [tape.var(0.2), tape.var(-0.4)];
        let out = tm.forward(&x).unwrap();
        let plain = m.forward(&[0.2, -0.4]).unwrap();
        for (a, b) in out.iter().zip(&plain) {
            assert_eq!(a.value(), *b);
        }
    }

    #[test]
    fn batch_matches_tape_values_tangents_and_gradients() {
        let spec = MlpSpec::new(2, vec![5, 4], 2).unwrap();
        let mut m = Mlp::init(&spec, 5).unwrap();
        // non-zero biases to exercise every path
        let mut p = m.params();
        for (i, v) in p.iter_mut().enumerate() {
            *v += 0.01 * (i as f64).sin();
        }
        m.set_params(&p).unwrap();

        let pts = [(0.1, -0.3), (0.7, 0.2), (0.0, 0.9)];
        let n = pts.len();
        let mut inputs = vec![0.0; 2 * n];
        for (i, &(a, b)) in pts.iter().enumerate() {
            inputs[i] = a;
            inputs[n + i] = b;
        }
        let cache = m.forward_batch(&inputs, n, 0);
        // loss = sum_p sum_k (c_k y_k + e_k dy_k/dx0)^2 style weights
        let wy = [0.3, -1.1];
        let wd = [0.7, 0.4];
        let mut g_out = vec![0.0; 2 * n];
        let mut g_tan = vec![0.0; 2 * n];
        for k in 0..2 {
            for p in 0..n {
                g_out[k * n + p] = wy[k];
                g_tan[k * n + p] = wd[k];
            }
        }
        let mut grad = vec![0.0; m.n_params()];
        let mut g_in = vec![0.0; 2 * n];
        m.backward_batch(&cache, &g_out, &g_tan, &mut grad, Some(&mut g_in));

        let tape = Tape::new();
        let tm = m.on_tape(&tape);
        let mut total = tape.constant(0.0);
        let mut xs = Vec::new();
        for (p, &(a, b)) in pts.iter().enumerate() {
            let x = [tape.var(a), tape.var(b)];
            let y = tm.forward(&x).unwrap();
            for k in 0..2 {
                let dy = tape.grad_graph(y[k], &[x[0]]).unwrap()[0];
                assert_relative_eq!(y[k].value(), cache.outputs()[k * n + p], max_relative = 1e-14);
                assert_relative_eq!(
                    dy.value(),
                    cache.output_tangents()[k * n + p],
                    max_relative = 1e-12,
                    epsilon = 1e-15
                );
                total = total + y[k] * wy[k] + dy * wd[k];
            }
            xs.push(x);
        }
        let tg = tape.grad(total, &tm.params()).unwrap();
        for (a, b) in tg.iter().zip(&grad) {
            assert_relative_eq!(a, b, max_relative = 1e-10, epsilon = 1e-13);
        }
        for (p, x) in xs.iter().enumerate() {
            let gi = tape.grad(total, &[x[0], x[1]]).unwrap();
            assert_relative_eq!(gi[1], g_in[n + p], max_relative = 1e-10, epsilon = 1e-13);
        }
    }

    #[test]
    fn positive_scalar() {
        let s = PositiveScalar { raw: 0.0 };
        assert_eq!(s.value(), 1.0);
        assert!(PositiveScalar { raw: -800.0 }.value() >= 0.0);
        assert_relative_eq!(
            PositiveScalar::from_value(25.0).unwrap().value(),
            25.0,
            max_relative = 1e-15
        );
        assert!(PositiveScalar::from_value(0.0).is_err());
    }

    #[test]
    fn dot_and_sum_are_exact_on_small_integers() {
        let x: Vec<f64> = (0..19).map(|i| i as f64).collect();
        assert_eq!(dot(&x, &x), (0..19).map(|i| (i * i) as f64).sum::<f64>());
        assert_eq!(sum(&x), 171.0);
    }
}
