//! Composite PINN loss and the Adam training loop.
//!
//! The loss is `w_data * L_data + w_phys * L_phys + w_ic * L_ic`, all in
//! normalized units:
//!
//! * `L_data`: mean squared error between the summed branch outputs and the
//!   observed total current, over every sample (no batching).
//! * `L_phys`: mean over collocation points and branches of squared branch-ODE
//!   residuals, with `dI/dt` taken from the network's input derivative.
//! * `L_ic`: squared mismatch between each branch output at `t = 0` and its
//!   value implied by the surrogate resistances (averaged over training
//!   temperatures for the temperature model).
//!
//! The residual can be written in two equivalent forms that share the same
//! zero set. [`ResidualForm::Rate`] is the ODE as usually written,
//! `dI/dt + (I - I_inf) / tau`. [`ResidualForm::Relaxation`] multiplies it by
//! the branch time constant, `tau dI/dt + I - I_inf`, which keeps residuals
//! of fast and slow branches on the same scale and is the training default.
//!
//! Gradients come from a batched forward/tangent/reverse pass over the
//! network ([`crate::nn::Mlp::backward_batch`]). The `tape` submodule builds
//! the same losses on a scalar autodiff tape and serves as the reference.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{NamedValue, StaticPinn, TempPinn};
use crate::synth::{uniform_grid, Dataset, Units};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualForm {
    Rate,
    Relaxation,
}

impl ResidualForm {
    pub fn name(&self) -> &'static str {
        match self {
            ResidualForm::Rate => "rate",
            ResidualForm::Relaxation => "relaxation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub data: f64,
    pub physics: f64,
    pub ic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            data: 1.0,
            physics: 1.0,
            ic: 1.0,
        }
    }
}

/// Unweighted loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub data: f64,
    pub physics: f64,
    pub ic: f64,
}

impl LossParts {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.data * self.data + w.physics * self.physics + w.ic * self.ic
    }

    pub fn is_finite(&self) -> bool {
        self.data.is_finite() && self.physics.is_finite() && self.ic.is_finite()
    }
}

/// `lr(k) = lr0 * factor^(k / every)` with a continuous exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr0: f64,
    pub factor: f64,
    pub every: f64,
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        self.lr0 * self.factor.powf(step as f64 / self.every)
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            lr0: 1e-2,
            factor: 0.9,
            every: 2000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: LrSchedule,
    pub collocation_count: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub log_every: usize,
    pub weights: LossWeights,
    pub residual_form: ResidualForm,
    /// Train only the networks, keeping the circuit scalars fixed.
    pub freeze_circuit: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 50_000,
            lr: LrSchedule::default(),
            collocation_count: 4096,
            adam: AdamConfig::default(),
            seed: 0,
            log_every: 500,
            weights: LossWeights::default(),
            residual_form: ResidualForm::Relaxation,
            freeze_circuit: false,
        }
    }
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Uniform grid of `count` collocation times on normalized `[0, 1]`.
pub fn collocation_points(count: usize) -> Vec<f64> {
    uniform_grid(1.0, count)
}

/// Collocation points for a temperature sweep as `(time, temperature index)`.
///
/// The full product of a `count`-point time grid with the temperatures is
/// stratified by temperature: each temperature receives `count / n_temps`
/// distinct grid times (the first `count % n_temps` temperatures one more),
/// drawn without replacement from ChaCha8 seeded with `seed`, then sorted.
pub fn collocation_points_temperature(count: usize, n_temps: usize, seed: u64) -> Vec<(f64, usize)> {
    if count == 0 || n_temps == 0 {
        return vec![];
    }
    let grid = uniform_grid(1.0, count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count.max(n_temps));
    for k in 0..n_temps {
        let m = (count / n_temps + usize::from(k < count % n_temps)).max(1);
        let mut idx = sample_indices(&mut rng, grid.len(), m.min(grid.len())).into_vec();
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|i| (grid[i], k)));
    }
    out
}

fn require_normalized(ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    if ds.units != Units::Normalized {
        return Err(Error::InvalidInput(
            "training data must be normalized first".into(),
        ));
    }
    Ok(())
}

/// Normalized training data and collocation points for [`StaticPinn`].
#[derive(Debug, Clone, PartialEq)]
pub struct StaticProblem {
    pub data_s: Vec<f64>,
    pub data_y: Vec<f64>,
    pub colloc: Vec<f64>,
}

impl StaticProblem {
    pub fn new(normalized: &Dataset, collocation_count: usize) -> Result<Self> {
        require_normalized(normalized)?;
        if normalized.has_temperature() {
            return Err(Error::InvalidInput(
                "static model needs a dataset without temperatures".into(),
            ));
        }
        Ok(StaticProblem {
            data_s: normalized.samples.iter().map(|s| s.t).collect(),
            data_y: normalized.samples.iter().map(|s| s.current).collect(),
            colloc: collocation_points(collocation_count),
        })
    }
}

/// Normalized training data and collocation points for [`TempPinn`].
#[derive(Debug, Clone, PartialEq)]
pub struct TempProblem {
    /// Distinct normalized training temperatures.
    pub temps: Vec<f64>,
    pub data_s: Vec<f64>,
    pub data_temp: Vec<usize>,
    pub data_y: Vec<f64>,
    pub colloc_s: Vec<f64>,
    pub colloc_temp: Vec<usize>,
}

impl TempProblem {
    pub fn new(normalized: &Dataset, collocation_count: usize, seed: u64) -> Result<Self> {
        require_normalized(normalized)?;
        if !normalized.has_temperature() {
            return Err(Error::InvalidInput(
                "temperature model needs a dataset with temperatures".into(),
            ));
        }
        let temps = normalized.temperatures();
        let index = |t: f64| temps.iter().position(|&x| x == t).expect("known temperature");
        let data_temp = normalized
            .samples
            .iter()
            .map(|s| index(s.temperature.expect("temperature dataset")))
            .collect();
        let colloc = collocation_points_temperature(collocation_count, temps.len(), seed);
        Ok(TempProblem {
            data_s: normalized.samples.iter().map(|s| s.t).collect(),
            data_temp,
            data_y: normalized.samples.iter().map(|s| s.current).collect(),
            colloc_s: colloc.iter().map(|c| c.0).collect(),
            colloc_temp: colloc.iter().map(|c| c.1).collect(),
            temps,
        })
    }
}

/// A trainable PINN with a flat parameter vector.
pub trait Pinn {
    type Problem;

    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, flat: &[f64]) -> Result<()>;
    fn param_names(&self) -> Vec<String>;
    /// Loss components and the gradient of the weighted total.
    fn loss_grad(
        &self,
        problem: &Self::Problem,
        weights: &LossWeights,
        form: ResidualForm,
    ) -> (LossParts, Vec<f64>);
    /// Recovered physical scalars, for traces and reports.
    fn physical(&self) -> Vec<NamedValue>;
    /// Number of trailing entries of [`Pinn::params`] that are circuit scalars.
    fn n_circuit_params(&self) -> usize;
}

/// Residual, its partials w.r.t. the output, its tangent and `ln tau`, and
/// w.r.t. `ln` of the asymptote (the asymptote is `exp(-ln R)`-like, so the
/// last partial is `target * d r / d target` with a sign flip).
#[inline]
fn residual(form: ResidualForm, y: f64, dy: f64, tau: f64, target: f64) -> (f64, f64, f64, f64, f64) {
    match form {
        ResidualForm::Relaxation => {
            let r = tau * dy + y - target;
            (r, 1.0, tau, tau * dy, target)
        }
        ResidualForm::Rate => {
            let inv = 1.0 / tau;
            let r = dy + (y - target) * inv;
            (r, inv, 1.0, -(y - target) * inv, target * inv)
        }
    }
}

impl Pinn for StaticPinn {
    type Problem = StaticProblem;

    fn params(&self) -> Vec<f64> {
        StaticPinn::params(self)
    }

    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        StaticPinn::set_params(self, flat)
    }

    fn param_names(&self) -> Vec<String> {
        StaticPinn::param_names(self)
    }

    fn physical(&self) -> Vec<NamedValue> {
        self.materialize_params()
    }

    fn n_circuit_params(&self) -> usize {
        self.n_scalars()
    }

    fn loss_grad(
        &self,
        pb: &StaticProblem,
        w: &LossWeights,
        form: ResidualForm,
    ) -> (LossParts, Vec<f64>) {
        let nd = pb.data_s.len();
        let nc = pb.colloc.len();
        let n = nd + nc + 1;
        let ns = self.n_states();
        let nb = self.n_branches();

        let mut x = Vec::with_capacity(n);
        x.extend_from_slice(&pb.data_s);
        x.extend_from_slice(&pb.colloc);
        x.push(0.0);
        let cache = self.net.forward_batch(&x, n, 0);
        let y = cache.outputs();
        let dy = cache.output_tangents();
        let mut gy = vec![0.0; ns * n];
        let mut gdy = vec![0.0; ns * n];
        let mut gs = vec![0.0; self.n_scalars()];

        // data
        let mut ld = 0.0;
        if nd > 0 {
            let scale = w.data * 2.0 / nd as f64;
            for p in 0..nd {
                let pred: f64 = (0..ns).map(|k| y[k * n + p]).sum();
                let e = pred - pb.data_y[p];
                ld += e * e;
                for k in 0..ns {
                    gy[k * n + p] += scale * e;
                }
            }
            ld /= nd as f64;
        }

        // physics
        let r0 = self.r0.value();
        let mut lp = 0.0;
        if nc > 0 {
            let scale = w.physics * 2.0 / (nc * ns) as f64;
            for k in 0..ns {
                let off = k * n + nd;
                if nb == 0 {
                    for p in 0..nc {
                        let r = dy[off + p];
                        lp += r * r;
                        gdy[off + p] += scale * r;
                    }
                    continue;
                }
                let (rk, ck) = self.branches[k];
                let tau = rk.value() * ck.value();
                let target = if k == 0 { 1.0 / r0 } else { 0.0 };
                let (mut g_tau, mut g_target) = (0.0, 0.0);
                for p in 0..nc {
                    let (r, d_y, d_dy, d_ltau, d_ltarget) =
                        residual(form, y[off + p], dy[off + p], tau, target);
                    lp += r * r;
                    let c = scale * r;
                    gy[off + p] += c * d_y;
                    gdy[off + p] += c * d_dy;
                    g_tau += c * d_ltau;
                    g_target += c * d_ltarget;
                }
                gs[1 + 2 * k] += g_tau;
                gs[2 + 2 * k] += g_tau;
                if k == 0 {
                    gs[0] += g_target;
                }
            }
            lp /= (nc * ns) as f64;
        }

        // initial condition at the last batch point
        let p0 = n - 1;
        let mut lic = 0.0;
        for k in 0..ns {
            let mut r = y[k * n + p0];
            if k == 0 {
                r -= 1.0 / r0;
            }
            if nb > 0 {
                r -= 1.0 / self.branches[k].0.value();
            }
            lic += r * r;
            let c = w.ic * 2.0 * r;
            gy[k * n + p0] += c;
            if k == 0 {
                gs[0] += c / r0;
            }
            if nb > 0 {
                gs[1 + 2 * k] += c / self.branches[k].0.value();
            }
        }

        let mut grad = vec![0.0; self.net.n_params()];
        self.net.backward_batch(&cache, &gy, &gdy, &mut grad, None);
        grad.extend_from_slice(&gs);
        (
            LossParts {
                data: ld,
                physics: lp,
                ic: lic,
            },
            grad,
        )
    }
}

impl Pinn for TempPinn {
    type Problem = TempProblem;

    fn params(&self) -> Vec<f64> {
        TempPinn::params(self)
    }

    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        TempPinn::set_params(self, flat)
    }

    fn param_names(&self) -> Vec<String> {
        TempPinn::param_names(self)
    }

    fn physical(&self) -> Vec<NamedValue> {
        self.materialize_params()
    }

    fn n_circuit_params(&self) -> usize {
        2 * self.n_branches()
    }

    fn loss_grad(&self, pb: &TempProblem, w: &LossWeights, form: ResidualForm) -> (LossParts, Vec<f64>) {
        let nt = pb.temps.len();
        let nd = pb.data_s.len();
        let nc = pb.colloc_s.len();
        let n = nd + nc + nt;
        let ns = self.n_states();
        let nb = self.n_branches();

        let sub_cache = self.sub_net.forward_batch(&pb.temps, nt, 0);
        let rho: Vec<f64> = sub_cache.outputs().iter().map(|v| v + self.log_r0_ref).collect();
        let r0: Vec<f64> = rho.iter().map(|v| v.exp()).collect();
        // u = s * a, y = z * b, dy/ds = dz/du * a * b
        let a: Vec<f64> = rho.iter().map(|v| (self.log_r0_ref - v).exp()).collect();
        let b: Vec<f64> = rho.iter().map(|v| (-v).exp()).collect();
        let scales: Vec<f64> = self.scales.iter().map(|s| s.value()).collect();
        let caps: Vec<f64> = self.caps.iter().map(|c| c.value()).collect();

        let mut x = vec![0.0; 2 * n];
        x[..nd].copy_from_slice(&pb.data_s);
        x[nd..nd + nc].copy_from_slice(&pb.colloc_s);
        let temp_of = |p: usize| -> usize {
            if p < nd {
                pb.data_temp[p]
            } else if p < nd + nc {
                pb.colloc_temp[p - nd]
            } else {
                p - nd - nc
            }
        };
        for p in 0..n {
            let ti = temp_of(p);
            x[p] *= a[ti];
            x[n + p] = rho[ti];
        }
        let cache = self.main_net.forward_batch(&x, n, 0);
        let mut y = cache.outputs().to_vec();
        let mut dy = cache.output_tangents().to_vec();
        for k in 0..ns {
            for p in 0..n {
                let ti = temp_of(p);
                y[k * n + p] *= b[ti];
                dy[k * n + p] *= a[ti] * b[ti];
            }
        }
        let mut gy = vec![0.0; ns * n];
        let mut gdy = vec![0.0; ns * n];
        let mut g_rho = vec![0.0; nt];
        let mut gs = vec![0.0; 2 * nb];

        let mut ld = 0.0;
        if nd > 0 {
            let scale = w.data * 2.0 / nd as f64;
            for p in 0..nd {
                let pred: f64 = (0..ns).map(|k| y[k * n + p]).sum();
                let e = pred - pb.data_y[p];
                ld += e * e;
                for k in 0..ns {
                    gy[k * n + p] += scale * e;
                }
            }
            ld /= nd as f64;
        }

        let mut lp = 0.0;
        if nc > 0 {
            let scale = w.physics * 2.0 / (nc * ns) as f64;
            for k in 0..ns {
                let off = k * n + nd;
                if nb == 0 {
                    for p in 0..nc {
                        let r = dy[off + p];
                        lp += r * r;
                        gdy[off + p] += scale * r;
                    }
                    continue;
                }
                let mut g_tau = 0.0;
                for p in 0..nc {
                    let ti = pb.colloc_temp[p];
                    let tau = scales[k] * r0[ti] * caps[k];
                    let target = if k == 0 { 1.0 / r0[ti] } else { 0.0 };
                    let (r, d_y, d_dy, d_ltau, d_ltarget) =
                        residual(form, y[off + p], dy[off + p], tau, target);
                    lp += r * r;
                    let c = scale * r;
                    gy[off + p] += c * d_y;
                    gdy[off + p] += c * d_dy;
                    g_tau += c * d_ltau;
                    // tau grows with r0 and the asymptote 1/r0 shrinks with it
                    g_rho[ti] += c * (d_ltau + d_ltarget);
                }
                gs[2 * k] += g_tau;
                gs[2 * k + 1] += g_tau;
            }
            lp /= (nc * ns) as f64;
        }

        let mut lic = 0.0;
        if nt > 0 {
            let scale = w.ic * 2.0 / nt as f64;
            for ti in 0..nt {
                let p = nd + nc + ti;
                for k in 0..ns {
                    let mut r = y[k * n + p];
                    let mut d_rho = 0.0;
                    if k == 0 {
                        r -= 1.0 / r0[ti];
                        d_rho += 1.0 / r0[ti];
                    }
                    let mut branch_term = 0.0;
                    if nb > 0 {
                        branch_term = 1.0 / (scales[k] * r0[ti]);
                        r -= branch_term;
                        d_rho += branch_term;
                    }
                    lic += r * r;
                    let c = scale * r;
                    gy[k * n + p] += c;
                    g_rho[ti] += c * d_rho;
                    if nb > 0 {
                        gs[2 * k] += c * branch_term;
                    }
                }
            }
            lic /= nt as f64;
        }

        // back through the output and tangent rescaling
        for k in 0..ns {
            for p in 0..n {
                let ti = temp_of(p);
                let i = k * n + p;
                g_rho[ti] -= gy[i] * y[i] + 2.0 * gdy[i] * dy[i];
                gy[i] *= b[ti];
                gdy[i] *= a[ti] * b[ti];
            }
        }
        let mut grad_main = vec![0.0; self.main_net.n_params()];
        let mut g_in = vec![0.0; 2 * n];
        self.main_net
            .backward_batch(&cache, &gy, &gdy, &mut grad_main, Some(&mut g_in));
        for p in 0..n {
            g_rho[temp_of(p)] += g_in[n + p] - g_in[p] * x[p];
        }
        let mut grad_sub = vec![0.0; self.sub_net.n_params()];
        let zeros = vec![0.0; nt];
        self.sub_net
            .backward_batch(&sub_cache, &g_rho, &zeros, &mut grad_sub, None);

        let mut grad = grad_main;
        grad.extend(grad_sub);
        grad.extend(gs);
        (
            LossParts {
                data: ld,
                physics: lp,
                ic: lic,
            },
            grad,
        )
    }
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub loss: LossParts,
    pub lr: f64,
    pub params: Vec<f64>,
}

/// Convergence trace: losses, learning rate and recovered physical scalars.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub param_names: Vec<String>,
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    /// `step,loss_data,loss_phys,loss_ic,lr,<param names...>`
    pub fn to_csv(&self) -> String {
        use crate::synth::fmt_f64;
        use std::fmt::Write as _;
        let mut out = String::from("step,loss_data,loss_phys,loss_ic,lr");
        for name in &self.param_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                r.step,
                fmt_f64(r.loss.data),
                fmt_f64(r.loss.physics),
                fmt_f64(r.loss.ic),
                fmt_f64(r.lr)
            );
            for v in &r.params {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub trace: TrainTrace,
    pub final_loss: LossParts,
    /// Weighted total loss before each update, one entry per iteration.
    pub loss_history: Vec<f64>,
}

/// Run `cfg.iterations` full-batch Adam steps on the weighted PINN loss.
///
/// Aborts with [`Error::NonFiniteLoss`] as soon as any loss component stops
/// being finite.
pub fn train<M: Pinn>(model: &mut M, problem: &M::Problem, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut params = model.params();
    let mut adam = Adam::new(params.len(), cfg.adam);
    let log_every = cfg.log_every.max(1);
    let names: Vec<String> = model.physical().into_iter().map(|v| v.name).collect();
    let mut trace = TrainTrace {
        param_names: names,
        records: Vec::new(),
    };
    let mut history = Vec::with_capacity(cfg.iterations);
    let record = |step: usize, loss: LossParts, model: &M| TraceRecord {
        step,
        loss,
        lr: cfg.lr.at(step),
        params: model.physical().into_iter().map(|v| v.value).collect(),
    };
    let check = |step: usize, parts: &LossParts| -> Result<()> {
        if parts.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteLoss {
                step,
                data: parts.data,
                physics: parts.physics,
                ic: parts.ic,
            })
        }
    };

    for step in 0..cfg.iterations {
        let (parts, mut grad) = model.loss_grad(problem, &cfg.weights, cfg.residual_form);
        check(step, &parts)?;
        if cfg.freeze_circuit {
            let n = grad.len();
            grad[n - model.n_circuit_params()..].fill(0.0);
        }
        history.push(parts.total(&cfg.weights));
        if step % log_every == 0 {
            trace.records.push(record(step, parts, model));
        }
        adam.step(&mut params, &grad, cfg.lr.at(step));
        model.set_params(&params)?;
    }
    let (final_loss, _) = model.loss_grad(problem, &cfg.weights, cfg.residual_form);
    check(cfg.iterations, &final_loss)?;
    trace.records.push(record(cfg.iterations, final_loss, model));
    Ok(TrainOutcome {
        trace,
        final_loss,
        loss_history: history,
    })
}

/// Scalar-tape versions of the loss terms.
pub mod tape {
    use super::{ResidualForm, StaticProblem, TempProblem};
    use crate::autodiff::{sum, Tape, Var};
    use crate::error::Result;
    use crate::model::{TapeStaticPinn, TapeTempPinn};

    fn mean<'t>(tape: &'t Tape, terms: &[Var<'t>]) -> Var<'t> {
        match sum(terms) {
            Some(s) => s * (1.0 / terms.len() as f64),
            None => tape.constant(0.0),
        }
    }

    fn residual<'t>(form: ResidualForm, y: Var<'t>, dy: Var<'t>, tau: Var<'t>, target: Option<Var<'t>>) -> Var<'t> {
        let dev = match target {
            Some(t) => y - t,
            None => y,
        };
        match form {
            ResidualForm::Relaxation => tau * dy + dev,
            ResidualForm::Rate => dy + dev / tau,
        }
    }

    pub fn data_loss<'t>(tape: &'t Tape, m: &TapeStaticPinn<'t>, pb: &StaticProblem) -> Result<Var<'t>> {
        let mut terms = Vec::with_capacity(pb.data_s.len());
        for (&s, &obs) in pb.data_s.iter().zip(&pb.data_y) {
            let out = m.net.forward(&[tape.constant(s)])?;
            let pred = sum(&out).expect("at least one output");
            terms.push((pred - obs).square());
        }
        Ok(mean(tape, &terms))
    }

    pub fn physics_loss<'t>(
        tape: &'t Tape,
        m: &TapeStaticPinn<'t>,
        pb: &StaticProblem,
        form: ResidualForm,
    ) -> Result<Var<'t>> {
        let mut terms = Vec::new();
        for &s in &pb.colloc {
            let x = tape.var(s);
            let out = m.net.forward(&[x])?;
            for (k, &yk) in out.iter().enumerate() {
                let dy = tape.grad_graph(yk, &[x])?[0];
                let r = match m.branches.get(k) {
                    None => dy,
                    Some(&(rk, ck)) => {
                        let target = (k == 0).then(|| 1.0 / m.r0);
                        residual(form, yk, dy, rk * ck, target)
                    }
                };
                terms.push(r.square());
            }
        }
        Ok(mean(tape, &terms))
    }

    pub fn ic_loss<'t>(tape: &'t Tape, m: &TapeStaticPinn<'t>) -> Result<Var<'t>> {
        let out = m.net.forward(&[tape.constant(0.0)])?;
        let mut terms = Vec::new();
        for (k, &yk) in out.iter().enumerate() {
            let mut target = None;
            if k == 0 {
                target = Some(1.0 / m.r0);
            }
            if let Some(&(rk, _)) = m.branches.get(k) {
                let b = 1.0 / rk;
                target = Some(match target {
                    Some(t) => t + b,
                    None => b,
                });
            }
            let r = match target {
                Some(t) => yk - t,
                None => yk,
            };
            terms.push(r.square());
        }
        Ok(sum(&terms).expect("at least one output"))
    }

    fn log_r0s<'t>(tape: &'t Tape, m: &TapeTempPinn<'t>, temps: &[f64]) -> Result<Vec<Var<'t>>> {
        temps.iter().map(|&t| m.log_r0(tape.constant(t))).collect()
    }

    pub fn temp_data_loss<'t>(tape: &'t Tape, m: &TapeTempPinn<'t>, pb: &TempProblem) -> Result<Var<'t>> {
        let rho = log_r0s(tape, m, &pb.temps)?;
        let mut terms = Vec::new();
        for ((&s, &ti), &obs) in pb.data_s.iter().zip(&pb.data_temp).zip(&pb.data_y) {
            let out = m.currents(tape.constant(s), rho[ti])?;
            let pred = sum(&out).expect("at least one output");
            terms.push((pred - obs).square());
        }
        Ok(mean(tape, &terms))
    }

    pub fn temp_physics_loss<'t>(
        tape: &'t Tape,
        m: &TapeTempPinn<'t>,
        pb: &TempProblem,
        form: ResidualForm,
    ) -> Result<Var<'t>> {
        let rho = log_r0s(tape, m, &pb.temps)?;
        let mut terms = Vec::new();
        for (&s, &ti) in pb.colloc_s.iter().zip(&pb.colloc_temp) {
            let x = tape.var(s);
            let out = m.currents(x, rho[ti])?;
            let r0 = rho[ti].exp();
            for (k, &yk) in out.iter().enumerate() {
                let dy = tape.grad_graph(yk, &[x])?[0];
                let r = if m.caps.is_empty() {
                    dy
                } else {
                    let tau = m.scales[k] * r0 * m.caps[k];
                    let target = (k == 0).then(|| 1.0 / r0);
                    residual(form, yk, dy, tau, target)
                };
                terms.push(r.square());
            }
        }
        Ok(mean(tape, &terms))
    }

    pub fn temp_ic_loss<'t>(tape: &'t Tape, m: &TapeTempPinn<'t>, pb: &TempProblem) -> Result<Var<'t>> {
        let rho = log_r0s(tape, m, &pb.temps)?;
        let mut per_temp = Vec::new();
        for &lr in &rho {
            let r0 = lr.exp();
            let out = m.currents(tape.constant(0.0), lr)?;
            let mut terms = Vec::new();
            for (k, &yk) in out.iter().enumerate() {
                let mut r = yk;
                if k == 0 {
                    r = r - 1.0 / r0;
                }
                if let Some(&sk) = m.scales.get(k) {
                    r = r - 1.0 / (sk * r0);
                }
                terms.push(r.square());
            }
            per_temp.push(sum(&terms).expect("at least one output"));
        }
        Ok(mean(tape, &per_temp))
    }
}
