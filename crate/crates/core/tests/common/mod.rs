//! Oracles shared by the integration tests.
#![allow(dead_code)]

use drpinn::pinn::{Pinn, StaticProblem};
use drpinn::synth::generate_static;
use drpinn::{EcmSpec, LossWeights, ResidualForm, StaticPinn};

/// Classical RK4 on `dI_i/dt = -I_i / (R_i C_i)` from `I_i(0) = U / R_i`,
/// with the resistive current `U / R0` added on top.
/// Steps never exceed `tau_min / steps_per_tau`.
pub fn rk4_total_currents(spec: &EcmSpec, times: &[f64], steps_per_tau: f64) -> Vec<f64> {
    let u = spec.u_dc();
    let tau_min = spec.time_constants().into_iter().fold(f64::INFINITY, f64::min);
    let rates: Vec<f64> = spec
        .branches()
        .iter()
        .map(|b| 1.0 / (b.resistance * b.capacitance))
        .collect();
    let mut state: Vec<f64> = spec.branches().iter().map(|b| u / b.resistance).collect();
    let f = |y: &[f64]| -> Vec<f64> { y.iter().zip(&rates).map(|(v, k)| -k * v).collect() };
    let mut t_now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let substeps = ((t - t_now) * steps_per_tau / tau_min).ceil().max(1.0) as usize;
        let h = (t - t_now) / substeps as f64;
        if h > 0.0 {
            for _ in 0..substeps {
                let k1 = f(&state);
                let y2: Vec<f64> = state.iter().zip(&k1).map(|(y, k)| y + 0.5 * h * k).collect();
                let k2 = f(&y2);
                let y3: Vec<f64> = state.iter().zip(&k2).map(|(y, k)| y + 0.5 * h * k).collect();
                let k3 = f(&y3);
                let y4: Vec<f64> = state.iter().zip(&k3).map(|(y, k)| y + h * k).collect();
                let k4 = f(&y4);
                for i in 0..state.len() {
                    state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        t_now = t;
        out.push(u / spec.r0() + state.iter().sum::<f64>());
    }
    out
}

pub fn grid(t_end: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect()
}

/// `|g - g_fd| / |g_fd|` in the Euclidean norm, with central differences.
pub fn gradient_error<M: Pinn>(model: &mut M, pb: &M::Problem, form: ResidualForm) -> f64 {
    let w = LossWeights::default();
    let p0 = model.params();
    let (_, g) = model.loss_grad(pb, &w, form);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..p0.len() {
        let h = 1e-6 * p0[i].abs().max(1.0);
        let mut p = p0.clone();
        p[i] = p0[i] + h;
        model.set_params(&p).unwrap();
        let up = model.loss_grad(pb, &w, form).0.total(&w);
        p[i] = p0[i] - h;
        model.set_params(&p).unwrap();
        let down = model.loss_grad(pb, &w, form).0.total(&w);
        let fd = (up - down) / (2.0 * h);
        num += (g[i] - fd).powi(2);
        den += fd * fd;
    }
    model.set_params(&p0).unwrap();
    (num / den).sqrt()
}

pub fn miniature_static() -> (StaticPinn, StaticProblem) {
    let spec = EcmSpec::from_pairs(10.0, &[(4.0, 0.25)], 1.0).unwrap();
    let ds = generate_static(&spec, 8, 0.0, 0, None).unwrap();
    let (norm_ds, norm) = ds.normalize().unwrap();
    let pb = StaticProblem::new(&norm_ds, 16).unwrap();
    let model = StaticPinn::new(1, vec![5], 1.0, norm, 0, 1.0).unwrap();
    (model, pb)
}


/// A random circuit with 1 to 3 branches whose time constants are at least
/// 3.5x apart and whose resistances lie within a factor 20 of each other.
pub fn random_well_conditioned(rng: &mut impl rand::Rng) -> EcmSpec {
    let n = rng.random_range(1..=3);
    let mut tau = rng.random_range(0.01..1.0);
    let pairs: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            tau *= rng.random_range(3.5..20.0);
            let r = rng.random_range(1.0..20.0);
            (r, tau / r)
        })
        .collect();
    EcmSpec::from_pairs(rng.random_range(1.0..50.0), &pairs, rng.random_range(0.5..30.0)).unwrap()
}
