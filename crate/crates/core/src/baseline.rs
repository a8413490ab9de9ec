//! Classical least-squares fits used to cross-check the PINN.
//!
//! [`fit_static`] runs multistart Levenberg-Marquardt on the closed-form total
//! current in log-parameter space with an analytic Jacobian.
//! [`fit_arrhenius`] is a linear fit of `ln R` against `1 / T`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ecm::{ArrheniusLaw, EcmSpec, RcBranch, BOLTZMANN_EV};
use crate::error::{Error, Result};
use crate::model::canonical;
use crate::synth::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub max_iters: usize,
    pub lambda0: f64,
    /// Convergence threshold on the relative cost decrease of an accepted step.
    pub tol: f64,
    pub multistart: usize,
    /// Box for log-uniform initial guesses, in normalized units.
    pub init_range: (f64, f64),
    pub seed: u64,
    /// Condition number of the Jacobian above which the fit is flagged.
    pub max_condition: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            max_iters: 200,
            lambda0: 1e-3,
            tol: 1e-10,
            multistart: 16,
            init_range: (1e-2, 1e2),
            seed: 0,
            max_condition: 1e8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmFit {
    /// Best-fit circuit in physical units, branches by ascending time constant.
    pub spec: EcmSpec,
    /// Sum of squared residuals in normalized current units.
    pub cost: f64,
    /// Same sum in physical current units.
    pub cost_physical: f64,
    pub condition_number: f64,
    pub ill_conditioned: bool,
    pub start: usize,
    pub iterations: usize,
    /// Cost after every accepted step of the winning start.
    pub cost_history: Vec<f64>,
}

/// Normalized model `y(s) = 1/r0 + sum_i exp(-s / (r_i c_i)) / r_i` in
/// `theta = (ln r0, ln r1, ln c1, ...)`; returns residuals and Jacobian.
fn residuals_jacobian(theta: &[f64], s: &[f64], y: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let n = s.len();
    let p = theta.len();
    let mut r = DVector::zeros(n);
    let mut j = DMatrix::zeros(n, p);
    let inv_r0 = (-theta[0]).exp();
    for (row, (&si, &yi)) in s.iter().zip(y).enumerate() {
        let mut pred = inv_r0;
        j[(row, 0)] = -inv_r0;
        for b in 0..(p - 1) / 2 {
            let inv_r = (-theta[1 + 2 * b]).exp();
            let tau = (theta[1 + 2 * b] + theta[2 + 2 * b]).exp();
            let x = si / tau;
            let term = inv_r * (-x).exp();
            pred += term;
            j[(row, 1 + 2 * b)] = term * (x - 1.0);
            j[(row, 2 + 2 * b)] = term * x;
        }
        r[row] = pred - yi;
    }
    (r, j)
}

struct Run {
    theta: Vec<f64>,
    cost: f64,
    iterations: usize,
    history: Vec<f64>,
}

fn levenberg_marquardt(theta0: Vec<f64>, s: &[f64], y: &[f64], cfg: &LmConfig) -> Run {
    let mut theta = theta0;
    let (mut r, mut j) = residuals_jacobian(&theta, s, y);
    let mut cost = r.norm_squared();
    let mut lambda = cfg.lambda0;
    let mut history = vec![cost];
    let mut iterations = 0;
    while iterations < cfg.max_iters && cost > 0.0 {
        iterations += 1;
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let mut a = jtj.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let step = match a.cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => {
                lambda *= 10.0;
                if lambda > 1e16 {
                    break;
                }
                continue;
            }
        };
        let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, d)| t + d).collect();
        let (rc, jc) = residuals_jacobian(&cand, s, y);
        let cand_cost = rc.norm_squared();
        if cand_cost.is_finite() && cand_cost < cost {
            let decrease = (cost - cand_cost) / cost;
            theta = cand;
            r = rc;
            j = jc;
            cost = cand_cost;
            history.push(cost);
            lambda = (lambda / 10.0).max(1e-15);
            if decrease < cfg.tol {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
    }
    Run {
        theta,
        cost,
        iterations,
        history,
    }
}

/// Fit `n_branches` RC branches plus `R0` to a static dataset.
///
/// `u_dc` is the step voltage used to turn fitted conductances back into
/// resistances. The fit runs on the dataset's normalized form.
pub fn fit_static(dataset: &Dataset, n_branches: usize, u_dc: f64, cfg: &LmConfig) -> Result<LmFit> {
    if dataset.has_temperature() {
        return Err(Error::InvalidInput(
            "baseline fit needs a static dataset".into(),
        ));
    }
    let needed = 1 + 2 * n_branches;
    if dataset.len() < needed {
        return Err(Error::InvalidInput(format!(
            "{needed} parameters need at least {needed} samples, got {}",
            dataset.len()
        )));
    }
    if cfg.multistart == 0 {
        return Err(Error::InvalidInput("multistart must be at least 1".into()));
    }
    let (norm_ds, norm) = dataset.normalize()?;
    let s: Vec<f64> = norm_ds.samples.iter().map(|p| p.t).collect();
    let y: Vec<f64> = norm_ds.samples.iter().map(|p| p.current).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = (cfg.init_range.0.ln(), cfg.init_range.1.ln());
    let mut best: Option<(usize, Run)> = None;
    for start in 0..cfg.multistart {
        let theta0: Vec<f64> = (0..needed).map(|_| rng.random_range(lo..=hi)).collect();
        let run = levenberg_marquardt(theta0, &s, &y, cfg);
        if !run.cost.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((_, b)) => {
                let tie = (run.cost - b.cost).abs() <= 1e-12 * b.cost.max(1e-300);
                if tie {
                    let norm = |t: &[f64]| t.iter().map(|v| v.exp().powi(2)).sum::<f64>();
                    norm(&run.theta) < norm(&b.theta)
                } else {
                    run.cost < b.cost
                }
            }
        };
        if better {
            best = Some((start, run));
        }
    }
    let (start, run) = best.ok_or_else(|| Error::InvalidInput("every start diverged".into()))?;

    let (_, j) = residuals_jacobian(&run.theta, &s, &y);
    let sv = j.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition_number = if smin > 0.0 { smax / smin } else { f64::INFINITY };

    let rs = norm.resistance_scale(u_dc);
    let cs = norm.capacitance_scale(u_dc);
    let branches = (0..n_branches)
        .map(|b| {
            RcBranch::new(
                run.theta[1 + 2 * b].exp() * rs,
                run.theta[2 + 2 * b].exp() * cs,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = canonical(&EcmSpec::new(run.theta[0].exp() * rs, branches, u_dc)?);
    Ok(LmFit {
        spec,
        cost: run.cost,
        cost_physical: run.cost * norm.current_scale.powi(2),
        condition_number,
        ill_conditioned: !(condition_number <= cfg.max_condition),
        start,
        iterations: run.iterations,
        cost_history: run.history,
    })
}

/// Independent static fits at every temperature of a sweep, summarized as
/// the temperature-model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TempLmFit {
    pub per_temperature: Vec<(f64, LmFit)>,
    /// Arrhenius law through the fitted `R0(T)`.
    pub arrhenius: ArrheniusLaw,
    /// Mean over temperatures of `R_i / R0`, one per branch.
    pub scales: Vec<f64>,
    /// Mean fitted capacitance, one per branch.
    pub capacitances: Vec<f64>,
}

/// Fit each temperature of a sweep separately, then tie the results
/// together with an Arrhenius fit of `R0(T)`.
pub fn fit_temperature(dataset: &Dataset, n_branches: usize, u_dc: f64, cfg: &LmConfig) -> Result<TempLmFit> {
    let temps = dataset.temperatures();
    if temps.len() < 2 {
        return Err(Error::InvalidInput(
            "temperature baseline needs at least two temperatures".into(),
        ));
    }
    let per_temperature = temps
        .iter()
        .map(|&t| Ok((t, fit_static(&dataset.at_temperature(t), n_branches, u_dc, cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    let n = per_temperature.len() as f64;
    let r0: Vec<(f64, f64)> = per_temperature.iter().map(|(t, f)| (*t, f.spec.r0())).collect();
    let arrhenius = fit_arrhenius(&r0)?;
    let mean_of = |g: &dyn Fn(&LmFit) -> f64| per_temperature.iter().map(|(_, f)| g(f)).sum::<f64>() / n;
    let scales = (0..n_branches)
        .map(|b| mean_of(&|f: &LmFit| f.spec.branches()[b].resistance / f.spec.r0()))
        .collect();
    let capacitances = (0..n_branches)
        .map(|b| mean_of(&|f: &LmFit| f.spec.branches()[b].capacitance))
        .collect();
    Ok(TempLmFit {
        per_temperature,
        arrhenius,
        scales,
        capacitances,
    })
}

/// Least-squares Arrhenius law through `(temperature, resistance)` samples.
pub fn fit_arrhenius(samples: &[(f64, f64)]) -> Result<ArrheniusLaw> {
    if let Some(&(t, r)) = samples.iter().find(|(t, r)| !(*r > 0.0) || !(*t > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "need positive temperature and resistance, got ({t}, {r})"
        )));
    }
    let mut temps: Vec<f64> = samples.iter().map(|s| s.0).collect();
    temps.sort_by(f64::total_cmp);
    temps.dedup();
    if temps.len() < 2 {
        return Err(Error::InvalidInput(
            "need at least two distinct temperatures".into(),
        ));
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| 1.0 / s.0).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    ArrheniusLaw::new(intercept.exp(), slope * BOLTZMANN_EV)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_static;
    use approx::assert_relative_eq;

    fn table1() -> EcmSpec {
        EcmSpec::from_pairs(25.0, &[(3.5, 0.1), (8.0, 0.5)], 1.0).unwrap()
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let s = [0.0, 0.1, 0.4, 1.0];
        let y = [1.0, 0.5, 0.2, 0.1];
        let theta = [0.3, -0.2, 0.5, 1.1, -0.7];
        let (_, j) = residuals_jacobian(&theta, &s, &y);
        for c in 0..theta.len() {
            let h = 1e-6;
            let mut tp = theta;
            tp[c] += h;
            let mut tm = theta;
            tm[c] -= h;
            let (rp, _) = residuals_jacobian(&tp, &s, &y);
            let (rm, _) = residuals_jacobian(&tm, &s, &y);
            for r in 0..s.len() {
                assert_relative_eq!(j[(r, c)], (rp[r] - rm[r]) / (2.0 * h), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn noiseless_table1_is_recovered() {
        let ds = generate_static(&table1(), 50, 0.0, 0, None).unwrap();
        let fit = fit_static(&ds, 2, 1.0, &LmConfig::default()).unwrap();
        assert!(fit.cost < 1e-20, "cost {}", fit.cost);
        let b = fit.spec.branches();
        for (got, want) in [
            (fit.spec.r0(), 25.0),
            (b[0].resistance, 3.5),
            (b[0].capacitance, 0.1),
            (b[1].resistance, 8.0),
            (b[1].capacitance, 0.5),
        ] {
            assert_relative_eq!(got, want, max_relative = 1e-6);
        }
        assert!(!fit.ill_conditioned);
        assert!(fit.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn pure_resistor_closed_form() {
        let spec = EcmSpec::from_pairs(4.0, &[], 2.0).unwrap();
        let mut ds = generate_static(&spec, 5, 0.0, 0, Some(1.0)).unwrap();
        let currents = [0.4, 0.5, 0.6, 0.5, 0.55];
        for (s, c) in ds.samples.iter_mut().zip(currents) {
            s.current = c;
        }
        let fit = fit_static(&ds, 0, 2.0, &LmConfig::default()).unwrap();
        let mean = currents.iter().sum::<f64>() / 5.0;
        assert_relative_eq!(fit.spec.r0(), 2.0 / mean, max_relative = 1e-6);
    }

    #[test]
    fn noisy_cost_matches_noise_level() {
        let sigma = 0.02;
        let mut total = 0.0;
        let runs = 8;
        let n = 400;
        for seed in 0..runs {
            let ds = generate_static(&table1(), n, sigma, seed, None).unwrap();
            let fit = fit_static(&ds, 2, 1.0, &LmConfig::default()).unwrap();
            total += fit.cost_physical;
        }
        let expected = (n - 5) as f64 * sigma * sigma;
        assert_relative_eq!(total / runs as f64, expected, max_relative = 0.1);
    }

    #[test]
    fn identical_branches_are_flagged() {
        let spec = EcmSpec::from_pairs(25.0, &[(3.5, 0.1), (3.5, 0.1)], 1.0).unwrap();
        let ds = generate_static(&spec, 50, 0.0, 0, None).unwrap();
        let fit = fit_static(&ds, 2, 1.0, &LmConfig::default()).unwrap();
        assert!(fit.ill_conditioned, "condition {}", fit.condition_number);
    }

    #[test]
    fn fit_static_rejects_bad_input() {
        let ds = generate_static(&table1(), 4, 0.0, 0, None).unwrap();
        assert!(fit_static(&ds, 2, 1.0, &LmConfig::default()).is_err());
    }

    #[test]
    fn arrhenius_exact_data() {
        let law = ArrheniusLaw::new(1.0, 0.76).unwrap();
        let pts: Vec<_> = (0..10)
            .map(|k| {
                let t = 294.0 + 30.0 * k as f64 / 9.0;
                (t, law.evaluate(t))
            })
            .collect();
        let fit = fit_arrhenius(&pts).unwrap();
        assert!((fit.w - 0.76).abs() < 1e-10);
        assert_relative_eq!(fit.a, 1.0, max_relative = 1e-8);
        let two = fit_arrhenius(&[(300.0, 2.0), (320.0, 1.0)]).unwrap();
        assert_relative_eq!(two.evaluate(300.0), 2.0, max_relative = 1e-12);
        assert_relative_eq!(two.evaluate(320.0), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn arrhenius_errors() {
        assert!(fit_arrhenius(&[(300.0, 1.0), (310.0, 0.0)]).is_err());
        assert!(fit_arrhenius(&[(300.0, 1.0), (300.0, 2.0)]).is_err());
    }

    #[test]
    fn temperature_sweep_baseline_recovers_noiseless_truth() {
        use crate::ecm::{TempBranch, TempEcmSpec};
        use crate::synth::{generate_temperature, TEndRule};
        let law = ArrheniusLaw::from_reference(1.0, 294.0, 0.76).unwrap();
        let tspec = TempEcmSpec::new(
            law,
            vec![TempBranch {
                law: law.scaled(0.5),
                capacitance: 0.5,
            }],
            1.0,
        )
        .unwrap();
        let temps: Vec<f64> = (0..10).map(|i| 294.0 + 30.0 * i as f64 / 9.0).collect();
        let ds = generate_temperature(&tspec, &temps, 20, 0.0, 0, TEndRule::Global).unwrap();
        let fit = fit_temperature(&ds, 1, 1.0, &LmConfig::default()).unwrap();
        assert_eq!(fit.per_temperature.len(), 10);
        assert_relative_eq!(fit.scales[0], 0.5, max_relative = 1e-6);
        assert_relative_eq!(fit.capacitances[0], 0.5, max_relative = 1e-6);
        assert_relative_eq!(fit.arrhenius.w, 0.76, max_relative = 1e-6);
        assert!(fit_temperature(&ds.at_temperature(294.0), 1, 1.0, &LmConfig::default()).is_err());
    }
}
