//! Fixtures shared by the benchmarks.

use drpinn::pinn::{StaticProblem, TempProblem};
use drpinn::{StaticExperiment, StaticPinn, TempExperiment, TempPinn};

/// The two-branch recovery problem with its untrained model.
pub fn static_fixture(collocation: usize) -> (StaticPinn, StaticProblem) {
    let exp = StaticExperiment::table1(0.1);
    let (normalized, norm) = exp.generate().unwrap().normalize().unwrap();
    let problem = StaticProblem::new(&normalized, collocation).unwrap();
    let model = StaticPinn::new(2, exp.hidden.clone(), exp.spec.u_dc(), norm, 0, 1.0).unwrap();
    (model, problem)
}

/// The temperature-sweep problem with its untrained model.
pub fn temperature_fixture(collocation: usize) -> (TempPinn, TempProblem) {
    let exp = TempExperiment::table2(0.2);
    let (normalized, norm) = exp.generate().unwrap().normalize().unwrap();
    let problem = TempProblem::new(&normalized, collocation, 0).unwrap();
    let model = TempPinn::new(
        1,
        exp.main_hidden.clone(),
        exp.sub_hidden.clone(),
        TempPinn::reference_log_r0(&normalized).unwrap(),
        exp.tspec.u_dc,
        norm,
        0,
        1.0,
    )
    .unwrap();
    (model, problem)
}
