use crate::epimodel::{
    integrate, CoefficientSet, Compartments, DoseSchedule, EpiParams, Model, ModelVariant,
};
use crate::error::Result;

/// Inputs of a two-branch forecast for one location from `day` to `horizon`.
#[derive(Debug, Clone, Copy)]
pub struct Forecast<'a> {
    pub params: &'a EpiParams,
    pub coefficients: &'a CoefficientSet,
    /// State at the start of `day`.
    pub state: Compartments,
    pub day: u32,
    pub horizon: u32,
    pub substeps: u32,
}

/// New infections between `day` and `horizon` when `first_doses` first doses are
/// given on `day` and nothing afterwards.
pub fn cumulative_infections(f: &Forecast<'_>, first_doses: f64) -> Result<f64> {
    if f.horizon <= f.day {
        return Ok(0.0);
    }
    let coeffs = f
        .coefficients
        .extended(f.day as f64, f.horizon as f64);
    let schedule = DoseSchedule::Daily {
        start_day: f.day,
        doses: vec![vec![first_doses, 0.0]],
    };
    let model = Model::new(ModelVariant::Seir4, f.params, &coeffs, &schedule)?;
    let traj = integrate(&model, &f.state, f.day, f.horizon, f.substeps)?;
    Ok(traj.last().ever_infected() - f.state.ever_infected())
}

/// Infections averted by one extra first dose on `day`.
pub fn gain(f: &Forecast<'_>) -> Result<f64> {
    Ok(cumulative_infections(f, 0.0)? - cumulative_infections(f, 1.0)?)
}
