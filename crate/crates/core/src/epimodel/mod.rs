//! Compartmental models with detection and multi-dose vaccination.

mod coefficients;
mod integrate;
pub mod scenarios;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use coefficients::{eval_coefficients, CoefficientSegment, CoefficientSet, Decay, Rates};
pub use integrate::{integrate, Trajectory, DEFAULT_SUBSTEPS};

/// Compartment indices inside the flat state array used by the integrator.
pub(crate) const S: usize = 0;
pub(crate) const E: usize = 1;
pub(crate) const I: usize = 2;
pub(crate) const F1: usize = 3;
pub(crate) const R1: usize = 4;
pub(crate) const L: usize = 5;
pub(crate) const V: usize = 6;
pub(crate) const R: usize = 7;

pub(crate) const NAMES: [&str; 8] = ["S", "E", "I", "F1", "R1", "L", "V", "R"];

/// Person counts in each compartment.
///
/// Variants that merge removals (SEIR5, SEIR6) keep `f1`, `r1` and `l` at zero
/// and use `r` instead.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Compartments {
    pub s: f64,
    pub e: f64,
    pub i: f64,
    /// Deaths among detected infected.
    pub f1: f64,
    /// Recoveries among detected infected.
    pub r1: f64,
    /// Removals among undetected infected.
    pub l: f64,
    /// Immunized by vaccination.
    pub v: f64,
    /// Merged removals.
    pub r: f64,
}

impl Compartments {
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.s, self.e, self.i, self.f1, self.r1, self.l, self.v, self.r,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        Compartments {
            s: a[S],
            e: a[E],
            i: a[I],
            f1: a[F1],
            r1: a[R1],
            l: a[L],
            v: a[V],
            r: a[R],
        }
    }

    /// State for the merged-removal variants.
    pub fn seirv(s: f64, e: f64, i: f64, r: f64, v: f64) -> Self {
        Compartments {
            s,
            e,
            i,
            r,
            v,
            ..Default::default()
        }
    }

    pub fn total(&self) -> f64 {
        self.to_array().iter().sum()
    }

    /// Everyone who has ever left `S` through infection.
    ///
    /// With no births or deaths the increase of this quantity over an interval is
    /// the number of new infections in that interval.
    pub fn ever_infected(&self) -> f64 {
        self.e + self.i + self.f1 + self.r1 + self.l + self.r
    }

    pub fn max_abs_diff(&self, other: &Compartments) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelVariant {
    /// Detection only, no vaccination.
    Seir2,
    /// Two doses, equal removal rates among detected and undetected.
    Seir4,
    /// Arbitrary number of doses.
    #[serde(rename = "NDOSE")]
    NDose,
    /// Constant coefficients, merged removals, vaccination.
    Seir5,
    /// Vital dynamics with a constant dose schedule.
    Seir6,
}

impl ModelVariant {
    pub fn merges_removals(self) -> bool {
        matches!(self, ModelVariant::Seir5 | ModelVariant::Seir6)
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SEIR2" => Ok(ModelVariant::Seir2),
            "SEIR4" => Ok(ModelVariant::Seir4),
            "NDOSE" => Ok(ModelVariant::NDose),
            "SEIR5" => Ok(ModelVariant::Seir5),
            "SEIR6" => Ok(ModelVariant::Seir6),
            other => Err(Error::InvalidParameter(format!("unknown model variant {other:?}"))),
        }
    }
}

/// Detection fraction, either one value or a step function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetectionRate {
    Constant(f64),
    /// `(start_day, value)` pairs sorted by start; before the first start the first value applies.
    Piecewise(Vec<(f64, f64)>),
}

impl DetectionRate {
    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        match self {
            DetectionRate::Constant(rho) => *rho,
            DetectionRate::Piecewise(steps) => {
                let mut value = steps[0].1;
                for &(start, v) in steps {
                    if t >= start {
                        value = v;
                    } else {
                        break;
                    }
                }
                value
            }
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            DetectionRate::Constant(rho) => vec![*rho],
            DetectionRate::Piecewise(steps) => steps.iter().map(|s| s.1).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpiParams {
    pub population: f64,
    /// Inverse of the mean incubation time, per day.
    pub sigma: f64,
    pub detection: DetectionRate,
    /// Birth and death rate per day; only SEIR6 uses it.
    #[serde(default)]
    pub mu: f64,
    /// Immunity fraction after each dose, nondecreasing.
    pub immunity: Vec<f64>,
}

impl EpiParams {
    pub fn new(population: f64, sigma: f64, rho: f64, immunity: Vec<f64>) -> Self {
        EpiParams {
            population,
            sigma,
            detection: DetectionRate::Constant(rho),
            mu: 0.0,
            immunity,
        }
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn rho(&self, t: f64) -> f64 {
        self.detection.at(t)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.population > 0.0 && self.population.is_finite()) {
            return bad(format!("population must be positive, got {}", self.population));
        }
        if !(self.sigma >= 0.0) || !(self.mu >= 0.0) {
            return bad("sigma and mu must be nonnegative".into());
        }
        for rho in self.detection.values() {
            if !(rho > 0.0 && rho < 1.0) {
                return bad(format!("detection rate must lie in (0,1), got {rho}"));
            }
        }
        let mut prev = 0.0;
        for &p in &self.immunity {
            if !(prev..=1.0).contains(&p) {
                return bad(format!(
                    "immunity fractions must be nondecreasing within [0,1], got {:?}",
                    self.immunity
                ));
            }
            prev = p;
        }
        Ok(())
    }

    /// Immunizing dose rate `Δ1π1 + Σ Δi(πi − πi−1)` for the given per-dose counts.
    #[inline]
    pub fn immunizing_rate(&self, doses: &[f64]) -> f64 {
        let mut prev = 0.0;
        let mut p = 0.0;
        for (d, &pi) in doses.iter().zip(&self.immunity) {
            p += d * (pi - prev);
            prev = pi;
        }
        p
    }
}

/// Doses administered per day, by dose index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub enum DoseSchedule {
    #[default]
    None,
    /// The same counts every day.
    Constant(Vec<f64>),
    /// `doses[k][i]` doses of index `i` on day `start_day + k`; zero outside.
    Daily { start_day: u32, doses: Vec<Vec<f64>> },
}

impl DoseSchedule {
    /// Builds a daily schedule over `days` days by calling `f(day, dose_index)`.
    pub fn from_fn(start_day: u32, days: u32, n_doses: usize, f: impl Fn(u32, usize) -> f64) -> Self {
        let doses = (0..days)
            .map(|k| (0..n_doses).map(|i| f(start_day + k, i)).collect())
            .collect();
        DoseSchedule::Daily { start_day, doses }
    }

    /// `Δ` first doses every day and `Δ` second doses from `second_from` on.
    pub fn two_dose_constant(days: u32, delta: f64, second_from: u32) -> Self {
        Self::from_fn(0, days, 2, |day, i| match i {
            0 => delta,
            _ if day >= second_from => delta,
            _ => 0.0,
        })
    }

    pub fn n_doses(&self) -> usize {
        match self {
            DoseSchedule::None => 0,
            DoseSchedule::Constant(d) => d.len(),
            DoseSchedule::Daily { doses, .. } => doses.iter().map(Vec::len).max().unwrap_or(0),
        }
    }

    /// Counts given on `day`; empty when nothing is scheduled.
    #[inline]
    pub fn on_day(&self, day: u32) -> &[f64] {
        match self {
            DoseSchedule::None => &[],
            DoseSchedule::Constant(d) => d,
            DoseSchedule::Daily { start_day, doses } => {
                if day < *start_day {
                    return &[];
                }
                doses
                    .get((day - start_day) as usize)
                    .map(Vec::as_slice)
                    .unwrap_or(&[])
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, DoseSchedule::None | DoseSchedule::Constant(_))
    }

    /// Sum over all days of each dose index (`Δ̄i`). Infinite for nonzero constant schedules.
    pub fn totals(&self) -> Vec<f64> {
        match self {
            DoseSchedule::None => vec![],
            DoseSchedule::Constant(d) => d
                .iter()
                .map(|&x| if x == 0.0 { 0.0 } else { f64::INFINITY })
                .collect(),
            DoseSchedule::Daily { doses, .. } => {
                let mut tot = vec![0.0; self.n_doses()];
                for day in doses {
                    for (t, d) in tot.iter_mut().zip(day) {
                        *t += d;
                    }
                }
                tot
            }
        }
    }

    /// Checks nonnegativity, that no dose index exceeds `population` in total and that
    /// later doses never outrun earlier ones shifted by `gap` days.
    pub fn validate(&self, population: f64, gap: u32) -> Result<()> {
        let DoseSchedule::Daily { doses, .. } = self else {
            return match self {
                DoseSchedule::Constant(d) if d.iter().any(|x| !(*x >= 0.0)) => {
                    Err(Error::InvalidParameter("negative dose count".into()))
                }
                _ => Ok(()),
            };
        };
        let n = self.n_doses();
        let mut cumulative = vec![vec![0.0; doses.len() + 1]; n];
        for (k, day) in doses.iter().enumerate() {
            for i in 0..n {
                let d = day.get(i).copied().unwrap_or(0.0);
                if !(d >= 0.0) {
                    return Err(Error::InvalidParameter(format!("negative dose count on day {k}")));
                }
                cumulative[i][k + 1] = cumulative[i][k] + d;
            }
        }
        for (i, cum) in cumulative.iter().enumerate() {
            if cum[doses.len()] > population {
                return Err(Error::InvalidParameter(format!(
                    "dose {} total {} exceeds population {population}",
                    i + 1,
                    cum[doses.len()]
                )));
            }
        }
        let gap = gap as usize;
        for i in 1..n {
            for k in 1..=doses.len() {
                let earlier = if k > gap { cumulative[i - 1][k - gap] } else { 0.0 };
                if cumulative[i][k] > earlier + 1e-9 {
                    return Err(Error::InvalidParameter(format!(
                        "dose {} outruns dose {} by day {}",
                        i + 1,
                        i,
                        k - 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A model variant bound to its parameters, coefficients and dose schedule.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub variant: ModelVariant,
    pub params: &'a EpiParams,
    pub coefficients: &'a CoefficientSet,
    pub schedule: &'a DoseSchedule,
}

impl<'a> Model<'a> {
    pub fn new(
        variant: ModelVariant,
        params: &'a EpiParams,
        coefficients: &'a CoefficientSet,
        schedule: &'a DoseSchedule,
    ) -> Result<Self> {
        params.validate()?;
        let doses = schedule.n_doses();
        if variant != ModelVariant::Seir2 && doses > params.immunity.len() {
            return Err(Error::InvalidParameter(format!(
                "schedule has {doses} dose indices but only {} immunity fractions",
                params.immunity.len()
            )));
        }
        match variant {
            ModelVariant::Seir4 | ModelVariant::Seir5 if doses > 2 => {
                return Err(Error::InvalidParameter(format!(
                    "{variant:?} takes at most two doses, schedule has {doses}"
                )));
            }
            ModelVariant::Seir6 => {
                if !(params.mu > 0.0) {
                    return Err(Error::InvalidParameter("SEIR6 requires mu > 0".into()));
                }
                if !schedule.is_constant() {
                    return Err(Error::InvalidParameter(
                        "SEIR6 requires a constant dose schedule".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(Model {
            variant,
            params,
            coefficients,
            schedule,
        })
    }

    /// Daily immunizing rate `Σ Δi (πi − πi−1)` on `day`; SEIR2 has no vaccination.
    pub(crate) fn immunizing_rate_on(&self, day: u32) -> f64 {
        match self.variant {
            ModelVariant::Seir2 => 0.0,
            _ => self.params.immunizing_rate(self.schedule.on_day(day)),
        }
    }

    /// Derivative of the flat state with the rates and the day's immunizing rate
    /// already resolved.
    #[inline]
    pub(crate) fn derivative(&self, y: &[f64; 8], t: f64, rates: &Rates, vax: f64) -> [f64; 8] {
        let p = self.params;
        let n = p.population;
        let rho = p.rho(t);
        let infection = rates.beta * (1.0 - rho) * y[I] * y[S] / n;
        let mut d = [0.0; 8];
        match self.variant {
            ModelVariant::Seir2 | ModelVariant::Seir4 | ModelVariant::NDose => {
                let drain = y[S] / n * vax;
                let g_bar = rates.gamma_bar();
                d[S] = -infection - drain;
                d[E] = infection - p.sigma * y[E];
                d[I] = p.sigma * y[E] - (rho * rates.gamma() + (1.0 - rho) * g_bar) * y[I];
                d[F1] = rates.gamma1 * rho * y[I];
                d[R1] = rates.gamma2 * rho * y[I];
                d[L] = g_bar * (1.0 - rho) * y[I];
                d[V] = drain;
            }
            ModelVariant::Seir5 => {
                let drain = y[S] / n * vax;
                let g = rates.gamma();
                d[S] = -infection - drain;
                d[E] = infection - p.sigma * y[E];
                d[I] = p.sigma * y[E] - g * y[I];
                d[R] = g * y[I];
                d[V] = drain;
            }
            ModelVariant::Seir6 => {
                let mu = p.mu;
                let drain = y[S] / n * vax;
                let g = rates.gamma();
                d[S] = mu * n - infection - drain - mu * y[S];
                d[E] = infection - (p.sigma + mu) * y[E];
                d[I] = p.sigma * y[E] - (g + mu) * y[I];
                d[R] = g * y[I] - mu * y[R];
                d[V] = drain - mu * y[V];
            }
        }
        d
    }
}

/// Right-hand side of the model at `state`, time `t`.
///
/// Rejects states with a negative component; the integrator clamps tiny
/// negative values before it gets here.
pub fn rhs(model: &Model<'_>, state: &Compartments, t: f64) -> Result<Compartments> {
    let y = state.to_array();
    if let Some((k, &value)) = y.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeState {
            component: NAMES[k],
            value,
            t,
        });
    }
    let rates = model.coefficients.eval(t)?;
    let day = t.floor().max(0.0) as u32;
    Ok(Compartments::from_array(model.derivative(&y, t, &rates, model.immunizing_rate_on(day))))
}

/// Currently detected infected, `ρ(t)·I(t)`.
pub fn detected(params: &EpiParams, state: &Compartments, t: f64) -> f64 {
    params.rho(t) * state.i
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> EpiParams {
        EpiParams::new(1.0e6, 0.2, 0.1, vec![0.6, 0.9])
    }

    #[test]
    fn disease_free_without_vaccination_is_still() {
        let p = params();
        let c = CoefficientSet::constant(0.0, 10.0, 0.8, 0.01, 0.05).unwrap();
        let sched = DoseSchedule::None;
        let m = Model::new(ModelVariant::Seir4, &p, &c, &sched).unwrap();
        let state = Compartments {
            s: 9.0e5,
            f1: 5.0e4,
            v: 5.0e4,
            ..Default::default()
        };
        let d = rhs(&m, &state, 1.0).unwrap();
        assert_eq!(d, Compartments::default());
    }

    #[test]
    fn seir4_derivative_sums_to_zero() {
        let p = params();
        let c = CoefficientSet::constant(0.0, 10.0, 0.8, 0.01, 0.05).unwrap();
        let sched = DoseSchedule::Constant(vec![3000.0, 1000.0]);
        let m = Model::new(ModelVariant::Seir4, &p, &c, &sched).unwrap();
        let state = Compartments {
            s: 8.0e5,
            e: 4.0e4,
            i: 6.0e4,
            f1: 1.0e3,
            r1: 2.0e4,
            l: 5.0e4,
            v: 2.9e4,
            r: 0.0,
        };
        let d = rhs(&m, &state, 2.0).unwrap();
        // summing the seven equations by hand: every flow appears once with each sign
        let sum = d.s + d.e + d.i + d.f1 + d.r1 + d.l + d.v;
        assert!(sum.abs() < 1e-12 * p.population, "sum = {sum}");
    }

    #[test]
    fn seir4_vaccination_drain() {
        let p = params();
        let c = CoefficientSet::constant(0.0, 10.0, 0.0, 0.0, 0.0).unwrap();
        let sched = DoseSchedule::Constant(vec![1000.0, 500.0]);
        let m = Model::new(ModelVariant::Seir4, &p, &c, &sched).unwrap();
        let state = Compartments {
            s: 5.0e5,
            v: 5.0e5,
            ..Default::default()
        };
        let d = rhs(&m, &state, 0.0).unwrap();
        let expected = 0.5 * (1000.0 * 0.6 + 500.0 * (0.9 - 0.6));
        assert!((d.v - expected).abs() < 1e-9);
        assert!((d.s + expected).abs() < 1e-9);
    }

    #[test]
    fn ndose_uses_increments() {
        let p = EpiParams::new(1.0e6, 0.2, 0.1, vec![0.5, 0.8, 0.95]);
        let c = CoefficientSet::constant(0.0, 10.0, 0.0, 0.0, 0.0).unwrap();
        let sched = DoseSchedule::Constant(vec![100.0, 200.0, 300.0]);
        let m = Model::new(ModelVariant::NDose, &p, &c, &sched).unwrap();
        let state = Compartments {
            s: 1.0e6,
            ..Default::default()
        };
        let d = rhs(&m, &state, 0.0).unwrap();
        let expected = 100.0 * 0.5 + 200.0 * 0.3 + 300.0 * 0.15;
        assert!((d.v - expected).abs() < 1e-9);
        // SEIR4 refuses a third dose
        assert!(Model::new(ModelVariant::Seir4, &p, &c, &sched).is_err());
    }

    #[test]
    fn seir6_disease_free_point_is_fixed() {
        let n = 1.0e6;
        let mu = 3.6e-5;
        let p = EpiParams::new(n, 0.2, 0.1, vec![0.54, 0.95]).with_mu(mu);
        let c = CoefficientSet::constant(0.0, 1.0, 0.4, 0.02, 0.03).unwrap();
        let doses = vec![40.0, 20.0];
        let pp = p.immunizing_rate(&doses);
        let sched = DoseSchedule::Constant(doses);
        let m = Model::new(ModelVariant::Seir6, &p, &c, &sched).unwrap();
        let star = Compartments::seirv(mu * n * n / (pp + mu * n), 0.0, 0.0, 0.0, pp * n / (pp + mu * n));
        let d = rhs(&m, &star, 0.5).unwrap();
        assert!(d.max_abs_diff(&Compartments::default()) < 1e-10 * n);
    }

    #[test]
    fn seir6_needs_vital_dynamics() {
        let p = params();
        let c = CoefficientSet::constant(0.0, 1.0, 0.4, 0.02, 0.03).unwrap();
        let sched = DoseSchedule::None;
        assert!(Model::new(ModelVariant::Seir6, &p, &c, &sched).is_err());
        let p = p.with_mu(1e-4);
        let daily = DoseSchedule::two_dose_constant(5, 10.0, 2);
        assert!(Model::new(ModelVariant::Seir6, &p, &c, &daily).is_err());
    }

    #[test]
    fn negative_state_is_a_domain_error() {
        let p = params();
        let c = CoefficientSet::constant(0.0, 10.0, 0.8, 0.01, 0.05).unwrap();
        let sched = DoseSchedule::None;
        let m = Model::new(ModelVariant::Seir4, &p, &c, &sched).unwrap();
        let state = Compartments {
            s: 1.0e6,
            e: -1.0,
            ..Default::default()
        };
        assert!(matches!(
            rhs(&m, &state, 0.0),
            Err(Error::NegativeState { component: "E", .. })
        ));
    }

    #[test]
    fn detected_values() {
        let p = params();
        let st = Compartments {
            i: 30.0,
            ..Default::default()
        };
        assert!((detected(&p, &st, 0.0) - 3.0).abs() < 1e-12);
        assert_eq!(detected(&p, &Compartments::default(), 0.0), 0.0);
        let valencia = EpiParams::new(5.0e6, 0.2, 0.08, vec![0.6, 0.9]);
        let st = Compartments {
            i: 13.0,
            ..Default::default()
        };
        let d = detected(&valencia, &st, 0.0);
        assert!((d - 1.04).abs() < 1e-12);
        assert_eq!(d.round(), 1.0);
    }

    #[test]
    fn params_validation() {
        assert!(EpiParams::new(1e6, 0.2, 1.0, vec![]).validate().is_err());
        assert!(EpiParams::new(1e6, 0.2, 0.1, vec![0.9, 0.6]).validate().is_err());
        assert!(EpiParams::new(1e6, -0.2, 0.1, vec![]).validate().is_err());
        assert!(EpiParams::new(1e6, 0.2, 0.1, vec![0.54, 0.95]).validate().is_ok());
    }

    #[test]
    fn schedule_validation() {
        let ok = DoseSchedule::two_dose_constant(30, 100.0, 21);
        assert!(ok.validate(1e6, 21).is_ok());
        let early = DoseSchedule::two_dose_constant(30, 100.0, 10);
        assert!(early.validate(1e6, 21).is_err());
        let too_many = DoseSchedule::two_dose_constant(30, 100.0, 21);
        assert!(too_many.validate(2000.0, 21).is_err());
    }

    #[test]
    fn piecewise_detection() {
        let d = DetectionRate::Piecewise(vec![(0.0, 0.1), (10.0, 0.2)]);
        assert_eq!(d.at(-1.0), 0.1);
        assert_eq!(d.at(9.99), 0.1);
        assert_eq!(d.at(10.0), 0.2);
    }
}
