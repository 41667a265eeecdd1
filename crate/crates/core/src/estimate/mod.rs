//! Fitting piecewise coefficients to observed detected, dead and recovered counts.
//!
//! The first segment estimates the initial exposed count together with constant
//! rates (4 genes). Every later segment estimates decaying rates (9 genes) and
//! starts from the terminal state of the previous fit.

mod de;

use serde::{Deserialize, Serialize};

use crate::epimodel::{
    integrate, CoefficientSegment, CoefficientSet, Compartments, Decay, DoseSchedule, EpiParams,
    Model, ModelVariant, Trajectory, DEFAULT_SUBSTEPS,
};
use crate::error::{Error, Result};

pub use de::{
    new_population, optimize, Bounds, DeConfig, DeOutcome, MutationFactors, Population,
    MIN_POPULATION,
};
pub(crate) use de::substream;

/// One day of data for one location. Deaths and recoveries are cumulative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub day: u32,
    pub location: String,
    /// Currently active detected infected.
    pub detected: f64,
    pub deaths: f64,
    pub recovered: f64,
}

/// Weights of the detected, deaths and recovered terms of the fitting error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessWeights {
    pub detected: f64,
    pub deaths: f64,
    pub recovered: f64,
}

impl Default for FitnessWeights {
    fn default() -> Self {
        FitnessWeights {
            detected: 0.35,
            deaths: 0.35,
            recovered: 0.3,
        }
    }
}

impl FitnessWeights {
    pub fn new(detected: f64, deaths: f64, recovered: f64) -> Result<Self> {
        let w = FitnessWeights {
            detected,
            deaths,
            recovered,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.detected, self.deaths, self.recovered];
        if all.iter().any(|w| !(*w >= 0.0)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "fitness weights must be nonnegative and sum to 1, got {all:?}"
            )));
        }
        Ok(())
    }
}

/// Weighted sum of the Euclidean gaps between observed and simulated
/// detected, deaths and recovered series.
pub fn fitness_error(
    simulated: &Trajectory,
    params: &EpiParams,
    observed: &[Observation],
    weights: &FitnessWeights,
) -> Result<f64> {
    if observed.is_empty() {
        return Err(Error::EmptyObservations);
    }
    let (mut sd, mut sf, mut sr) = (0.0, 0.0, 0.0);
    for obs in observed {
        let x = simulated
            .at(obs.day)
            .ok_or(Error::OutOfRange { t: obs.day as f64 })?;
        let d = params.rho(obs.day as f64) * x.i;
        sd += (obs.detected - d).powi(2);
        sf += (obs.deaths - x.f1).powi(2);
        sr += (obs.recovered - x.r1).powi(2);
    }
    Ok(weights.detected * sd.sqrt() + weights.deaths * sf.sqrt() + weights.recovered * sr.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneLayout {
    /// `(E0, β0, γ01, γ02)` with constant rates.
    Initial,
    /// `(β0, β1, α, γ01, γ11, α1, γ02, γ12, α2)`.
    Full,
}

impl GeneLayout {
    pub const fn len(self) -> usize {
        match self {
            GeneLayout::Initial => 4,
            GeneLayout::Full => 9,
        }
    }

    /// Rates: `β ∈ [0, 5]`, `γ ∈ [0, 1]`, `α ∈ [0, 50]`, `E0 ∈ [0, 1e5]`.
    /// Drops may have either sign, so rates can rise as well as fall.
    pub fn default_bounds(self) -> Bounds {
        let (lo, hi) = match self {
            GeneLayout::Initial => (vec![0.0, 0.0, 0.0, 0.0], vec![1e5, 5.0, 1.0, 1.0]),
            GeneLayout::Full => (
                vec![0.0, -5.0, 0.0, 0.0, -1.0, 0.0, 0.0, -1.0, 0.0],
                vec![5.0, 5.0, 50.0, 1.0, 1.0, 50.0, 1.0, 1.0, 50.0],
            ),
        };
        Bounds::new(lo, hi).expect("static bounds")
    }

    /// Splits a chromosome into the optional initial exposed count and a segment.
    pub fn decode(self, genes: &[f64], start: f64, end: f64) -> (Option<f64>, CoefficientSegment) {
        match self {
            GeneLayout::Initial => (
                Some(genes[0]),
                CoefficientSegment::constant(start, end, genes[1], genes[2], genes[3]),
            ),
            GeneLayout::Full => (
                None,
                CoefficientSegment {
                    start,
                    end,
                    beta: Decay::new(genes[0], genes[1], genes[2]),
                    gamma1: Decay::new(genes[3], genes[4], genes[5]),
                    gamma2: Decay::new(genes[6], genes[7], genes[8]),
                    gamma_undetected: None,
                },
            ),
        }
    }
}

/// How the observation range is cut into segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentationPlan {
    /// Interior break days.
    Explicit(Vec<u32>),
    /// A break every seven days from the first observation.
    Weekly,
}

impl SegmentationPlan {
    /// Segment boundaries `[first, b1, …, last]`.
    pub fn boundaries(&self, first: u32, last: u32) -> Result<Vec<u32>> {
        if last <= first {
            return Err(Error::InvalidParameter(format!(
                "observation range [{first}, {last}] is too short to segment"
            )));
        }
        let mut out = vec![first];
        match self {
            SegmentationPlan::Weekly => {
                out.extend((1..).map(|k| first + 7 * k).take_while(|&b| b < last));
            }
            SegmentationPlan::Explicit(breaks) => {
                for &b in breaks {
                    if b <= *out.last().unwrap() || b >= last {
                        return Err(Error::InvalidParameter(format!(
                            "break {b} is not strictly increasing inside ({first}, {last})"
                        )));
                    }
                    out.push(b);
                }
            }
        }
        out.push(last);
        Ok(out)
    }
}

/// Model choice and solver settings shared by every segment fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub variant: ModelVariant,
    pub weights: FitnessWeights,
    pub substeps: u32,
    pub first: DeConfig,
    pub later: DeConfig,
    pub initial_bounds: Bounds,
    pub full_bounds: Bounds,
    pub factors: MutationFactors,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            variant: ModelVariant::Seir4,
            weights: FitnessWeights::default(),
            substeps: DEFAULT_SUBSTEPS,
            first: DeConfig::first_segment(),
            later: DeConfig::later_segment(),
            initial_bounds: GeneLayout::Initial.default_bounds(),
            full_bounds: GeneLayout::Full.default_bounds(),
            factors: MutationFactors::Random,
        }
    }
}

impl FitSettings {
    fn for_layout(&self, layout: GeneLayout) -> (&Bounds, &DeConfig) {
        match layout {
            GeneLayout::Initial => (&self.initial_bounds, &self.first),
            GeneLayout::Full => (&self.full_bounds, &self.later),
        }
    }
}

/// Everything needed to score a chromosome on one window `[start, end]`.
#[derive(Debug, Clone)]
pub struct SegmentProblem<'a> {
    pub params: &'a EpiParams,
    pub schedule: &'a DoseSchedule,
    pub layout: GeneLayout,
    pub start: u32,
    pub end: u32,
    /// Observations with `start <= day <= end`.
    pub observations: &'a [Observation],
    /// State at `start`; for the initial layout `e` is replaced by the gene and `s`
    /// absorbs the difference.
    pub initial: Compartments,
}

impl SegmentProblem<'_> {
    pub fn start_state(&self, e0: Option<f64>) -> Compartments {
        match e0 {
            Some(e) => with_exposed(&self.initial, self.params.population, e),
            None => self.initial,
        }
    }

    pub fn simulate(&self, genes: &[f64], settings: &FitSettings) -> Result<(CoefficientSegment, Trajectory)> {
        let (e0, seg) = self.layout.decode(genes, self.start as f64, self.end as f64);
        let set = CoefficientSet::new(vec![seg.clone()])?;
        let x0 = self.start_state(e0);
        if x0.s < 0.0 {
            return Err(Error::InvalidParameter("initial exposed exceed the population".into()));
        }
        let model = Model::new(settings.variant, self.params, &set, self.schedule)?;
        let traj = integrate(&model, &x0, self.start, self.end, settings.substeps)?;
        Ok((seg, traj))
    }

    /// Fitting error, or `+∞` for chromosomes that cannot be simulated.
    pub fn score(&self, genes: &[f64], settings: &FitSettings) -> f64 {
        match self.simulate(genes, settings) {
            Ok((_, traj)) => fitness_error(&traj, self.params, self.observations, &settings.weights)
                .unwrap_or(f64::INFINITY),
            Err(_) => f64::INFINITY,
        }
    }
}

fn with_exposed(x: &Compartments, population: f64, e: f64) -> Compartments {
    let mut out = Compartments { e, ..*x };
    out.s = population - (out.total() - out.s);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFit {
    pub layout: GeneLayout,
    pub genes: Vec<f64>,
    pub fitness: f64,
    pub generations: usize,
    pub coefficients: CoefficientSegment,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub e0: Option<f64>,
}

/// Fits one window and returns the best chromosome with its terminal state.
pub fn estimate_segment(
    problem: &SegmentProblem<'_>,
    settings: &FitSettings,
    seed: u64,
) -> Result<(SegmentFit, Compartments)> {
    if problem.observations.len() < 2 {
        return Err(Error::EstimationFailed(format!(
            "window [{}, {}] holds {} observation days, need at least 2",
            problem.start,
            problem.end,
            problem.observations.len()
        )));
    }
    let (bounds, config) = settings.for_layout(problem.layout);
    if bounds.dim() != problem.layout.len() {
        return Err(Error::InvalidParameter(format!(
            "bounds have {} genes, layout needs {}",
            bounds.dim(),
            problem.layout.len()
        )));
    }
    let score = |g: &[f64]| problem.score(g, settings);
    let out = optimize(&score, bounds, config, seed, settings.factors)?;
    if !out.fitness.is_finite() {
        return Err(Error::EstimationFailed(
            "no chromosome produced a finite fitting error".into(),
        ));
    }
    let (seg, traj) = problem.simulate(&out.best, settings)?;
    let (e0, _) = problem.layout.decode(&out.best, 0.0, 1.0);
    Ok((
        SegmentFit {
            layout: problem.layout,
            genes: out.best,
            fitness: out.fitness,
            generations: out.generations,
            coefficients: seg,
            e0,
        },
        *traj.last(),
    ))
}

/// Starting state from the first observation: `I0 = D0/ρ`, cumulative deaths and
/// recoveries as observed, `E0` given, `S` the remainder.
pub fn initial_state(params: &EpiParams, first: &Observation, e0: f64) -> Compartments {
    let x = Compartments {
        i: first.detected / params.rho(first.day as f64),
        f1: first.deaths,
        r1: first.recovered,
        ..Default::default()
    };
    with_exposed(&x, params.population, e0)
}

/// Fitted piecewise coefficients for one location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseFit {
    pub e0: f64,
    pub initial: Compartments,
    pub first_day: u32,
    #[serde(rename = "segment")]
    pub segments: Vec<SegmentFit>,
}

impl PiecewiseFit {
    pub fn coefficient_set(&self) -> Result<CoefficientSet> {
        CoefficientSet::new(self.segments.iter().map(|s| s.coefficients.clone()).collect())
    }

    pub fn last_day(&self) -> u32 {
        self.segments
            .last()
            .map(|s| s.coefficients.end as u32)
            .unwrap_or(self.first_day)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

/// Fits every segment of `plan` in order, chaining terminal states.
///
/// Observations must belong to one location with strictly increasing days.
/// Segment `k` is fitted with seed `seed + k`.
pub fn estimate_piecewise(
    observations: &[Observation],
    plan: &SegmentationPlan,
    params: &EpiParams,
    schedule: &DoseSchedule,
    settings: &FitSettings,
    seed: u64,
) -> Result<PiecewiseFit> {
    let first = observations.first().ok_or(Error::EmptyObservations)?;
    if let Some(w) = observations.windows(2).find(|w| w[1].day <= w[0].day) {
        return Err(Error::InvalidParameter(format!(
            "observation days must increase strictly, found {} after {}",
            w[1].day, w[0].day
        )));
    }
    settings.weights.validate()?;
    params.validate()?;
    let last = observations.last().unwrap().day;
    let bounds = plan.boundaries(first.day, last)?;

    let mut state = initial_state(params, first, 0.0);
    let mut initial = state;
    let mut segments = Vec::with_capacity(bounds.len() - 1);
    for (k, w) in bounds.windows(2).enumerate() {
        let (start, end) = (w[0], w[1]);
        let lo = observations.partition_point(|o| o.day < start);
        let hi = observations.partition_point(|o| o.day <= end);
        let problem = SegmentProblem {
            params,
            schedule,
            layout: if k == 0 {
                GeneLayout::Initial
            } else {
                GeneLayout::Full
            },
            start,
            end,
            observations: &observations[lo..hi],
            initial: state,
        };
        let (fit, terminal) = estimate_segment(&problem, settings, seed.wrapping_add(k as u64))
            .map_err(|e| Error::Segment {
                index: k,
                source: Box::new(e),
            })?;
        if k == 0 {
            initial = problem.start_state(fit.e0);
        }
        segments.push(fit);
        state = terminal;
    }
    Ok(PiecewiseFit {
        e0: initial.e,
        initial,
        first_day: first.day,
        segments,
    })
}
