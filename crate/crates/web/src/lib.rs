//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported function takes plain numbers and returns a JSON string, so the page
//! needs no generated TypeScript types.

use serde::Serialize;
use vaxplan::allocate::{simulate_campaign, CampaignConfig, GainMode, Location, PriorityTable};
use vaxplan::epimodel::{
    detected, integrate, scenarios, CoefficientSet, Compartments, EpiParams, Model, ModelVariant,
    DEFAULT_SUBSTEPS,
};
use vaxplan::equilibria::{self, FixedPoint, VitalConfig};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct ReplayView {
    pub name: String,
    pub first_date: String,
    pub detected: Vec<f64>,
    pub deaths: Vec<f64>,
    pub vaccinated: Vec<f64>,
    pub peak_day: u32,
    pub peak: f64,
    pub total_deaths: f64,
}

/// Replays a built-in scenario with `delta` first and second doses per day.
pub fn replay(name: &str, delta: f64) -> Result<ReplayView, String> {
    let s = scenarios::by_name(name).ok_or_else(|| format!("unknown scenario `{name}`"))?;
    if !(delta >= 0.0) {
        return Err("daily doses must be nonnegative".into());
    }
    let sched = s.replay_schedule(delta);
    let model = Model::new(ModelVariant::Seir4, &s.params, &s.coefficients, &sched).map_err(|e| e.to_string())?;
    let traj = integrate(&model, &s.initial, 0, s.horizon, DEFAULT_SUBSTEPS).map_err(|e| e.to_string())?;
    let (peak_day, peak) = traj.peak_detected(&s.params);
    Ok(ReplayView {
        name: s.name.into(),
        first_date: s.first_date.into(),
        detected: traj.days().map(|(d, x)| detected(&s.params, x, d as f64)).collect(),
        deaths: traj.states.iter().map(|x| x.f1).collect(),
        vaccinated: traj.states.iter().map(|x| x.v).collect(),
        peak_day,
        peak,
        total_deaths: traj.last().f1,
    })
}

#[derive(Debug, Serialize)]
pub struct PointView {
    pub s: f64,
    pub e: f64,
    pub i: f64,
    pub v: f64,
    pub stability: String,
    pub eigenvalues: Vec<[f64; 2]>,
}

impl From<&FixedPoint> for PointView {
    fn from(p: &FixedPoint) -> Self {
        PointView {
            s: p.state.s,
            e: p.state.e,
            i: p.state.i,
            v: p.state.v,
            stability: p.report.stability.to_string(),
            eigenvalues: p.report.eigenvalues.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct EquilibriaView {
    pub r0: f64,
    pub disease_free: PointView,
    pub endemic: Option<PointView>,
    /// Every `stride`-th day of a run started near the disease-free point.
    pub stride: u32,
    pub infected: Vec<f64>,
    pub susceptible: Vec<f64>,
}

const DEMO_POPULATION: f64 = 1.0e6;

/// Fixed points of the vital-dynamics model and a long run towards the attracting one.
pub fn equilibria_view(beta: f64, gamma: f64, mu: f64, doses: f64, days: u32) -> Result<EquilibriaView, String> {
    let cfg = VitalConfig {
        params: EpiParams::new(DEMO_POPULATION, 0.2, 0.1, vec![0.54, 0.95]).with_mu(mu),
        beta,
        gamma,
        doses: [doses, doses / 2.0],
    };
    let rep = equilibria::equilibria(&cfg).map_err(|e| e.to_string())?;
    let coeffs = cfg.coefficients();
    let sched = cfg.schedule();
    let model = Model::new(ModelVariant::Seir6, &cfg.params, &coeffs, &sched).map_err(|e| e.to_string())?;
    let x0 = Compartments::seirv(DEMO_POPULATION - 100.0, 0.0, 100.0, 0.0, 0.0);
    let traj = integrate(&model, &x0, 0, days.max(1), 4).map_err(|e| e.to_string())?;
    let stride = (days / 400).max(1) as usize;
    Ok(EquilibriaView {
        r0: rep.r0,
        disease_free: (&rep.disease_free).into(),
        endemic: rep.endemic.as_ref().map(Into::into),
        stride: stride as u32,
        infected: traj.states.iter().step_by(stride).map(|x| x.i).collect(),
        susceptible: traj.states.iter().step_by(stride).map(|x| x.s).collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct ArmView {
    pub infections: f64,
    pub daily_infections: Vec<f64>,
    /// First doses per town over the whole campaign.
    pub first_doses: Vec<u64>,
}

#[derive(Debug, Serialize)]
pub struct AllocationView {
    pub towns: Vec<String>,
    pub betas: Vec<f64>,
    pub baseline: ArmView,
    pub random: ArmView,
    pub approach: ArmView,
    pub advantage: f64,
}

const TOWNS: [(&str, f64, f64); 3] = [("Riverside", 1.2e5, 0.42), ("Hillcrest", 2.0e5, 0.31), ("Old Port", 0.8e5, 0.22)];

fn demo_towns() -> Vec<Location> {
    TOWNS
        .iter()
        .map(|&(name, n, beta)| Location {
            name: name.into(),
            params: EpiParams::new(n, 0.2, 0.1, vec![0.54, 0.95]),
            coefficients: CoefficientSet::constant(0.0, 70.0, beta, 0.004, 0.08).expect("valid rates"),
            initial: Compartments {
                s: n - 40.0,
                e: 20.0,
                i: 20.0,
                ..Default::default()
            },
        })
        .collect()
}

/// Greedy against random distribution of `budget` doses over three synthetic towns.
pub fn allocation_view(budget: u64, seed: u64) -> Result<AllocationView, String> {
    let towns = demo_towns();
    let cfg = CampaignConfig {
        gain: GainMode::Known,
        ..CampaignConfig::new(21, 70, budget, PriorityTable::valencia())
    };
    let r = simulate_campaign(&towns, &cfg, seed).map_err(|e| e.to_string())?;
    let arm = |a: &vaxplan::allocate::ArmReport| {
        let mut first = vec![0; towns.len()];
        for row in &a.schedule {
            if let Some(k) = towns.iter().position(|t| t.name == row.location) {
                first[k] += row.first_doses;
            }
        }
        ArmView {
            infections: a.infections,
            daily_infections: a.daily.iter().map(|d| d.infections).collect(),
            first_doses: first,
        }
    };
    Ok(AllocationView {
        towns: towns.iter().map(|t| t.name.clone()).collect(),
        betas: TOWNS.iter().map(|t| t.2).collect(),
        baseline: arm(&r.baseline),
        random: arm(&r.random),
        approach: arm(&r.approach),
        advantage: r.advantage,
    })
}

fn json<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = replayScenario)]
pub fn replay_scenario(name: &str, delta: f64) -> Result<String, JsValue> {
    json(replay(name, delta))
}

#[wasm_bindgen(js_name = equilibriaReport)]
pub fn equilibria_report(beta: f64, gamma: f64, mu: f64, doses: f64, days: u32) -> Result<String, JsValue> {
    json(equilibria_view(beta, gamma, mu, doses, days))
}

#[wasm_bindgen(js_name = allocationDemo)]
pub fn allocation_demo(budget: u32, seed: u32) -> Result<String, JsValue> {
    json(allocation_view(budget as u64, seed as u64))
}
