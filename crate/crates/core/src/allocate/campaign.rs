//! Side-by-side simulation of the greedy and random distributions.
//!
//! Every location runs its own SEIR4 model with its own coefficients. Until `t0`
//! all arms share the unvaccinated history; from `t0` to `horizon` each arm
//! receives the same daily budget and distributes it by its own rule.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    immunized_fraction, optimal_distribution, random_distribution, spread_budget, Allocation,
    Forecast, Ledger, PriorityTable, RemainingMatrix, DEFAULT_GAP,
};
use crate::epimodel::{
    integrate, CoefficientSet, Compartments, DoseSchedule, EpiParams, Model, ModelVariant,
    DEFAULT_SUBSTEPS,
};
use crate::error::{Error, Result};
use crate::estimate::{
    estimate_segment, substream, Bounds, DeConfig, FitSettings, GeneLayout, Observation,
    SegmentProblem,
};

/// One location with the coefficients that drive its simulated epidemic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub name: String,
    pub params: EpiParams,
    pub coefficients: CoefficientSet,
    /// State on day 0.
    pub initial: Compartments,
}

/// Refitting of the gain model on the approach arm's own simulated data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReestimateSettings {
    /// Days between refits.
    pub every: u32,
    /// Length of the fitting window ending on the refit day.
    pub window: u32,
    pub de: DeConfig,
}

impl Default for ReestimateSettings {
    fn default() -> Self {
        ReestimateSettings {
            every: 7,
            window: 7,
            de: DeConfig::campaign(),
        }
    }
}

/// Which coefficients the gain forecast uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum GainMode {
    /// The coefficients that drive the simulation.
    Known,
    /// Constant coefficients fitted on the latest window of simulated data.
    Reestimate(ReestimateSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub t0: u32,
    pub horizon: u32,
    /// Doses available over the whole campaign.
    pub total_doses: u64,
    pub gap: u32,
    pub priority: PriorityTable,
    pub gain: GainMode,
    pub substeps: u32,
}

impl CampaignConfig {
    pub fn new(t0: u32, horizon: u32, total_doses: u64, priority: PriorityTable) -> Self {
        CampaignConfig {
            t0,
            horizon,
            total_doses,
            gap: DEFAULT_GAP,
            priority,
            gain: GainMode::Reestimate(ReestimateSettings::default()),
            substeps: DEFAULT_SUBSTEPS,
        }
    }

    fn validate(&self, locations: &[Location]) -> Result<()> {
        if locations.is_empty() {
            return Err(Error::InvalidParameter("campaign needs at least one location".into()));
        }
        if self.horizon <= self.t0 {
            return Err(Error::InvalidParameter(format!(
                "horizon {} must follow t0 {}",
                self.horizon, self.t0
            )));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidParameter("substeps must be positive".into()));
        }
        if let GainMode::Reestimate(r) = &self.gain {
            if r.every == 0 || r.window == 0 || r.window > self.t0 {
                return Err(Error::InvalidParameter(format!(
                    "refit every {} days over {}-day windows needs 0 < window <= t0 = {}",
                    r.every, r.window, self.t0
                )));
            }
        }
        self.priority.validate()?;
        for loc in locations {
            loc.params.validate()?;
            if loc.params.immunity.len() < 2 {
                return Err(Error::InvalidParameter(format!(
                    "location {} needs two immunity fractions",
                    loc.name
                )));
            }
        }
        Ok(())
    }
}

/// Totals over all locations at the start of one day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayTotals {
    pub day: u32,
    /// Currently infected.
    pub infected: f64,
    /// Currently detected infected.
    pub detected: f64,
    /// New infections since `t0`.
    pub infections: f64,
    /// Deaths since `t0`.
    pub deaths: f64,
    pub immunized_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub day: u32,
    pub location: String,
    /// Priority group, counted from 1.
    pub group: usize,
    pub first_doses: u64,
    pub second_doses: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArmReport {
    /// New infections over the campaign.
    pub infections: f64,
    /// Detected share of the new infections.
    pub detected: f64,
    pub deaths: f64,
    pub immunized_percent: f64,
    pub daily: Vec<DayTotals>,
    pub schedule: Vec<ScheduleRow>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub doses: u64,
    pub baseline: ArmReport,
    pub random: ArmReport,
    pub approach: ArmReport,
    /// Infections averted by the random arm.
    pub r_saving: f64,
    /// Infections averted by the approach arm.
    pub a_saving: f64,
    /// Random-arm infections minus approach-arm infections.
    pub advantage: f64,
}

/// Fitted constant coefficients and the state they reproduce on `anchor_day`.
#[derive(Debug, Clone)]
struct Estimate {
    coefficients: CoefficientSet,
    anchor_day: u32,
    anchor_state: Compartments,
}

struct Arm {
    /// `states[l][d]`, day 0 through the current day.
    states: Vec<Vec<Compartments>>,
    /// `doses[l][d - t0] = [first, second]`.
    doses: Vec<Vec<Vec<f64>>>,
    ledger: Ledger,
    carry: u64,
    schedule: Vec<ScheduleRow>,
}

impl Arm {
    fn new(history: &[Vec<Compartments>], ledger: Ledger) -> Self {
        Arm {
            states: history.to_vec(),
            doses: vec![Vec::new(); history.len()],
            ledger,
            carry: 0,
            schedule: Vec::new(),
        }
    }

    fn dose_schedule(&self, l: usize, t0: u32) -> DoseSchedule {
        DoseSchedule::Daily {
            start_day: t0,
            doses: self.doses[l].clone(),
        }
    }

    /// Applies one day's distribution and advances every location to `day + 1`.
    fn step(&mut self, ctx: &Context<'_>, day: u32, alloc: &Allocation) -> Result<()> {
        self.carry = alloc.unused;
        for (l, g, first, second) in alloc.doses.entries() {
            self.schedule.push(ScheduleRow {
                day,
                location: ctx.locations[l].name.clone(),
                group: g + 1,
                first_doses: first,
                second_doses: second,
            });
        }
        for l in 0..ctx.locations.len() {
            let [d1, d2] = alloc.doses.at_location(l);
            self.doses[l].push(vec![d1 as f64, d2 as f64]);
            let sched = DoseSchedule::Daily {
                start_day: day,
                doses: vec![vec![d1 as f64, d2 as f64]],
            };
            let next = ctx.advance(l, &self.states[l][day as usize], day, day + 1, &sched)?;
            self.states[l].push(next);
        }
        Ok(())
    }
}

struct Context<'a> {
    locations: &'a [Location],
    truth: Vec<CoefficientSet>,
    cfg: &'a CampaignConfig,
}

impl Context<'_> {
    fn advance(&self, l: usize, x: &Compartments, from: u32, to: u32, sched: &DoseSchedule) -> Result<Compartments> {
        let model = Model::new(ModelVariant::Seir4, &self.locations[l].params, &self.truth[l], sched)?;
        Ok(*integrate(&model, x, from, to, self.cfg.substeps)?.last())
    }

    fn report(&self, states: &[Vec<Compartments>], schedule: Vec<ScheduleRow>) -> ArmReport {
        let t0 = self.cfg.t0 as usize;
        let last = states.iter().map(|s| s.len()).min().unwrap_or(0);
        if last <= t0 {
            return ArmReport::default();
        }
        let daily: Vec<DayTotals> = (t0..last)
            .map(|d| {
                let at: Vec<Compartments> = states.iter().map(|s| s[d]).collect();
                let mut tot = DayTotals {
                    day: d as u32,
                    infected: 0.0,
                    detected: 0.0,
                    infections: 0.0,
                    deaths: 0.0,
                    immunized_percent: immunized_fraction(&at),
                };
                for (l, x) in at.iter().enumerate() {
                    let start = &states[l][t0];
                    tot.infected += x.i;
                    tot.detected += self.locations[l].params.rho(d as f64) * x.i;
                    tot.infections += x.ever_infected() - start.ever_infected();
                    tot.deaths += x.f1 - start.f1;
                }
                tot
            })
            .collect();
        let end = daily.last().copied().expect("at least one day");
        let detected = states
            .iter()
            .enumerate()
            .map(|(l, s)| {
                let rho = self.locations[l].params.rho(t0 as f64);
                rho * (s[last - 1].ever_infected() - s[t0].ever_infected())
            })
            .sum();
        ArmReport {
            infections: end.infections,
            detected,
            deaths: end.deaths,
            immunized_percent: end.immunized_percent,
            daily,
            schedule,
        }
    }

    fn comparison(&self, baseline: &ArmReport, random: &Arm, approach: &Arm) -> ComparisonReport {
        let random = self.report(&random.states, random.schedule.clone());
        let approach = self.report(&approach.states, approach.schedule.clone());
        ComparisonReport {
            doses: self.cfg.total_doses,
            r_saving: baseline.infections - random.infections,
            a_saving: baseline.infections - approach.infections,
            advantage: random.infections - approach.infections,
            baseline: baseline.clone(),
            random,
            approach,
        }
    }

    fn reestimate(
        &self,
        l: usize,
        arm: &Arm,
        day: u32,
        settings: &ReestimateSettings,
        seed: u64,
    ) -> Result<Estimate> {
        let loc = &self.locations[l];
        let p = &loc.params;
        let start = day - settings.window;
        let series = &arm.states[l];
        let observations: Vec<Observation> = (start..=day)
            .map(|d| {
                let x = &series[d as usize];
                Observation {
                    day: d,
                    location: loc.name.clone(),
                    detected: p.rho(d as f64) * x.i,
                    deaths: x.f1,
                    recovered: x.r1,
                }
            })
            .collect();
        // unobserved compartments rebuilt from the observed ones
        let first = &observations[0];
        let rho = p.rho(start as f64);
        let i = first.detected / rho;
        let template = Compartments {
            i,
            f1: first.deaths,
            r1: first.recovered,
            l: (1.0 - rho) / rho * (first.deaths + first.recovered),
            v: series[start as usize].v,
            ..Default::default()
        };
        let mut bounds = GeneLayout::Initial.default_bounds();
        // E0 can only take what the rebuilt compartments leave of the population
        let room = p.population - template.total();
        if room <= 0.0 {
            return Err(Error::EstimationFailed(format!(
                "rebuilt compartments of {} exceed its population on day {start}",
                loc.name
            )));
        }
        bounds.upper[0] = bounds.upper[0].min(room);
        let fit_settings = FitSettings {
            variant: ModelVariant::Seir4,
            substeps: self.cfg.substeps,
            first: settings.de,
            initial_bounds: Bounds::new(bounds.lower, bounds.upper)?,
            ..FitSettings::default()
        };
        let schedule = arm.dose_schedule(l, self.cfg.t0);
        let problem = SegmentProblem {
            params: p,
            schedule: &schedule,
            layout: GeneLayout::Initial,
            start,
            end: day,
            observations: &observations,
            initial: template,
        };
        let (fit, terminal) = estimate_segment(&problem, &fit_settings, seed)?;
        Ok(Estimate {
            coefficients: CoefficientSet::new(vec![fit.coefficients])?,
            anchor_day: day,
            anchor_state: terminal,
        })
    }
}

/// Runs the baseline, random and approach arms from `t0` to `horizon`.
///
/// On a numerical failure inside the campaign the error carries the totals
/// reached so far.
pub fn simulate_campaign(
    locations: &[Location],
    cfg: &CampaignConfig,
    seed: u64,
) -> Result<ComparisonReport> {
    run_arms(locations, cfg, seed, true)
}

/// Runs the approach arm alone and reports its schedule and totals.
pub fn plan_campaign(locations: &[Location], cfg: &CampaignConfig, seed: u64) -> Result<ArmReport> {
    run_arms(locations, cfg, seed, false).map(|r| r.approach)
}

fn run_arms(
    locations: &[Location],
    cfg: &CampaignConfig,
    seed: u64,
    with_random: bool,
) -> Result<ComparisonReport> {
    cfg.validate(locations)?;
    let ctx = Context {
        locations,
        truth: locations
            .iter()
            .map(|loc| loc.coefficients.extended(0.0, cfg.horizon as f64))
            .collect(),
        cfg,
    };
    let n_loc = locations.len();

    let mut history = Vec::with_capacity(n_loc);
    let mut baseline_states = Vec::with_capacity(n_loc);
    for (l, loc) in locations.iter().enumerate() {
        let model = Model::new(ModelVariant::Seir4, &loc.params, &ctx.truth[l], &DoseSchedule::None)?;
        let traj = integrate(&model, &loc.initial, 0, cfg.horizon, cfg.substeps)?;
        history.push(traj.states[..=cfg.t0 as usize].to_vec());
        baseline_states.push(traj.states);
    }
    let baseline = ctx.report(&baseline_states, Vec::new());

    let populations: Vec<f64> = locations.iter().map(|l| l.params.population).collect();
    let ledger = Ledger::new(RemainingMatrix::from_populations(&populations, &cfg.priority), cfg.gap);
    let mut random = Arm::new(&history, ledger.clone());
    let mut approach = Arm::new(&history, ledger);
    let mut rng = substream(seed, u64::MAX - 1, 0);
    let mut estimates: Vec<Option<Estimate>> = vec![None; n_loc];
    let budget = spread_budget(cfg.total_doses, cfg.horizon - cfg.t0);

    for day in cfg.t0..cfg.horizon {
        let today = budget[(day - cfg.t0) as usize];
        let result = (|| -> Result<()> {
            let mut ledger = approach.ledger.clone();
            let alloc = optimal_distribution(day, today + approach.carry, &mut ledger, |l| {
                approach_gain(&ctx, &approach, &mut estimates, l, day, seed)
            })?;
            approach.ledger = ledger;
            approach.step(&ctx, day, &alloc)?;
            if !with_random {
                return Ok(());
            }
            let alloc = random_distribution(day, today + random.carry, &mut random.ledger, &mut rng)?;
            random.step(&ctx, day, &alloc)
        })();
        if let Err(source) = result {
            return Err(Error::Campaign {
                day,
                partial: Box::new(ctx.comparison(&baseline, &random, &approach)),
                source: Box::new(source),
            });
        }
    }
    Ok(ctx.comparison(&baseline, &random, &approach))
}

fn approach_gain(
    ctx: &Context<'_>,
    arm: &Arm,
    estimates: &mut [Option<Estimate>],
    l: usize,
    day: u32,
    seed: u64,
) -> Result<f64> {
    let loc = &ctx.locations[l];
    let cfg = ctx.cfg;
    match &cfg.gain {
        GainMode::Known => super::gain(&Forecast {
            params: &loc.params,
            coefficients: &ctx.truth[l],
            state: arm.states[l][day as usize],
            day,
            horizon: cfg.horizon,
            substeps: cfg.substeps,
        }),
        GainMode::Reestimate(settings) => {
            let stale = estimates[l]
                .as_ref()
                .is_none_or(|e| day >= e.anchor_day + settings.every);
            if stale {
                let fit_seed = substream(seed, day as u64, l as u64).random::<u64>();
                estimates[l] = Some(ctx.reestimate(l, arm, day, settings, fit_seed)?);
            }
            let est = estimates[l].as_ref().expect("estimate just refreshed");
            let coeffs = est.coefficients.extended(0.0, cfg.horizon as f64);
            let state = if day == est.anchor_day {
                est.anchor_state
            } else {
                let sched = arm.dose_schedule(l, cfg.t0);
                let model = Model::new(ModelVariant::Seir4, &loc.params, &coeffs, &sched)?;
                *integrate(&model, &est.anchor_state, est.anchor_day, day, cfg.substeps)?.last()
            };
            super::gain(&Forecast {
                params: &loc.params,
                coefficients: &coeffs,
                state,
                day,
                horizon: cfg.horizon,
                substeps: cfg.substeps,
            })
        }
    }
}

/// One campaign per total budget, all with the same seed.
pub fn compare_budgets(
    locations: &[Location],
    cfg: &CampaignConfig,
    budgets: &[u64],
    seed: u64,
) -> Result<Vec<ComparisonReport>> {
    budgets
        .iter()
        .map(|&doses| {
            let c = CampaignConfig {
                total_doses: doses,
                ..cfg.clone()
            };
            simulate_campaign(locations, &c, seed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocate::PriorityGroup;

    fn town(name: &str, n: f64, beta: f64) -> Location {
        Location {
            name: name.into(),
            params: EpiParams::new(n, 0.2, 0.1, vec![0.54, 0.95]),
            coefficients: CoefficientSet::constant(0.0, 80.0, beta, 0.004, 0.06).unwrap(),
            initial: Compartments {
                s: n - 40.0,
                e: 20.0,
                i: 20.0,
                ..Default::default()
            },
        }
    }

    fn table() -> PriorityTable {
        PriorityTable::new(vec![
            PriorityGroup {
                label: "a".into(),
                proportion: 0.1,
            },
            PriorityGroup {
                label: "b".into(),
                proportion: 0.5,
            },
        ])
        .unwrap()
    }

    fn config(doses: u64, gain: GainMode) -> CampaignConfig {
        CampaignConfig {
            gain,
            ..CampaignConfig::new(14, 42, doses, table())
        }
    }

    #[test]
    fn no_doses_means_baseline_everywhere() {
        let locs = vec![town("a", 5.0e4, 0.45), town("b", 8.0e4, 0.3)];
        let r = simulate_campaign(&locs, &config(0, GainMode::Known), 1).unwrap();
        assert_eq!(r.advantage, 0.0);
        assert_eq!(r.random.infections, r.baseline.infections);
        assert_eq!(r.approach.infections, r.baseline.infections);
        assert!(r.approach.schedule.is_empty());
        assert_eq!(r.approach.immunized_percent, 0.0);
    }

    #[test]
    fn one_location_arms_coincide() {
        let locs = vec![town("a", 5.0e4, 0.45)];
        let r = simulate_campaign(&locs, &config(6000, GainMode::Known), 3).unwrap();
        assert_eq!(r.random.daily, r.approach.daily);
        assert_eq!(r.random.schedule, r.approach.schedule);
        assert!(r.a_saving > 0.0);
    }

    #[test]
    fn greedy_beats_random_with_known_coefficients() {
        let locs = vec![
            town("fast", 6.0e4, 0.5),
            town("mid", 6.0e4, 0.3),
            town("slow", 6.0e4, 0.2),
        ];
        let r = simulate_campaign(&locs, &config(6000, GainMode::Known), 7).unwrap();
        assert!(r.advantage > 0.0, "{}", r.advantage);
        assert!(r.random.immunized_percent > 0.0);
        let total: u64 = r.approach.schedule.iter().map(|s| s.first_doses + s.second_doses).sum();
        let total_r: u64 = r.random.schedule.iter().map(|s| s.first_doses + s.second_doses).sum();
        assert_eq!(total, total_r);
        assert!(total <= 6000);
    }

    #[test]
    fn reestimated_gains_run_deterministically() {
        let locs = vec![town("a", 4.0e4, 0.45), town("b", 4.0e4, 0.25)];
        let settings = ReestimateSettings {
            every: 7,
            window: 7,
            de: DeConfig {
                pop_size: 12,
                max_iters: 20,
                stall_generations: 10,
            },
        };
        let cfg = config(3000, GainMode::Reestimate(settings));
        let a = simulate_campaign(&locs, &cfg, 5).unwrap();
        let b = simulate_campaign(&locs, &cfg, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reestimation_survives_a_burnt_out_epidemic() {
        let locs = vec![town("fast", 2.0e4, 1.2), town("slow", 2.0e4, 0.3)];
        let settings = ReestimateSettings {
            every: 7,
            window: 7,
            de: DeConfig {
                pop_size: 6,
                max_iters: 10,
                stall_generations: 5,
            },
        };
        let cfg = CampaignConfig {
            gain: GainMode::Reestimate(settings),
            ..CampaignConfig::new(28, 56, 2000, table())
        };
        simulate_campaign(&locs, &cfg, 2).unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let locs = vec![town("a", 4.0e4, 0.45)];
        let mut cfg = config(10, GainMode::Known);
        cfg.horizon = cfg.t0;
        assert!(simulate_campaign(&locs, &cfg, 0).is_err());
        assert!(simulate_campaign(&[], &config(10, GainMode::Known), 0).is_err());
        let wide = ReestimateSettings {
            window: 30,
            ..Default::default()
        };
        assert!(simulate_campaign(&locs, &config(10, GainMode::Reestimate(wide)), 0).is_err());
    }

    #[test]
    fn plan_matches_the_approach_arm() {
        let locs = vec![town("a", 6.0e4, 0.5), town("b", 6.0e4, 0.3)];
        let cfg = config(3_000, GainMode::Known);
        let full = simulate_campaign(&locs, &cfg, 4).unwrap();
        let plan = plan_campaign(&locs, &cfg, 4).unwrap();
        assert_eq!(plan.schedule, full.approach.schedule);
        assert_eq!(plan.infections, full.approach.infections);
    }

    #[test]
    fn budgets_produce_one_report_each() {
        let locs = vec![town("a", 4.0e4, 0.45), town("b", 4.0e4, 0.25)];
        let r = compare_budgets(&locs, &config(0, GainMode::Known), &[1000, 4000], 2).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].doses, 1000);
        assert!(r[1].a_saving >= r[0].a_saving);
    }
}
