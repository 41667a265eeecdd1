use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use vaxplan::allocate::{
    compare_budgets, plan_campaign, CampaignConfig, ComparisonReport, GainMode, Location,
    ReestimateSettings,
};
use vaxplan::epimodel::{
    detected, integrate, scenarios, CoefficientSet, Compartments, DoseSchedule, EpiParams, Model,
    ModelVariant, Trajectory,
};
use vaxplan::equilibria::{self, FixedPoint, VitalConfig};
use vaxplan::estimate::{estimate_piecewise, FitSettings, Observation, PiecewiseFit, SegmentationPlan};
use vaxplan::io::{self, ObservationTable, Series};
use vaxplan::Error;

use crate::config::{parse_date, DateValue, GainChoice, RunConfig};
use crate::{Failure, Flags};

/// Fitted model of one location as written by `fit` and read by `simulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsFile {
    pub location: String,
    /// Calendar date of day 0.
    pub first_date: String,
    pub variant: ModelVariant,
    pub params: EpiParams,
    pub fit: PiecewiseFit,
}

struct Context<'a> {
    flags: &'a Flags,
    cfg: RunConfig,
    /// Directory that relative paths inside the config resolve against.
    base: PathBuf,
    out: PathBuf,
}

impl<'a> Context<'a> {
    fn new(flags: &'a Flags) -> Result<Self, Failure> {
        let (cfg, base) = match &flags.config {
            Some(path) => (
                RunConfig::load(path)?,
                path.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (RunConfig::default(), PathBuf::new()),
        };
        let out = flags
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Context { flags, cfg, base, out })
    }

    fn seed(&self) -> Result<u64, Failure> {
        self.flags
            .seed
            .or(self.cfg.seed)
            .ok_or_else(|| Failure::Config("this command needs --seed".into()))
    }

    fn data(&self) -> Result<ObservationTable, Failure> {
        let path = self
            .flags
            .data
            .as_ref()
            .ok_or_else(|| Failure::Config("this command needs --data".into()))?;
        io::load_observations(path).map_err(|e| match e {
            Error::Io(err) => Failure::Data(format!("{}: {err}", path.display())),
            other => other.into(),
        })
    }

    fn output(&self, name: &str) -> Result<BufWriter<File>, Failure> {
        fs::create_dir_all(&self.out)
            .map_err(|e| Failure::Config(format!("{}: {e}", self.out.display())))?;
        let path = self.out.join(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }

    fn write_text(&self, name: &str, text: &str) -> Result<(), Failure> {
        use std::io::Write;
        let mut w = self.output(name)?;
        w.write_all(text.as_bytes())
            .and_then(|()| w.flush())
            .map_err(|e| Failure::Config(format!("{}: {e}", self.out.join(name).display())))
    }

    fn date_flag(&self, flag: &Option<String>, fallback: &Option<DateValue>) -> Result<Option<NaiveDate>, Failure> {
        match (flag, fallback) {
            (Some(text), _) => parse_date(text).map(Some),
            (None, Some(v)) => v.parse().map(Some),
            (None, None) => Ok(None),
        }
    }

    fn fit_settings(&self) -> FitSettings {
        FitSettings {
            variant: self.cfg.model.variant,
            weights: self.cfg.fit.weights,
            substeps: self.cfg.substeps(),
            first: self.cfg.fit.first,
            later: self.cfg.fit.later,
            ..FitSettings::default()
        }
    }

    fn plan(&self, table: &ObservationTable) -> Result<SegmentationPlan, Failure> {
        let Some(breaks) = &self.cfg.fit.breaks else {
            return Ok(SegmentationPlan::Weekly);
        };
        let days = breaks
            .iter()
            .map(|b| {
                let date = b.parse()?;
                table
                    .day_of(date)
                    .ok_or_else(|| Failure::Config(format!("break {date} precedes the data")))
            })
            .collect::<Result<Vec<u32>, Failure>>()?;
        Ok(SegmentationPlan::Explicit(days))
    }

    fn population(&self, location: &str, locations: usize) -> Result<f64, Failure> {
        self.cfg
            .campaign
            .populations
            .get(location)
            .copied()
            .or(if locations == 1 { self.cfg.model.population } else { None })
            .or(self.cfg.model.population.filter(|_| self.cfg.campaign.populations.is_empty()))
            .ok_or_else(|| Failure::Config(format!("no population configured for location `{location}`")))
    }
}

/// Seed of the `k`-th location's fit.
fn location_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn file_stem(location: &str) -> String {
    location
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn day_of(first: NaiveDate, date: NaiveDate, what: &str) -> Result<u32, Failure> {
    u32::try_from((date - first).num_days())
        .map_err(|_| Failure::Config(format!("{what} {date} precedes day 0 ({first})")))
}

pub fn fit(flags: &Flags) -> Result<(), Failure> {
    let ctx = Context::new(flags)?;
    let seed = ctx.seed()?;
    let table = ctx.data()?;
    let from = ctx.date_flag(&flags.from, &None)?;
    let to = ctx.date_flag(&flags.to, &None)?;
    let lo = from.map_or(Ok(0), |d| day_of(table.first_date, d, "--from"))?;
    let hi = to.map_or(Ok(u32::MAX), |d| day_of(table.first_date, d, "--to"))?;
    let plan = ctx.plan(&table)?;
    let settings = ctx.fit_settings();
    let names = table.locations();

    let mut report = String::from("location,segment,start_date,end_date,error,generations\n");
    for (k, name) in names.iter().enumerate() {
        let obs: Vec<Observation> = table
            .for_location(name)
            .into_iter()
            .filter(|o| (lo..=hi).contains(&o.day))
            .collect();
        if obs.is_empty() {
            return Err(Failure::Data(format!("no observations of `{name}` in the requested window")));
        }
        let params = ctx.cfg.model.params(ctx.population(name, names.len())?, &ctx.cfg.model.immunity)?;
        let fit = estimate_piecewise(&obs, &plan, &params, &DoseSchedule::None, &settings, location_seed(seed, k))?;
        println!("{name}: E0 = {:.3}", fit.e0);
        for (s, seg) in fit.segments.iter().enumerate() {
            let start = table.date_of(seg.coefficients.start as u32);
            let end = table.date_of(seg.coefficients.end as u32);
            let genes: Vec<String> = seg.genes.iter().map(|g| format!("{g:.6}")).collect();
            println!("  segment {} ({start} to {end}): error {:.6}, genes [{}]", s + 1, seg.fitness, genes.join(", "));
            writeln!(report, "{name},{},{start},{end},{:.6},{}", s + 1, seg.fitness, seg.generations).unwrap();
        }
        let file = ParamsFile {
            location: name.clone(),
            first_date: table.first_date.to_string(),
            variant: ctx.cfg.model.variant,
            params,
            fit,
        };
        let text = toml::to_string(&file).map_err(|e| Failure::Config(e.to_string()))?;
        ctx.write_text(&format!("{}.toml", file_stem(name)), &text)?;
    }
    ctx.write_text("fit_report.csv", &report)
}

/// A model ready to integrate from `start_day`.
struct Loaded {
    name: String,
    first_date: NaiveDate,
    variant: ModelVariant,
    params: EpiParams,
    coefficients: CoefficientSet,
    initial: Compartments,
    start_day: u32,
    last_day: u32,
    second_dose_from: u32,
}

fn load_params(spec: &str) -> Result<Loaded, Failure> {
    let path = Path::new(spec);
    if path.exists() {
        let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{spec}: {e}")))?;
        let file: ParamsFile = toml::from_str(&text).map_err(|e| Failure::Config(format!("{spec}: {e}")))?;
        let coefficients = file.fit.coefficient_set()?;
        let second_dose_from = coefficients
            .segments()
            .get(1)
            .map_or(file.fit.first_day + vaxplan::allocate::DEFAULT_GAP, |s| s.start as u32);
        return Ok(Loaded {
            name: file.location,
            first_date: parse_date(&file.first_date)?,
            variant: file.variant,
            params: file.params,
            initial: file.fit.initial,
            start_day: file.fit.first_day,
            last_day: file.fit.last_day(),
            coefficients,
            second_dose_from,
        });
    }
    let s = scenarios::by_name(spec)
        .ok_or_else(|| Failure::Config(format!("no parameter file or built-in scenario named `{spec}`")))?;
    Ok(Loaded {
        name: s.name.to_owned(),
        first_date: parse_date(s.first_date)?,
        variant: ModelVariant::Seir4,
        params: s.params,
        coefficients: s.coefficients,
        initial: s.initial,
        start_day: 0,
        last_day: s.horizon,
        second_dose_from: s.second_dose_from,
    })
}

pub fn simulate(flags: &Flags) -> Result<(), Failure> {
    let ctx = Context::new(flags)?;
    let spec = flags
        .params
        .as_deref()
        .ok_or_else(|| Failure::Config("simulate needs --params".into()))?;
    let m = load_params(spec)?;
    let horizon = match ctx.date_flag(&flags.to, &ctx.cfg.simulate.to)? {
        Some(d) => day_of(m.first_date, d, "--to")?,
        None => m.last_day,
    };
    if horizon < m.start_day {
        return Err(Failure::Config(format!(
            "simulation end {} precedes its start {}",
            io::date_of(m.first_date, horizon),
            io::date_of(m.first_date, m.start_day)
        )));
    }
    let report_from = match ctx.date_flag(&flags.from, &None)? {
        Some(d) => day_of(m.first_date, d, "--from")?.max(m.start_day),
        None => m.start_day,
    };

    let schedule = match &flags.schedule {
        Some(path) => io::load_schedule(path, m.first_date, Some(&m.name)).map_err(|e| match e {
            Error::Io(err) => Failure::Data(format!("{}: {err}", path.display())),
            other => other.into(),
        })?,
        None => {
            let delta = match &flags.doses {
                Some(text) => text
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Failure::Config(format!("--doses `{text}` is not a number")))?,
                None => ctx.cfg.simulate.doses,
            };
            if delta == 0.0 {
                DoseSchedule::None
            } else {
                DoseSchedule::two_dose_constant(horizon, delta, m.second_dose_from)
            }
        }
    };
    schedule
        .validate(m.params.population, 0)
        .map_err(|e| Failure::Config(e.to_string()))?;

    let coefficients = m.coefficients.extended(m.start_day as f64, horizon.max(m.start_day + 1) as f64);
    let traj = if horizon == m.start_day {
        Trajectory {
            start_day: m.start_day,
            states: vec![m.initial],
        }
    } else {
        let model = Model::new(m.variant, &m.params, &coefficients, &schedule)?;
        integrate(&model, &m.initial, m.start_day, horizon, ctx.cfg.substeps())?
    };
    traj.write_csv(&m.params, m.variant.merges_removals(), ctx.output("trajectory.csv")?)?;

    let (peak_day, peak) = traj
        .days()
        .filter(|(d, _)| *d >= report_from)
        .map(|(d, x)| (d, detected(&m.params, x, d as f64)))
        .fold((report_from, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    let end = traj.last();
    let mut summary = String::new();
    writeln!(summary, "location        {}", m.name).unwrap();
    writeln!(
        summary,
        "window          {} to {} ({} days)",
        io::date_of(m.first_date, report_from),
        io::date_of(m.first_date, horizon),
        horizon - report_from
    )
    .unwrap();
    let deaths = if m.variant.merges_removals() { end.r } else { end.f1 };
    writeln!(summary, "deaths          {deaths:.0}").unwrap();
    writeln!(
        summary,
        "peak detected   {peak:.0} on {} (day {peak_day})",
        io::date_of(m.first_date, peak_day)
    )
    .unwrap();
    writeln!(summary, "vaccinated      {:.0}", end.v).unwrap();
    print!("{summary}");
    ctx.write_text("summary.txt", &summary)
}

/// Fits every location on the data before the campaign and returns the campaign setup.
fn campaign_setup(ctx: &Context<'_>) -> Result<(ObservationTable, Vec<Location>, CampaignConfig), Failure> {
    let seed = ctx.seed()?;
    let table = ctx.data()?;
    let c = &ctx.cfg.campaign;
    let start = ctx
        .date_flag(&ctx.flags.from, &c.start)?
        .ok_or_else(|| Failure::Config("the campaign needs a start date (--from or campaign.start)".into()))?;
    let end = ctx
        .date_flag(&ctx.flags.to, &c.end)?
        .ok_or_else(|| Failure::Config("the campaign needs an end date (--to or campaign.end)".into()))?;
    let t0 = day_of(table.first_date, start, "campaign start")?;
    let horizon = day_of(table.first_date, end, "campaign end")?;
    if horizon <= t0 {
        return Err(Failure::Config(format!("campaign end {end} is not after its start {start}")));
    }

    let plan = ctx.plan(&table)?;
    let settings = ctx.fit_settings();
    let names = table.locations();
    let mut locations = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        let obs: Vec<Observation> = table.for_location(name).into_iter().filter(|o| o.day <= t0).collect();
        if obs.first().is_none_or(|o| o.day != 0) {
            return Err(Failure::Data(format!(
                "location `{name}` has no observation on {}; every location must start on the first date",
                table.first_date
            )));
        }
        let params = ctx.cfg.model.params(ctx.population(name, names.len())?, &c.immunity)?;
        let fit = estimate_piecewise(&obs, &plan, &params, &DoseSchedule::None, &settings, location_seed(seed, k))?;
        locations.push(Location {
            name: name.clone(),
            coefficients: fit.coefficient_set()?,
            initial: fit.initial,
            params,
        });
    }
    let gain = match c.gain {
        GainChoice::Known => GainMode::Known,
        GainChoice::Reestimate => GainMode::Reestimate(ReestimateSettings {
            every: c.reestimate_every,
            window: c.window,
            de: c.de,
        }),
    };
    let cfg = CampaignConfig {
        gap: c.gap,
        gain,
        substeps: ctx.cfg.substeps(),
        ..CampaignConfig::new(t0, horizon, 0, c.priority_table(&ctx.base)?)
    };
    Ok((table, locations, cfg))
}

pub fn plan(flags: &Flags) -> Result<(), Failure> {
    let ctx = Context::new(flags)?;
    let total = match &flags.doses {
        Some(text) => text
            .trim()
            .parse::<u64>()
            .map_err(|_| Failure::Config(format!("--doses `{text}` is not a whole number")))?,
        None => *ctx
            .cfg
            .campaign
            .budgets
            .first()
            .ok_or_else(|| Failure::Config("plan needs --doses or campaign.budgets".into()))?,
    };
    let (table, locations, cfg) = campaign_setup(&ctx)?;
    let cfg = CampaignConfig { total_doses: total, ..cfg };
    let arm = plan_campaign(&locations, &cfg, ctx.seed()?)?;
    io::write_schedule(&arm.schedule, table.first_date, ctx.output("schedule.csv")?)?;
    println!(
        "{total} doses over {} days: {:.0} infections, {:.0} deaths, {:.4}% immunized",
        cfg.horizon - cfg.t0,
        arm.infections,
        arm.deaths,
        arm.immunized_percent
    );
    Ok(())
}

fn parse_budgets(text: &str) -> Result<Vec<u64>, Failure> {
    text.split(',')
        .map(|b| {
            b.trim()
                .parse::<u64>()
                .map_err(|_| Failure::Config(format!("budget `{}` is not a whole number", b.trim())))
        })
        .collect()
}

fn write_reports(ctx: &Context<'_>, reports: &[ComparisonReport], first: NaiveDate, name: &str) -> Result<(), Failure> {
    io::write_comparison(reports, ctx.output(name)?)?;
    for r in reports {
        for s in Series::ALL {
            io::write_series(r, s, first, ctx.output(&format!("{}_{}.csv", s.name(), r.doses))?)?;
        }
        io::write_schedule(&r.approach.schedule, first, ctx.output(&format!("schedule_{}.csv", r.doses))?)?;
    }
    Ok(())
}

pub fn compare(flags: &Flags) -> Result<(), Failure> {
    let ctx = Context::new(flags)?;
    let budgets = match &flags.doses {
        Some(text) => parse_budgets(text)?,
        None => ctx.cfg.campaign.budgets.clone(),
    };
    if budgets.is_empty() {
        return Err(Failure::Config("compare needs --doses or campaign.budgets".into()));
    }
    let (table, locations, cfg) = campaign_setup(&ctx)?;
    let reports = match compare_budgets(&locations, &cfg, &budgets, ctx.seed()?) {
        Ok(r) => r,
        Err(Error::Campaign { day, source, partial }) => {
            write_reports(&ctx, std::slice::from_ref(&partial), table.first_date, "comparison_partial.csv")?;
            return Err(Error::Campaign { day, source, partial }.into());
        }
        Err(e) => return Err(e.into()),
    };
    write_reports(&ctx, &reports, table.first_date, "comparison.csv")?;
    println!("{:>10} {:>14} {:>14} {:>12} {:>12} {:>12}", "doses", "random", "approach", "r_saving", "a_saving", "advantage");
    for r in &reports {
        println!(
            "{:>10} {:>14.1} {:>14.1} {:>12.1} {:>12.1} {:>12.1}",
            r.doses, r.random.infections, r.approach.infections, r.r_saving, r.a_saving, r.advantage
        );
    }
    Ok(())
}

fn describe(label: &str, p: &FixedPoint, out: &mut String) {
    let x = &p.state;
    let r = &p.report;
    writeln!(out, "{label}").unwrap();
    writeln!(out, "  S {:>16.4}  E {:>14.4}  I {:>14.4}", x.s, x.e, x.i).unwrap();
    writeln!(out, "  R {:>16.4}  V {:>14.4}", x.r, x.v).unwrap();
    writeln!(out, "  residual        {:.3e}", p.residual).unwrap();
    writeln!(out, "  stability       {}", r.stability).unwrap();
    let eig: Vec<String> = r
        .eigenvalues
        .iter()
        .map(|z| if z.im == 0.0 { format!("{:.6e}", z.re) } else { format!("{:.6e}{:+.6e}i", z.re, z.im) })
        .collect();
    writeln!(out, "  eigenvalues     {}", eig.join(", ")).unwrap();
    let rh = &r.routh_hurwitz;
    writeln!(
        out,
        "  Routh-Hurwitz   a2 {:.6e}  a1 {:.6e}  a0 {:.6e}  {}",
        rh.a2,
        rh.a1,
        rh.a0,
        if rh.stable { "stable" } else { "not stable" }
    )
    .unwrap();
}

pub fn equilibria(flags: &Flags) -> Result<(), Failure> {
    let ctx = Context::new(flags)?;
    let m = &ctx.cfg.model;
    let e = &ctx.cfg.equilibria;
    let need = |v: Option<f64>, key: &str| v.ok_or_else(|| Failure::Config(format!("equilibria needs {key}")));
    let population = need(m.population, "model.population")?;
    let cfg = VitalConfig {
        params: m.params(population, &m.immunity)?,
        beta: need(e.beta, "equilibria.beta")?,
        gamma: need(e.gamma, "equilibria.gamma")?,
        doses: e.doses,
    };
    let rep = equilibria::equilibria(&cfg)?;

    let mut text = String::new();
    writeln!(text, "R0              {:.6}", rep.r0).unwrap();
    describe("disease-free point", &rep.disease_free, &mut text);
    match &rep.endemic {
        Some(p) => describe("endemic point", p, &mut text),
        None => writeln!(text, "endemic point   none (R0 <= 1)").unwrap(),
    }
    print!("{text}");

    if flags.out.is_some() || ctx.cfg.out.is_some() {
        let mut csv = String::from("point,S,E,I,R,V,residual,stability,spectral_abscissa,r0\n");
        let points = std::iter::once(("disease_free", &rep.disease_free)).chain(rep.endemic.as_ref().map(|p| ("endemic", p)));
        for (name, p) in points {
            let x = &p.state;
            writeln!(
                csv,
                "{name},{},{},{},{},{},{:e},{},{:e},{}",
                x.s,
                x.e,
                x.i,
                x.r,
                x.v,
                p.residual,
                p.report.stability,
                p.report.spectral_abscissa(),
                rep.r0
            )
            .unwrap();
        }
        ctx.write_text("equilibria.csv", &csv)?;
    }
    Ok(())
}
