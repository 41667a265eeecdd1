use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use vaxplan::epimodel::{integrate, scenarios, CoefficientSet, Compartments, DoseSchedule, EpiParams, Model, ModelVariant};
use vaxplan::estimate::Observation;
use vaxplan::io::{write_observations, ObservationTable};

fn vaxplan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vaxplan"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn summary_value(text: &str, key: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with(key)).expect(key);
    line[key.len()..].split_whitespace().next().unwrap().parse().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn observations(location: &str, params: &EpiParams, coeffs: &CoefficientSet, x0: &Compartments, days: u32) -> Vec<Observation> {
    let model = Model::new(ModelVariant::Seir4, params, coeffs, &DoseSchedule::None).unwrap();
    integrate(&model, x0, 0, days, 24)
        .unwrap()
        .days()
        .map(|(day, x)| Observation {
            day,
            location: location.into(),
            detected: params.rho(day as f64) * x.i,
            deaths: x.f1,
            recovered: x.r1,
        })
        .collect()
}

fn write_table(dir: &Path, rows: Vec<Observation>, first: &str) -> PathBuf {
    let table = ObservationTable {
        first_date: first.parse().unwrap(),
        rows,
    };
    let path = dir.join("obs.csv");
    write_observations(&table, fs::File::create(&path).unwrap()).unwrap();
    path
}

const SMALL_DE: &str = "\
[fit]
first = { pop_size = 12, max_iters = 40, stall_generations = 20 }
later = { pop_size = 12, max_iters = 40, stall_generations = 20 }
";

#[test]
fn replay_summary_matches_published_totals() {
    let dir = TempDir::new().unwrap();
    let o = vaxplan(dir.path(), &["simulate", "--params", "spain", "--doses", "100000", "--out", "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let deaths = summary_value(&text, "deaths");
    let peak = summary_value(&text, "peak detected");
    assert!((deaths - 24107.0).abs() < 0.1 * 24107.0, "{text}");
    assert!((peak - 84070.0).abs() < 0.1 * 84070.0, "{text}");
    let csv = fs::read_to_string(dir.path().join("run/trajectory.csv")).unwrap();
    assert!(csv.starts_with("day,S,E,I,D,F1,R1,L,V\n"));
    assert_eq!(csv.lines().count(), 1 + 88);
    assert_eq!(fs::read_to_string(dir.path().join("run/summary.txt")).unwrap(), text);
}

#[test]
fn unvaccinated_valencia_peaks_early_april() {
    let dir = TempDir::new().unwrap();
    let o = vaxplan(dir.path(), &["simulate", "--params", "valencia"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("peak detected")).unwrap();
    let day: u32 = line.rsplit("day ").next().unwrap().trim_end_matches(')').parse().unwrap();
    assert!(day.abs_diff(40) <= 3, "{line}");
}

#[test]
fn zero_length_horizon_reports_initial_state() {
    let dir = TempDir::new().unwrap();
    let o = vaxplan(dir.path(), &["simulate", "--params", "spain", "--to", "2020-02-20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(summary_value(&stdout(&o), "deaths"), 0.0);
    assert_eq!(summary_value(&stdout(&o), "peak detected"), 3.0);
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn simulate_reads_a_schedule_file() {
    let dir = TempDir::new().unwrap();
    let mut sched = String::from("date,location,group,first_doses,second_doses\n");
    for k in 0..30 {
        sched.push_str(&format!("2020-03-{:02},valencia,1,20000,0\n", k + 1));
    }
    write(dir.path(), "s.csv", &sched);
    let with = vaxplan(dir.path(), &["simulate", "--params", "valencia", "--schedule", "s.csv", "--out", "a"]);
    let without = vaxplan(dir.path(), &["simulate", "--params", "valencia", "--out", "b"]);
    assert!(with.status.success(), "{}", stderr(&with));
    assert!(summary_value(&stdout(&with), "deaths") < summary_value(&stdout(&without), "deaths"));
    // only the immune share of first doses given to susceptibles counts
    let v = summary_value(&stdout(&with), "vaccinated");
    assert!(v > 0.5 * 0.6 * 20000.0 * 30.0 && v < 0.6 * 20000.0 * 30.0, "{v}");
}

#[test]
fn empty_data_is_a_schema_error() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "empty.csv", "");
    let o = vaxplan(dir.path(), &["fit", "--data", "empty.csv", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("empty.csv:1:"), "{}", stderr(&o));

    write(dir.path(), "bad.csv", "date,location,detected_active,deaths_cum,recovered_cum\n2020-01-01,a,1,0,0\n2020-01-02,a,x,0,0\n");
    let o = vaxplan(dir.path(), &["fit", "--data", "bad.csv", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("bad.csv:3:"), "{}", stderr(&o));
}

#[test]
fn configuration_problems_exit_with_two() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "obs.csv", "date,location,detected_active,deaths_cum,recovered_cum\n2020-01-01,a,1,0,0\n");
    assert_eq!(vaxplan(dir.path(), &["fit", "--data", "obs.csv"]).status.code(), Some(2));
    assert_eq!(vaxplan(dir.path(), &["simulate", "--params", "atlantis"]).status.code(), Some(2));
    write(dir.path(), "typo.toml", "[model]\nsigmaa = 1\n");
    assert_eq!(vaxplan(dir.path(), &["simulate", "--config", "typo.toml", "--params", "spain"]).status.code(), Some(2));
    write(dir.path(), "nomu.toml", "[model]\npopulation = 1e6\n[equilibria]\nbeta = 0.5\ngamma = 0.1\n");
    assert_eq!(vaxplan(dir.path(), &["equilibria", "--config", "nomu.toml"]).status.code(), Some(2));
}

#[test]
fn blown_up_integration_exits_with_four() {
    let dir = TempDir::new().unwrap();
    write(
        dir.path(),
        "wild.toml",
        r#"location = "x"
first_date = "2021-01-01"
variant = "SEIR4"
[params]
population = 100000.0
sigma = 0.2
detection = 0.1
mu = 0.0
immunity = [0.6, 0.9]
[fit]
e0 = 100.0
first_day = 0
[fit.initial]
s = 99800.0
e = 100.0
i = 100.0
f1 = 0.0
r1 = 0.0
l = 0.0
v = 0.0
r = 0.0
[[fit.segment]]
layout = "initial"
genes = [100.0, 400.0, 0.01, 0.1]
fitness = 0.0
generations = 0
[fit.segment.coefficients]
start = 0.0
end = 20.0
beta = { base = 400.0, drop = 0.0, rate = 0.0 }
gamma1 = { base = 0.01, drop = 0.0, rate = 0.0 }
gamma2 = { base = 0.1, drop = 0.0, rate = 0.0 }
"#,
    );
    write(dir.path(), "coarse.toml", "[model]\nsubsteps = 1\n");
    let o = vaxplan(dir.path(), &["simulate", "--config", "coarse.toml", "--params", "wild.toml"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn four_interval_fit_writes_segment_genes() {
    let dir = TempDir::new().unwrap();
    let s = scenarios::spain();
    let rows = observations("spain", &s.params, &s.coefficients, &s.initial, s.horizon);
    write_table(dir.path(), rows, s.first_date);
    let breaks: Vec<String> = s.coefficients.segments()[1..]
        .iter()
        .map(|seg| format!("\"{}\"", vaxplan::io::date_of(s.first_date.parse().unwrap(), seg.start as u32)))
        .collect();
    assert_eq!(breaks.len(), 3);
    write(
        dir.path(),
        "c.toml",
        &format!("[model]\npopulation = 4.7e7\n[fit]\nbreaks = [{}]\nfirst = {{ pop_size = 12, max_iters = 40, stall_generations = 20 }}\nlater = {{ pop_size = 12, max_iters = 40, stall_generations = 20 }}\n", breaks.join(", ")),
    );
    let o = vaxplan(dir.path(), &["fit", "--config", "c.toml", "--data", "obs.csv", "--seed", "3", "--out", "fit"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let params = fs::read_to_string(dir.path().join("fit/spain.toml")).unwrap();
    assert_eq!(params.matches("[[fit.segment]]").count(), 4);
    let value: toml::Value = toml::from_str(&params).unwrap();
    let first = &value["fit"]["segment"][0];
    assert_eq!(first["layout"].as_str(), Some("initial"));
    assert_eq!(first["genes"].as_array().unwrap().len(), 4);
    let report = fs::read_to_string(dir.path().join("fit/fit_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 5);
    assert!(report.starts_with("location,segment,start_date,end_date,error,generations\nspain,1,2020-02-20,2020-03-12,"));

    // the fitted file drives simulate
    let o = vaxplan(dir.path(), &["simulate", "--params", "fit/spain.toml", "--out", "sim"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn weekly_plan_over_fourteen_days_gives_two_segments() {
    let dir = TempDir::new().unwrap();
    let p = EpiParams::new(1.0e5, 0.2, 0.1, vec![0.6, 0.9]);
    let c = CoefficientSet::constant(0.0, 13.0, 0.6, 0.01, 0.05).unwrap();
    let x0 = Compartments { s: 1.0e5 - 60.0, e: 30.0, i: 30.0, ..Default::default() };
    write_table(dir.path(), observations("town", &p, &c, &x0, 13), "2021-01-01");
    write(dir.path(), "c.toml", &format!("[model]\npopulation = 1e5\n{SMALL_DE}"));
    let o = vaxplan(dir.path(), &["fit", "--config", "c.toml", "--data", "obs.csv", "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let params = fs::read_to_string(dir.path().join("town.toml")).unwrap();
    assert_eq!(params.matches("[[fit.segment]]").count(), 2);
}

fn campaign_dir() -> TempDir {
    let dir = TempDir::new().unwrap();
    let mut rows = Vec::new();
    for (name, n, beta) in [("north", 8.0e4, 0.5), ("south", 1.2e5, 0.3)] {
        let p = EpiParams::new(n, 0.2, 0.1, vec![0.54, 0.95]);
        let c = CoefficientSet::constant(0.0, 21.0, beta, 0.004, 0.08).unwrap();
        let x0 = Compartments { s: n - 40.0, e: 20.0, i: 20.0, ..Default::default() };
        rows.extend(observations(name, &p, &c, &x0, 21));
    }
    write_table(dir.path(), rows, "2021-01-01");
    write(
        dir.path(),
        "c.toml",
        &format!(
            "seed = 4\n{SMALL_DE}[campaign]\nstart = 2021-01-15\nend = 2021-02-20\nbudgets = [0]\n\
             reestimate_every = 7\nwindow = 7\nde = {{ pop_size = 10, max_iters = 30, stall_generations = 10 }}\n\
             [campaign.populations]\nnorth = 8e4\nsouth = 1.2e5\n"
        ),
    );
    dir
}

#[test]
fn zero_budget_has_no_advantage() {
    let dir = campaign_dir();
    let o = vaxplan(dir.path(), &["compare", "--config", "c.toml", "--data", "obs.csv", "--out", "cmp"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("cmp/comparison.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("doses,random_infections,approach_infections,r_saving,a_saving,advantage"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "0");
    assert_eq!(row[5].parse::<f64>().unwrap(), 0.0);
    for series in ["infections", "detected", "deaths", "immunized"] {
        assert!(dir.path().join(format!("cmp/{series}_0.csv")).exists());
    }
}

#[test]
fn savings_grow_with_budget_and_runs_repeat_exactly() {
    let dir = campaign_dir();
    let args = |out: &'static str| ["compare", "--config", "c.toml", "--data", "obs.csv", "--doses", "10000,25000", "--out", out];
    let o = vaxplan(dir.path(), &args("one"));
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("one/comparison.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1][3] >= rows[0][3] && rows[1][4] >= rows[0][4], "{csv}");

    assert!(vaxplan(dir.path(), &args("two")).status.success());
    for entry in fs::read_dir(dir.path().join("one")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(dir.path().join("one").join(&name)).unwrap(),
            fs::read(dir.path().join("two").join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn plan_emits_a_schedule() {
    let dir = campaign_dir();
    let o = vaxplan(dir.path(), &["plan", "--config", "c.toml", "--data", "obs.csv", "--doses", "6000", "--out", "p"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("p/schedule.csv")).unwrap();
    assert!(csv.starts_with("date,location,group,first_doses,second_doses\n2021-01-15,"));
    let total: u64 = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            f[3].parse::<u64>().unwrap() + f[4].parse::<u64>().unwrap()
        })
        .sum();
    assert_eq!(total, 6000);

    let o = vaxplan(dir.path(), &["plan", "--config", "c.toml", "--data", "obs.csv", "--out", "q"]);
    assert!(o.status.success(), "budget taken from the config");
    let empty = fs::read_to_string(dir.path().join("q/schedule.csv")).unwrap();
    assert_eq!(empty.lines().count(), 1);

    write(dir.path(), "bare.toml", "seed = 1\n[campaign]\nstart = 2021-01-15\nend = 2021-02-20\n");
    let o = vaxplan(dir.path(), &["plan", "--config", "bare.toml", "--data", "obs.csv"]);
    assert_eq!(o.status.code(), Some(2), "no budget configured");
}

#[test]
fn nine_budget_list_is_accepted() {
    let dir = campaign_dir();
    let list = "10000,25000,50000,75000,100000,250000,500000,750000,1000000";
    write(
        dir.path(),
        "known.toml",
        &format!(
            "seed = 4\n{SMALL_DE}[campaign]\nstart = 2021-01-15\nend = 2021-01-29\ngain = \"known\"\n\
             [campaign.populations]\nnorth = 8e4\nsouth = 1.2e5\n"
        ),
    );
    let o = vaxplan(dir.path(), &["compare", "--config", "known.toml", "--data", "obs.csv", "--doses", list]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);
}

#[test]
fn equilibria_prints_report_and_csv() {
    let dir = TempDir::new().unwrap();
    write(
        dir.path(),
        "eq.toml",
        "[model]\nvariant = \"SEIR6\"\npopulation = 1e6\nmu = 0.01\nimmunity = [0.54, 0.95]\n\
         [equilibria]\nbeta = 0.5\ngamma = 0.1\ndoses = [200.0, 100.0]\n",
    );
    let o = vaxplan(dir.path(), &["equilibria", "--config", "eq.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("R0 "));
    assert!(text.contains("endemic point\n"));
    assert!(!dir.path().join("equilibria.csv").exists());

    let o = vaxplan(dir.path(), &["equilibria", "--config", "eq.toml", "--out", "eq"]);
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("eq/equilibria.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.contains("\ndisease_free,") && csv.contains("\nendemic,"));
}
