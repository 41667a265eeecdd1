use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vaxplan::allocate::{
    optimal_distribution, random_distribution, simulate_campaign, CampaignConfig, GainMode, Ledger,
    Location, PriorityTable, RemainingMatrix,
};
use vaxplan::epimodel::{CoefficientSet, Compartments, EpiParams};
use vaxplan::Error;

/// `(day, location, group) -> [first, second]` of every dose handed out before failure.
type Given = BTreeMap<(u32, usize, usize), [u64; 2]>;

fn run(budgets: &[u64], counts: Vec<Vec<u64>>, gap: u32, random: bool, seed: u64) -> (Given, Option<Error>) {
    let n_loc = counts.len();
    let mut ledger = Ledger::new(RemainingMatrix { counts }, gap);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut given = Given::new();
    let mut carry = 0;
    for (day, &b) in budgets.iter().enumerate() {
        let day = day as u32;
        let remaining_before: Vec<u64> = (0..ledger.remaining.groups()).map(|g| ledger.remaining.group_total(g)).collect();
        let res = if random {
            random_distribution(day, b + carry, &mut ledger, &mut rng)
        } else {
            optimal_distribution(day, b + carry, &mut ledger, |l| Ok(((l + day as usize) % n_loc) as f64))
        };
        match res {
            Ok(a) => {
                assert_eq!(a.doses.total() + a.unused, b + carry);
                carry = a.unused;
                let top = a.doses.entries().filter(|e| e.2 > 0).map(|e| e.1).max();
                if let Some(top) = top {
                    for g in 0..top {
                        // an earlier group with people left before today must be emptied today
                        assert!(remaining_before[g] == 0 || ledger.remaining.group_total(g) == 0);
                    }
                }
                for (l, g, f, s) in a.doses.entries() {
                    given.insert((day, l, g), [f, s]);
                }
            }
            Err(e) => return (given, Some(e)),
        }
    }
    (given, None)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn every_first_dose_is_matched_or_the_run_stops(
        budgets in prop::collection::vec(0u64..500, 5..70),
        counts in prop::collection::vec(prop::collection::vec(0u64..400, 1..5), 1..4),
        gap in 1u32..30,
        random in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let groups = counts.iter().map(Vec::len).min().unwrap();
        let counts: Vec<Vec<u64>> = counts.into_iter().map(|mut c| { c.truncate(groups); c }).collect();
        let days = budgets.len() as u32;
        let (given, err) = run(&budgets, counts, gap, random, seed);
        let stop = match &err {
            None => days,
            Some(Error::SecondDoseShortfall { day, demand, available }) => {
                prop_assert!(demand > available);
                *day
            }
            Some(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        for (&(day, l, g), &[first, _]) in &given {
            let due = day + gap;
            if due < stop {
                let second = given.get(&(due, l, g)).map_or(0, |x| x[1]);
                prop_assert_eq!(first, second, "location {} group {} day {}", l, g, day);
            }
        }
        for (&(day, l, g), &[_, second]) in &given {
            if second > 0 {
                prop_assert!(day >= gap);
                let first = given.get(&(day - gap, l, g)).map_or(0, |x| x[0]);
                prop_assert_eq!(first, second);
            }
        }
    }

    #[test]
    fn nondecreasing_budgets_never_run_short(
        mut budgets in prop::collection::vec(0u64..500, 5..70),
        gap in 1u32..30,
        random in any::<bool>(),
        seed in any::<u64>(),
    ) {
        budgets.sort_unstable();
        let (_, err) = run(&budgets, vec![vec![10_000; 3]; 2], gap, random, seed);
        prop_assert!(err.is_none(), "{:?}", err);
    }
}

#[test]
fn constant_budget_alternates_first_and_second_doses() {
    let gap = 7;
    let budgets = vec![90; 6 * gap as usize];
    for random in [false, true] {
        let (given, err) = run(&budgets, vec![vec![100_000; 4]; 3], gap, random, 3);
        assert!(err.is_none());
        for day in 0..budgets.len() as u32 {
            let [f, s] = given
                .iter()
                .filter(|(k, _)| k.0 == day)
                .fold([0, 0], |acc, (_, v)| [acc[0] + v[0], acc[1] + v[1]]);
            let expected = if (day / gap) % 2 == 0 { [90, 0] } else { [0, 90] };
            assert_eq!([f, s], expected, "day {day}");
        }
    }
}

fn town(name: &str, n: f64, beta: f64) -> Location {
    Location {
        name: name.into(),
        params: EpiParams::new(n, 0.2, 0.1, vec![0.54, 0.95]),
        coefficients: CoefficientSet::constant(0.0, 60.0, beta, 0.004, 0.08).unwrap(),
        initial: Compartments {
            s: n - 20.0,
            e: 10.0,
            i: 10.0,
            ..Default::default()
        },
    }
}

#[test]
fn arms_spend_the_same_doses_every_day() {
    let locs = vec![town("a", 5.0e4, 0.5), town("b", 7.0e4, 0.35), town("c", 3.0e4, 0.25)];
    let cfg = CampaignConfig {
        gain: GainMode::Known,
        ..CampaignConfig::new(10, 60, 20_000, PriorityTable::valencia())
    };
    let r = simulate_campaign(&locs, &cfg, 9).unwrap();
    let per_day = |rows: &[vaxplan::allocate::ScheduleRow]| {
        let mut m = BTreeMap::<u32, u64>::new();
        for row in rows {
            *m.entry(row.day).or_default() += row.first_doses + row.second_doses;
        }
        m
    };
    assert_eq!(per_day(&r.random.schedule), per_day(&r.approach.schedule));
    assert_eq!(per_day(&r.approach.schedule).values().sum::<u64>(), 20_000);
}
