//! Spatio-temporal dose distribution under priority groups.
//!
//! Each day, second doses owed from `gap` days earlier are served first. The rest
//! goes out as first doses to the current priority group: either to the location
//! with the largest forecast gain ([`optimal_distribution`]) or spread at random
//! across the group's unvaccinated members ([`random_distribution`]).

mod campaign;
mod gain;

use rand::Rng;
use rand_distr::{Distribution, Hypergeometric};
use serde::{Deserialize, Serialize};

use crate::epimodel::Compartments;
use crate::error::{Error, Result};

pub use campaign::{
    compare_budgets, plan_campaign, simulate_campaign, ArmReport, CampaignConfig, ComparisonReport, DayTotals,
    GainMode, Location, ReestimateSettings, ScheduleRow,
};
pub use gain::{cumulative_infections, gain, Forecast};

/// Days between first and second dose.
pub const DEFAULT_GAP: u32 = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityGroup {
    pub label: String,
    /// Share of each location's population in this group.
    pub proportion: f64,
}

/// Groups in priority order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityTable {
    pub groups: Vec<PriorityGroup>,
}

impl PriorityTable {
    pub fn new(groups: Vec<PriorityGroup>) -> Result<Self> {
        let t = PriorityTable { groups };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::InvalidParameter("priority table has no groups".into()));
        }
        if let Some(g) = self.groups.iter().find(|g| !(g.proportion >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "group {:?} has a negative proportion",
                g.label
            )));
        }
        let sum: f64 = self.groups.iter().map(|g| g.proportion).sum();
        if sum > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "group proportions sum to {sum} > 1"
            )));
        }
        Ok(())
    }

    /// Ten age and care groups of the Valencian Community; children under 12 are excluded.
    pub fn valencia() -> Self {
        let rows = [
            ("Residents of nursing homes and health workers", 2.00),
            ("Over 90 years of age", 0.97),
            ("80 to 89 years of age", 4.49),
            ("70 to 79 years of age", 8.66),
            ("60 to 69 years of age", 11.48),
            ("50 to 59 years of age", 14.88),
            ("40 to 49 years of age", 16.84),
            ("30 to 39 years of age", 12.83),
            ("20 to 29 years of age", 10.21),
            ("12 to 19 years of age", 8.39),
        ];
        PriorityTable {
            groups: rows
                .iter()
                .map(|&(label, pct)| PriorityGroup {
                    label: label.into(),
                    proportion: pct / 100.0,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// `floor(N · proportion)` for every group.
    pub fn group_sizes(&self, population: f64) -> Vec<u64> {
        self.groups
            .iter()
            .map(|g| (population * g.proportion).floor() as u64)
            .collect()
    }
}

/// A batch of first doses waiting for its second dose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub location: usize,
    pub group: usize,
    pub first_dose_day: u32,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingSecondDoses {
    pub gap: u32,
    pub rows: Vec<LedgerRow>,
}

impl PendingSecondDoses {
    pub fn new(gap: u32) -> Self {
        PendingSecondDoses {
            gap,
            rows: Vec::new(),
        }
    }

    /// Second doses owed on `day`.
    pub fn due(&self, day: u32) -> u64 {
        self.rows
            .iter()
            .filter(|r| r.first_dose_day + self.gap == day)
            .map(|r| r.count)
            .sum()
    }
}

/// Unvaccinated people per location and group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemainingMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl RemainingMatrix {
    pub fn from_populations(populations: &[f64], table: &PriorityTable) -> Self {
        RemainingMatrix {
            counts: populations.iter().map(|&n| table.group_sizes(n)).collect(),
        }
    }

    pub fn locations(&self) -> usize {
        self.counts.len()
    }

    pub fn groups(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn group_total(&self, group: usize) -> u64 {
        self.counts.iter().map(|row| row[group]).sum()
    }
}

/// Bookkeeping carried from one day to the next.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    pub pending: PendingSecondDoses,
    pub remaining: RemainingMatrix,
    /// Current priority group, `groups()` once everyone has had a first dose.
    pub group: usize,
}

impl Ledger {
    pub fn new(remaining: RemainingMatrix, gap: u32) -> Self {
        let mut l = Ledger {
            pending: PendingSecondDoses::new(gap),
            remaining,
            group: 0,
        };
        l.advance_group();
        l
    }

    fn advance_group(&mut self) {
        while self.group < self.remaining.groups() && self.remaining.group_total(self.group) == 0 {
            self.group += 1;
        }
    }

    pub fn exhausted(&self) -> bool {
        self.group >= self.remaining.groups()
    }

    /// Moves all second doses due on `day` into `d`, returning the vaccines left.
    fn serve_second_doses(&mut self, day: u32, vaccines: u64, d: &mut DistributionMatrix) -> Result<u64> {
        let gap = self.pending.gap;
        if let Some(r) = self.pending.rows.iter().find(|r| r.first_dose_day + gap < day) {
            return Err(Error::InvalidParameter(format!(
                "second dose for day {} was never served (first dose on day {})",
                r.first_dose_day + gap,
                r.first_dose_day
            )));
        }
        let demand = self.pending.due(day);
        if demand > vaccines {
            return Err(Error::SecondDoseShortfall {
                day,
                demand,
                available: vaccines,
            });
        }
        self.pending.rows.retain(|r| {
            if r.first_dose_day + gap == day {
                d.add(r.location, r.group, 1, r.count);
                false
            } else {
                true
            }
        });
        Ok(vaccines - demand)
    }

    fn give_first_doses(&mut self, day: u32, location: usize, count: u64, d: &mut DistributionMatrix) {
        let g = self.group;
        d.add(location, g, 0, count);
        self.remaining.counts[location][g] -= count;
        self.pending.rows.push(LedgerRow {
            location,
            group: g,
            first_dose_day: day,
            count,
        });
    }
}

/// Doses per location, group and dose index (0 = first, 1 = second) for one day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionMatrix {
    locations: usize,
    groups: usize,
    cells: Vec<[u64; 2]>,
}

impl DistributionMatrix {
    pub fn zeros(locations: usize, groups: usize) -> Self {
        DistributionMatrix {
            locations,
            groups,
            cells: vec![[0; 2]; locations * groups],
        }
    }

    pub fn get(&self, location: usize, group: usize, dose: usize) -> u64 {
        self.cells[location * self.groups + group][dose]
    }

    fn add(&mut self, location: usize, group: usize, dose: usize, count: u64) {
        self.cells[location * self.groups + group][dose] += count;
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().map(|c| c[0] + c[1]).sum()
    }

    /// First and second doses given at `location` across all groups.
    pub fn at_location(&self, location: usize) -> [u64; 2] {
        let row = &self.cells[location * self.groups..(location + 1) * self.groups];
        row.iter().fold([0, 0], |acc, c| [acc[0] + c[0], acc[1] + c[1]])
    }

    /// Nonzero cells as `(location, group, first, second)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, u64, u64)> + '_ {
        self.cells.iter().enumerate().filter_map(move |(k, c)| {
            (c[0] + c[1] > 0).then(|| (k / self.groups, k % self.groups, c[0], c[1]))
        })
    }

    pub fn locations(&self) -> usize {
        self.locations
    }
}

/// A day's distribution plus the vaccines nobody could receive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub doses: DistributionMatrix,
    pub unused: u64,
}

/// Greedy distribution: each batch of first doses goes to the location with the
/// largest gain among those with unvaccinated members of the current group.
///
/// `gain` is called at most once per location. Ties go to the lowest location index.
/// On error the ledger is left untouched.
pub fn optimal_distribution<G>(day: u32, vaccines: u64, ledger: &mut Ledger, mut gain: G) -> Result<Allocation>
where
    G: FnMut(usize) -> Result<f64>,
{
    let mut work = ledger.clone();
    let n_loc = work.remaining.locations();
    let mut d = DistributionMatrix::zeros(n_loc, work.remaining.groups());
    let mut left = work.serve_second_doses(day, vaccines, &mut d)?;
    let mut gains: Vec<Option<f64>> = vec![None; n_loc];
    while left > 0 && !work.exhausted() {
        let g = work.group;
        let mut best: Option<(usize, f64)> = None;
        for l in 0..n_loc {
            if work.remaining.counts[l][g] == 0 {
                continue;
            }
            let v = match gains[l] {
                Some(v) => v,
                None => {
                    let v = gain(l).map_err(|e| Error::Gain {
                        day,
                        location: l,
                        source: Box::new(e),
                    })?;
                    let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
                    gains[l] = Some(v);
                    v
                }
            };
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((l, v));
            }
        }
        let (l, _) = best.expect("current group has unvaccinated members");
        let k = work.remaining.counts[l][g].min(left);
        work.give_first_doses(day, l, k, &mut d);
        work.advance_group();
        left -= k;
    }
    *ledger = work;
    Ok(Allocation {
        doses: d,
        unused: left,
    })
}

/// Same second-dose and group rules, but first doses fall on uniformly random
/// unvaccinated members of the current group regardless of location.
pub fn random_distribution<R: Rng + ?Sized>(
    day: u32,
    vaccines: u64,
    ledger: &mut Ledger,
    rng: &mut R,
) -> Result<Allocation> {
    let mut work = ledger.clone();
    let n_loc = work.remaining.locations();
    let mut d = DistributionMatrix::zeros(n_loc, work.remaining.groups());
    let mut left = work.serve_second_doses(day, vaccines, &mut d)?;
    while left > 0 && !work.exhausted() {
        let pool = work.remaining.group_total(work.group);
        let draw = pool.min(left);
        let shares = hypergeometric_split(&work.remaining, work.group, draw, rng)?;
        for (l, k) in shares.into_iter().enumerate() {
            if k > 0 {
                work.give_first_doses(day, l, k, &mut d);
            }
        }
        work.advance_group();
        left -= draw;
    }
    *ledger = work;
    Ok(Allocation {
        doses: d,
        unused: left,
    })
}

/// Splits `draw` people across locations as a draw without replacement from the
/// group's unvaccinated members.
fn hypergeometric_split<R: Rng + ?Sized>(
    remaining: &RemainingMatrix,
    group: usize,
    mut draw: u64,
    rng: &mut R,
) -> Result<Vec<u64>> {
    let mut pool = remaining.group_total(group);
    let mut out = vec![0; remaining.locations()];
    for (l, row) in remaining.counts.iter().enumerate() {
        if draw == 0 {
            break;
        }
        let here = row[group];
        let k = if here == pool {
            draw
        } else if here == 0 {
            0
        } else {
            Hypergeometric::new(pool, here, draw)
                .map_err(|e| Error::InvalidParameter(format!("hypergeometric draw: {e}")))?
                .sample(rng)
        };
        out[l] = k;
        draw -= k;
        pool -= here;
    }
    Ok(out)
}

/// `100 · ΣV / ΣN` over locations.
pub fn immunized_fraction(states: &[Compartments]) -> f64 {
    let total: f64 = states.iter().map(Compartments::total).sum();
    if total <= 0.0 {
        return 0.0;
    }
    100.0 * states.iter().map(|s| s.v).sum::<f64>() / total
}

/// Spreads `total` doses over `days` days as evenly as integers allow, putting the
/// extra units on the last days so the daily budget never decreases.
pub fn spread_budget(total: u64, days: u32) -> Vec<u64> {
    if days == 0 {
        return Vec::new();
    }
    let base = total / days as u64;
    let extra = total % days as u64;
    (0..days as u64)
        .map(|k| base + u64::from(k >= days as u64 - extra))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ledger(counts: Vec<Vec<u64>>) -> Ledger {
        Ledger::new(RemainingMatrix { counts }, DEFAULT_GAP)
    }

    #[test]
    fn valencia_table_is_valid() {
        let t = PriorityTable::valencia();
        t.validate().unwrap();
        assert_eq!(t.len(), 10);
        let sum: f64 = t.groups.iter().map(|g| g.proportion).sum();
        assert!((sum - 0.9075).abs() < 1e-12);
        assert_eq!(t.group_sizes(1000.0)[0], 20);
    }

    #[test]
    fn rejects_oversized_table() {
        let g = |p| PriorityGroup {
            label: "g".into(),
            proportion: p,
        };
        assert!(PriorityTable::new(vec![g(0.6), g(0.5)]).is_err());
        assert!(PriorityTable::new(vec![g(-0.1)]).is_err());
        assert!(PriorityTable::new(vec![]).is_err());
    }

    #[test]
    fn no_vaccines_no_change() {
        let mut l = ledger(vec![vec![10, 10], vec![5, 5]]);
        let before = l.clone();
        let a = optimal_distribution(3, 0, &mut l, |_| Ok(1.0)).unwrap();
        assert_eq!(a.doses.total(), 0);
        assert_eq!(l, before);
        let a = random_distribution(3, 0, &mut l, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.doses.total(), 0);
        assert_eq!(l, before);
    }

    #[test]
    fn due_second_doses_come_first() {
        // locations 0..=3, the row sits at location 3, group 0
        let mut l = ledger(vec![vec![500, 500]; 4]);
        let t = 30;
        l.pending.rows.push(LedgerRow {
            location: 3,
            group: 0,
            first_dose_day: t - DEFAULT_GAP,
            count: 40,
        });
        let gains = [0.1, 0.7, 0.3, 0.2];
        let a = optimal_distribution(t, 100, &mut l, |loc| Ok(gains[loc])).unwrap();
        assert_eq!(a.doses.get(3, 0, 1), 40);
        assert_eq!(a.doses.get(1, 0, 0), 60);
        assert_eq!(a.doses.total(), 100);
        assert_eq!(l.pending.rows.len(), 1);
        assert_eq!(l.pending.rows[0].location, 1);
        assert_eq!(l.pending.rows[0].count, 60);
    }

    #[test]
    fn exhausted_group_rolls_over() {
        let mut l = ledger(vec![vec![30, 200]]);
        let a = optimal_distribution(0, 100, &mut l, |_| Ok(1.0)).unwrap();
        assert_eq!(a.doses.get(0, 0, 0), 30);
        assert_eq!(a.doses.get(0, 1, 0), 70);
        assert_eq!(l.group, 1);
        assert_eq!(l.remaining.counts[0], vec![0, 130]);
    }

    #[test]
    fn leftover_when_everyone_is_covered() {
        let mut l = ledger(vec![vec![3, 4]]);
        let a = optimal_distribution(0, 10, &mut l, |_| Ok(1.0)).unwrap();
        assert_eq!(a.unused, 3);
        assert!(l.exhausted());
    }

    #[test]
    fn ties_go_to_lowest_location() {
        let mut l = ledger(vec![vec![50], vec![50], vec![50]]);
        let a = optimal_distribution(0, 60, &mut l, |_| Ok(2.0)).unwrap();
        assert_eq!(a.doses.get(0, 0, 0), 50);
        assert_eq!(a.doses.get(1, 0, 0), 10);
    }

    #[test]
    fn gain_is_called_once_per_location() {
        let mut l = ledger(vec![vec![5, 5], vec![5, 5]]);
        let mut calls = 0;
        optimal_distribution(0, 20, &mut l, |_| {
            calls += 1;
            Ok(1.0)
        })
        .unwrap();
        assert_eq!(calls, 2);
    }

    #[test]
    fn shortfall_leaves_ledger_untouched() {
        let mut l = ledger(vec![vec![500]]);
        l.pending.rows.push(LedgerRow {
            location: 0,
            group: 0,
            first_dose_day: 0,
            count: 80,
        });
        let before = l.clone();
        let err = optimal_distribution(DEFAULT_GAP, 50, &mut l, |_| Ok(1.0)).unwrap_err();
        assert!(err.to_string().contains("short by 30"), "{err}");
        assert!(matches!(
            err,
            Error::SecondDoseShortfall {
                demand: 80,
                available: 50,
                ..
            }
        ));
        assert_eq!(l, before);
    }

    #[test]
    fn gain_errors_carry_context() {
        let mut l = ledger(vec![vec![5], vec![5]]);
        let err = optimal_distribution(9, 3, &mut l, |loc| {
            if loc == 1 {
                Err(Error::EstimationFailed("x".into()))
            } else {
                Ok(0.0)
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::Gain { day: 9, location: 1, .. }));
    }

    #[test]
    fn random_single_location_matches_greedy() {
        let mut a = ledger(vec![vec![30, 200]]);
        let mut b = a.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = optimal_distribution(0, 100, &mut a, |_| Ok(1.0)).unwrap();
        let y = random_distribution(0, 100, &mut b, &mut rng).unwrap();
        assert_eq!(x, y);
        assert_eq!(a, b);
    }

    #[test]
    fn random_is_seeded() {
        let base = ledger(vec![vec![300, 300], vec![100, 500], vec![600, 50]]);
        let run = |seed| {
            let mut l = base.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (random_distribution(0, 700, &mut l, &mut rng).unwrap(), l)
        };
        assert_eq!(run(3), run(3));
        let (a, l) = run(3);
        assert_eq!(a.doses.total(), 700);
        // group 0 (1000 people) is not exhausted, so nobody in group 1 is served
        assert!((0..3).all(|loc| a.doses.get(loc, 1, 0) == 0));
        assert_eq!(l.remaining.group_total(0), 300);
    }

    #[test]
    fn immunized_percentages() {
        let none = Compartments {
            s: 100.0,
            ..Default::default()
        };
        assert_eq!(immunized_fraction(&[none, none]), 0.0);
        let all = Compartments {
            v: 50.0,
            ..Default::default()
        };
        assert_eq!(immunized_fraction(&[all]), 100.0);
        let some = Compartments {
            s: 100.0 - 9.1243,
            v: 9.1243,
            ..Default::default()
        };
        assert!((immunized_fraction(&[some]) - 9.1243).abs() < 1e-12);
    }

    #[test]
    fn budget_spreading() {
        assert_eq!(spread_budget(10, 4), vec![2, 2, 3, 3]);
        assert_eq!(spread_budget(8, 4), vec![2; 4]);
        assert_eq!(spread_budget(3, 5), vec![0, 0, 1, 1, 1]);
        assert!(spread_budget(5, 0).is_empty());
    }
}
