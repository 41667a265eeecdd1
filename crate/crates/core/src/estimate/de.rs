//! Differential Evolution over box-bounded real vectors.
//!
//! Every random draw for chromosome `i` in generation `G` comes from its own
//! stream keyed by `(seed, G, i)`, so a generation's outcome does not depend on
//! the order in which fitness values are computed.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fewest members for which `i, r1, r2, r3` can all differ.
pub const MIN_POPULATION: usize = 4;

/// Inclusive per-gene box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "bounds need equal nonzero lengths, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(k) = (0..lower.len()).find(|&k| !(lower[k] <= upper[k])) {
            return Err(Error::InvalidParameter(format!(
                "gene {k}: lower bound {} exceeds upper bound {}",
                lower[k], upper[k]
            )));
        }
        Ok(Bounds { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clip(&self, genes: &mut [f64]) {
        for (k, g) in genes.iter_mut().enumerate() {
            *g = g.clamp(self.lower[k], self.upper[k]);
        }
    }

    pub fn contains(&self, genes: &[f64]) -> bool {
        genes.len() == self.dim()
            && genes
                .iter()
                .enumerate()
                .all(|(k, g)| *g >= self.lower[k] && *g <= self.upper[k])
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeConfig {
    pub pop_size: usize,
    pub max_iters: usize,
    /// Stop after this many consecutive generations without a replacement.
    pub stall_generations: usize,
}

impl DeConfig {
    pub const fn first_segment() -> Self {
        DeConfig {
            pop_size: 100,
            max_iters: 1000,
            stall_generations: 200,
        }
    }

    pub const fn later_segment() -> Self {
        DeConfig {
            pop_size: 200,
            max_iters: 1000,
            stall_generations: 200,
        }
    }

    /// Settings used for the campaign experiments.
    pub const fn campaign() -> Self {
        DeConfig {
            pop_size: 100,
            max_iters: 10_000,
            stall_generations: 200,
        }
    }
}

impl Default for DeConfig {
    fn default() -> Self {
        Self::first_segment()
    }
}

/// How the scale factors `K` and `F` of a trial vector are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MutationFactors {
    /// Drawn uniformly from `(0, 1]` for every chromosome and generation.
    #[default]
    Random,
    Fixed { k: f64, f: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub members: Vec<Vec<f64>>,
    pub fitness: Vec<f64>,
}

impl Population {
    /// Uniform draw within the bounds.
    pub fn random<F>(size: usize, bounds: &Bounds, seed: u64, fitness: &F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        if size < MIN_POPULATION {
            return Err(Error::PopulationTooSmall { size });
        }
        let members: Vec<Vec<f64>> = (0..size)
            .map(|i| bounds.sample(&mut substream(seed, u64::MAX, i as u64)))
            .collect();
        let fitness = par_map(members.len(), |i| sanitize(fitness(&members[i])));
        Ok(Population { members, fitness })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Index and fitness of the best member; ties go to the lowest index.
    pub fn best(&self) -> (usize, f64) {
        self.fitness
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, &f)| {
                if f < best.1 {
                    (i, f)
                } else {
                    best
                }
            })
    }
}

fn sanitize(f: f64) -> f64 {
    if f.is_nan() {
        f64::INFINITY
    } else {
        f
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn substream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let key = splitmix(splitmix(seed ^ splitmix(a)) ^ b);
    ChaCha8Rng::seed_from_u64(key)
}

#[cfg(feature = "parallel")]
fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// One generation: `u = x_i + K(x_r3 − x_i) + F(x_r1 − x_r2)`, clipped to the bounds,
/// replaces `x_i` only when strictly better.
///
/// Returns the next population and the number of replacements.
pub fn new_population<F>(
    pop: &Population,
    fitness: &F,
    bounds: &Bounds,
    seed: u64,
    generation: u64,
    factors: MutationFactors,
) -> Result<(Population, usize)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = pop.len();
    if n < MIN_POPULATION {
        return Err(Error::PopulationTooSmall { size: n });
    }
    let trials = par_map(n, |i| {
        let mut rng = substream(seed, generation, i as u64);
        let picks = index::sample(&mut rng, n - 1, 3);
        let pick = |j: usize| if j >= i { j + 1 } else { j };
        let (r1, r2, r3) = (pick(picks.index(0)), pick(picks.index(1)), pick(picks.index(2)));
        let (k, f) = match factors {
            MutationFactors::Random => (1.0 - rng.random::<f64>(), 1.0 - rng.random::<f64>()),
            MutationFactors::Fixed { k, f } => (k, f),
        };
        let x = &pop.members[i];
        let (a, b, c) = (&pop.members[r1], &pop.members[r2], &pop.members[r3]);
        let mut u: Vec<f64> = (0..x.len())
            .map(|g| x[g] + k * (c[g] - x[g]) + f * (a[g] - b[g]))
            .collect();
        bounds.clip(&mut u);
        if u == *x {
            return None;
        }
        let fu = sanitize(fitness(&u));
        (fu < pop.fitness[i]).then_some((u, fu))
    });

    let mut next = pop.clone();
    let mut replaced = 0;
    for (i, trial) in trials.into_iter().enumerate() {
        if let Some((u, fu)) = trial {
            next.members[i] = u;
            next.fitness[i] = fu;
            replaced += 1;
        }
    }
    Ok((next, replaced))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeOutcome {
    pub best: Vec<f64>,
    pub fitness: f64,
    pub generations: usize,
    /// Best fitness after each generation, starting with the initial population.
    pub history: Vec<f64>,
}

/// Runs generations until `max_iters` or `stall_generations` in a row without replacement.
pub fn optimize<F>(
    fitness: &F,
    bounds: &Bounds,
    config: &DeConfig,
    seed: u64,
    factors: MutationFactors,
) -> Result<DeOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut pop = Population::random(config.pop_size, bounds, seed, fitness)?;
    let mut history = vec![pop.best().1];
    let mut stall = 0;
    let mut generations = 0;
    while generations < config.max_iters && stall < config.stall_generations.max(1) {
        let (next, replaced) =
            new_population(&pop, fitness, bounds, seed, generations as u64, factors)?;
        pop = next;
        generations += 1;
        history.push(pop.best().1);
        stall = if replaced == 0 { stall + 1 } else { 0 };
    }
    let (i, f) = pop.best();
    Ok(DeOutcome {
        best: pop.members[i].clone(),
        fitness: f,
        generations,
        history,
    })
}
