use std::io::Write;

use super::{detected, Compartments, Model, NAMES};
use crate::error::{Error, Result};

pub const DEFAULT_SUBSTEPS: u32 = 24;

/// Negative values above `-NEGATIVE_SLACK * N` are rounding noise and get clamped.
const NEGATIVE_SLACK: f64 = 1e-9;

/// Daily states, `states[k]` being the state at the start of day `start_day + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start_day: u32,
    pub states: Vec<Compartments>,
}

impl Trajectory {
    pub fn end_day(&self) -> u32 {
        self.start_day + self.states.len() as u32 - 1
    }

    pub fn at(&self, day: u32) -> Option<&Compartments> {
        day.checked_sub(self.start_day)
            .and_then(|k| self.states.get(k as usize))
    }

    pub fn last(&self) -> &Compartments {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    pub fn days(&self) -> impl Iterator<Item = (u32, &Compartments)> {
        self.states
            .iter()
            .enumerate()
            .map(move |(k, s)| (self.start_day + k as u32, s))
    }

    /// Day and value of the largest `ρ(t)I(t)`.
    pub fn peak_detected(&self, params: &super::EpiParams) -> (u32, f64) {
        self.days()
            .map(|(d, s)| (d, detected(params, s, d as f64)))
            .fold((self.start_day, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            })
    }

    /// Writes `day,S,E,I,D,F1,R1,L,V` rows, or `day,S,E,I,D,R,V` for merged-removal variants.
    pub fn write_csv<W: Write>(&self, params: &super::EpiParams, merged: bool, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if merged {
            w.write_record(["day", "S", "E", "I", "D", "R", "V"])?;
        } else {
            w.write_record(["day", "S", "E", "I", "D", "F1", "R1", "L", "V"])?;
        }
        for (day, s) in self.days() {
            let d = detected(params, s, day as f64);
            let mut row = vec![day.to_string(), fmt(s.s), fmt(s.e), fmt(s.i), fmt(d)];
            if merged {
                row.extend([fmt(s.r), fmt(s.v)]);
            } else {
                row.extend([fmt(s.f1), fmt(s.r1), fmt(s.l), fmt(s.v)]);
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

#[inline]
fn guard(y: &mut [f64; 8], slack: f64, t: f64) -> Result<()> {
    for (k, v) in y.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v > -slack {
                *v = 0.0;
            } else {
                return Err(Error::NegativeState {
                    component: NAMES[k],
                    value: *v,
                    t,
                });
            }
        }
    }
    Ok(())
}

#[inline]
fn axpy(y: &[f64; 8], h: f64, k: &[f64; 8]) -> [f64; 8] {
    let mut out = *y;
    for i in 0..8 {
        out[i] += h * k[i];
    }
    out
}

/// Classical fixed-step RK4 with `substeps` steps per day, from day `t0` to day `t1`.
///
/// Doses are a constant rate within each day. Every step evaluates the coefficients of
/// the segment containing the step's start, so discontinuities on day boundaries are
/// never straddled by a stage.
pub fn integrate(
    model: &Model<'_>,
    state0: &Compartments,
    t0: u32,
    t1: u32,
    substeps: u32,
) -> Result<Trajectory> {
    if substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be positive".into()));
    }
    if t1 < t0 {
        return Err(Error::InvalidParameter(format!("t1={t1} precedes t0={t0}")));
    }
    let slack = NEGATIVE_SLACK * model.params.population;
    let mut y = state0.to_array();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegrationBlowup { day: t0 });
    }
    guard(&mut y, slack, t0 as f64)?;

    let h = 1.0 / substeps as f64;
    let coeffs = model.coefficients;
    let mut states = Vec::with_capacity((t1 - t0) as usize + 1);
    states.push(Compartments::from_array(y));

    for day in t0..t1 {
        let vax = model.immunizing_rate_on(day);
        for k in 0..substeps {
            let t = day as f64 + k as f64 * h;
            let seg = coeffs.segment_index(t)?;
            let mid = coeffs.rates_in(seg, t + 0.5 * h);
            let k1 = model.derivative(&y, t, &coeffs.rates_in(seg, t), vax);
            let mut y2 = axpy(&y, 0.5 * h, &k1);
            guard(&mut y2, slack, t)?;
            let k2 = model.derivative(&y2, t + 0.5 * h, &mid, vax);
            let mut y3 = axpy(&y, 0.5 * h, &k2);
            guard(&mut y3, slack, t)?;
            let k3 = model.derivative(&y3, t + 0.5 * h, &mid, vax);
            let mut y4 = axpy(&y, h, &k3);
            guard(&mut y4, slack, t)?;
            let k4 = model.derivative(&y4, t + h, &coeffs.rates_in(seg, t + h), vax);
            for i in 0..8 {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationBlowup { day });
            }
            guard(&mut y, slack, t + h)?;
        }
        states.push(Compartments::from_array(y));
    }
    Ok(Trajectory {
        start_day: t0,
        states,
    })
}
