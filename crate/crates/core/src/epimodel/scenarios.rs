//! Fitted first-wave configurations for Spain and the Valencian Community (2020).
//!
//! Day 0 is the first observation day. Second doses start with the second segment.

use super::{
    CoefficientSegment, CoefficientSet, Compartments, Decay, DoseSchedule, EpiParams,
};

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub params: EpiParams,
    pub coefficients: CoefficientSet,
    pub initial: Compartments,
    /// Last day of the fitted period.
    pub horizon: u32,
    /// First day on which second doses are given in the replay protocol.
    pub second_dose_from: u32,
    /// Calendar date of day 0.
    pub first_date: &'static str,
}

impl Scenario {
    /// `Δ` first doses daily throughout and `Δ` second doses from `second_dose_from`.
    pub fn replay_schedule(&self, delta: f64) -> DoseSchedule {
        if delta == 0.0 {
            return DoseSchedule::None;
        }
        DoseSchedule::two_dose_constant(self.horizon, delta, self.second_dose_from)
    }
}

fn seg(start: f64, end: f64, beta: Decay, gamma1: Decay, gamma2: Decay) -> CoefficientSegment {
    CoefficientSegment {
        start,
        end,
        beta,
        gamma1,
        gamma2,
        gamma_undetected: None,
    }
}

fn initial(population: f64, e0: f64, i0: f64) -> Compartments {
    Compartments {
        s: population - e0 - i0,
        e: e0,
        i: i0,
        ..Default::default()
    }
}

/// 20 Feb – 17 May 2020, four segments.
pub fn spain() -> Scenario {
    let n = 4.7e7;
    let d = Decay::new;
    let coefficients = CoefficientSet::new(vec![
        seg(
            0.0,
            21.0,
            Decay::constant(1.03758),
            Decay::constant(0.0066337),
            Decay::constant(0.014411),
        ),
        seg(
            21.0,
            41.0,
            d(0.56457, 0.56451, 0.084346),
            d(0.010016, -0.0019473, 0.11145),
            d(0.0034428, -0.082453, 0.026258),
        ),
        seg(
            41.0,
            61.0,
            d(1.29274e-16, -0.035546, 0.84439),
            d(0.0091134, 0.0038616, 0.16832),
            d(0.05408, 0.022434, 0.74667),
        ),
        seg(
            61.0,
            87.0,
            d(6.33755e-6, -0.031897, 0.045468),
            d(0.0040438, 0.0024332, 0.047868),
            d(0.034796, -0.0040778, 0.032499),
        ),
    ])
    .expect("published coefficients are valid");
    Scenario {
        name: "spain",
        params: EpiParams::new(n, 0.2, 0.1, vec![0.6, 0.9]),
        coefficients,
        initial: initial(n, 162.36331, 30.0),
        horizon: 87,
        second_dose_from: 21,
        first_date: "2020-02-20",
    }
}

/// 25 Feb – 12 May 2020, five segments.
pub fn valencia() -> Scenario {
    let n = 5.0e6;
    let d = Decay::new;
    let coefficients = CoefficientSet::new(vec![
        seg(
            0.0,
            17.0,
            Decay::constant(0.45327),
            Decay::constant(0.0047971),
            Decay::constant(0.0035465),
        ),
        seg(
            17.0,
            35.0,
            d(2.42072, 2.29381, 0.29565),
            d(0.016886, 0.015126, 0.048468),
            d(0.0014814, -0.028856, 0.014266),
        ),
        seg(
            35.0,
            43.0,
            d(7.20401e-7, 6.86704e-7, 29439.63489),
            d(0.017352, 0.010442, 0.78599),
            d(0.29292, 0.26096, 8.41998),
        ),
        seg(
            43.0,
            70.0,
            d(0.39963, 0.38539, 2.72216),
            d(0.0023469, -0.003184, 1.3958),
            d(0.033247, -0.045749, 0.11634),
        ),
        seg(
            70.0,
            77.0,
            d(1.834401, 1.834398, 30.03165),
            d(0.0014464, -0.02423, 0.14298),
            d(1.92157e-5, -0.34632, 1.18519),
        ),
    ])
    .expect("published coefficients are valid");
    Scenario {
        name: "valencia",
        params: EpiParams::new(n, 0.2, 0.08, vec![0.6, 0.9]),
        coefficients,
        initial: initial(n, 122.25849, 13.0),
        horizon: 77,
        second_dose_from: 17,
        first_date: "2020-02-25",
    }
}

pub fn by_name(name: &str) -> Option<Scenario> {
    match name.to_ascii_lowercase().as_str() {
        "spain" => Some(spain()),
        "valencia" => Some(valencia()),
        _ => None,
    }
}
