//! Piecewise time-varying transmission and removal rates.
//!
//! Inside each segment every rate follows `base - drop * (1 - exp(-rate * (t - start)))`,
//! which starts at `base` and relaxes towards `base - drop`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One exponentially relaxing coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Decay {
    pub base: f64,
    #[serde(default)]
    pub drop: f64,
    #[serde(default)]
    pub rate: f64,
}

impl Decay {
    pub const fn constant(value: f64) -> Self {
        Decay {
            base: value,
            drop: 0.0,
            rate: 0.0,
        }
    }

    pub const fn new(base: f64, drop: f64, rate: f64) -> Self {
        Decay { base, drop, rate }
    }

    /// Value `elapsed` days after the segment start.
    #[inline]
    pub fn value(&self, elapsed: f64) -> f64 {
        if self.drop == 0.0 {
            return self.base;
        }
        self.base - self.drop * (1.0 - (-self.rate * elapsed).exp())
    }

    /// Smallest value over `[0, length]`. The function is monotone so only the ends matter.
    pub fn min_over(&self, length: f64) -> f64 {
        self.value(0.0).min(self.value(length))
    }
}

/// Instantaneous rates at some time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Removal rate among undetected infected; `None` means `gamma1 + gamma2`.
    pub gamma_undetected: Option<f64>,
}

impl Rates {
    pub fn gamma(&self) -> f64 {
        self.gamma1 + self.gamma2
    }

    pub fn gamma_bar(&self) -> f64 {
        self.gamma_undetected.unwrap_or(self.gamma1 + self.gamma2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSegment {
    pub start: f64,
    pub end: f64,
    pub beta: Decay,
    pub gamma1: Decay,
    pub gamma2: Decay,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_undetected: Option<Decay>,
}

impl CoefficientSegment {
    /// Segment with time-independent rates.
    pub fn constant(start: f64, end: f64, beta: f64, gamma1: f64, gamma2: f64) -> Self {
        CoefficientSegment {
            start,
            end,
            beta: Decay::constant(beta),
            gamma1: Decay::constant(gamma1),
            gamma2: Decay::constant(gamma2),
            gamma_undetected: None,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Rates from this segment's formulas, without checking membership.
    #[inline]
    pub fn rates(&self, t: f64) -> Rates {
        let dt = t - self.start;
        Rates {
            beta: self.beta.value(dt),
            gamma1: self.gamma1.value(dt),
            gamma2: self.gamma2.value(dt),
            gamma_undetected: self.gamma_undetected.map(|g| g.value(dt)),
        }
    }

    /// Every rate stays nonnegative over the whole segment.
    pub fn is_nonnegative(&self) -> bool {
        let len = self.duration();
        let mut ok = self.beta.min_over(len) >= 0.0
            && self.gamma1.min_over(len) >= 0.0
            && self.gamma2.min_over(len) >= 0.0;
        if let Some(g) = &self.gamma_undetected {
            ok &= g.min_over(len) >= 0.0;
        }
        ok
    }
}

/// Ordered, non-overlapping segments. Membership is `[start, end)` except for the
/// last segment, which also contains its `end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    segments: Vec<CoefficientSegment>,
}

impl CoefficientSet {
    pub fn new(segments: Vec<CoefficientSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidParameter("no coefficient segments".into()));
        }
        for (k, seg) in segments.iter().enumerate() {
            if !(seg.end > seg.start) {
                return Err(Error::InvalidParameter(format!(
                    "segment {k} has empty span [{}, {}]",
                    seg.start, seg.end
                )));
            }
            if !seg.is_nonnegative() {
                return Err(Error::InvalidParameter(format!(
                    "segment {k} has a coefficient that turns negative"
                )));
            }
        }
        for w in segments.windows(2) {
            if w[1].start < w[0].end {
                return Err(Error::InvalidParameter(format!(
                    "segments overlap at t={}",
                    w[1].start
                )));
            }
        }
        Ok(CoefficientSet { segments })
    }

    /// Single constant segment over `[start, end]`.
    pub fn constant(start: f64, end: f64, beta: f64, gamma1: f64, gamma2: f64) -> Result<Self> {
        Self::new(vec![CoefficientSegment::constant(start, end, beta, gamma1, gamma2)])
    }

    pub fn segments(&self) -> &[CoefficientSegment] {
        &self.segments
    }

    pub fn start(&self) -> f64 {
        self.segments[0].start
    }

    pub fn end(&self) -> f64 {
        self.segments[self.segments.len() - 1].end
    }

    pub fn segment_index(&self, t: f64) -> Result<usize> {
        let last = self.segments.len() - 1;
        for (k, seg) in self.segments.iter().enumerate() {
            if t >= seg.start && (t < seg.end || (k == last && t <= seg.end)) {
                return Ok(k);
            }
        }
        Err(Error::OutOfRange { t })
    }

    /// Rates of segment `k` evaluated at `t`, even when `t` sits just past the
    /// segment end (the integrator's last stage of a step).
    #[inline]
    pub fn rates_in(&self, k: usize, t: f64) -> Rates {
        self.segments[k].rates(t)
    }

    pub fn eval(&self, t: f64) -> Result<Rates> {
        let k = self.segment_index(t)?;
        Ok(self.segments[k].rates(t))
    }

    /// Rewrites the span so the set covers `[start, end]` by stretching the first and last
    /// segments. Used for forecasts beyond the fitted range.
    pub fn extended(&self, start: f64, end: f64) -> Self {
        let mut segments = self.segments.clone();
        if start < segments[0].start {
            segments[0].start = start;
        }
        let last = segments.len() - 1;
        if end > segments[last].end {
            segments[last].end = end;
        }
        CoefficientSet { segments }
    }
}

/// Looks up the segment containing `t` and evaluates its rates.
pub fn eval_coefficients(segments: &CoefficientSet, t: f64) -> Result<Rates> {
    segments.eval(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spain_first_two() -> CoefficientSet {
        CoefficientSet::new(vec![
            CoefficientSegment::constant(0.0, 21.0, 1.03758, 0.0066337, 0.014411),
            CoefficientSegment {
                start: 21.0,
                end: 41.0,
                beta: Decay::new(0.56457, 0.56451, 0.084346),
                gamma1: Decay::new(0.010016, -0.0019473, 0.11145),
                gamma2: Decay::new(0.0034428, -0.082453, 0.026258),
                gamma_undetected: None,
            },
        ])
        .unwrap()
    }

    #[test]
    fn first_segment_is_constant() {
        let set = spain_first_two();
        for t in [0.0, 3.5, 20.999] {
            let r = eval_coefficients(&set, t).unwrap();
            assert_eq!(r.beta, 1.03758);
            assert_eq!(r.gamma1, 0.0066337);
            assert_eq!(r.gamma2, 0.014411);
        }
    }

    #[test]
    fn segment_start_returns_base() {
        let r = spain_first_two().eval(21.0).unwrap();
        assert_eq!(r.beta, 0.56457);
        assert_eq!(r.gamma1, 0.010016);
    }

    #[test]
    fn zero_drop_is_flat() {
        let d = Decay::new(0.7, 0.0, 3.0);
        assert_eq!(d.value(0.0), 0.7);
        assert_eq!(d.value(100.0), 0.7);
    }

    #[test]
    fn hand_evaluated_interior_point() {
        let r = spain_first_two().eval(31.0).unwrap();
        let expected = 0.56457 - 0.56451 * (1.0 - (-0.084346f64 * 10.0).exp());
        assert!((r.beta - expected).abs() < 1e-15);
    }

    #[test]
    fn membership_is_left_closed() {
        let set = spain_first_two();
        assert_eq!(set.segment_index(20.9999).unwrap(), 0);
        assert_eq!(set.segment_index(21.0).unwrap(), 1);
        // last segment is closed on the right
        assert_eq!(set.segment_index(41.0).unwrap(), 1);
    }

    #[test]
    fn outside_is_an_error() {
        let set = spain_first_two();
        assert!(matches!(set.eval(-0.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(set.eval(41.5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn rejects_negative_coefficients() {
        let bad = CoefficientSegment {
            start: 0.0,
            end: 10.0,
            beta: Decay::new(0.1, 0.5, 1.0),
            gamma1: Decay::constant(0.01),
            gamma2: Decay::constant(0.01),
            gamma_undetected: None,
        };
        assert!(!bad.is_nonnegative());
        assert!(CoefficientSet::new(vec![bad]).is_err());
    }

    #[test]
    fn rejects_overlap() {
        let a = CoefficientSegment::constant(0.0, 10.0, 0.5, 0.1, 0.1);
        let b = CoefficientSegment::constant(5.0, 12.0, 0.5, 0.1, 0.1);
        assert!(CoefficientSet::new(vec![a, b]).is_err());
    }
}
