//! Fixed points and their stability for the model with vital dynamics (SEIR6),
//! plus numerical checks of the long-run behaviour of the constant-coefficient
//! model with vaccination (SEIR5).

use num_complex::Complex64;
use serde::Serialize;

use crate::epimodel::{
    integrate, rhs, CoefficientSet, Compartments, DoseSchedule, EpiParams, Model, ModelVariant,
    DEFAULT_SUBSTEPS,
};
use crate::error::{Error, Result};

/// Real parts within this band of zero are reported as marginal.
pub const MARGINAL_BAND: f64 = 1e-12;
/// A point counts as a fixed point when its right-hand side is below this times N.
pub const FIXED_POINT_TOL: f64 = 1e-10;

/// Constant-coefficient configuration of the model with births and deaths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VitalConfig {
    pub params: EpiParams,
    pub beta: f64,
    /// Total removal rate `γ1 + γ2`.
    pub gamma: f64,
    /// Constant daily doses `Δ1, Δ2`.
    pub doses: [f64; 2],
}

impl VitalConfig {
    fn rho(&self) -> f64 {
        self.params.rho(0.0)
    }

    /// `β(1−ρ)`, the transmission rate of undetected infected.
    fn effective_beta(&self) -> f64 {
        self.beta * (1.0 - self.rho())
    }

    /// `p = Δ1π1 + Δ2(π2−π1)`.
    pub fn immunizing_rate(&self) -> f64 {
        self.params.immunizing_rate(&self.doses)
    }

    fn check(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.params.mu > 0.0) {
            return Err(Error::InvalidParameter(
                "the reproductive number needs mu > 0".into(),
            ));
        }
        if !(self.beta >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::InvalidParameter("beta and gamma must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn coefficients(&self) -> CoefficientSet {
        CoefficientSet::constant(0.0, f64::MAX / 4.0, self.beta, self.gamma, 0.0)
            .expect("constant nonnegative rates")
    }

    pub fn schedule(&self) -> DoseSchedule {
        DoseSchedule::Constant(self.doses.to_vec())
    }
}

pub fn reproductive_number(cfg: &VitalConfig) -> Result<f64> {
    cfg.check()?;
    let p = &cfg.params;
    let (n, mu, sigma) = (p.population, p.mu, p.sigma);
    let num = mu * n * sigma * cfg.effective_beta();
    let den = (sigma + mu) * (cfg.gamma + mu) * (cfg.immunizing_rate() + mu * n);
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
            Stability::Marginal => "marginal",
        })
    }
}

/// Coefficients of `λ³ + a2λ² + a1λ + a0` and the Routh–Hurwitz verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RouthHurwitz {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub eigenvalues: Vec<Complex64>,
    pub stability: Stability,
    pub routh_hurwitz: RouthHurwitz,
}

impl StabilityReport {
    pub fn spectral_abscissa(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Routh–Hurwitz and the eigenvalues give the same answer.
    pub fn criteria_agree(&self) -> bool {
        self.routh_hurwitz.stable == (self.stability == Stability::Stable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPoint {
    pub state: Compartments,
    pub residual: f64,
    pub report: StabilityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub r0: f64,
    pub disease_free: FixedPoint,
    pub endemic: Option<FixedPoint>,
}

/// Disease-free point `P*`.
pub fn disease_free_point(cfg: &VitalConfig) -> Compartments {
    let n = cfg.params.population;
    let mu = cfg.params.mu;
    let p = cfg.immunizing_rate();
    Compartments::seirv(mu * n * n / (p + mu * n), 0.0, 0.0, 0.0, p * n / (p + mu * n))
}

/// Endemic point `P^e`, present only when `R0 > 1`.
pub fn endemic_point(cfg: &VitalConfig) -> Result<Option<Compartments>> {
    if reproductive_number(cfg)? <= 1.0 {
        return Ok(None);
    }
    let pr = &cfg.params;
    let (n, mu, sigma, gamma) = (pr.population, pr.mu, pr.sigma, cfg.gamma);
    let b = cfg.effective_beta();
    let p = cfg.immunizing_rate();
    let s = (sigma + mu) * (gamma + mu) * n / (sigma * b);
    let i = (mu * n * sigma * b - (sigma + mu) * (gamma + mu) * (p + mu * n))
        / ((sigma + mu) * (gamma + mu) * b);
    let e = (gamma + mu) * i / sigma;
    let r = gamma * i / mu;
    let v = p * s / (mu * n);
    Ok(Some(Compartments::seirv(s, e, i, r, v)))
}

fn residual_norm(cfg: &VitalConfig, state: &Compartments) -> Result<f64> {
    let coeffs = cfg.coefficients();
    let sched = cfg.schedule();
    let model = Model::new(ModelVariant::Seir6, &cfg.params, &coeffs, &sched)?;
    let d = rhs(&model, state, 0.0)?;
    Ok(d.max_abs_diff(&Compartments::default()))
}

/// Jacobian of the `(S, E, I, V)` subsystem.
pub fn jacobian(cfg: &VitalConfig, state: &Compartments) -> [[f64; 4]; 4] {
    let pr = &cfg.params;
    let (n, mu, sigma, gamma) = (pr.population, pr.mu, pr.sigma, cfg.gamma);
    let b = cfg.effective_beta() / n;
    let p = cfg.immunizing_rate() / n;
    [
        [-b * state.i - p - mu, 0.0, -b * state.s, 0.0],
        [b * state.i, -mu - sigma, b * state.s, 0.0],
        [0.0, sigma, -gamma - mu, 0.0],
        [p, 0.0, 0.0, -mu],
    ]
}

/// Eigenvalues and stability class of a fixed point.
///
/// The `V` column of the Jacobian holds only `−μ` on its diagonal, so `−μ` is an
/// eigenvalue and the rest come from the characteristic cubic of the `(S, E, I)` block.
pub fn classify_stability(cfg: &VitalConfig, equilibrium: &Compartments) -> Result<StabilityReport> {
    cfg.check()?;
    let residual = residual_norm(cfg, equilibrium)?;
    if residual >= FIXED_POINT_TOL * cfg.params.population {
        return Err(Error::NotFixedPoint { residual });
    }
    let j = jacobian(cfg, equilibrium);
    let a2 = -(j[0][0] + j[1][1] + j[2][2]);
    let a1 = j[0][0] * j[1][1] - j[0][1] * j[1][0] + j[0][0] * j[2][2] - j[0][2] * j[2][0]
        + j[1][1] * j[2][2]
        - j[1][2] * j[2][1];
    let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
        - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
        + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
    let a0 = -det;

    let mut eigenvalues = vec![Complex64::new(j[3][3], 0.0)];
    eigenvalues.extend(cubic_roots(a2, a1, a0));
    let max_re = eigenvalues
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let stability = if max_re < -MARGINAL_BAND {
        Stability::Stable
    } else if max_re <= MARGINAL_BAND {
        Stability::Marginal
    } else {
        Stability::Unstable
    };
    let routh_hurwitz = RouthHurwitz {
        a0,
        a1,
        a2,
        stable: a2 > 0.0 && a0 > 0.0 && a2 * a1 - a0 > 0.0,
    };
    Ok(StabilityReport {
        eigenvalues,
        stability,
        routh_hurwitz,
    })
}

pub fn equilibria(cfg: &VitalConfig) -> Result<EquilibriumReport> {
    let r0 = reproductive_number(cfg)?;
    let fixed = |state: Compartments| -> Result<FixedPoint> {
        Ok(FixedPoint {
            residual: residual_norm(cfg, &state)?,
            report: classify_stability(cfg, &state)?,
            state,
        })
    };
    let disease_free = fixed(disease_free_point(cfg))?;
    let endemic = endemic_point(cfg)?.map(fixed).transpose()?;
    Ok(EquilibriumReport {
        r0,
        disease_free,
        endemic,
    })
}

/// Roots of `λ³ + a2λ² + a1λ + a0`, polished with Newton steps on the original cubic.
pub fn cubic_roots(a2: f64, a1: f64, a0: f64) -> [Complex64; 3] {
    let shift = a2 / 3.0;
    let p = a1 - a2 * a2 / 3.0;
    let q = 2.0 * a2.powi(3) / 27.0 - a2 * a1 / 3.0 + a0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let mut roots = if disc > 0.0 {
        let sq = disc.sqrt();
        let u = if q >= 0.0 {
            (-q / 2.0 - sq).cbrt()
        } else {
            (-q / 2.0 + sq).cbrt()
        };
        let y = if u == 0.0 { 0.0 } else { u - p / (3.0 * u) };
        let real = y - shift;
        // the other two roots from the deflated quadratic λ² + (a2 + r)λ + (a1 + r(a2 + r))
        let b = a2 + real;
        let c = a1 + real * b;
        let [z1, z2] = quadratic_roots(b, c);
        [Complex64::new(real, 0.0), z1, z2]
    } else {
        let m = 2.0 * (-p / 3.0).max(0.0).sqrt();
        let arg = if m == 0.0 {
            0.0
        } else {
            (3.0 * q / (p * m)).clamp(-1.0, 1.0)
        };
        let theta = arg.acos() / 3.0;
        let tau = 2.0 * std::f64::consts::PI / 3.0;
        [0.0, 1.0, 2.0].map(|k| Complex64::new(m * (theta - k * tau).cos() - shift, 0.0))
    };
    for z in roots.iter_mut() {
        *z = newton_polish(*z, a2, a1, a0);
    }
    roots
}

fn newton_polish(mut z: Complex64, a2: f64, a1: f64, a0: f64) -> Complex64 {
    for _ in 0..4 {
        let f = ((z + a2) * z + a1) * z + a0;
        let df = (3.0 * z + 2.0 * a2) * z + a1;
        if df.norm() == 0.0 {
            break;
        }
        let next = z - f / df;
        if !next.re.is_finite() || !next.im.is_finite() {
            break;
        }
        let f_next = ((next + a2) * next + a1) * next + a0;
        if f_next.norm() > f.norm() {
            break;
        }
        z = next;
    }
    z
}

/// Roots of `λ² + bλ + c`.
fn quadratic_roots(b: f64, c: f64) -> [Complex64; 2] {
    let disc = b * b - 4.0 * c;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        let q = -0.5 * (b + b.signum() * sq);
        if q == 0.0 {
            return [Complex64::new(0.0, 0.0), Complex64::new(-b, 0.0)];
        }
        [Complex64::new(q, 0.0), Complex64::new(c / q, 0.0)]
    } else {
        let im = (-disc).sqrt() / 2.0;
        [Complex64::new(-b / 2.0, im), Complex64::new(-b / 2.0, -im)]
    }
}

/// Inputs of the final-size relation between the long-run limits of the
/// constant-coefficient model with vaccination and its initial data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalSizeInputs {
    pub population: f64,
    pub beta: f64,
    /// `γ1 + γ2`.
    pub gamma: f64,
    pub rho: f64,
    pub immunity: [f64; 2],
    pub s_inf: f64,
    pub v_inf: f64,
    pub s0: f64,
    /// Removed at time zero.
    pub removed0: f64,
    /// Total first and second doses over the whole run.
    pub total_doses: [f64; 2],
}

impl FinalSizeInputs {
    fn terms(&self) -> [f64; 6] {
        let k = self.beta * (1.0 - self.rho) / (self.gamma * self.population);
        let [pi1, pi2] = self.immunity;
        let [d1, d2] = self.total_doses;
        [
            k * self.s_inf,
            -self.s_inf.ln(),
            k * self.v_inf,
            (pi1 * d1 + (pi2 - pi1) * d2) / self.population,
            k * (self.population - self.removed0),
            -self.s0.ln(),
        ]
    }

    /// Largest magnitude among the terms, for relative comparisons.
    pub fn scale(&self) -> f64 {
        self.terms().iter().map(|t| t.abs()).fold(0.0, f64::max)
    }
}

/// Left side minus right side of
/// `kS∞ − ln S∞ + kV∞ = (π1Δ̄1 + (π2−π1)Δ̄2)/N + k(N − R0) − ln S0` with `k = β(1−ρ)/(γN)`.
pub fn final_size_residual(inputs: &FinalSizeInputs) -> Result<f64> {
    if !(inputs.s_inf > 0.0) || !(inputs.s0 > 0.0) {
        return Err(Error::InvalidParameter(
            "final-size relation needs S∞ > 0 and S0 > 0".into(),
        ));
    }
    if !(inputs.gamma > 0.0) {
        return Err(Error::InvalidParameter("final-size relation needs gamma > 0".into()));
    }
    let t = inputs.terms();
    Ok((t[0] + t[1] + t[2]) - (t[3] + t[4] + t[5]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitOptions {
    pub horizon: u32,
    /// Stop once two states `window` days apart differ by less than `tol · N`.
    pub tol: f64,
    pub window: u32,
    pub substeps: u32,
}

impl Default for LimitOptions {
    fn default() -> Self {
        LimitOptions {
            horizon: 200_000,
            tol: 1e-10,
            window: 1,
            substeps: DEFAULT_SUBSTEPS,
        }
    }
}

/// Integrates from day 0 until the state settles.
///
/// The coefficient set is stretched to cover the horizon, so constant configurations
/// can be given over any span.
pub fn long_run_limit(
    model: &Model<'_>,
    state0: &Compartments,
    opts: &LimitOptions,
) -> Result<Compartments> {
    if opts.window == 0 {
        return Err(Error::InvalidParameter("window must be positive".into()));
    }
    let coeffs = model.coefficients.extended(0.0, opts.horizon as f64);
    let m = Model {
        coefficients: &coeffs,
        ..*model
    };
    let threshold = opts.tol * model.params.population;
    let mut day = 0;
    let mut state = *state0;
    while day < opts.horizon {
        let next_day = (day + opts.window).min(opts.horizon);
        let traj = integrate(&m, &state, day, next_day, opts.substeps)?;
        let next = *traj.last();
        let moved = next.max_abs_diff(&state);
        state = next;
        day = next_day;
        if moved < threshold {
            return Ok(state);
        }
    }
    Err(Error::NotConverged {
        horizon: opts.horizon,
        last: Box::new(state),
    })
}
