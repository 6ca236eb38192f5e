//! Model data: physical parameters, vital rates, the biting-time kernel,
//! initial data, and the structural assumptions the operators rely on.
//!
//! Ages live on [0, a†], biting times on the 24-hour circle. Mortality is
//! allowed to diverge at the maximum age; everything here is written so that
//! no caller ever needs to evaluate μ at a† itself.

use serde::Serialize;

use crate::error::{Error, Result};

/// Circumference of the biting-time circle, in hours.
pub const DOMAIN_LEN: f64 = 24.0;

/// Physical parameters shared by every operator in the crate.
#[derive(Debug, Clone, Serialize)]
pub struct ModelParams {
    /// Diffusivity of the biting-time trait, in h² per unit age.
    pub delta: f64,
    /// Half-width of the interaction window, in hours.
    pub eta: f64,
    /// Maximum age. Nothing survives past it.
    pub a_dagger: f64,
    /// Default simulation horizon.
    pub t_end: f64,
    /// Wrap the interaction window around the midnight seam instead of
    /// truncating it. Off by default: the hard cut at s ∈ (0, 24) is part of
    /// the model, and the wrap exists only for sensitivity studies.
    pub kernel_wrap: bool,
}

impl ModelParams {
    pub fn new(delta: f64, eta: f64, a_dagger: f64, t_end: f64) -> Result<Self> {
        if !delta.is_finite() || delta < 0.0 {
            return Err(Error::InvalidParameter {
                name: "delta",
                value: delta,
                reason: "diffusivity must be finite and nonnegative",
            });
        }
        if !eta.is_finite() || eta <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "eta",
                value: eta,
                reason: "window half-width must be finite and positive",
            });
        }
        if !a_dagger.is_finite() || a_dagger <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "a_dagger",
                value: a_dagger,
                reason: "maximum age must be finite and positive",
            });
        }
        if !t_end.is_finite() || t_end < 0.0 {
            return Err(Error::InvalidParameter {
                name: "t_end",
                value: t_end,
                reason: "horizon must be finite and nonnegative",
            });
        }
        Ok(ModelParams {
            delta,
            eta,
            a_dagger,
            t_end,
            kernel_wrap: false,
        })
    }

    /// Enable or disable the periodic window wrap. Wrapping only makes sense
    /// while the window fits on half the circle.
    pub fn with_kernel_wrap(mut self, wrap: bool) -> Result<Self> {
        if wrap && self.eta > DOMAIN_LEN / 2.0 {
            return Err(Error::InvalidParameter {
                name: "eta",
                value: self.eta,
                reason: "wrapped window must not overlap itself (eta <= 12)",
            });
        }
        self.kernel_wrap = wrap;
        Ok(self)
    }
}

/// The redistribution kernel K(x, s) = (x−s)²·exp(−(x−s)²) for s inside the
/// open day (0, 24), and zero otherwise. K(x, x) = 0: offspring never inherit
/// the parental biting time exactly.
pub fn kernel_eval(x: f64, s: f64) -> f64 {
    if s <= 0.0 || s >= DOMAIN_LEN {
        return 0.0;
    }
    let u = x - s;
    let u2 = u * u;
    u2 * (-u2).exp()
}

/// Piecewise-linear rate samples on [0, a†], with the exact integral of the
/// interpolant cached at the sample points.
#[derive(Debug, Clone, Serialize)]
pub struct TabulatedRate {
    ages: Vec<f64>,
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl TabulatedRate {
    pub fn new(ages: Vec<f64>, values: Vec<f64>, a_dagger: f64) -> Result<Self> {
        if ages.len() != values.len() || ages.len() < 2 {
            return Err(Error::Mismatch(format!(
                "rate table needs matching age/value lists with at least two rows, got {}/{}",
                ages.len(),
                values.len()
            )));
        }
        if ages[0] != 0.0 || (ages[ages.len() - 1] - a_dagger).abs() > 1e-12 * a_dagger {
            return Err(Error::Mismatch(format!(
                "rate table must span [0, {a_dagger}], got [{}, {}]",
                ages[0],
                ages[ages.len() - 1]
            )));
        }
        for w in ages.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Mismatch(format!(
                    "rate table ages must increase strictly, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for &v in &values {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter {
                    name: "rate sample",
                    value: v,
                    reason: "table entries must be finite and nonnegative",
                });
            }
        }
        let mut cumulative = vec![0.0; ages.len()];
        for i in 1..ages.len() {
            let seg = (ages[i] - ages[i - 1]) * 0.5 * (values[i] + values[i - 1]);
            cumulative[i] = cumulative[i - 1] + seg;
        }
        Ok(TabulatedRate {
            ages,
            values,
            cumulative,
        })
    }

    /// Linear interpolation of the rate itself.
    pub fn rate(&self, a: f64) -> f64 {
        let i = self.segment(a);
        let (a0, a1) = (self.ages[i], self.ages[i + 1]);
        let t = (a - a0) / (a1 - a0);
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    /// Exact integral of the interpolant over [0, a]; piecewise quadratic.
    pub fn integral(&self, a: f64) -> f64 {
        let i = self.segment(a);
        let (a0, a1) = (self.ages[i], self.ages[i + 1]);
        let da = a - a0;
        let slope = (self.values[i + 1] - self.values[i]) / (a1 - a0);
        self.cumulative[i] + self.values[i] * da + 0.5 * slope * da * da
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn any_positive(&self) -> bool {
        self.values.iter().any(|&v| v > 0.0)
    }

    pub fn scaled(&self, m: f64) -> TabulatedRate {
        TabulatedRate {
            ages: self.ages.clone(),
            values: self.values.iter().map(|v| v * m).collect(),
            cumulative: self.cumulative.iter().map(|c| c * m).collect(),
        }
    }

    fn segment(&self, a: f64) -> usize {
        // Callers guarantee a ∈ [0, a†]; clamp the endpoint into the last segment.
        match self.ages.binary_search_by(|x| x.partial_cmp(&a).unwrap()) {
            Ok(i) => i.min(self.ages.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.ages.len() - 2),
        }
    }
}

/// Age-specific death rate μ(a).
#[derive(Debug, Clone, Serialize)]
pub enum Mortality {
    /// μ(a) = μ₀. The lifetime integral stays finite, so survivors reach a†;
    /// kept for closed-form cross-checks.
    Constant { mu0: f64 },
    /// μ(a) = μ₀ + κ/(a† − a). The divergence at a† guarantees extinction by
    /// the maximum age, and ∫μ has the exact antiderivative
    /// μ₀·a + κ·ln(a†/(a†−a)).
    Blowup { mu0: f64, kappa: f64 },
    /// Piecewise-linear samples; divergence at a† cannot be expressed.
    Tabulated(TabulatedRate),
}

/// Age-specific birth rate β(a).
#[derive(Debug, Clone, Serialize)]
pub enum Fertility {
    Constant { beta0: f64 },
    Tabulated(TabulatedRate),
}

/// Mortality and fertility over a common age span.
#[derive(Debug, Clone, Serialize)]
pub struct VitalRates {
    pub a_dagger: f64,
    pub mortality: Mortality,
    pub fertility: Fertility,
}

impl VitalRates {
    pub fn new(a_dagger: f64, mortality: Mortality, fertility: Fertility) -> Result<Self> {
        if !a_dagger.is_finite() || a_dagger <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "a_dagger",
                value: a_dagger,
                reason: "maximum age must be finite and positive",
            });
        }
        match &mortality {
            Mortality::Constant { mu0 } => {
                if !mu0.is_finite() || *mu0 < 0.0 {
                    return Err(Error::InvalidParameter {
                        name: "mu0",
                        value: *mu0,
                        reason: "death rate must be finite and nonnegative",
                    });
                }
            }
            Mortality::Blowup { mu0, kappa } => {
                if !mu0.is_finite() || *mu0 < 0.0 {
                    return Err(Error::InvalidParameter {
                        name: "mu0",
                        value: *mu0,
                        reason: "death rate must be finite and nonnegative",
                    });
                }
                if !kappa.is_finite() || *kappa <= 0.0 {
                    return Err(Error::InvalidParameter {
                        name: "kappa",
                        value: *kappa,
                        reason: "blow-up strength must be finite and positive",
                    });
                }
            }
            Mortality::Tabulated(_) => {}
        }
        if let Fertility::Constant { beta0 } = &fertility {
            if !beta0.is_finite() || *beta0 < 0.0 {
                return Err(Error::InvalidParameter {
                    name: "beta0",
                    value: *beta0,
                    reason: "birth rate must be finite and nonnegative",
                });
            }
        }
        Ok(VitalRates {
            a_dagger,
            mortality,
            fertility,
        })
    }

    /// ∫₀^a μ(ρ) dρ, exact for the closed-form families. Returns +∞ for the
    /// blow-up family at a = a†.
    pub fn cumulative_mu(&self, a: f64) -> Result<f64> {
        self.check_age(a)?;
        Ok(match &self.mortality {
            Mortality::Constant { mu0 } => mu0 * a,
            Mortality::Blowup { mu0, kappa } => {
                let rest = self.a_dagger - a;
                if rest <= 0.0 {
                    f64::INFINITY
                } else {
                    mu0 * a + kappa * (self.a_dagger / rest).ln()
                }
            }
            Mortality::Tabulated(t) => t.integral(a),
        })
    }

    /// Probability of surviving from birth to age a:
    /// exp(−∫₀^a μ), clamped into [0, 1].
    pub fn survival(&self, a: f64) -> Result<f64> {
        Ok((-self.cumulative_mu(a)?).exp().clamp(0.0, 1.0))
    }

    pub fn beta(&self, a: f64) -> Result<f64> {
        self.check_age(a)?;
        Ok(match &self.fertility {
            Fertility::Constant { beta0 } => *beta0,
            Fertility::Tabulated(t) => t.rate(a),
        })
    }

    pub fn beta_sup(&self) -> f64 {
        match &self.fertility {
            Fertility::Constant { beta0 } => *beta0,
            Fertility::Tabulated(t) => t.max_value(),
        }
    }

    /// A finite stand-in for the scale of μ, used to size root brackets.
    /// The last tenth of the age span is excluded because μ may diverge there.
    pub fn mu_reference(&self) -> f64 {
        let a = 0.9 * self.a_dagger;
        match self.cumulative_mu(a) {
            Ok(c) if c.is_finite() => c / a,
            _ => 0.0,
        }
    }

    /// Same mortality, fertility multiplied by m.
    pub fn scale_fertility(&self, m: f64) -> Result<VitalRates> {
        if !m.is_finite() || m < 0.0 {
            return Err(Error::InvalidParameter {
                name: "fertility scale",
                value: m,
                reason: "scale must be finite and nonnegative",
            });
        }
        let fertility = match &self.fertility {
            Fertility::Constant { beta0 } => Fertility::Constant { beta0: beta0 * m },
            Fertility::Tabulated(t) => Fertility::Tabulated(t.scaled(m)),
        };
        Ok(VitalRates {
            a_dagger: self.a_dagger,
            mortality: self.mortality.clone(),
            fertility,
        })
    }

    fn check_age(&self, a: f64) -> Result<()> {
        if !a.is_finite() || a < 0.0 || a > self.a_dagger {
            return Err(Error::OutOfDomain {
                name: "age",
                value: a,
                lo: 0.0,
                hi: self.a_dagger,
            });
        }
        Ok(())
    }
}

/// Initial population density p₀(a, x).
#[derive(Debug, Clone, Serialize)]
pub enum InitialData {
    Uniform {
        value: f64,
    },
    /// Separable bump, Gaussian in age and in circle distance on x.
    Gaussian {
        amplitude: f64,
        a_center: f64,
        a_width: f64,
        x_center: f64,
        x_width: f64,
    },
}

impl InitialData {
    pub fn eval(&self, a: f64, x: f64) -> f64 {
        match self {
            InitialData::Uniform { value } => *value,
            InitialData::Gaussian {
                amplitude,
                a_center,
                a_width,
                x_center,
                x_width,
            } => {
                let da = (a - a_center) / a_width;
                let mut dx = (x - x_center).rem_euclid(DOMAIN_LEN);
                if dx > DOMAIN_LEN / 2.0 {
                    dx -= DOMAIN_LEN;
                }
                let dx = dx / x_width;
                amplitude * (-0.5 * (da * da + dx * dx)).exp()
            }
        }
    }

    fn min_value(&self) -> f64 {
        match self {
            InitialData::Uniform { value } => *value,
            InitialData::Gaussian { amplitude, .. } => amplitude.min(0.0),
        }
    }
}

/// Outcome of checking one structural assumption.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Verdict {
    Pass,
    Fail(String),
    /// The representation cannot witness the property either way.
    Unverifiable(String),
}

impl Verdict {
    pub fn failed(&self) -> bool {
        matches!(self, Verdict::Fail(_))
    }
}

/// Report on the three standing assumptions:
/// (J1) mortality is locally integrable with a divergent lifetime integral,
/// (J2) fertility is bounded, nonnegative and positive on a set of positive
/// measure, (J3) the initial density is bounded and nonnegative.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub j1_mortality_divergence: Verdict,
    pub j2_fertility_positive: Verdict,
    pub j3_initial_nonnegative: Verdict,
}

impl ValidationReport {
    /// The renewal structure collapses when (J2) or (J3) fails; those are
    /// fatal. A finite mortality integral (J1) only weakens the theory's
    /// sharpness, so it is reported but tolerated.
    pub fn fatal_assumption(&self) -> Option<&'static str> {
        if self.j2_fertility_positive.failed() {
            Some("J2")
        } else if self.j3_initial_nonnegative.failed() {
            Some("J3")
        } else {
            None
        }
    }
}

/// Check (J1)-(J3) for a parameter/rate/initial triple.
///
/// Structural mismatches (different age spans in `params` and `rates`) are
/// hard errors, not verdicts.
pub fn validate(
    params: &ModelParams,
    rates: &VitalRates,
    initial: &InitialData,
) -> Result<ValidationReport> {
    check_pair(params, rates)?;

    let j1 = match &rates.mortality {
        Mortality::Constant { mu0 } => Verdict::Fail(format!(
            "constant rate integrates to {:.6} over a lifetime; survivors reach the maximum age",
            mu0 * rates.a_dagger
        )),
        Mortality::Blowup { .. } => Verdict::Pass,
        Mortality::Tabulated(_) => Verdict::Unverifiable(
            "finite samples cannot witness a divergent integral at the maximum age".to_string(),
        ),
    };

    let j2 = match &rates.fertility {
        Fertility::Constant { beta0 } => {
            if *beta0 > 0.0 {
                Verdict::Pass
            } else {
                Verdict::Fail("fertility vanishes identically".to_string())
            }
        }
        Fertility::Tabulated(t) => {
            if t.any_positive() {
                Verdict::Pass
            } else {
                Verdict::Fail("all fertility samples are zero".to_string())
            }
        }
    };

    let j3 = if initial.min_value() >= 0.0 {
        Verdict::Pass
    } else {
        Verdict::Fail(format!(
            "initial density reaches {:.6}",
            initial.min_value()
        ))
    };

    Ok(ValidationReport {
        j1_mortality_divergence: j1,
        j2_fertility_positive: j2,
        j3_initial_nonnegative: j3,
    })
}

/// Shared-span check used by every operator taking both structs.
pub fn check_pair(params: &ModelParams, rates: &VitalRates) -> Result<()> {
    if (params.a_dagger - rates.a_dagger).abs() > 1e-12 * params.a_dagger {
        return Err(Error::Mismatch(format!(
            "params carry a_dagger = {} but rates carry {}",
            params.a_dagger, rates.a_dagger
        )));
    }
    Ok(())
}
