//! Criticality classification and stationary profiles.
//!
//! The sign of the growth bound λ₀ splits the model into three regimes.
//! Nontrivial steady states exist exactly at criticality, where γ(𝓑₀) = 1;
//! there the renewal fixed profile φ generates the stationary field
//!
//!   p_s(a, x) = c·survival(a)·(e^{δΔa} φ)(x),
//!
//! which the lockstep engine reproduces as an exact fixed point up to the
//! eigensolver residual. Away from criticality only the trivial state
//! remains, and the construction refuses to fabricate one.
//!
//! Because the renewal operator is linear in fertility, scaling β by
//! m* = 1/γ(𝓑₀) lands exactly on criticality; `criticalize` computes the
//! scaling and verifies the resulting growth bound.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::heatgrid::{AgeGrid, CircleGrid, DiffusionPropagator};
use crate::model::{ModelParams, VitalRates};
use crate::simulate::{Engine, PopulationField, SimConfig};
use crate::spectral::{find_lambda0, gamma_of_lambda, SpectralResult};

/// Growth-bound threshold under which a configuration counts as critical.
pub const DEFAULT_TOL_ZERO: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Supercritical,
    Critical,
    Subcritical,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::Supercritical => "supercritical",
            Regime::Critical => "critical",
            Regime::Subcritical => "subcritical",
        };
        f.write_str(s)
    }
}

pub fn classify(lambda0: f64, tol_zero: f64) -> Result<Regime> {
    if !lambda0.is_finite() {
        return Err(Error::InvalidParameter {
            name: "lambda0",
            value: lambda0,
            reason: "growth bound must be finite",
        });
    }
    if !tol_zero.is_finite() || tol_zero < 0.0 {
        return Err(Error::InvalidParameter {
            name: "tol_zero",
            value: tol_zero,
            reason: "criticality tolerance must be finite and nonnegative",
        });
    }
    Ok(if lambda0.abs() <= tol_zero {
        Regime::Critical
    } else if lambda0 > 0.0 {
        Regime::Supercritical
    } else {
        Regime::Subcritical
    })
}

/// Fertility scaling that lands on criticality, with before/after evidence.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CriticalScaling {
    pub m_star: f64,
    /// γ(𝓑₀) of the unscaled rates; m_star is its reciprocal.
    pub gamma0: f64,
    pub lambda0_before: f64,
    pub lambda0_after: f64,
}

/// Scale fertility onto criticality. γ(𝓑₀) is linear in the fertility
/// multiplier, so m* = 1/γ(𝓑₀) is exact; the returned rates are verified to
/// carry |λ₀| ≤ tol and polished through γ once more if roundoff moved them.
pub fn criticalize(
    params: &ModelParams,
    rates: &VitalRates,
    xg: &CircleGrid,
    ag: &AgeGrid,
    tol: f64,
) -> Result<(CriticalScaling, VitalRates)> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "tol",
            value: tol,
            reason: "criticalization tolerance must be finite and positive",
        });
    }
    let lambda0_before = find_lambda0(params, rates, xg, ag)?.lambda0;
    let gamma0 = gamma_of_lambda(params, rates, xg, ag, 0.0)?;
    if !(gamma0 > 1e-300) || !gamma0.is_finite() {
        return Err(Error::Degenerate(format!(
            "gamma(B_0) = {gamma0}; fertility cannot be scaled onto criticality"
        )));
    }
    let mut m_star = 1.0 / gamma0;
    let mut scaled = rates.scale_fertility(m_star)?;
    let mut lambda0_after = find_lambda0(params, &scaled, xg, ag)?.lambda0;
    if lambda0_after.abs() > tol {
        // One multiplicative polish: γ is linear in m, so dividing by the
        // residual γ closes any roundoff gap.
        let g = gamma_of_lambda(params, &scaled, xg, ag, 0.0)?;
        m_star /= g;
        scaled = rates.scale_fertility(m_star)?;
        lambda0_after = find_lambda0(params, &scaled, xg, ag)?.lambda0;
        if lambda0_after.abs() > tol {
            return Err(Error::RootNotConverged {
                what: "criticalization",
                iterations: 2,
                residual: lambda0_after.abs(),
            });
        }
    }
    Ok((
        CriticalScaling {
            m_star,
            gamma0,
            lambda0_before,
            lambda0_after,
        },
        scaled,
    ))
}

/// A stationary field with its positivity certificate.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub profile: PopulationField,
    /// Amplitude applied to the unit-norm renewal profile.
    pub c: f64,
    /// Minimum of the profile over ages in (0, 0.9·a†]; positive for c > 0.
    pub rho0: f64,
    pub lambda0: f64,
    pub regime: Regime,
}

/// Construct the stationary field at criticality. For c = 0 the trivial
/// state is returned in any regime; for c > 0 the regime must be critical,
/// since no other steady state exists.
pub fn build_steady(
    params: &ModelParams,
    rates: &VitalRates,
    spec: &SpectralResult,
    c: f64,
    tol_zero: f64,
) -> Result<SteadyState> {
    if !c.is_finite() || c < 0.0 {
        return Err(Error::InvalidParameter {
            name: "c",
            value: c,
            reason: "steady-state amplitude must be finite and nonnegative",
        });
    }
    let regime = classify(spec.lambda0, tol_zero)?;
    let xg = CircleGrid::new(spec.n_x)?;
    let ag = AgeGrid::new(spec.n_a, spec.a_dagger)?;
    if (rates.a_dagger - spec.a_dagger).abs() > 1e-12 * spec.a_dagger {
        return Err(Error::Mismatch(format!(
            "rates span ages to {} but the spectral data to {}",
            rates.a_dagger, spec.a_dagger
        )));
    }

    if c == 0.0 {
        return Ok(SteadyState {
            profile: PopulationField::zero(xg, ag),
            c,
            rho0: 0.0,
            lambda0: spec.lambda0,
            regime,
        });
    }
    if regime != Regime::Critical {
        return Err(Error::Degenerate(format!(
            "no nontrivial steady state exists: lambda0 = {:.6e} makes the regime {}",
            spec.lambda0, regime
        )));
    }

    let prop = DiffusionPropagator::new(params.delta, xg.clone())?;
    let seed: Vec<f64> = spec.phi.iter().map(|p| c * p).collect();
    let mut profile = PopulationField::zero(xg, ag);
    for k in 0..spec.n_a {
        let a = profile.agrid().center(k);
        let spread = prop.column(a)?.apply(&seed);
        let factor = rates.survival(a)?;
        let row = profile.row_mut(k);
        for (r, s) in row.iter_mut().zip(spread) {
            *r = factor * s;
        }
    }

    let mut rho0 = f64::INFINITY;
    for k in 0..spec.n_a {
        if profile.agrid().center(k) > 0.9 * spec.a_dagger {
            break;
        }
        for &v in profile.row(k) {
            rho0 = rho0.min(v);
        }
    }
    if !(rho0 > 0.0) {
        return Err(Error::Degenerate(format!(
            "steady profile loses positivity: min over the certified ages is {rho0:.3e}"
        )));
    }

    Ok(SteadyState {
        profile,
        c,
        rho0,
        lambda0: spec.lambda0,
        regime,
    })
}

/// Evidence that a constructed field is stationary under the lockstep flow.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SteadyCheck {
    /// ‖step(p_s) − p_s‖ / ‖p_s‖.
    pub one_step_residual: f64,
    /// max over the horizon of |‖p(t)‖ / ‖p_s‖ − 1|.
    pub drift: f64,
    pub horizon: f64,
}

/// Run the engine over the horizon and measure stationarity.
pub fn verify_steady(
    params: &ModelParams,
    rates: &VitalRates,
    state: &SteadyState,
    t_end: f64,
) -> Result<SteadyCheck> {
    let config = SimConfig {
        n_x: state.profile.xgrid().len(),
        n_a: state.profile.agrid().len(),
        t_end,
        record_every: 0,
    };
    let engine = Engine::new(params, rates, &config)?;
    let base = state.profile.l2_norm();
    if base == 0.0 {
        // The trivial state is exactly stationary.
        return Ok(SteadyCheck {
            one_step_residual: 0.0,
            drift: 0.0,
            horizon: t_end,
        });
    }

    let stepped = engine.step(&state.profile)?;
    let mut diff = stepped;
    diff.axpy(-1.0, &state.profile);
    let one_step_residual = diff.l2_norm() / base;

    let traj = engine.run(state.profile.clone())?;
    let mut drift = 0.0f64;
    for &norm in &traj.l2 {
        drift = drift.max((norm / base - 1.0).abs());
    }
    Ok(SteadyCheck {
        one_step_residual,
        drift,
        horizon: *traj.times.last().unwrap_or(&0.0),
    })
}
