//! Spectral analysis of the birth renewal operator.
//!
//! For a trial growth rate λ the operator
//!
//!   (𝓑_λ φ)(x) = ∫₀^{a†} β(a)·e^{−λa} ∫_{x−η}^{x+η} K(x, s)·(𝒯(0, a)φ)(s) ds da
//!
//! maps a newborn biting-time profile to the profile of its discounted
//! offspring. Its Perron root γ(λ) decreases strictly in λ, and the growth
//! bound λ₀ of the population semigroup is the unique solution of γ(λ) = 1.
//!
//! Discretely, 𝓑_λ factorizes as K_w · G_λ: a banded kernel-window quadrature
//! times a circulant that aggregates survival, discount and diffusion over
//! age cells. The circulant is assembled through its Fourier symbol, so the
//! only quadrature errors are the midpoint rule in age and the windowed
//! kernel rule in x.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::heatgrid::{kernel_row, AgeGrid, CircleGrid, DiffusionPropagator};
use crate::model::{check_pair, Fertility, ModelParams, Mortality, VitalRates};

/// Stop when successive Rayleigh quotients differ by less than this.
pub const PERRON_RAYLEIGH_TOL: f64 = 1e-12;
/// Eigenpair residual bound, relative to the matrix norm.
pub const PERRON_RESIDUAL_FACTOR: f64 = 1e-10;
/// |γ(𝓑_λ₀) − 1| accepted by the growth-bound solver.
pub const LAMBDA0_GAMMA_TOL: f64 = 1e-10;
/// Residual accepted for the scalar characteristic equation.
pub const LOTKA_RESIDUAL_TOL: f64 = 1e-12;

/// Discrete renewal operator at one trial rate, with its quadrature metadata.
#[derive(Debug, Clone)]
pub struct RenewalOperator {
    pub lambda: f64,
    pub matrix: DMatrix<f64>,
    pub age_nodes: Vec<f64>,
    pub age_weights: Vec<f64>,
}

impl RenewalOperator {
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.matrix.ncols() {
            return Err(Error::Mismatch(format!(
                "vector of length {} against a {}-column operator",
                v.len(),
                self.matrix.ncols()
            )));
        }
        let out = &self.matrix * DVector::from_column_slice(v);
        Ok(out.as_slice().to_vec())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.matrix.row(i).iter().sum()
    }
}

/// Assemble 𝓑_λ on the given grids.
pub fn assemble(
    params: &ModelParams,
    rates: &VitalRates,
    xg: &CircleGrid,
    ag: &AgeGrid,
    lambda: f64,
) -> Result<RenewalOperator> {
    assemble_impl(params, rates, xg, ag, lambda, false)
}

/// Assemble ∂_λ 𝓑_λ: same double integral with the integrand times (−a).
/// All entries are ≤ 0.
pub fn d_lambda_operator(
    params: &ModelParams,
    rates: &VitalRates,
    xg: &CircleGrid,
    ag: &AgeGrid,
    lambda: f64,
) -> Result<RenewalOperator> {
    assemble_impl(params, rates, xg, ag, lambda, true)
}

fn assemble_impl(
    params: &ModelParams,
    rates: &VitalRates,
    xg: &CircleGrid,
    ag: &AgeGrid,
    lambda: f64,
    derivative: bool,
) -> Result<RenewalOperator> {
    check_pair(params, rates)?;
    if (ag.a_dagger() - rates.a_dagger).abs() > 1e-12 * rates.a_dagger {
        return Err(Error::Mismatch(format!(
            "age grid spans {} but rates span {}",
            ag.a_dagger(),
            rates.a_dagger
        )));
    }
    if !lambda.is_finite() {
        return Err(Error::InvalidParameter {
            name: "lambda",
            value: lambda,
            reason: "trial rate must be finite",
        });
    }

    let n = xg.len();
    let nodes = ag.centers();
    let w = ag.weight();
    let mut coeffs = Vec::with_capacity(nodes.len());
    for &a in &nodes {
        let mut c = w * rates.beta(a)? * (-lambda * a).exp() * rates.survival(a)?;
        if derivative {
            c *= -a;
        }
        coeffs.push(c);
    }

    let prop = DiffusionPropagator::new(params.delta, xg.clone())?;
    let col = prop.weighted_column(&nodes, &coeffs)?.values().to_vec();

    // M = K_w · G: row i mixes the circulant rows selected by the kernel
    // window around x_i.
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let window = kernel_row(xg, i, params.eta, params.kernel_wrap);
            let mut row = vec![0.0; n];
            for &(j, kw) in &window {
                for (l, r) in row.iter_mut().enumerate().take(j + 1) {
                    *r += kw * col[j - l];
                }
                for (l, r) in row.iter_mut().enumerate().skip(j + 1) {
                    *r += kw * col[j + n - l];
                }
            }
            row
        })
        .collect();

    let matrix = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    Ok(RenewalOperator {
        lambda,
        matrix,
        age_nodes: nodes,
        age_weights: vec![w; ag.len()],
    })
}

/// Dominant eigenpair of an entrywise-nonnegative matrix.
#[derive(Debug, Clone)]
pub struct PerronPair {
    pub gamma: f64,
    /// Right eigenvector, unit Euclidean norm, nonnegative.
    pub phi: DVector<f64>,
    /// Left eigenvector, scaled so that ⟨ψ, φ⟩ = 1.
    pub psi: DVector<f64>,
    pub iterations: u32,
    pub residual: f64,
}

/// Power iteration with Rayleigh-quotient convergence control, seeded with
/// the uniform vector (which breaks ties the way the renewal structure
/// prefers: toward the constant profile).
///
/// Callers supply operators whose dominant eigenvalue is real, simple and
/// positive; entrywise nonnegativity is not required, which lets the exact
/// spectral propagator's faint truncation ringing through. A matrix whose
/// dominant modulus is attained by a complex pair stalls and is reported.
pub fn perron(m: &DMatrix<f64>) -> Result<PerronPair> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::Mismatch(format!(
            "perron needs a nonempty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = inf_norm(m);
    if !scale.is_finite() {
        return Err(Error::Degenerate(
            "matrix entries overflowed the floating-point range".to_string(),
        ));
    }
    if scale == 0.0 {
        return Err(Error::Degenerate(
            "matrix is identically zero; the spectral radius carries no eigenvector information"
                .to_string(),
        ));
    }
    let (gamma, phi, it_r, res) = power_iterate(|v| m * v, m.nrows(), scale)?;
    let (_, psi_raw, it_l, _) = power_iterate(|v| m.tr_mul(v), m.nrows(), scale)?;

    let pairing = psi_raw.dot(&phi);
    if pairing.abs() < 1e-12 {
        return Err(Error::Degenerate(format!(
            "left/right eigenvector pairing degenerate: <psi, phi> = {pairing:.3e}"
        )));
    }
    let psi = psi_raw / pairing;

    Ok(PerronPair {
        gamma,
        phi,
        psi,
        iterations: it_r.max(it_l),
        residual: res,
    })
}

fn power_iterate(
    mul: impl Fn(&DVector<f64>) -> DVector<f64>,
    n: usize,
    scale: f64,
) -> Result<(f64, DVector<f64>, u32, f64)> {
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut gamma_prev = f64::INFINITY;
    let mut residual = f64::INFINITY;
    const MAX_ITER: u32 = 50_000;
    for it in 1..=MAX_ITER {
        let w = mul(&v);
        let gamma = v.dot(&w);
        residual = (&w - &v * gamma).norm();
        let rayleigh_settled = (gamma - gamma_prev).abs() <= PERRON_RAYLEIGH_TOL * gamma.abs().max(1.0);
        if rayleigh_settled && residual <= PERRON_RESIDUAL_FACTOR * scale {
            let mut phi = v;
            if phi.sum() < 0.0 {
                phi = -phi;
            }
            return Ok((gamma, phi, it, residual));
        }
        let wn = w.norm();
        if wn == 0.0 {
            // The iterate died: the reachable spectrum from this seed is {0}.
            return Ok((0.0, v, it, 0.0));
        }
        v = w / wn;
        gamma_prev = gamma;
    }
    Err(Error::PowerIterationStalled {
        iterations: MAX_ITER,
        residual,
    })
}

/// Perron root of 𝓑_λ. Returns 0 for the identically-zero operator and +∞
/// when the discount has overflowed (far-left trial rates during bracketing).
pub fn gamma_of_lambda(
    params: &ModelParams,
    rates: &VitalRates,
    xg: &CircleGrid,
    ag: &AgeGrid,
    lambda: f64,
) -> Result<f64> {
    let op = assemble(params, rates, xg, ag, lambda)?;
    let scale = inf_norm(&op.matrix);
    if scale == 0.0 {
        return Ok(0.0);
    }
    if !scale.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(perron(&op.matrix)?.gamma)
}

/// Everything the growth-bound solve produces, grid metadata included.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralResult {
    pub lambda0: f64,
    /// |γ(𝓑_λ₀) − 1| at the returned root.
    pub gamma_residual: f64,
    /// Right Perron profile at λ₀ (unit norm, nonnegative).
    pub phi: Vec<f64>,
    /// Left Perron profile, ⟨ψ, φ⟩ = 1.
    pub psi: Vec<f64>,
    /// 1 / ⟨ψ, −∂_λ𝓑_λ₀ φ⟩; scales the rank-one spectral projection.
    pub residue_scale: f64,
    /// Estimated distance from λ₀ to the next spectral element. The
    /// subdominant modulus of 𝓑_λ₀ is estimated by a deflated power sweep and
    /// converted to rate units through ⟨ψ, −∂_λ𝓑 φ⟩. An estimate, not a bound.
    pub gap_epsilon: f64,
    pub n_x: usize,
    pub n_a: usize,
    pub a_dagger: f64,
    pub delta: f64,
    pub eta: f64,
}

/// Solve γ(𝓑_λ) = 1 for the growth bound λ₀ and package the spectral data
/// at the root.
pub fn find_lambda0(
    params: &ModelParams,
    rates: &VitalRates,
    xg: &CircleGrid,
    ag: &AgeGrid,
) -> Result<SpectralResult> {
    let reach = (10.0 * (rates.beta_sup() + rates.mu_reference())).max(1.0);
    let g = |lam: f64| Ok(gamma_of_lambda(params, rates, xg, ag, lam)? - 1.0);
    let (lo, hi, flo, fhi) = expand_bracket("gamma(lambda) - 1", &g, -reach, reach)?;
    let root = brent_root(
        "gamma(lambda) - 1",
        &g,
        lo,
        hi,
        flo,
        fhi,
        1e-13,
        LAMBDA0_GAMMA_TOL * 0.5,
        300,
    )?;
    let lambda0 = root.x;

    let op = assemble(params, rates, xg, ag, lambda0)?;
    let pair = perron(&op.matrix)?;
    let dop = d_lambda_operator(params, rates, xg, ag, lambda0)?;
    let denom = -pair.psi.dot(&(&dop.matrix * &pair.phi));
    if !(denom > 0.0) {
        return Err(Error::Degenerate(format!(
            "<psi, -d_lambda B phi> = {denom:.3e}; the characteristic slope must be positive"
        )));
    }

    let theta = subdominant_modulus(&op.matrix, &pair);
    let gap_epsilon = ((pair.gamma - theta).max(0.0)) / denom;

    Ok(SpectralResult {
        lambda0,
        gamma_residual: (pair.gamma - 1.0).abs(),
        phi: pair.phi.as_slice().to_vec(),
        psi: pair.psi.as_slice().to_vec(),
        residue_scale: 1.0 / denom,
        gap_epsilon,
        n_x: xg.len(),
        n_a: ag.len(),
        a_dagger: ag.a_dagger(),
        delta: params.delta,
        eta: params.eta,
    })
}

/// Modulus of the largest eigenvalue after deflating the dominant pair:
/// iterate v ← (𝕀 − φψᵀ)·M·v and average the norm growth. Geometric
/// averaging over the tail smooths the beat of complex pairs.
fn subdominant_modulus(m: &DMatrix<f64>, pair: &PerronPair) -> f64 {
    let n = m.nrows();
    let mut v = DVector::from_fn(n, |i, _| {
        let t = i as f64 / n as f64;
        (std::f64::consts::TAU * t).cos() + 0.3 * (3.0 * std::f64::consts::TAU * t).sin()
    });
    let deflate = |u: &mut DVector<f64>| {
        let c = pair.psi.dot(u);
        *u -= &pair.phi * c;
    };
    deflate(&mut v);
    let nv = v.norm();
    if nv == 0.0 {
        return 0.0;
    }
    v /= nv;

    const SWEEPS: usize = 120;
    const TAIL: usize = 40;
    let mut log_sum = 0.0;
    let mut tail_count = 0usize;
    for it in 0..SWEEPS {
        let mut w = m * &v;
        deflate(&mut w);
        let wn = w.norm();
        if wn <= 1e-290 {
            return 0.0;
        }
        if it >= SWEEPS - TAIL {
            log_sum += wn.ln();
            tail_count += 1;
        }
        v = w / wn;
    }
    (log_sum / tail_count as f64).exp()
}

/// Rank-one component of the resolvent at the growth bound:
/// v ↦ φ·⟨ψ, v⟩ / ⟨ψ, −∂_λ𝓑 φ⟩.
pub fn residue_projection(spec: &SpectralResult, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != spec.phi.len() {
        return Err(Error::Mismatch(format!(
            "vector of length {} against {} profile nodes",
            v.len(),
            spec.phi.len()
        )));
    }
    let inner: f64 = spec.psi.iter().zip(v).map(|(p, x)| p * x).sum();
    let c = inner * spec.residue_scale;
    Ok(spec.phi.iter().map(|p| p * c).collect())
}

/// How the scalar age integral ∫ β e^{−λa}·survival da is evaluated.
#[derive(Debug, Clone, Copy)]
pub enum AgeIntegral {
    /// Exact antiderivative. Available for constant fertility with constant
    /// mortality, or with the κ = 1 blow-up family.
    ClosedForm,
    /// Midpoint rule on this many age cells; matches the operator quadrature
    /// when given the operator's cell count.
    Midpoint { cells: usize },
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LotkaRoot {
    pub lambda_hat: f64,
    pub residual: f64,
    pub iterations: u32,
}

/// Unique real root of the scalar characteristic equation
/// 1 − C·∫₀^{a†} β(a)·e^{−λa}·e^{−∫₀^a μ} da = 0.
pub fn lotka_root(c: f64, rates: &VitalRates, rule: AgeIntegral) -> Result<LotkaRoot> {
    if !c.is_finite() || c <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "c",
            value: c,
            reason: "kernel mass constant must be finite and positive",
        });
    }
    // Written as a decreasing function of λ so the shared bracketing applies.
    let g = |lam: f64| Ok(c * net_reproduction(rates, lam, rule)? - 1.0);
    let reach = (10.0 * (rates.beta_sup() + rates.mu_reference())).max(1.0);
    let (lo, hi, flo, fhi) = expand_bracket("characteristic equation", &g, -reach, reach)?;
    let root = brent_root(
        "characteristic equation",
        &g,
        lo,
        hi,
        flo,
        fhi,
        1e-14,
        LOTKA_RESIDUAL_TOL * 0.5,
        300,
    )?;
    Ok(LotkaRoot {
        lambda_hat: root.x,
        residual: root.f.abs(),
        iterations: root.iterations,
    })
}

/// C·∫ β e^{−λa}·survival da without the C factor.
pub fn net_reproduction(rates: &VitalRates, lambda: f64, rule: AgeIntegral) -> Result<f64> {
    match rule {
        AgeIntegral::ClosedForm => closed_form_net(rates, lambda),
        AgeIntegral::Midpoint { cells } => {
            let ag = AgeGrid::new(cells, rates.a_dagger)?;
            let w = ag.weight();
            let mut acc = 0.0;
            for k in 0..ag.len() {
                let a = ag.center(k);
                acc += w * rates.beta(a)? * (-lambda * a).exp() * rates.survival(a)?;
            }
            if acc.is_finite() {
                Ok(acc)
            } else {
                Ok(f64::INFINITY)
            }
        }
    }
}

fn closed_form_net(rates: &VitalRates, lambda: f64) -> Result<f64> {
    let a = rates.a_dagger;
    let beta0 = match &rates.fertility {
        Fertility::Constant { beta0 } => *beta0,
        Fertility::Tabulated(_) => {
            return Err(Error::Mismatch(
                "closed-form age integral needs constant fertility; use the midpoint rule"
                    .to_string(),
            ))
        }
    };
    match &rates.mortality {
        Mortality::Constant { mu0 } => Ok(beta0 * int_exp(lambda + mu0, a)),
        Mortality::Blowup { mu0, kappa } if *kappa == 1.0 => {
            Ok(beta0 * int_exp_linear(lambda + mu0, a))
        }
        _ => Err(Error::Mismatch(
            "closed-form age integral covers constant or kappa = 1 blow-up mortality only; \
             use the midpoint rule"
                .to_string(),
        )),
    }
}

/// ∫₀^A e^{−qa} da, stable through q = 0.
fn int_exp(q: f64, a: f64) -> f64 {
    let x = q * a;
    if !x.is_finite() {
        return if x < 0.0 { f64::INFINITY } else { 0.0 };
    }
    if x == 0.0 {
        return a;
    }
    -(-x).exp_m1() / q
}

/// ∫₀^A e^{−qa}·(1 − a/A) da, stable through q = 0.
fn int_exp_linear(q: f64, a: f64) -> f64 {
    let x = q * a;
    if !x.is_finite() {
        return if x < 0.0 { f64::INFINITY } else { 0.0 };
    }
    if x.abs() < 1e-2 {
        // Σ (−x)^n / (n!·(n+1)(n+2)), truncated past x⁴/720.
        let c = 0.5 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0 + x * x * x * x / 720.0;
        a * c
    } else {
        let em = (-x).exp();
        (1.0 - em) / q - (1.0 - (1.0 + x) * em) / (q * q * a)
    }
}

/// Two routes to the growth bound of the x-homogeneous comparison problem:
/// the operator 𝓕_λ = C·∫ β e^{−λa}·e^{−∫μ}·e^{δΔa} da treated with the full
/// Perron machinery, against the scalar characteristic root on the same age
/// quadrature.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FourierReduction {
    pub lambda_tilde: f64,
    pub lambda_hat: f64,
    pub discrepancy: f64,
    /// |γ(𝓕) − 1| at λ̃₀.
    pub gamma_residual: f64,
}

pub fn fourier_reduction_check(
    params: &ModelParams,
    rates: &VitalRates,
    c: f64,
    xg: &CircleGrid,
    age_cells: usize,
) -> Result<FourierReduction> {
    check_pair(params, rates)?;
    if !c.is_finite() || c <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "c",
            value: c,
            reason: "kernel mass constant must be finite and positive",
        });
    }
    let ag = AgeGrid::new(age_cells, rates.a_dagger)?;
    let prop = DiffusionPropagator::new(params.delta, xg.clone())?;

    let gamma_local = |lam: f64| -> Result<f64> {
        let nodes = ag.centers();
        let w = ag.weight();
        let mut coeffs = Vec::with_capacity(nodes.len());
        for &a in &nodes {
            coeffs.push(c * w * rates.beta(a)? * (-lam * a).exp() * rates.survival(a)?);
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Ok(f64::INFINITY);
        }
        let col = prop.weighted_column(&nodes, &coeffs)?;
        let n = xg.len();
        let m = DMatrix::from_fn(n, n, |i, j| col.values()[(i + n - j) % n]);
        if inf_norm(&m) == 0.0 {
            return Ok(0.0);
        }
        Ok(perron(&m)?.gamma)
    };

    let g = |lam: f64| Ok(gamma_local(lam)? - 1.0);
    let reach = (10.0 * (rates.beta_sup() + rates.mu_reference())).max(1.0);
    let (lo, hi, flo, fhi) = expand_bracket("gamma(F_lambda) - 1", &g, -reach, reach)?;
    let root = brent_root(
        "gamma(F_lambda) - 1",
        &g,
        lo,
        hi,
        flo,
        fhi,
        1e-13,
        LAMBDA0_GAMMA_TOL * 0.5,
        300,
    )?;

    let hat = lotka_root(c, rates, AgeIntegral::Midpoint { cells: age_cells })?;
    Ok(FourierReduction {
        lambda_tilde: root.x,
        lambda_hat: hat.lambda_hat,
        discrepancy: (root.x - hat.lambda_hat).abs(),
        gamma_residual: root.f.abs(),
    })
}

pub(crate) fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Expand [lo, hi] by doubling until a strictly decreasing f satisfies
/// f(lo) > 0 > f(hi).
pub(crate) fn expand_bracket(
    what: &'static str,
    f: &dyn Fn(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
) -> Result<(f64, f64, f64, f64)> {
    debug_assert!(lo < 0.0 && hi > 0.0);
    let mut flo = f(lo)?;
    let mut fhi = f(hi)?;
    let mut expansions = 0u32;
    while flo <= 0.0 || fhi >= 0.0 {
        if expansions >= 60 {
            return Err(Error::BracketNotFound {
                what,
                lo,
                hi,
                expansions,
            });
        }
        if flo <= 0.0 {
            lo *= 2.0;
            flo = f(lo)?;
        }
        if fhi >= 0.0 {
            hi *= 2.0;
            fhi = f(hi)?;
        }
        expansions += 1;
    }
    Ok((lo, hi, flo, fhi))
}

pub(crate) struct BrentOut {
    pub x: f64,
    pub f: f64,
    pub iterations: u32,
}

/// Brent's method on a bracketed sign change. Converges when |f| dips under
/// `ftol`; a collapsed interval with a residual above `ftol` is an error, not
/// a silent success.
pub(crate) fn brent_root(
    what: &'static str,
    f: &dyn Fn(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
    xtol: f64,
    ftol: f64,
    maxiter: u32,
) -> Result<BrentOut> {
    if fa == 0.0 {
        return Ok(BrentOut {
            x: a,
            f: 0.0,
            iterations: 0,
        });
    }
    if fa * fb > 0.0 {
        return Err(Error::BracketNotFound {
            what,
            lo: a,
            hi: b,
            expansions: 0,
        });
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for iter in 1..=maxiter {
        if fb * fc > 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let xm = 0.5 * (c - b);
        if fb.abs() <= ftol {
            return Ok(BrentOut {
                x: b,
                f: fb,
                iterations: iter,
            });
        }
        if xm.abs() <= tol1 {
            return Err(Error::RootNotConverged {
                what,
                iterations: iter,
                residual: fb.abs(),
            });
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                q = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0));
                q = (q - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        if d.abs() > tol1 {
            b += d;
        } else {
            b += tol1.copysign(xm);
        }
        fb = f(b)?;
    }
    Err(Error::RootNotConverged {
        what,
        iterations: maxiter,
        residual: fb.abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn desk() -> (ModelParams, VitalRates, CircleGrid, AgeGrid) {
        let params = ModelParams::new(10.0, 3.0, 10.0, 50.0).unwrap();
        let rates = VitalRates::new(
            10.0,
            Mortality::Blowup {
                mu0: 0.05,
                kappa: 1.0,
            },
            Fertility::Constant { beta0: 0.35 },
        )
        .unwrap();
        (
            params,
            rates,
            CircleGrid::new(64).unwrap(),
            AgeGrid::new(200, 10.0).unwrap(),
        )
    }

    #[test]
    fn zero_fertility_assembles_the_zero_operator() {
        let (params, rates, xg, ag) = desk();
        let rates = rates.scale_fertility(0.0).unwrap();
        let op = assemble(&params, &rates, &xg, &ag, 0.0).unwrap();
        assert!(op.matrix.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shrinking_window_kills_the_operator_norm() {
        let (mut params, rates, xg, ag) = desk();
        params.eta = 1e-6;
        let op = assemble(&params, &rates, &xg, &ag, 0.0).unwrap();
        assert!(inf_norm(&op.matrix) <= 1e-12);
    }

    #[test]
    fn assembled_entries_are_nonnegative_on_resolved_grids() {
        let (params, rates, xg, ag) = desk();
        let op = assemble(&params, &rates, &xg, &ag, 0.1).unwrap();
        let max = op.matrix.iter().cloned().fold(0.0, f64::max);
        assert!(max > 0.0);
        // Truncation ringing from the youngest age cells may dip a hair
        // below zero; it must stay far inside the Perron tolerance.
        let min = op.matrix.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-9 * max, "entry dipped to {min}");
    }

    #[test]
    fn mortality_shift_equals_rate_shift_entrywise() {
        let params = ModelParams::new(10.0, 3.0, 10.0, 50.0).unwrap();
        let xg = CircleGrid::new(32).unwrap();
        let ag = AgeGrid::new(50, 10.0).unwrap();
        let base = VitalRates::new(
            10.0,
            Mortality::Constant { mu0: 0.1 },
            Fertility::Constant { beta0: 0.4 },
        )
        .unwrap();
        let shifted = VitalRates::new(
            10.0,
            Mortality::Constant { mu0: 0.1 + 0.3 },
            Fertility::Constant { beta0: 0.4 },
        )
        .unwrap();
        let m1 = assemble(&params, &shifted, &xg, &ag, 0.2).unwrap().matrix;
        let m2 = assemble(&params, &base, &xg, &ag, 0.2 + 0.3).unwrap().matrix;
        let scale = m1.iter().cloned().fold(0.0, f64::max);
        for (a, b) in m1.iter().zip(m2.iter()) {
            assert!((a - b).abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn perron_on_the_identity_returns_the_uniform_profile() {
        let m = DMatrix::<f64>::identity(8, 8);
        let pair = perron(&m).unwrap();
        assert_relative_eq!(pair.gamma, 1.0, epsilon = 1e-14);
        for v in pair.phi.iter() {
            assert_relative_eq!(*v, 1.0 / (8.0f64).sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn perron_separates_a_reducible_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let pair = perron(&m).unwrap();
        assert_relative_eq!(pair.gamma, 2.0, epsilon = 1e-10);
        assert!(pair.phi[0] > 0.999 && pair.phi[1].abs() < 1e-4);
    }

    #[test]
    fn perron_matches_a_dense_eigensolver_on_random_positive_matrices() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..20 {
            let m = DMatrix::from_fn(6, 6, |_, _| rng.random::<f64>() + 0.05);
            let pair = perron(&m).unwrap();
            let radius = m
                .clone()
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            assert_relative_eq!(pair.gamma, radius, epsilon = 1e-9);
            // Residuals on both sides.
            assert!((&m * &pair.phi - &pair.phi * pair.gamma).norm() <= 1e-9 * inf_norm(&m));
            assert!((m.tr_mul(&pair.psi) - &pair.psi * pair.gamma).norm()
                <= 1e-8 * inf_norm(&m) * pair.psi.norm());
        }
    }

    #[test]
    fn perron_rejects_the_zero_matrix() {
        let m = DMatrix::<f64>::zeros(4, 4);
        assert!(matches!(perron(&m), Err(Error::Degenerate(_))));
    }

    #[test]
    fn gamma_decreases_strictly_in_lambda() {
        let (params, rates, xg, ag) = desk();
        let lams = [-0.5, -0.25, 0.0, 0.25, 0.5];
        let gs: Vec<f64> = lams
            .iter()
            .map(|&l| gamma_of_lambda(&params, &rates, &xg, &ag, l).unwrap())
            .collect();
        for w in gs.windows(2) {
            assert!(w[1] < w[0] - 1e-8, "gamma not strictly decreasing: {gs:?}");
        }
    }

    #[test]
    fn gamma_vanishes_for_large_discounts() {
        let (params, rates, xg, ag) = desk();
        // The bracket edge must already sit below the root.
        let reach = 10.0 * (rates.beta_sup() + rates.mu_reference());
        let g_edge = gamma_of_lambda(&params, &rates, &xg, &ag, reach).unwrap();
        assert!(g_edge < 1.0, "gamma({reach}) = {g_edge}");
        // The discount only buys ~β/λ decay, so push far out for smallness.
        let g_far = gamma_of_lambda(&params, &rates, &xg, &ag, 1000.0).unwrap();
        assert!(g_far < 1e-3, "gamma(1000) = {g_far}");
    }

    #[test]
    fn growth_bound_satisfies_its_defining_equation() {
        let (params, rates, xg, ag) = desk();
        let spec = find_lambda0(&params, &rates, &xg, &ag).unwrap();
        assert!(spec.gamma_residual <= LAMBDA0_GAMMA_TOL);
        let g = gamma_of_lambda(&params, &rates, &xg, &ag, spec.lambda0).unwrap();
        assert!((g - 1.0).abs() <= LAMBDA0_GAMMA_TOL);
        assert!(spec.gap_epsilon > 0.0);
        // Perron profile is strictly positive.
        assert!(spec.phi.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn mortality_shift_moves_the_growth_bound_exactly_opposite() {
        let (params, rates, xg, ag) = desk();
        let spec = find_lambda0(&params, &rates, &xg, &ag).unwrap();
        let shifted = VitalRates::new(
            10.0,
            Mortality::Blowup {
                mu0: 0.05 + 0.3,
                kappa: 1.0,
            },
            Fertility::Constant { beta0: 0.35 },
        )
        .unwrap();
        let spec_shifted = find_lambda0(&params, &shifted, &xg, &ag).unwrap();
        assert!((spec_shifted.lambda0 - (spec.lambda0 - 0.3)).abs() <= 1e-8);
    }

    #[test]
    fn fertility_scaling_moves_the_growth_bound_up() {
        let (params, rates, xg, ag) = desk();
        let lo = find_lambda0(&params, &rates, &xg, &ag).unwrap().lambda0;
        let hi = find_lambda0(
            &params,
            &rates.scale_fertility(2.0).unwrap(),
            &xg,
            &ag,
        )
        .unwrap()
        .lambda0;
        assert!(hi > lo + 1e-4);
    }

    #[test]
    fn zero_fertility_reports_a_degenerate_bracket() {
        let (params, rates, xg, ag) = desk();
        let rates = rates.scale_fertility(0.0).unwrap();
        assert!(matches!(
            find_lambda0(&params, &rates, &xg, &ag),
            Err(Error::BracketNotFound { .. })
        ));
    }

    #[test]
    fn derivative_operator_is_nonpositive_and_matches_finite_differences() {
        let params = ModelParams::new(10.0, 3.0, 10.0, 50.0).unwrap();
        let rates = VitalRates::new(
            10.0,
            Mortality::Blowup {
                mu0: 0.05,
                kappa: 1.0,
            },
            Fertility::Constant { beta0: 0.35 },
        )
        .unwrap();
        let xg = CircleGrid::new(16).unwrap();
        let ag = AgeGrid::new(40, 10.0).unwrap();
        let lambda = 0.1;
        let dop = d_lambda_operator(&params, &rates, &xg, &ag, lambda).unwrap();
        assert!(dop.matrix.iter().all(|&v| v <= 0.0));

        let eps = 1e-5;
        let plus = assemble(&params, &rates, &xg, &ag, lambda + eps).unwrap();
        let minus = assemble(&params, &rates, &xg, &ag, lambda - eps).unwrap();
        let fd = (&plus.matrix - &minus.matrix) / (2.0 * eps);
        let diff = (&fd - &dop.matrix).abs().max();
        assert!(diff <= 1e-7, "finite-difference mismatch {diff}");
    }

    #[test]
    fn derivative_of_the_zero_operator_is_zero() {
        let (params, rates, xg, ag) = desk();
        let rates = rates.scale_fertility(0.0).unwrap();
        let dop = d_lambda_operator(&params, &rates, &xg, &ag, 0.0).unwrap();
        assert!(dop.matrix.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residue_projection_fixes_the_perron_profile() {
        let (params, rates, xg, ag) = desk();
        let spec = find_lambda0(&params, &rates, &xg, &ag).unwrap();
        let out = residue_projection(&spec, &spec.phi).unwrap();
        // <psi, phi> = 1, so the output is residue_scale · phi.
        for (o, p) in out.iter().zip(&spec.phi) {
            assert_relative_eq!(*o, spec.residue_scale * p, epsilon = 1e-12);
        }
    }

    #[test]
    fn residue_projection_annihilates_the_deflated_directions() {
        let (params, rates, xg, ag) = desk();
        let spec = find_lambda0(&params, &rates, &xg, &ag).unwrap();
        let mut v: Vec<f64> = (0..spec.phi.len())
            .map(|i| 0.5 + (i as f64 * 0.37).sin().powi(2))
            .collect();
        let inner: f64 = spec.psi.iter().zip(&v).map(|(p, x)| p * x).sum();
        for (x, p) in v.iter_mut().zip(&spec.phi) {
            *x -= inner * p;
        }
        let out = residue_projection(&spec, &v).unwrap();
        let scale = spec.residue_scale.abs();
        assert!(out.iter().all(|&o| o.abs() <= 1e-12 * scale.max(1.0)));
    }

    #[test]
    fn lotka_root_is_zero_when_net_reproduction_is_one() {
        // Constant rates tuned so that C·∫ β·e^{−μa} da = 1 exactly.
        let a = 8.0;
        let mu0 = 0.2;
        let rates = VitalRates::new(
            a,
            Mortality::Constant { mu0 },
            Fertility::Constant { beta0: 1.0 },
        )
        .unwrap();
        let integral = int_exp(mu0, a);
        let root = lotka_root(1.0 / integral, &rates, AgeIntegral::ClosedForm).unwrap();
        assert!(root.lambda_hat.abs() <= 1e-11);
        assert!(root.residual <= LOTKA_RESIDUAL_TOL);
    }

    #[test]
    fn lotka_root_hits_the_classic_constant_rate_value() {
        // β ≡ 2, μ ≡ 0, a† = 1: the root of 2(1 − e^{−λ}) = λ.
        let rates = VitalRates::new(
            1.0,
            Mortality::Constant { mu0: 0.0 },
            Fertility::Constant { beta0: 2.0 },
        )
        .unwrap();
        let root = lotka_root(1.0, &rates, AgeIntegral::ClosedForm).unwrap();
        assert_relative_eq!(root.lambda_hat, 1.5936, max_relative = 1e-4);
        assert!(root.residual <= LOTKA_RESIDUAL_TOL);
    }

    #[test]
    fn lotka_root_commutes_with_constant_mortality_shifts() {
        let base = VitalRates::new(
            5.0,
            Mortality::Constant { mu0: 0.0 },
            Fertility::Constant { beta0: 1.1 },
        )
        .unwrap();
        let shifted = VitalRates::new(
            5.0,
            Mortality::Constant { mu0: 0.4 },
            Fertility::Constant { beta0: 1.1 },
        )
        .unwrap();
        let r0 = lotka_root(1.0, &base, AgeIntegral::ClosedForm).unwrap();
        let r1 = lotka_root(1.0, &shifted, AgeIntegral::ClosedForm).unwrap();
        assert!((r1.lambda_hat - (r0.lambda_hat - 0.4)).abs() <= 1e-11);
    }

    #[test]
    fn midpoint_net_reproduction_converges_to_the_closed_form() {
        let rates = VitalRates::new(
            10.0,
            Mortality::Blowup {
                mu0: 0.05,
                kappa: 1.0,
            },
            Fertility::Constant { beta0: 0.35 },
        )
        .unwrap();
        let exact = net_reproduction(&rates, 0.12, AgeIntegral::ClosedForm).unwrap();
        let coarse = net_reproduction(&rates, 0.12, AgeIntegral::Midpoint { cells: 100 }).unwrap();
        let fine = net_reproduction(&rates, 0.12, AgeIntegral::Midpoint { cells: 200 }).unwrap();
        let ratio = (coarse - exact).abs() / (fine - exact).abs();
        assert!(
            (2.0..=8.0).contains(&ratio),
            "midpoint error should shrink ~4x per halving, got {ratio}"
        );
    }

    #[test]
    fn fourier_reduction_routes_agree() {
        let params = ModelParams::new(1.0, 3.0, 1.0, 1.0).unwrap();
        let rates = VitalRates::new(
            1.0,
            Mortality::Constant { mu0: 0.0 },
            Fertility::Constant { beta0: 2.0 },
        )
        .unwrap();
        let xg = CircleGrid::new(16).unwrap();
        let check = fourier_reduction_check(&params, &rates, 1.0, &xg, 20_000).unwrap();
        assert!(check.discrepancy <= 1e-6, "routes split by {}", check.discrepancy);
        assert!(check.gamma_residual <= 1e-8);
        // With 2·10⁴ cells the midpoint rule leaves ~1e−8 in the integral, so
        // the operator route lands on the classic constant-rate value too.
        assert_relative_eq!(check.lambda_tilde, 1.5936, max_relative = 1e-4);
    }

    #[test]
    fn micro_operator_matches_a_from_scratch_double_quadrature() {
        // Small instance: the assembled operator applied to a nonconstant
        // profile, against an independently coded nested-loop integrator
        // whose heat matrices come from explicit mode projectors.
        const TAU_24: f64 = std::f64::consts::TAU / 24.0;
        const TAU_N: f64 = std::f64::consts::TAU / 8.0;
        let params = ModelParams::new(1.0, 3.0, 10.0, 10.0).unwrap();
        let rates = VitalRates::new(
            10.0,
            Mortality::Constant { mu0: 0.1 },
            Fertility::Constant { beta0: 1.0 },
        )
        .unwrap();
        let xg = CircleGrid::new(8).unwrap();
        let ag = AgeGrid::new(16, 10.0).unwrap();
        let op = assemble(&params, &rates, &xg, &ag, 0.0).unwrap();

        let n = 8usize;
        let h = 3.0;
        let heat = |t: f64| -> Vec<Vec<f64>> {
            let mut m = vec![vec![0.0; n]; n];
            for (i, row) in m.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for k in 0..n {
                        let fr = k.min(n - k) as f64 * TAU_24;
                        let ang = TAU_N * ((i * k + n * n - j * k) % n) as f64;
                        acc += (-fr * fr * t).exp() * ang.cos();
                    }
                    *v = acc / n as f64;
                }
            }
            m
        };

        let v: Vec<f64> = (0..n)
            .map(|l| 1.0 + 0.5 * (std::f64::consts::TAU * l as f64 / n as f64).cos())
            .collect();
        let applied = op.apply(&v).unwrap();

        let da = 10.0 / 16.0;
        for i in 0..n {
            let x_i = i as f64 * h;
            let mut brute = 0.0;
            for k in 0..16 {
                let a = (k as f64 + 0.5) * da;
                let hm = heat(a);
                let mut s_int = 0.0;
                for j in 0..n {
                    let s_j = j as f64 * h;
                    let lo = (s_j - 0.5 * h).max(x_i - 3.0).max(0.0);
                    let hi = (s_j + 0.5 * h).min(x_i + 3.0).min(24.0);
                    if hi <= lo {
                        continue;
                    }
                    let u = x_i - s_j;
                    let kval = if s_j > 0.0 && s_j < 24.0 {
                        u * u * (-u * u).exp()
                    } else {
                        0.0
                    };
                    let diffused: f64 = hm[j].iter().zip(&v).map(|(c, x)| c * x).sum();
                    s_int += (hi - lo) * kval * diffused;
                }
                brute += da * 1.0 * (-0.1 * a).exp() * s_int;
            }
            assert!(
                (applied[i] - brute).abs() <= 1e-8,
                "node {i}: {} vs {}",
                applied[i],
                brute
            );
        }
    }

    #[test]
    fn assemble_rejects_mismatched_age_spans() {
        let (params, rates, xg, _) = desk();
        let ag = AgeGrid::new(50, 9.0).unwrap();
        assert!(matches!(
            assemble(&params, &rates, &xg, &ag, 0.0),
            Err(Error::Mismatch(_))
        ));
    }
}
