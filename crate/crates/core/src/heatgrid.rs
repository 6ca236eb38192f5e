//! Grids and the periodic diffusion propagator.
//!
//! Biting times are discretized by equispaced nodes on the 24-hour circle,
//! ages by cell centers so that the mortality blow-up at a† is never sampled.
//! Diffusion acts exactly on the grid's Fourier modes: the propagator is the
//! circulant whose symbol is exp(−δ·ξ²·t), so a single step carries no time
//! discretization error at all. The price is the usual one for spectral
//! truncation: the discrete kernel is only positive once the fastest retained
//! mode has decayed, i.e. for δ·(π·n_x/24)²·t of a few dozen or more.

use std::f64::consts::TAU;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{kernel_eval, ModelParams, VitalRates, DOMAIN_LEN};

/// Equispaced periodic nodes x_j = j·h on [0, 24), h = 24/n_x.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleGrid {
    n_x: usize,
    h: f64,
}

impl CircleGrid {
    pub fn new(n_x: usize) -> Result<Self> {
        if !(2..=8192).contains(&n_x) {
            return Err(Error::InvalidParameter {
                name: "n_x",
                value: n_x as f64,
                reason: "circle grid needs between 2 and 8192 nodes",
            });
        }
        Ok(CircleGrid {
            n_x,
            h: DOMAIN_LEN / n_x as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.n_x
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_x).map(|j| self.node(j)).collect()
    }

    /// Angular frequency of mode m on the circle.
    pub fn frequency(&self, m: usize) -> f64 {
        TAU * m as f64 / DOMAIN_LEN
    }
}

/// Cell-centered age grid: a_k = (k + 1/2)·Δa, Δa = a†/n_a.
///
/// Each node carries the full cell weight Δa, so sums against the weights
/// integrate over all of [0, a†] while the nodes stay strictly inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeGrid {
    n_a: usize,
    a_dagger: f64,
    da: f64,
}

impl AgeGrid {
    pub fn new(n_a: usize, a_dagger: f64) -> Result<Self> {
        if n_a < 2 {
            return Err(Error::InvalidParameter {
                name: "n_a",
                value: n_a as f64,
                reason: "age grid needs at least two cells",
            });
        }
        if !a_dagger.is_finite() || a_dagger <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "a_dagger",
                value: a_dagger,
                reason: "maximum age must be finite and positive",
            });
        }
        Ok(AgeGrid {
            n_a,
            a_dagger,
            da: a_dagger / n_a as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.n_a
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn a_dagger(&self) -> f64 {
        self.a_dagger
    }

    pub fn spacing(&self) -> f64 {
        self.da
    }

    pub fn center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.da
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_a).map(|k| self.center(k)).collect()
    }

    /// Quadrature weight of every cell (midpoint rule).
    pub fn weight(&self) -> f64 {
        self.da
    }
}

/// One column of the periodic heat circulant for a fixed duration; applying
/// it is a circular convolution.
#[derive(Debug, Clone)]
pub struct HeatColumn {
    values: Vec<f64>,
}

impl HeatColumn {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// out[i] = Σ_d values[d]·f[(i − d) mod n].
    pub fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        let n = self.values.len();
        debug_assert_eq!(f.len(), n);
        debug_assert_eq!(out.len(), n);
        out.fill(0.0);
        for (d, &c) in self.values.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let (f_tail, f_head) = f.split_at(n - d);
            for (o, &x) in out[d..].iter_mut().zip(f_tail) {
                *o += c * x;
            }
            for (o, &x) in out[..d].iter_mut().zip(f_head) {
                *o += c * x;
            }
        }
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        self.apply_into(f, &mut out);
        out
    }
}

/// Exact solver for ∂_t u = δ·∂²_x u with periodic boundary on the circle
/// grid. Immutable and reentrant; columns for fixed durations can be cached
/// by the caller.
#[derive(Debug, Clone)]
pub struct DiffusionPropagator {
    delta: f64,
    grid: CircleGrid,
}

impl DiffusionPropagator {
    pub fn new(delta: f64, grid: CircleGrid) -> Result<Self> {
        if !delta.is_finite() || delta < 0.0 {
            return Err(Error::InvalidParameter {
                name: "delta",
                value: delta,
                reason: "diffusivity must be finite and nonnegative",
            });
        }
        Ok(DiffusionPropagator { delta, grid })
    }

    pub fn grid(&self) -> &CircleGrid {
        &self.grid
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Decay factor of mode m over duration t.
    pub fn symbol(&self, m: usize, t: f64) -> f64 {
        let xi = self.grid.frequency(m);
        (-self.delta * xi * xi * t).exp()
    }

    /// Propagator column for one duration.
    pub fn column(&self, t: f64) -> Result<HeatColumn> {
        self.weighted_column(&[t], &[1.0])
    }

    /// Column of Σ_k coeffs[k]·exp(δ·Δ·durations[k]): the circulant for a
    /// weighted sum of heat solves, assembled through its aggregated symbol.
    pub fn weighted_column(&self, durations: &[f64], coeffs: &[f64]) -> Result<HeatColumn> {
        if durations.len() != coeffs.len() {
            return Err(Error::Mismatch(format!(
                "{} durations against {} coefficients",
                durations.len(),
                coeffs.len()
            )));
        }
        for &t in durations {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::OutOfDomain {
                    name: "duration",
                    value: t,
                    lo: 0.0,
                    hi: f64::INFINITY,
                });
            }
        }
        let n = self.grid.len();
        let total: f64 = coeffs.iter().sum();

        // With no diffusion the circulant is the identity times the total
        // weight, exactly; build it directly so transport stays bit-exact.
        if self.delta == 0.0 || durations.iter().all(|&t| t == 0.0) {
            let mut values = vec![0.0; n];
            values[0] = total;
            return Ok(HeatColumn { values });
        }

        let mut sym = vec![0.0; n / 2 + 1];
        for (m, s) in sym.iter_mut().enumerate() {
            let xi = self.grid.frequency(m);
            let rate = self.delta * xi * xi;
            *s = durations
                .iter()
                .zip(coeffs)
                .map(|(&t, &c)| c * (-rate * t).exp())
                .sum();
        }
        Ok(HeatColumn {
            values: column_from_symbol(n, &sym),
        })
    }

    /// Evolve a profile over duration t.
    pub fn heat_step(&self, f: &[f64], t: f64) -> Result<Vec<f64>> {
        if f.len() != self.grid.len() {
            return Err(Error::Mismatch(format!(
                "field has {} entries on a {}-node grid",
                f.len(),
                self.grid.len()
            )));
        }
        Ok(self.column(t)?.apply(f))
    }

    /// Dense circulant matrix for one duration.
    pub fn matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        let col = self.column(t)?;
        let n = self.grid.len();
        Ok(DMatrix::from_fn(n, n, |i, j| {
            col.values[(i + n - j) % n]
        }))
    }
}

/// Inverse discrete transform of a mode-symmetric symbol (len n/2 + 1) into
/// the corresponding circulant column. The cosine argument is reduced by
/// (j·k) mod n before the trig call so no precision is lost to large angles.
fn column_from_symbol(n: usize, sym: &[f64]) -> Vec<f64> {
    let mut col = vec![0.0; n];
    let scale = 1.0 / n as f64;
    for j in 0..=n / 2 {
        let mut acc = 0.0;
        for k in 0..n {
            let m = k.min(n - k);
            let ang = TAU * ((j * k) % n) as f64 / n as f64;
            acc += sym[m] * ang.cos();
        }
        let v = acc * scale;
        col[j] = v;
        if j > 0 && j < n - j {
            col[n - j] = v;
        }
    }
    col
}

/// Quadrature row for the windowed kernel integral
/// ∫ K(x_i, s)·f(s) ds over (x_i − η, x_i + η) ∩ (0, 24).
///
/// Every node j contributes the overlap of its cell [x_j − h/2, x_j + h/2]
/// with the admissible interval, times K(x_i, x_j). When a window edge sits
/// exactly on a node this reduces to the trapezoid half-weight. Entries that
/// carry no mass are omitted.
///
/// With `wrap` the window follows circle distance instead of being truncated
/// at the day seam; the kernel is then evaluated on the wrapped displacement.
pub fn kernel_row(grid: &CircleGrid, i: usize, eta: f64, wrap: bool) -> Vec<(usize, f64)> {
    let n = grid.len();
    let h = grid.spacing();
    let x_i = grid.node(i);
    let mut row = Vec::new();
    for j in 0..n {
        let s_j = grid.node(j);
        let (weight, k_val) = if wrap {
            let mut d = (s_j - x_i).rem_euclid(DOMAIN_LEN);
            if d > DOMAIN_LEN / 2.0 {
                d -= DOMAIN_LEN;
            }
            let lo = (d - 0.5 * h).max(-eta);
            let hi = (d + 0.5 * h).min(eta);
            (hi - lo, d * d * (-d * d).exp())
        } else {
            let lo = (s_j - 0.5 * h).max(x_i - eta).max(0.0);
            let hi = (s_j + 0.5 * h).min(x_i + eta).min(DOMAIN_LEN);
            (hi - lo, kernel_eval(x_i, s_j))
        };
        let w = weight * k_val;
        if weight > 0.0 && w > 0.0 {
            row.push((j, w));
        }
    }
    row
}

/// The two-parameter solution family of the linear problem along
/// characteristics: survival attenuation times periodic diffusion,
/// 𝒯(s₀; τ, s) = exp(−∫_τ^s μ(s₀+ρ) dρ) · exp(δ·Δ·(s−τ)).
#[derive(Debug, Clone)]
pub struct EvolutionFamily {
    propagator: DiffusionPropagator,
    rates: VitalRates,
}

impl EvolutionFamily {
    pub fn new(params: &ModelParams, rates: &VitalRates, grid: CircleGrid) -> Result<Self> {
        crate::model::check_pair(params, rates)?;
        Ok(EvolutionFamily {
            propagator: DiffusionPropagator::new(params.delta, grid)?,
            rates: rates.clone(),
        })
    }

    pub fn propagator(&self) -> &DiffusionPropagator {
        &self.propagator
    }

    pub fn rates(&self) -> &VitalRates {
        &self.rates
    }

    /// Survival factor exp(−∫_{s0+τ}^{s0+s} μ), zero when the upper age has
    /// exhausted the lifespan.
    pub fn survival_factor(&self, s0: f64, tau: f64, s: f64) -> Result<f64> {
        if !(0.0..=s).contains(&tau) {
            return Err(Error::OutOfDomain {
                name: "tau",
                value: tau,
                lo: 0.0,
                hi: s,
            });
        }
        let lo = self.rates.cumulative_mu(s0 + tau)?;
        let hi = self.rates.cumulative_mu(s0 + s)?;
        Ok((-(hi - lo)).exp().clamp(0.0, 1.0))
    }

    /// Apply 𝒯(s₀; τ, s) to a biting-time profile.
    pub fn evolve(&self, s0: f64, tau: f64, s: f64, f: &[f64]) -> Result<Vec<f64>> {
        let factor = self.survival_factor(s0, tau, s)?;
        let mut out = self.propagator.heat_step(f, s - tau)?;
        for v in &mut out {
            *v *= factor;
        }
        Ok(out)
    }
}
