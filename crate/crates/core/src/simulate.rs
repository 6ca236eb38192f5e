//! Time integration of the structured population.
//!
//! Transport in age is handled by the method of characteristics on a
//! cell-centered age grid locked to the time step, Δt = Δa. One step is
//!
//!   1. evaluate the renewal boundary from the pre-step field,
//!   2. shift every age row up one cell, scaled by the exact survival
//!      ratio across the cell and diffused by the exact heat column for Δt
//!      (the oldest cell exits the domain),
//!   3. insert the newborn profile into the youngest cell, attenuated by
//!      survival over the half cell between birth and the cell center and
//!      diffused over the same half cell.
//!
//! The half-cell survival and diffusion on insertion make every row carry
//! exactly 𝒯(0, a_k) from birth to its cell center, so a fixed point of the
//! step solves the same discrete renewal eigenproblem the spectral route
//! assembles. The remaining discretization errors are the age quadrature of
//! the renewal integral and the explicit (pre-step) birth coupling, whose
//! growth-rate bias is O(λ₀·Δa) and vanishes at criticality.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::heatgrid::{kernel_row, AgeGrid, CircleGrid, DiffusionPropagator, HeatColumn};
use crate::model::{check_pair, InitialData, ModelParams, VitalRates};
use crate::spectral::SpectralResult;

/// Population density sampled at age-cell centers and biting-time nodes,
/// stored row-major by age.
#[derive(Debug, Clone)]
pub struct PopulationField {
    xgrid: CircleGrid,
    agrid: AgeGrid,
    pub time: f64,
    data: Vec<f64>,
}

impl PopulationField {
    pub fn zero(xgrid: CircleGrid, agrid: AgeGrid) -> Self {
        let data = vec![0.0; xgrid.len() * agrid.len()];
        PopulationField {
            xgrid,
            agrid,
            time: 0.0,
            data,
        }
    }

    /// Sample f(a, x) at cell centers and nodes.
    pub fn from_fn(xgrid: CircleGrid, agrid: AgeGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut field = PopulationField::zero(xgrid, agrid);
        for k in 0..field.agrid.len() {
            let a = field.agrid.center(k);
            let row = field.row_mut(k);
            for j in 0..row.len() {
                row[j] = f(a, j as f64 * 24.0 / row.len() as f64);
            }
        }
        field
    }

    pub fn from_initial(init: &InitialData, xgrid: CircleGrid, agrid: AgeGrid) -> Self {
        let mut field = PopulationField::zero(xgrid, agrid);
        for k in 0..field.agrid.len() {
            let a = field.agrid.center(k);
            let h = field.xgrid.spacing();
            let row = field.row_mut(k);
            for (j, v) in row.iter_mut().enumerate() {
                *v = init.eval(a, j as f64 * h);
            }
        }
        field
    }

    pub fn xgrid(&self) -> &CircleGrid {
        &self.xgrid
    }

    pub fn agrid(&self) -> &AgeGrid {
        &self.agrid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.xgrid.len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.xgrid.len();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn value(&self, k: usize, j: usize) -> f64 {
        self.data[k * self.xgrid.len() + j]
    }

    /// L² norm with the product measure h·Δa.
    pub fn l2_norm(&self) -> f64 {
        let cell = self.xgrid.spacing() * self.agrid.weight();
        (self.data.iter().map(|v| v * v).sum::<f64>() * cell).sqrt()
    }

    /// Total population ∫∫ p da dx.
    pub fn total(&self) -> f64 {
        let cell = self.xgrid.spacing() * self.agrid.weight();
        self.data.iter().sum::<f64>() * cell
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= c;
        }
        out
    }

    /// self += c·other, entrywise over matching grids.
    pub fn axpy(&mut self, c: f64, other: &PopulationField) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }
}

/// Grid sizes and horizon for a run. The horizon is rounded up to a whole
/// number of lockstep steps, so the final time can exceed `t_end` by less
/// than one Δt.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SimConfig {
    pub n_x: usize,
    pub n_a: usize,
    pub t_end: f64,
    /// Snapshot cadence in steps; 0 keeps only the initial and final fields.
    pub record_every: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.t_end.is_finite() || self.t_end <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "t_end",
                value: self.t_end,
                reason: "horizon must be finite and positive",
            });
        }
        Ok(())
    }
}

/// Precomputed step machinery for one parameter set and grid pair.
pub struct Engine {
    params: ModelParams,
    rates: VitalRates,
    xgrid: CircleGrid,
    agrid: AgeGrid,
    dt: f64,
    n_steps: usize,
    record_every: usize,
    heat: HeatColumn,
    /// Heat over the half cell between birth and the first cell center.
    newborn_heat: HeatColumn,
    /// exp(−∫ μ) across cell k's width, for rows that move to k+1.
    survival_ratio: Vec<f64>,
    /// exp(−∫₀^{Δa/2} μ): survival from birth to the first cell center.
    newborn_factor: f64,
    /// Δa·β(a_k).
    birth_coeff: Vec<f64>,
    kernel_rows: Vec<Vec<(usize, f64)>>,
}

impl Engine {
    pub fn new(params: &ModelParams, rates: &VitalRates, config: &SimConfig) -> Result<Self> {
        check_pair(params, rates)?;
        config.validate()?;
        let xgrid = CircleGrid::new(config.n_x)?;
        let agrid = AgeGrid::new(config.n_a, rates.a_dagger)?;
        let dt = agrid.weight();
        let n_steps = (config.t_end / dt - 1e-12).ceil().max(1.0) as usize;

        let prop = DiffusionPropagator::new(params.delta, xgrid.clone())?;
        let heat = prop.column(dt)?;
        let newborn_heat = prop.column(0.5 * dt)?;

        let mut cum = Vec::with_capacity(config.n_a);
        for k in 0..config.n_a {
            cum.push(rates.cumulative_mu(agrid.center(k))?);
        }
        let survival_ratio: Vec<f64> = (0..config.n_a - 1)
            .map(|k| (-(cum[k + 1] - cum[k])).exp())
            .collect();
        let newborn_factor = (-rates.cumulative_mu(0.5 * dt)?).exp();
        let birth_coeff: Vec<f64> = (0..config.n_a)
            .map(|k| Ok(dt * rates.beta(agrid.center(k))?))
            .collect::<Result<_>>()?;
        let kernel_rows = (0..config.n_x)
            .map(|i| kernel_row(&xgrid, i, params.eta, params.kernel_wrap))
            .collect();

        Ok(Engine {
            params: params.clone(),
            rates: rates.clone(),
            xgrid,
            agrid,
            dt,
            n_steps,
            record_every: config.record_every,
            heat,
            newborn_heat,
            survival_ratio,
            newborn_factor,
            birth_coeff,
            kernel_rows,
        })
    }

    pub fn xgrid(&self) -> &CircleGrid {
        &self.xgrid
    }

    pub fn agrid(&self) -> &AgeGrid {
        &self.agrid
    }

    pub fn rates(&self) -> &VitalRates {
        &self.rates
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    fn check_field(&self, field: &PopulationField) -> Result<()> {
        if field.xgrid.len() != self.xgrid.len() || field.agrid.len() != self.agrid.len() {
            return Err(Error::Mismatch(format!(
                "field on a {}x{} grid fed to a {}x{} engine",
                field.agrid.len(),
                field.xgrid.len(),
                self.agrid.len(),
                self.xgrid.len()
            )));
        }
        Ok(())
    }

    /// Newborn profile b(x) = ∫ β(a) ∫ K(x, s) p(a, s) ds da from the given
    /// field, using the cached kernel geometry.
    pub fn boundary(&self, field: &PopulationField) -> Result<Vec<f64>> {
        self.check_field(field)?;
        let n = self.xgrid.len();
        // Age-aggregate first: the kernel window applies to one profile.
        let mut fertile = vec![0.0; n];
        for (k, &bc) in self.birth_coeff.iter().enumerate() {
            if bc == 0.0 {
                continue;
            }
            for (f, &p) in fertile.iter_mut().zip(field.row(k)) {
                *f += bc * p;
            }
        }
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(j, w) in &self.kernel_rows[i] {
                acc += w * fertile[j];
            }
            *o = acc;
        }
        Ok(out)
    }

    /// Advance one lockstep Δt = Δa.
    pub fn step(&self, field: &PopulationField) -> Result<PopulationField> {
        self.check_field(field)?;
        let b = self.boundary(field)?;
        let n_a = self.agrid.len();
        let n = self.xgrid.len();
        let mut out = PopulationField::zero(self.xgrid.clone(), self.agrid.clone());
        out.time = field.time + self.dt;

        let mut buf = vec![0.0; n];
        for k in 0..n_a - 1 {
            let r = self.survival_ratio[k];
            for (bv, &p) in buf.iter_mut().zip(field.row(k)) {
                *bv = r * p;
            }
            self.heat.apply_into(&buf, out.row_mut(k + 1));
        }
        self.newborn_heat.apply_into(&b, out.row_mut(0));
        for o in out.row_mut(0).iter_mut() {
            *o *= self.newborn_factor;
        }

        if !out.data.iter().all(|v| v.is_finite()) {
            return Err(Error::Overflow { t: out.time });
        }
        Ok(out)
    }

    /// Run from the initial field to the horizon, recording norms every step
    /// and snapshots on the configured cadence.
    pub fn run(&self, p0: PopulationField) -> Result<Trajectory> {
        self.check_field(&p0)?;
        let mut times = Vec::with_capacity(self.n_steps + 1);
        let mut l2 = Vec::with_capacity(self.n_steps + 1);
        let mut total = Vec::with_capacity(self.n_steps + 1);
        let mut snapshots = Vec::new();
        let mut snapshot_steps = Vec::new();

        let mut current = p0;
        times.push(current.time);
        l2.push(current.l2_norm());
        total.push(current.total());
        snapshots.push(current.clone());
        snapshot_steps.push(0);

        for s in 1..=self.n_steps {
            current = self.step(&current)?;
            times.push(current.time);
            l2.push(current.l2_norm());
            total.push(current.total());
            let on_cadence = self.record_every > 0 && s % self.record_every == 0;
            if (on_cadence || s == self.n_steps) && snapshot_steps.last() != Some(&s) {
                snapshots.push(current.clone());
                snapshot_steps.push(s);
            }
        }

        Ok(Trajectory {
            times,
            l2,
            total,
            snapshots,
            snapshot_steps,
        })
    }
}

/// Newborn profile for a standalone field, assembling the kernel geometry on
/// the fly. The engine's cached path computes the same sums.
pub fn renewal_boundary(
    field: &PopulationField,
    params: &ModelParams,
    rates: &VitalRates,
) -> Result<Vec<f64>> {
    check_pair(params, rates)?;
    if (field.agrid.a_dagger() - rates.a_dagger).abs() > 1e-12 * rates.a_dagger {
        return Err(Error::Mismatch(format!(
            "field ages span {} but rates span {}",
            field.agrid.a_dagger(),
            rates.a_dagger
        )));
    }
    let n = field.xgrid.len();
    let da = field.agrid.weight();
    let mut fertile = vec![0.0; n];
    for k in 0..field.agrid.len() {
        let bc = da * rates.beta(field.agrid.center(k))?;
        if bc == 0.0 {
            continue;
        }
        for (f, &p) in fertile.iter_mut().zip(field.row(k)) {
            *f += bc * p;
        }
    }
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, w) in kernel_row(&field.xgrid, i, params.eta, params.kernel_wrap) {
            acc += w * fertile[j];
        }
        *o = acc;
    }
    Ok(out)
}

/// Norm history and sampled fields from one run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub l2: Vec<f64>,
    pub total: Vec<f64>,
    pub snapshots: Vec<PopulationField>,
    pub snapshot_steps: Vec<usize>,
}

impl Trajectory {
    /// Least-squares slope of ln ‖p(t)‖ over the trailing fraction of the
    /// samples. A vanished norm inside the window is reported as extinction.
    pub fn growth_rate(&self, tail_fraction: f64) -> Result<f64> {
        if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "tail_fraction",
                value: tail_fraction,
                reason: "window fraction must lie in (0, 1]",
            });
        }
        let n = self.times.len();
        let take = ((n as f64 * tail_fraction).ceil() as usize).clamp(2, n);
        if n < 2 {
            return Err(Error::Degenerate(
                "growth rate needs at least two recorded norms".to_string(),
            ));
        }
        let start = n - take;
        let mut logs = Vec::with_capacity(take);
        for i in start..n {
            if self.l2[i] <= 0.0 {
                return Err(Error::Extinct { t: self.times[i] });
            }
            logs.push(self.l2[i].ln());
        }
        let ts = &self.times[start..n];
        let tbar = ts.iter().sum::<f64>() / take as f64;
        let ybar = logs.iter().sum::<f64>() / take as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for (t, y) in ts.iter().zip(&logs) {
            num += (t - tbar) * (y - ybar);
            den += (t - tbar) * (t - tbar);
        }
        if den == 0.0 {
            return Err(Error::Degenerate(
                "growth-rate window has no time extent".to_string(),
            ));
        }
        Ok(num / den)
    }
}

/// Predicted large-time shape and the measured approach toward it.
#[derive(Debug, Clone)]
pub struct ProfileCheck {
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    /// The rank-one limit q(a, x): the field that e^{−λ₀t}·p(t) approaches.
    pub limit: PopulationField,
}

/// Compare a trajectory against the rank-one asymptotic profile.
///
/// The limit is q(a, x) = e^{−λ₀a}·survival(a)·(e^{δΔa} C[ŵ])(x), where C is
/// the residue projection and ŵ the λ₀-discounted birth flow generated by the
/// initial field evolving freely:
///
///   ŵ(x) = ∫∫_{a ≥ a₀} e^{−λ₀(a−a₀)} β(a) (surv(a)/surv(a₀))
///          ·(K_w e^{δΔ(a−a₀)} p₀(a₀, ·))(x) da da₀.
///
/// Each recorded snapshot contributes e(t) = ‖e^{−λ₀t}p(t) − q‖ / ‖q‖.
pub fn asymptotic_profile_check(
    engine: &Engine,
    p0: &PopulationField,
    spec: &SpectralResult,
) -> Result<ProfileCheck> {
    engine.check_field(p0)?;
    if spec.n_x != engine.xgrid.len() || spec.n_a != engine.agrid.len() {
        return Err(Error::Mismatch(format!(
            "spectral data on a {}x{} grid against a {}x{} engine",
            spec.n_a,
            spec.n_x,
            engine.agrid.len(),
            engine.xgrid.len()
        )));
    }
    let limit = limit_profile(engine, p0, spec)?;
    let scale = limit.l2_norm();
    if scale == 0.0 {
        return Err(Error::Degenerate(
            "asymptotic profile vanishes; the initial data is invisible to the renewal flow"
                .to_string(),
        ));
    }

    let traj = engine.run(p0.clone())?;
    let mut times = Vec::with_capacity(traj.snapshots.len());
    let mut errors = Vec::with_capacity(traj.snapshots.len());
    for snap in &traj.snapshots {
        let mut diff = snap.scaled((-spec.lambda0 * snap.time).exp());
        diff.axpy(-1.0, &limit);
        times.push(snap.time);
        errors.push(diff.l2_norm() / scale);
    }
    Ok(ProfileCheck {
        times,
        errors,
        limit,
    })
}

/// The rank-one limit field q produced by the residue projection of the
/// initial data's discounted birth flow.
pub fn limit_profile(
    engine: &Engine,
    p0: &PopulationField,
    spec: &SpectralResult,
) -> Result<PopulationField> {
    engine.check_field(p0)?;
    if (spec.a_dagger - engine.agrid.a_dagger()).abs() > 1e-12 * engine.agrid.a_dagger() {
        return Err(Error::Mismatch(format!(
            "spectral data spans ages to {} but the engine to {}",
            spec.a_dagger,
            engine.agrid.a_dagger()
        )));
    }
    let rates = &engine.rates;
    let n = engine.xgrid.len();
    let n_a = engine.agrid.len();
    let da = engine.agrid.weight();
    let lambda0 = spec.lambda0;
    let prop = DiffusionPropagator::new(engine.params.delta, engine.xgrid.clone())?;

    let mut beta = Vec::with_capacity(n_a);
    let mut surv = Vec::with_capacity(n_a);
    for k in 0..n_a {
        let a = engine.agrid.center(k);
        beta.push(rates.beta(a)?);
        surv.push(rates.survival(a)?);
    }

    // ŵ aggregated by age offset d = k − m, so each heat column is built
    // once. The diagonal d = 0 carries half weight: births inside the source
    // cell average half its width.
    let mut u = vec![0.0; n];
    let mut acc = vec![0.0; n];
    for d in 0..n_a {
        acc.fill(0.0);
        let mut any = false;
        let sigma = if d == 0 { 0.5 * da } else { da };
        for m in 0..n_a - d {
            let k = m + d;
            if surv[m] == 0.0 || beta[k] == 0.0 {
                continue;
            }
            let coef =
                da * sigma * (-lambda0 * d as f64 * da).exp() * beta[k] * surv[k] / surv[m];
            if coef == 0.0 {
                continue;
            }
            any = true;
            for (a, &p) in acc.iter_mut().zip(p0.row(m)) {
                *a += coef * p;
            }
        }
        if !any {
            continue;
        }
        let spread = if d == 0 {
            acc.clone()
        } else {
            prop.column(d as f64 * da)?.apply(&acc)
        };
        for (uv, s) in u.iter_mut().zip(spread) {
            *uv += s;
        }
    }
    let mut w_hat = vec![0.0; n];
    for (i, wv) in w_hat.iter_mut().enumerate() {
        let mut a = 0.0;
        for &(j, w) in &engine.kernel_rows[i] {
            a += w * u[j];
        }
        *wv = a;
    }

    let inner: f64 = spec.psi.iter().zip(&w_hat).map(|(p, v)| p * v).sum();
    let c = inner * spec.residue_scale;

    let mut limit = PopulationField::zero(engine.xgrid.clone(), engine.agrid.clone());
    let seed: Vec<f64> = spec.phi.iter().map(|p| p * c).collect();
    for k in 0..n_a {
        let a = engine.agrid.center(k);
        let spread = prop.column(a)?.apply(&seed);
        let factor = (-lambda0 * a).exp() * surv[k];
        let row = limit.row_mut(k);
        for (r, s) in row.iter_mut().zip(spread) {
            *r = factor * s;
        }
    }
    Ok(limit)
}
