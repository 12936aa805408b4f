//! Continuum models for coarse-grained density profiles, with explicit
//! forward solvers and least-squares fitters.
//!
//! Both solvers are written in conservative flux form with zero flux through
//! the two outer faces, so total mass changes only through the loss term.
//!
//! - Decay–diffusion: `∂_t N = −γ (1 − u) N + D ∂_u² N` on `u_j = j / L`.
//! - Drift–diffusion: `∂_t N = −v ∂_x N + Σ_{j=2..k} D_j ∂_x^j N` in site units.
//!
//! Advection is first-order upwind. The second derivative uses the compact
//! three-point stencil. Orders three and up take the compact face difference
//! of repeated central first differences (reflective ghost nodes), which keeps
//! the positive fourth-order coefficients seen in practice bounded.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time discretization: one recorded frame per layer, `substeps` Euler steps in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt_layer: f64,
    pub substeps: usize,
}

impl TimeGrid {
    pub fn dt(&self) -> f64 {
        self.dt_layer / self.substeps as f64
    }
}

/// `v_eff = p_swap · Δx / Δt`.
pub fn effective_velocity(p_swap: f64, dx: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::InvalidSpec(format!("Δt must be positive, got {dt}")));
    }
    Ok(p_swap * dx / dt)
}

fn check_profile(n0: &[f64]) -> Result<()> {
    if n0.len() < 2 {
        return Err(Error::ShapeMismatch("profile needs at least two sites".into()));
    }
    Ok(())
}

/// Largest stable explicit step for diffusion `d` on spacing `dx`.
fn diffusion_limit(d: f64, dx: f64) -> f64 {
    if d <= 0.0 {
        f64::INFINITY
    } else {
        0.5 * dx * dx / d
    }
}

/// Adds `D (N_{j+1} − N_j)/Δx` face fluxes (diffusive, sign included) to `flux`.
fn add_diffusive_flux(n: &[f64], d: f64, dx: f64, flux: &mut [f64]) {
    for (f, w) in flux.iter_mut().zip(n.windows(2)) {
        *f -= d * (w[1] - w[0]) / dx;
    }
}

/// Central first difference with reflective ghost nodes.
fn central_difference(n: &[f64], dx: f64) -> Vec<f64> {
    let last = n.len() - 1;
    (0..n.len())
        .map(|j| {
            let left = n[j.saturating_sub(1)];
            let right = n[(j + 1).min(last)];
            (right - left) / (2.0 * dx)
        })
        .collect()
}

/// `N ← N − Δt/Δx (F_{j+1/2} − F_{j−1/2})` with `F` zero on the outer faces.
fn apply_flux(n: &mut [f64], flux: &[f64], dt: f64, dx: f64) {
    let len = n.len();
    for j in 0..len {
        let right = if j + 1 < len { flux[j] } else { 0.0 };
        let left = if j > 0 { flux[j - 1] } else { 0.0 };
        n[j] -= dt / dx * (right - left);
    }
}

/// Parameters of the decay–diffusion model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayDiffusion {
    pub gamma: f64,
    pub d: f64,
}

impl DecayDiffusion {
    /// Per-site loss rates `γ (1 − u_j)` with `u_j = j / L`.
    pub fn loss_profile(&self, sites: usize) -> Vec<f64> {
        (0..sites).map(|j| self.gamma * (1.0 - j as f64 / sites as f64)).collect()
    }

    /// Largest stable explicit step on `sites` sites.
    pub fn max_stable_dt(&self, sites: usize) -> f64 {
        let dx = 1.0 / sites as f64;
        let gmax = self.gamma.abs();
        let loss = if gmax > 0.0 { 1.0 / gmax } else { f64::INFINITY };
        diffusion_limit(self.d, dx).min(loss)
    }
}

/// Loss–diffusion with an arbitrary per-site loss profile, `layers` frames
/// after the initial one, on `u_j = j / L` (`Δu = 1/L`).
pub fn simulate_loss_diffusion(loss: &[f64], d: f64, n0: &[f64], layers: usize, time: TimeGrid) -> Result<Vec<Vec<f64>>> {
    check_profile(n0)?;
    if loss.len() != n0.len() {
        return Err(Error::DimensionMismatch { expected: n0.len(), got: loss.len() });
    }
    if d < 0.0 {
        return Err(Error::InvalidSpec(format!("diffusion constant must be non-negative, got {d}")));
    }
    loss_diffusion_unchecked(loss, d, n0, layers, time)
}

fn loss_diffusion_unchecked(loss: &[f64], d: f64, n0: &[f64], layers: usize, time: TimeGrid) -> Result<Vec<Vec<f64>>> {
    let sites = n0.len();
    let dx = 1.0 / sites as f64;
    let dt = time.dt();
    let max_loss = loss.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    if dt > diffusion_limit(d.abs(), dx) || dt * max_loss > 1.0 {
        return Err(Error::UnstableStep(format!(
            "Δt = {dt:e} violates D·Δt/Δu² ≤ 1/2 or γ·Δt ≤ 1 (D = {d}, max loss = {max_loss}, Δu = {dx})"
        )));
    }
    let mut n = n0.to_vec();
    let mut flux = vec![0.0; sites - 1];
    let mut frames = Vec::with_capacity(layers + 1);
    frames.push(n.clone());
    for _ in 0..layers {
        for _ in 0..time.substeps {
            flux.iter_mut().for_each(|f| *f = 0.0);
            add_diffusive_flux(&n, d, dx, &mut flux);
            apply_flux(&mut n, &flux, dt, dx);
            // loss evaluated on the post-flux state; first order either way
            for (v, l) in n.iter_mut().zip(loss) {
                *v -= dt * l * *v;
            }
        }
        frames.push(n.clone());
    }
    Ok(frames)
}

pub fn simulate_decay_diffusion(model: DecayDiffusion, n0: &[f64], layers: usize, time: TimeGrid) -> Result<Vec<Vec<f64>>> {
    simulate_loss_diffusion(&model.loss_profile(n0.len()), model.d, n0, layers, time)
}

/// Parameters of the order-`k` drift–diffusion model; `coeffs[j − 2] = D_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftDiffusion {
    pub v: f64,
    pub coeffs: Vec<f64>,
}

impl DriftDiffusion {
    pub fn new(v: f64, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.len() > 3 {
            return Err(Error::InvalidSpec(format!(
                "drift–diffusion order must be 2, 3 or 4, got {}",
                coeffs.len() + 1
            )));
        }
        Ok(DriftDiffusion { v, coeffs })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() + 1
    }

    /// Conservative step bound `Δt · (|v|/Δx + Σ_j 2^j |D_j| / Δx^j) ≤ 1`.
    pub fn max_stable_dt(&self, dx: f64) -> f64 {
        let rate = self.v.abs() / dx
            + self
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| 2f64.powi(i as i32 + 2) * c.abs() / dx.powi(i as i32 + 2))
                .sum::<f64>();
        if rate > 0.0 {
            1.0 / rate
        } else {
            f64::INFINITY
        }
    }
}

/// Drift–diffusion on the lattice with spacing `dx` (site units: `dx = 1`).
pub fn simulate_drift_diffusion(
    model: &DriftDiffusion,
    n0: &[f64],
    layers: usize,
    dx: f64,
    time: TimeGrid,
) -> Result<Vec<Vec<f64>>> {
    check_profile(n0)?;
    DriftDiffusion::new(model.v, model.coeffs.clone())?;
    let dt = time.dt();
    if dt > model.max_stable_dt(dx) {
        return Err(Error::UnstableStep(format!(
            "Δt = {dt:e} exceeds the explicit bound {:e} for v = {}, D = {:?}",
            model.max_stable_dt(dx),
            model.v,
            model.coeffs
        )));
    }
    let sites = n0.len();
    let mut n = n0.to_vec();
    let mut flux = vec![0.0; sites - 1];
    let mut frames = Vec::with_capacity(layers + 1);
    frames.push(n.clone());
    for _ in 0..layers {
        for _ in 0..time.substeps {
            for (f, w) in flux.iter_mut().zip(n.windows(2)) {
                *f = if model.v >= 0.0 { model.v * w[0] } else { model.v * w[1] };
            }
            add_diffusive_flux(&n, model.coeffs[0], dx, &mut flux);
            let mut g = n.clone();
            for &c in &model.coeffs[1..] {
                g = central_difference(&g, dx);
                add_diffusive_flux(&g, c, dx, &mut flux);
            }
            apply_flux(&mut n, &flux, dt, dx);
        }
        frames.push(n.clone());
    }
    Ok(frames)
}

/// Divides every frame by its sum.
pub fn normalize_frames(data: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    data.iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            if total.abs() <= crate::observables::VANISHING_DENSITY {
                return Err(Error::VanishingDensity { total });
            }
            Ok(row.iter().map(|v| v / total).collect())
        })
        .collect()
}

fn check_rectangular(data: &[Vec<f64>]) -> Result<usize> {
    let sites = data.first().map_or(0, Vec::len);
    if data.len() < 2 || sites < 2 || data.iter().any(|r| r.len() != sites) {
        return Err(Error::ShapeMismatch(
            "space–time data must be rectangular with at least two frames and two sites".into(),
        ));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::ShapeMismatch("space–time data contains non-finite values".into()));
    }
    Ok(sites)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    /// One-sigma estimates from `σ² (JᵀJ)⁻¹`; NaN when the normal matrix is singular.
    pub uncertainties: Vec<f64>,
    /// Euclidean norm of the residual vector at `params`.
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.params[i])
    }

    /// Aligned text report, one parameter per line.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for ((n, p), u) in self.names.iter().zip(&self.params).zip(&self.uncertainties) {
            out.push_str(&format!("{n:>8} = {p:>16.9e} ± {u:.3e}\n"));
        }
        out.push_str(&format!(
            "residual = {:.6e} (initial {:.6e})\niterations = {}\nconverged = {}\n",
            self.residual_norm, self.initial_residual_norm, self.iterations, self.converged
        ));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Converged once the relative parameter step falls below this.
    pub step_tol: f64,
    pub initial: Option<Vec<f64>>,
    /// Euler substeps per layer; derived from generous parameter caps when absent.
    pub substeps: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iterations: 500, step_tol: 1e-6, initial: None, substeps: None }
    }
}

/// Levenberg–Marquardt with a central-difference Jacobian. Trial points are
/// projected onto the box `bounds`; trial points the model rejects count as
/// failed steps.
fn levenberg_marquardt(
    residual: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    x0: &[f64],
    bounds: &[(f64, f64)],
    opts: &FitOptions,
) -> Result<(Vec<f64>, Vec<f64>, f64, f64, usize, bool)> {
    let p = x0.len();
    let project = |x: &mut Vec<f64>| x.iter_mut().zip(bounds).for_each(|(v, (lo, hi))| *v = v.clamp(*lo, *hi));
    let mut x = x0.to_vec();
    project(&mut x);
    let mut r = residual(&x)?;
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let initial = cost.sqrt();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    let rows = r.len();
    let mut jac = DMatrix::zeros(rows, p);
    let jacobian = |x: &[f64]| -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(rows, p);
        for k in 0..p {
            let h = 1e-6 * x[k].abs().max(1e-3);
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[k] += h;
            dn[k] -= h;
            let (ru, rd) = (residual(&up)?, residual(&dn)?);
            for i in 0..ru.len() {
                j[(i, k)] = (ru[i] - rd[i]) / (2.0 * h);
            }
        }
        Ok(j)
    };

    while iterations < opts.max_iterations {
        iterations += 1;
        if cost <= 1e-30 {
            converged = true;
            break;
        }
        jac = jacobian(&x)?;
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * DVector::from_vec(r.clone());
        if g.amax() <= 1e-30 {
            converged = true;
            break;
        }
        let scale = jtj.diagonal().iter().fold(0.0f64, |a, v| a.max(*v)).max(1e-300);
        let mut accepted = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for k in 0..p {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12 * scale);
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial);
            let trial_cost = match residual(&trial) {
                Ok(rt) => Some((rt.iter().map(|v| v * v).sum::<f64>(), rt)),
                Err(Error::UnstableStep(_)) => None,
                Err(e) => return Err(e),
            };
            match trial_cost {
                Some((c, rt)) if c < cost => {
                    let step: f64 = trial.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    let size: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    x = trial;
                    r = rt;
                    cost = c;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    if step <= opts.step_tol * (size + opts.step_tol) {
                        converged = true;
                    }
                    break;
                }
                _ => lambda *= 4.0,
            }
        }
        if converged {
            break;
        }
        if !accepted {
            // no downhill step exists at any damping: a local minimum to working precision
            converged = true;
            break;
        }
    }
    let uncertainties = {
        let jtj = jac.transpose() * &jac;
        let dof = (r.len() as f64 - p as f64).max(1.0);
        let sigma2 = cost / dof;
        match jtj.try_inverse() {
            Some(inv) => (0..p).map(|k| (sigma2 * inv[(k, k)]).max(0.0).sqrt()).collect(),
            None => vec![f64::NAN; p],
        }
    };
    Ok((x, uncertainties, cost.sqrt(), initial, iterations, converged))
}

fn flatten_tail(frames: &[Vec<f64>]) -> impl Iterator<Item = f64> + '_ {
    frames[1..].iter().flatten().copied()
}

/// Fits `(γ, D)` to a space–time profile with frames `dt_layer` apart.
/// Frames are normalized to unit sum before and after every forward solve.
pub fn fit_decay_diffusion(data: &[Vec<f64>], dt_layer: f64, opts: &FitOptions) -> Result<FitResult> {
    let sites = check_rectangular(data)?;
    let target = normalize_frames(data)?;
    let layers = target.len() - 1;
    let dx = 1.0 / sites as f64;
    let t_total = dt_layer * layers as f64;
    let guess = opts.initial.clone().unwrap_or_else(|| vec![1.0 / t_total, dx * dx / dt_layer]);
    if guess.len() != 2 {
        return Err(Error::InvalidSpec("decay–diffusion fit takes two initial values (γ, D)".into()));
    }
    // generous caps fix the substep count for the whole fit
    let cap = DecayDiffusion { gamma: (100.0 * guess[0].abs()).max(100.0 / t_total), d: (100.0 * guess[1].abs()).max(10.0) };
    let substeps = opts.substeps.unwrap_or((dt_layer / cap.max_stable_dt(sites)).ceil().max(1.0) as usize);
    let time = TimeGrid { dt_layer, substeps };
    let n0 = target[0].clone();
    let observed: Vec<f64> = flatten_tail(&target).collect();
    let residual = |x: &[f64]| -> Result<Vec<f64>> {
        let m = DecayDiffusion { gamma: x[0], d: x[1] };
        let frames = normalize_frames(&loss_diffusion_unchecked(&m.loss_profile(sites), m.d, &n0, layers, time)?)?;
        Ok(flatten_tail(&frames).zip(&observed).map(|(a, b)| a - b).collect())
    };
    // keep the finite-difference stencil inside the stable region
    let bounds = [(0.0, 0.9 * cap.gamma), (0.0, 0.9 * cap.d)];
    finish_fit(&residual, &guess, &bounds, opts, vec!["gamma".into(), "D".into()])
}

/// Fits `(v, D_2..D_k)` in site units (`Δx = 1`, one time unit per layer).
pub fn fit_drift_diffusion(data: &[Vec<f64>], k: usize, opts: &FitOptions) -> Result<FitResult> {
    if !(2..=4).contains(&k) {
        return Err(Error::InvalidSpec(format!("drift–diffusion order must be 2, 3 or 4, got {k}")));
    }
    check_rectangular(data)?;
    let target = normalize_frames(data)?;
    let layers = target.len() - 1;
    let guess = match &opts.initial {
        Some(g) if g.len() == k => g.clone(),
        Some(g) => {
            return Err(Error::InvalidSpec(format!("expected {k} initial values, got {}", g.len())));
        }
        None => {
            let com = |row: &Vec<f64>| row.iter().enumerate().map(|(x, n)| x as f64 * n).sum::<f64>();
            let v0 = (com(&target[layers]) - com(&target[0])) / layers as f64;
            let mut g = vec![v0, 0.5];
            g.resize(k, 0.0);
            g
        }
    };
    let cap_v = (10.0 * guess[0].abs()).max(2.0);
    let cap_d = guess[1..].iter().fold(25.0f64, |a, d| a.max(10.0 * d.abs()));
    let cap = DriftDiffusion { v: cap_v, coeffs: vec![cap_d; k - 1] };
    let substeps = opts.substeps.unwrap_or((1.0 / cap.max_stable_dt(1.0)).ceil().max(1.0) as usize);
    let time = TimeGrid { dt_layer: 1.0, substeps };
    let n0 = target[0].clone();
    let observed: Vec<f64> = flatten_tail(&target).collect();
    let residual = |x: &[f64]| -> Result<Vec<f64>> {
        let m = DriftDiffusion { v: x[0], coeffs: x[1..].to_vec() };
        let frames = normalize_frames(&simulate_drift_diffusion(&m, &n0, layers, 1.0, time)?)?;
        Ok(flatten_tail(&frames).zip(&observed).map(|(a, b)| a - b).collect())
    };
    let mut bounds = vec![(-0.9 * cap_v, 0.9 * cap_v)];
    bounds.push((0.0, 0.9 * cap_d));
    bounds.resize(k, (-0.9 * cap_d, 0.9 * cap_d));
    let mut names = vec!["v".to_string()];
    names.extend((2..=k).map(|j| format!("D{j}")));
    finish_fit(&residual, &guess, &bounds, opts, names)
}

fn finish_fit(
    residual: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    guess: &[f64],
    bounds: &[(f64, f64)],
    opts: &FitOptions,
    names: Vec<String>,
) -> Result<FitResult> {
    // the null model reproduces static data exactly
    let null = vec![0.0; guess.len()];
    let r0 = residual(&null)?;
    let null_norm = r0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if null_norm <= 1e-12 {
        return Ok(FitResult {
            names,
            uncertainties: vec![0.0; guess.len()],
            params: null,
            residual_norm: null_norm,
            initial_residual_norm: null_norm,
            iterations: 0,
            converged: true,
        });
    }
    let (params, uncertainties, residual_norm, initial_residual_norm, iterations, converged) =
        levenberg_marquardt(residual, guess, bounds, opts)?;
    if !residual_norm.is_finite() {
        return Err(Error::NonConvergence("residual became non-finite".into()));
    }
    Ok(FitResult { names, params, uncertainties, residual_norm, initial_residual_norm, iterations, converged })
}
