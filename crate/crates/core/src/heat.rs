//! Heat equations along a stored flow.
//!
//! Forward: `∂_t u = Δ_g u - X·∇u = g^{ij} ∇̃_i ∇̃_j u`.
//! Conjugate, solved in `s = T - t`:
//! `∂_s v = Δ_g v + X·∇v - R v = g^{ij} ∇̃_i ∇̃_j v + 2 X·∇v - R v`.
//! With these signs `∫ u v dμ_{g(t)}` is constant in `t`, `∫ v dμ_{g(t)}` is
//! conserved and `∫ (R - a) v dμ_{g(t)}` is non-decreasing.
//!
//! Both solvers use Heun substeps between stored states with the metric
//! interpolated linearly in time.

use crate::curvature::TestFunction;
use crate::error::{Error, Result};
use crate::fields::bilipschitz_constants;
use crate::flow::{deturck_vector, FlowTrajectory};
use crate::geometry;
use crate::grid::Grid;
use crate::linalg::Mat;
use crate::metric::{BackgroundGeometry, MetricField};
use crate::par;
use crate::tensor::ScalarField;

/// Fraction of the explicit stability limit used for substeps.
const HEAT_CFL: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Scalar fields aligned with a trajectory's stored states.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarEvolution {
    pub direction: Direction,
    times: Vec<f64>,
    fields: Vec<ScalarField>,
    min_value: f64,
    substeps: usize,
}

impl ScalarEvolution {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.fields
    }

    /// Smallest value seen at any substep.
    pub fn min_value(&self) -> f64 {
        self.min_value
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Errors when the minimum dips below `-tol · reference`.
    pub fn check_undershoot(&self, reference: f64, tol: f64) -> Result<()> {
        let limit = tol * reference;
        if self.min_value < -limit {
            return Err(Error::Undershoot {
                undershoot: -self.min_value,
                tolerance: limit,
            });
        }
        Ok(())
    }
}

/// Per-time coefficients of the scalar operator.
struct Coeffs {
    inv: Vec<(Mat, f64)>,
    x: Option<Vec<f64>>,
    r: Option<Vec<f64>>,
}

fn coeffs(g: &MetricField, bg: &BackgroundGeometry, conjugate: bool) -> Result<Coeffs> {
    let inv = g.inverses()?;
    if !conjugate {
        return Ok(Coeffs {
            inv,
            x: None,
            r: None,
        });
    }
    let x = deturck_vector(g, bg)?.into_data();
    let r = geometry::curvature_tensors(g)?.scalar.into_data();
    Ok(Coeffs {
        inv,
        x: Some(x),
        r: Some(r),
    })
}

/// `g^{ij} ∇̃_i ∇̃_j u (+ 2 X·∇u - R u)`.
fn apply(grid: &Grid, bg: &BackgroundGeometry, k: &Coeffs, u: &[f64]) -> Vec<f64> {
    let n = grid.n();
    let h = grid.spacing().to_vec();
    par::map(grid.cell_count(), |c| {
        let mut du = [0.0; 3];
        for (a, d) in du.iter_mut().enumerate().take(n) {
            *d = (u[grid.shift(c, a, 1)] - u[grid.shift(c, a, -1)]) * 0.5 / h[a];
        }
        let gi = &k.inv[c].0;
        let mut v = trace_hessian(grid, &h, gi, u, c);
        if !bg.is_flat() {
            let gc = bg.christoffels().cell(c);
            for i in 0..n {
                for j in 0..n {
                    for (m, d) in du.iter().enumerate().take(n) {
                        v -= gi[i][j] * gc[(m * n + i) * n + j] * d;
                    }
                }
            }
        }
        if let Some(x) = &k.x {
            // upwinded so the transport term cannot create new minima
            for a in 0..n {
                let b = 2.0 * x[c * n + a];
                let d = if b > 0.0 {
                    u[grid.shift(c, a, 1)] - u[c]
                } else {
                    u[c] - u[grid.shift(c, a, -1)]
                };
                v += b * d / h[a];
            }
        }
        if let Some(r) = &k.r {
            v -= r[c] * u[c];
        }
        v
    })
}

/// `a^{ij} ∂_i ∂_j u` with a positive-coefficient stencil: each mixed
/// derivative uses the diagonal pair of corners matching the sign of `a^{ij}`,
/// so the scheme is monotone whenever `a` is diagonally dominant.
fn trace_hessian(grid: &Grid, h: &[f64], a: &Mat, u: &[f64], c: usize) -> f64 {
    let n = grid.n();
    let mut v = 0.0;
    for i in 0..n {
        let second = u[grid.shift(c, i, 1)] - 2.0 * u[c] + u[grid.shift(c, i, -1)];
        v += a[i][i] * second / (h[i] * h[i]);
        for j in i + 1..n {
            let b = a[i][j];
            if b == 0.0 {
                continue;
            }
            let s = if b > 0.0 { 1 } else { -1 };
            let pp = grid.shift(grid.shift(c, i, 1), j, s);
            let mm = grid.shift(grid.shift(c, i, -1), j, -s);
            let axial = u[grid.shift(c, i, 1)]
                + u[grid.shift(c, i, -1)]
                + u[grid.shift(c, j, 1)]
                + u[grid.shift(c, j, -1)];
            let mixed = s as f64 * (u[pp] + u[mm] + 2.0 * u[c] - axial) / (2.0 * h[i] * h[j]);
            v += 2.0 * b * mixed;
        }
    }
    v
}

/// Explicit step bound for the scalar operator at a state.
fn step_bound(g: &MetricField, bg: &BackgroundGeometry, conjugate: bool) -> Result<f64> {
    let grid = g.grid();
    let lam = bilipschitz_constants(g, bg)?.lambda_min;
    let mut dt = HEAT_CFL * grid.min_spacing().powi(2) * lam / grid.n() as f64;
    if conjugate {
        let r = geometry::curvature_tensors(g)?.scalar.sup_abs();
        let x = deturck_vector(g, bg)?.max_abs();
        if r > 0.0 {
            dt = dt.min(0.5 / r);
        }
        if x > 0.0 {
            // keeps the central transport term inside Heun's stability region
            dt = dt.min(0.5 * grid.min_spacing() / (2.0 * x * grid.n() as f64));
        }
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Cfl { dt, bound: 0.0 });
    }
    Ok(dt)
}

fn integrate(
    traj: &FlowTrajectory,
    bg: &BackgroundGeometry,
    start: &ScalarField,
    direction: Direction,
) -> Result<ScalarEvolution> {
    let grid = *traj.grid();
    if start.grid() != &grid {
        return Err(Error::InvalidInput(
            "initial scalar field on a different grid".into(),
        ));
    }
    let conjugate = direction == Direction::Backward;
    let states = traj.states();
    let times: Vec<f64> = states.iter().map(|s| s.t).collect();
    let bounds = states
        .iter()
        .map(|s| step_bound(&s.metric, bg, conjugate))
        .collect::<Result<Vec<f64>>>()?;
    let last = states.len() - 1;
    let order: Vec<usize> = match direction {
        Direction::Forward => (0..=last).collect(),
        Direction::Backward => (0..=last).rev().collect(),
    };

    let mut u = start.data().to_vec();
    let mut min_value = par::min(&u);
    let mut substeps = 0;
    let mut out: Vec<Option<ScalarField>> = vec![None; states.len()];
    out[order[0]] = Some(start.clone());
    let metric_at = |t: f64| traj.metric_at(t);
    for w in order.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ta, tb) = (times[a], times[b]);
        let span = (tb - ta).abs();
        let bound = bounds[a].min(bounds[b]);
        let m = (span / bound).ceil().max(1.0) as usize;
        let mut k_cur = coeffs(&metric_at(ta), bg, conjugate)?;
        for j in 0..m {
            let t1 = ta + (tb - ta) * (j + 1) as f64 / m as f64;
            let t0 = ta + (tb - ta) * j as f64 / m as f64;
            let dt = (t1 - t0).abs();
            let k_next = coeffs(&metric_at(t1), bg, conjugate)?;
            let f1 = apply(&grid, bg, &k_cur, &u);
            let mid: Vec<f64> = u.iter().zip(&f1).map(|(x, f)| x + dt * f).collect();
            let f2 = apply(&grid, bg, &k_next, &mid);
            for ((x, p), q) in u.iter_mut().zip(&f1).zip(&f2) {
                *x += 0.5 * dt * (p + q);
            }
            if let Some(c) = u.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { cell: c });
            }
            min_value = min_value.min(par::min(&u));
            k_cur = k_next;
            substeps += 1;
        }
        out[b] = Some(ScalarField::from_data(grid, u.clone())?);
    }
    Ok(ScalarEvolution {
        direction,
        times,
        fields: out
            .into_iter()
            .map(|f| f.expect("every state visited"))
            .collect(),
        min_value,
        substeps,
    })
}

/// Solves `∂_t u = Δ_g u - X·∇u` forward from the first stored state.
pub fn solve_heat_under_flow(
    traj: &FlowTrajectory,
    bg: &BackgroundGeometry,
    u0: &ScalarField,
) -> Result<ScalarEvolution> {
    integrate(traj, bg, u0, Direction::Forward)
}

/// Solves the conjugate equation backwards from `u_final` at the last stored
/// state.
pub fn solve_conjugate_heat(
    traj: &FlowTrajectory,
    bg: &BackgroundGeometry,
    u_final: &TestFunction,
) -> Result<ScalarEvolution> {
    integrate(traj, bg, u_final.values(), Direction::Backward)
}

/// `∫ (R_{g(t)} - a) u(t) dμ_{g(t)}` at every aligned time.
pub fn monotonicity_functional(
    traj: &FlowTrajectory,
    u: &ScalarEvolution,
    a: f64,
) -> Result<Vec<(f64, f64)>> {
    check_aligned(traj, u)?;
    traj.states()
        .iter()
        .zip(u.fields())
        .map(|(s, f)| {
            let inv = s.metric.inverses()?;
            let r = geometry::curvature_tensors(&s.metric)?.scalar;
            let cv = s.metric.grid().cell_volume();
            let terms: Vec<f64> = (0..r.data().len())
                .map(|c| (r.get(c) - a) * f.get(c) * inv[c].1.sqrt() * cv)
                .collect();
            Ok((s.t, par::sum(&terms)))
        })
        .collect()
}

/// `∫ u(t) v(t) dμ_{g(t)}` at every aligned time.
pub fn duality_pairing(
    traj: &FlowTrajectory,
    u: &ScalarEvolution,
    v: &ScalarEvolution,
) -> Result<Vec<(f64, f64)>> {
    check_aligned(traj, u)?;
    check_aligned(traj, v)?;
    traj.states()
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let inv = s.metric.inverses()?;
            let cv = s.metric.grid().cell_volume();
            let terms: Vec<f64> = (0..inv.len())
                .map(|c| u.fields()[k].get(c) * v.fields()[k].get(c) * inv[c].1.sqrt() * cv)
                .collect();
            Ok((s.t, par::sum(&terms)))
        })
        .collect()
}

/// `∫ u dμ_g` of one field.
pub fn mass(g: &MetricField, u: &ScalarField) -> Result<f64> {
    let inv = g.inverses()?;
    let cv = g.grid().cell_volume();
    let terms: Vec<f64> = (0..inv.len())
        .map(|c| u.get(c) * inv[c].1.sqrt() * cv)
        .collect();
    Ok(par::sum(&terms))
}

fn check_aligned(traj: &FlowTrajectory, u: &ScalarEvolution) -> Result<()> {
    let same = traj.states().len() == u.times.len()
        && traj.states().iter().zip(&u.times).all(|(s, t)| s.t == *t);
    if same {
        Ok(())
    } else {
        Err(Error::InvalidInput(
            "scalar evolution not aligned with trajectory".into(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSourceFit {
    pub source: usize,
    /// Smallest `C` with `K <= C t^{-n/2} exp(-d²/(C t))` on all samples.
    pub c: f64,
    pub samples: usize,
    /// Median over samples of `log(bound) - log K` at the fitted `C`.
    pub median_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelReport {
    pub c_fit: f64,
    pub sources: Vec<KernelSourceFit>,
    /// `(source, t, ∫ K dμ_{g(t)})`.
    pub masses: Vec<(usize, f64, f64)>,
}

/// Smallest `C` solving `log C - d²/(C t) = log(K t^{n/2})` by bisection in
/// `log C`; the left side is increasing in `C`.
fn minimal_constant(k: f64, d2: f64, t: f64, n: usize) -> f64 {
    let target = (k * t.powf(0.5 * n as f64)).ln();
    let f = |lc: f64| lc - d2 / (lc.exp() * t) - target;
    let (mut lo, mut hi) = (-40.0f64, 60.0f64);
    if f(lo) >= 0.0 {
        return lo.exp();
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi.exp()
}

/// Evolves a unit-mass spike from each source under the forward equation and
/// fits the Gaussian constant over all cells and requested times.
pub fn heat_kernel_gaussian_check(
    traj: &FlowTrajectory,
    bg: &BackgroundGeometry,
    sources: &[usize],
    times: &[f64],
) -> Result<KernelReport> {
    let grid = *traj.grid();
    let n = grid.n();
    let states = traj.states();
    if states.len() < 2 {
        return Err(Error::InvalidInput(
            "kernel check needs a time-resolved trajectory".into(),
        ));
    }
    // four flow steps, or four stored intervals when no step log is attached
    let first_step = match traj.diagnostics().get(1) {
        Some(d) => d.dt,
        None => states[1].t - states[0].t,
    };
    let g0 = &states[0].metric;
    let floor = 4.0 * first_step;
    for &t in times {
        if t < floor + traj.start_time() || t > traj.final_time() {
            return Err(Error::InvalidInput(format!(
                "kernel time {t} outside [{floor:.3e}, {}]",
                traj.final_time()
            )));
        }
    }
    let inv0 = g0.inverses()?;
    let cv = grid.cell_volume();
    let mut fits = Vec::new();
    let mut masses = Vec::new();
    for &y in sources {
        if y >= grid.cell_count() {
            return Err(Error::InvalidInput(format!("source cell {y} out of range")));
        }
        let mut u0 = vec![0.0; grid.cell_count()];
        u0[y] = 1.0 / (cv * inv0[y].1.sqrt());
        let evo = integrate(
            traj,
            bg,
            &ScalarField::from_data(grid, u0)?,
            Direction::Forward,
        )?;
        let yx = grid.coords(y);
        let mut cs = Vec::new();
        let mut samples = Vec::new();
        for &t in times {
            // nearest stored state at or after t
            let k = evo
                .times()
                .partition_point(|s| *s < t)
                .min(evo.times().len() - 1);
            let tk = evo.times()[k] - traj.start_time();
            let field = &evo.fields()[k];
            masses.push((y, evo.times()[k], mass(&states[k].metric, field)?));
            let found = par::map(grid.cell_count(), |c| {
                let kv = field.get(c);
                if kv <= 0.0 {
                    return None;
                }
                let d = grid.periodic_distance(&yx, &grid.coords(c));
                Some((kv, d * d))
            });
            for (kv, d2) in found.into_iter().flatten() {
                cs.push(minimal_constant(kv, d2, tk, n));
                samples.push((kv, d2, tk));
            }
        }
        let c = cs.iter().copied().fold(0.0, f64::max);
        let mut margins: Vec<f64> = samples
            .iter()
            .map(|(kv, d2, t)| (c.ln() - 0.5 * n as f64 * t.ln() - d2 / (c * t)) - kv.ln())
            .collect();
        margins.sort_by(f64::total_cmp);
        fits.push(KernelSourceFit {
            source: y,
            c,
            samples: samples.len(),
            median_margin: margins.get(margins.len() / 2).copied().unwrap_or(f64::NAN),
        });
    }
    Ok(KernelReport {
        c_fit: fits.iter().map(|f| f.c).fold(0.0, f64::max),
        sources: fits,
        masses,
    })
}

/// Trapezoid-in-time integral of `∫ |∇̃²g|² dμ_h`, together with the
/// grid-level `∫ |∇̃g₀|² dμ_h` of the first state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianIntegral {
    pub integral: f64,
    pub initial_gradient_sq: f64,
}

fn squared_integral(t: &crate::tensor::TensorField, bg: &BackgroundGeometry) -> f64 {
    let norm = geometry::tensor_norm_h(t, bg);
    let cv = t.grid().cell_volume();
    let terms: Vec<f64> = norm
        .data()
        .iter()
        .enumerate()
        .map(|(c, v)| v * v * bg.volume_density(c) * cv)
        .collect();
    par::sum(&terms)
}

pub fn hessian_spacetime_integral(
    traj: &FlowTrajectory,
    bg: &BackgroundGeometry,
) -> Result<HessianIntegral> {
    let per_state = traj
        .states()
        .iter()
        .map(|s| {
            let d2 = geometry::covariant_derivative(s.metric.tensor(), bg, 2)?;
            Ok((s.t, squared_integral(&d2, bg)))
        })
        .collect::<Result<Vec<_>>>()?;
    let integral = per_state
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum();
    let d1 = geometry::covariant_derivative(traj.states()[0].metric.tensor(), bg, 1)?;
    Ok(HessianIntegral {
        integral,
        initial_gradient_sq: squared_integral(&d1, bg),
    })
}
