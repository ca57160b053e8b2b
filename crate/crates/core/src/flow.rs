//! Ricci-DeTurck h-flow
//!
//! `∂_t g = -2 Ric(g) - L_X g`, `X^k = g^{ij}(Γ̃^k_{ij} - Γ^k_{ij})`,
//! written in local coordinates as a quasilinear heat equation for `g`
//! whose right-hand side is assembled per cell from `∇̃g`, `∇̃²g` and `g^{-1}`.
//! Time stepping is Heun's method under a parabolic CFL bound, with graded
//! steps near `t = 0` where rough data smooths out.

use crate::error::{Error, Result};
use crate::fields::bilipschitz_constants;
use crate::geometry::{self, hessian_cell};
use crate::grid::{Grid, MAX_DIM};
use crate::interp;
use crate::linalg::Mat;
use crate::metric::{BackgroundGeometry, MetricField};
use crate::par;
use crate::tensor::{Slot, TensorField};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub t_end: f64,
    pub cfl: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub snapshot_times: Vec<f64>,
    /// Exponent `γ` of the graded schedule `dt = dt_max (t / t_end)^γ`.
    /// Typically `1 - δ/p`; zero disables grading.
    pub early_time_refinement: f64,
    /// Keep every `store_every`-th accepted state besides the snapshots
    /// (0 keeps snapshots only). Heat solvers and the gauge pullback read
    /// these dense states.
    pub store_every: usize,
}

impl FlowConfig {
    pub fn new(t_end: f64) -> Self {
        Self {
            t_end,
            cfl: 0.5,
            dt_min: 1e-9,
            dt_max: t_end / 10.0,
            snapshot_times: vec![t_end],
            early_time_refinement: 0.0,
            store_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end = {} must be positive", self.t_end));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return bad(format!("cfl = {} must lie in (0, 1)", self.cfl));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_max) {
            return bad(format!(
                "need 0 < dt_min ({}) <= dt_max ({})",
                self.dt_min, self.dt_max
            ));
        }
        if let Some(t) = self
            .snapshot_times
            .iter()
            .find(|t| !(**t >= 0.0 && **t <= self.t_end))
        {
            return bad(format!("snapshot time {t} outside [0, t_end]"));
        }
        if !(self.early_time_refinement >= 0.0 && self.early_time_refinement.is_finite()) {
            return bad("early_time_refinement must be non-negative".into());
        }
        Ok(())
    }

    /// Graded step size at time `t`, before CFL and snapshot limits.
    pub fn graded_dt(&self, t: f64) -> f64 {
        let frac = (t / self.t_end).clamp(0.0, 1.0);
        (self.dt_max * frac.powf(self.early_time_refinement)).clamp(self.dt_min, self.dt_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub t: f64,
    pub dt: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `sup |∇̃^k g|` for `k = 1..4`.
    pub sup_derivatives: [f64; 4],
}

impl StepDiagnostics {
    /// `Λ(t) = max(1/λ_min, λ_max)`.
    pub fn lambda(&self) -> f64 {
        (1.0 / self.lambda_min).max(self.lambda_max)
    }

    pub const CSV_HEADER: &'static str = "t,dt,lambda_min,lambda_max,sup_d1,sup_d2,sup_d3,sup_d4";

    pub fn csv_row(&self) -> String {
        let d = self.sup_derivatives;
        format!(
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.t, self.dt, self.lambda_min, self.lambda_max, d[0], d[1], d[2], d[3]
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub metric: MetricField,
    pub snapshot: bool,
}

/// Stored states (snapshots plus optional dense states) with per-step
/// diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    states: Vec<FlowState>,
    diagnostics: Vec<StepDiagnostics>,
}

impl FlowTrajectory {
    pub fn from_states(states: Vec<FlowState>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidInput(
                "trajectory needs at least one state".into(),
            ));
        }
        let grid = *states[0].metric.grid();
        for w in states.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::InvalidInput("trajectory times must increase".into()));
            }
            if *w[1].metric.grid() != grid {
                return Err(Error::InvalidInput(
                    "trajectory states on different grids".into(),
                ));
            }
        }
        Ok(Self {
            states,
            diagnostics: Vec::new(),
        })
    }

    pub fn with_diagnostics(mut self, diagnostics: Vec<StepDiagnostics>) -> Self {
        self.diagnostics = diagnostics;
        self
    }

    pub fn grid(&self) -> &Grid {
        self.states[0].metric.grid()
    }

    pub fn states(&self) -> &[FlowState] {
        &self.states
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &FlowState> {
        self.states.iter().filter(|s| s.snapshot)
    }

    pub fn diagnostics(&self) -> &[StepDiagnostics] {
        &self.diagnostics
    }

    pub fn start_time(&self) -> f64 {
        self.states[0].t
    }

    pub fn final_time(&self) -> f64 {
        self.states[self.states.len() - 1].t
    }

    pub fn final_metric(&self) -> &MetricField {
        &self.states[self.states.len() - 1].metric
    }

    /// Index `i` and weight `w` with `t = (1-w) t_i + w t_{i+1}`.
    pub fn bracket(&self, t: f64) -> (usize, f64) {
        let s = &self.states;
        if s.len() == 1 || t <= s[0].t {
            return (0, 0.0);
        }
        let last = s.len() - 1;
        if t >= s[last].t {
            return (last - 1, 1.0);
        }
        let i = s.partition_point(|st| st.t <= t) - 1;
        (i, (t - s[i].t) / (s[i + 1].t - s[i].t))
    }

    /// Componentwise linear interpolation in time.
    pub fn metric_at(&self, t: f64) -> MetricField {
        if self.states.len() == 1 {
            return self.states[0].metric.clone();
        }
        let (i, w) = self.bracket(t);
        if w == 0.0 {
            return self.states[i].metric.clone();
        }
        if w == 1.0 {
            return self.states[i + 1].metric.clone();
        }
        self.states[i].metric.lerp(&self.states[i + 1].metric, w)
    }
}

/// Error from [`evolve`] carrying everything computed before the abort.
#[derive(Debug, thiserror::Error)]
#[error("flow aborted: {error}")]
pub struct EvolveFailure {
    #[source]
    pub error: Error,
    pub partial: FlowTrajectory,
}

/// `X^k = g^{ij}(Γ̃^k_{ij} - Γ^k_{ij})`.
pub fn deturck_vector(g: &MetricField, bg: &BackgroundGeometry) -> Result<TensorField> {
    let inv = g.inverses()?;
    Ok(deturck_with(g, bg, &inv))
}

fn deturck_with(g: &MetricField, bg: &BackgroundGeometry, inv: &[(Mat, f64)]) -> TensorField {
    let grid = *g.grid();
    let n = grid.n();
    let gam = geometry::christoffels_with(g, inv);
    let flat = bg.is_flat();
    let mut out = vec![0.0; n * grid.cell_count()];
    par::fill(&mut out, n, |c, o| {
        let gi = &inv[c].0;
        let gc = gam.cell(c);
        let bc = bg.christoffels().cell(c);
        for k in 0..n {
            let mut v = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let idx = (k * n + i) * n + j;
                    let d = if flat { -gc[idx] } else { bc[idx] - gc[idx] };
                    v += gi[i][j] * d;
                }
            }
            o[k] = v;
        }
    });
    TensorField::from_raw(grid, vec![Slot::Contra], out)
}

/// `(L_X g)_{ij} = X^k ∂_k g_{ij} + g_{kj} ∂_i X^k + g_{ik} ∂_j X^k`.
pub fn lie_derivative(g: &MetricField, x: &TensorField) -> Result<TensorField> {
    let grid = *g.grid();
    let n = grid.n();
    if x.grid() != &grid || x.slots() != [Slot::Contra] {
        return Err(Error::InvalidInput(
            "Lie derivative needs a vector field on the metric's grid".into(),
        ));
    }
    let n2 = n * n;
    let dg = geometry::gradient_raw(&grid, g.data(), n2);
    let dx = geometry::gradient_raw(&grid, x.data(), n);
    let mut out = vec![0.0; n2 * grid.cell_count()];
    par::fill(&mut out, n2, |c, o| {
        let xc = x.cell(c);
        let gm = g.at(c);
        let dgc = &dg[c * n * n2..(c + 1) * n * n2];
        let dxc = &dx[c * n2..(c + 1) * n2];
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.0;
                for k in 0..n {
                    v += xc[k] * dgc[k * n2 + i * n + j]
                        + gm[k][j] * dxc[i * n + k]
                        + gm[i][k] * dxc[j * n + k];
                }
                o[i * n + j] = v;
            }
        }
    });
    Ok(TensorField::from_raw(grid, vec![Slot::Co, Slot::Co], out))
}

/// Right-hand side at one cell from `d[a][i][j] = ∇̃_a g_{ij}`,
/// `hs[p][q][i][j] = ∇̃_p ∇̃_q g_{ij}`, `g^{-1}` and, on curved backgrounds,
/// `(h^{-1}, R̃_{ijkl})` for the coupling terms.
fn assemble(
    n: usize,
    d: &[f64],
    hs: &[f64],
    gi: &Mat,
    gm: &Mat,
    curved: Option<(&Mat, &[f64])>,
    o: &mut [f64],
) {
    match n {
        2 => assemble_n::<2>(d, hs, gi, gm, curved, o),
        _ => assemble_n::<3>(d, hs, gi, gm, curved, o),
    }
}

#[inline(always)]
fn assemble_n<const N: usize>(
    d: &[f64],
    hs: &[f64],
    gi: &Mat,
    gm: &Mat,
    curved: Option<(&Mat, &[f64])>,
    o: &mut [f64],
) {
    let n = N;
    let n2 = n * n;
    let mut dd = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                dd[a][b][c] = d[a * n2 + b * n + c];
            }
        }
    }
    // vv[a] = g^{-1} ∂_a g g^{-1};  tt[j][l][q] = g^{lk} ∂_k g_{jp} g^{pq}
    let mut vv = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
    let mut tt = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
    for a in 0..n {
        let mut left = [[0.0; MAX_DIM]; MAX_DIM];
        let mut w = [[0.0; MAX_DIM]; MAX_DIM];
        for x in 0..n {
            for y in 0..n {
                let mut l = 0.0;
                let mut r = 0.0;
                for p in 0..n {
                    l += gi[x][p] * dd[a][p][y];
                    r += dd[x][a][p] * gi[p][y];
                }
                left[x][y] = l;
                w[x][y] = r;
            }
        }
        for x in 0..n {
            for y in 0..n {
                let mut v = 0.0;
                let mut t = 0.0;
                for k in 0..n {
                    v += left[x][k] * gi[k][y];
                    t += gi[x][k] * w[k][y];
                }
                vv[a][x][y] = v;
                tt[a][x][y] = t;
            }
        }
    }
    let mut v = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..n {
        for j in 0..n {
            let mut lap = 0.0;
            for p in 0..n {
                for q in 0..n {
                    lap += gi[p][q] * hs[(p * n + q) * n2 + i * n + j];
                }
            }
            let mut quad = 0.0;
            for q in 0..n {
                for l in 0..n {
                    quad += vv[i][q][l] * dd[j][q][l]
                        + 2.0 * tt[j][l][q] * (dd[q][i][l] - dd[l][i][q])
                        - 2.0 * vv[j][q][l] * dd[l][i][q]
                        - 2.0 * vv[i][q][l] * dd[l][q][j];
                }
            }
            v[i][j] = lap + 0.5 * quad;
        }
    }
    if let Some((hinv, r)) = curved {
        // -g^{kl} g_{ip} h^{pq} R̃_{jkql}, plus the same with i and j swapped
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..n {
            for q in 0..n {
                m[i][q] = (0..n).map(|p| gm[i][p] * hinv[p][q]).sum();
            }
        }
        let rr = |a: usize, b: usize, c: usize, e: usize| r[((a * n + b) * n + c) * n + e];
        let mut cpl = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    for l in 0..n {
                        for q in 0..n {
                            s += gi[k][l] * m[i][q] * rr(j, k, q, l);
                        }
                    }
                }
                cpl[i][j] = -s;
            }
        }
        for i in 0..n {
            for j in 0..n {
                v[i][j] += cpl[i][j] + cpl[j][i];
            }
        }
    }
    for i in 0..n {
        o[i * n + i] = v[i][i];
        for j in i + 1..n {
            let s = 0.5 * (v[i][j] + v[j][i]);
            o[i * n + j] = s;
            o[j * n + i] = s;
        }
    }
}

/// Full flow right-hand side `∂_t g`, symmetric in `(i, j)` exactly.
pub fn rdf_rhs(g: &MetricField, bg: &BackgroundGeometry) -> Result<TensorField> {
    let inv = g.inverses()?;
    rhs_with(g, bg, &inv)
}

fn rhs_with(g: &MetricField, bg: &BackgroundGeometry, inv: &[(Mat, f64)]) -> Result<TensorField> {
    let grid = *g.grid();
    let n = grid.n();
    let n2 = n * n;
    let mut out = vec![0.0; n2 * grid.cell_count()];
    if bg.is_flat() {
        let data = g.data();
        let h = grid.spacing().to_vec();
        par::fill(&mut out, n2, |c, o| match n {
            2 => flat_cell::<2, 8, 16>(&grid, &h, data, &inv[c].0, &g.at(c), c, o),
            _ => flat_cell::<3, 27, 81>(&grid, &h, data, &inv[c].0, &g.at(c), c, o),
        });
    } else {
        let d1 = geometry::covariant_derivative(g.tensor(), bg, 1)?;
        let d2 = geometry::covariant_derivative(&d1, bg, 1)?;
        par::fill(&mut out, n2, |c, o| {
            let hinv = bg.inverse_at(c);
            assemble(
                n,
                d1.cell(c),
                d2.cell(c),
                &inv[c].0,
                &g.at(c),
                Some((&hinv, bg.riemann().cell(c))),
                o,
            );
        });
    }
    Ok(TensorField::from_raw(grid, vec![Slot::Co, Slot::Co], out))
}

/// Flat-background right-hand side at one cell; `D = N³` and `H = N⁴` size
/// the derivative scratch arrays.
#[inline(always)]
fn flat_cell<const N: usize, const D: usize, const H: usize>(
    grid: &Grid,
    h: &[f64],
    data: &[f64],
    gi: &Mat,
    gm: &Mat,
    c: usize,
    o: &mut [f64],
) {
    let n2 = N * N;
    let mut d = [0.0; D];
    let st = grid.unit_steps(c);
    for a in 0..N {
        let p = (c as isize + st[a][1]) as usize * n2;
        let m = (c as isize + st[a][0]) as usize * n2;
        let s = 0.5 / h[a];
        for k in 0..n2 {
            d[a * n2 + k] = (data[p + k] - data[m + k]) * s;
        }
    }
    let mut hs = [0.0; H];
    hessian_cell(grid, h, data, n2, c, &mut hs);
    assemble_n::<N>(&d, &hs, gi, gm, None, o);
}

fn stability_check(g: &MetricField, bg: &BackgroundGeometry, t: f64, dt: f64) -> Result<()> {
    g.tensor().check_finite()?;
    let b = bilipschitz_constants(g, bg)?;
    if !(b.lambda_min > 0.0) {
        return Err(Error::Stability {
            t,
            dt,
            min_eigenvalue: b.lambda_min,
        });
    }
    Ok(())
}

fn stage(g: &MetricField, bg: &BackgroundGeometry, t: f64, dt: f64) -> Result<TensorField> {
    let inv = g.inverses().map_err(|e| match e {
        Error::DegenerateMetric { .. } => Error::Stability {
            t,
            dt,
            min_eigenvalue: 0.0,
        },
        other => other,
    })?;
    rhs_with(g, bg, &inv)
}

/// One Heun (explicit RK2) step. Fails with a stability error when an
/// intermediate or final metric loses positive-definiteness.
pub fn step(g: &MetricField, dt: f64, bg: &BackgroundGeometry) -> Result<MetricField> {
    step_at(g, 0.0, dt, bg)
}

fn step_at(g: &MetricField, t: f64, dt: f64, bg: &BackgroundGeometry) -> Result<MetricField> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "time step {dt} must be positive"
        )));
    }
    let k1 = stage(g, bg, t, dt)?;
    let mid = g.add_scaled(dt, &k1);
    mid.tensor().check_finite().map_err(|_| Error::Stability {
        t,
        dt,
        min_eigenvalue: f64::NAN,
    })?;
    let k2 = stage(&mid, bg, t, dt)?;
    let mut data = g.data().to_vec();
    let h = 0.5 * dt;
    for ((v, a), b) in data.iter_mut().zip(k1.data()).zip(k2.data()) {
        *v += h * (a + b);
    }
    let out = MetricField::from_components(*g.grid(), data).map_err(|_| Error::Stability {
        t,
        dt,
        min_eigenvalue: f64::NAN,
    })?;
    stability_check(&out, bg, t + dt, dt)?;
    Ok(out)
}

/// Parabolic bound `cfl · h_min² · λ_min(g) / (2n)`.
pub fn cfl_bound(g: &MetricField, bg: &BackgroundGeometry, cfl: f64) -> Result<f64> {
    let b = bilipschitz_constants(g, bg)?;
    let grid = g.grid();
    Ok(cfl * grid.min_spacing().powi(2) * b.lambda_min / (2.0 * grid.n() as f64))
}

/// Diagnostics of a single state.
pub fn diagnostics(
    g: &MetricField,
    bg: &BackgroundGeometry,
    t: f64,
    dt: f64,
) -> Result<StepDiagnostics> {
    let b = bilipschitz_constants(g, bg)?;
    let mut sup = [0.0; 4];
    let mut d = geometry::covariant_derivative(g.tensor(), bg, 1)?;
    sup[0] = geometry::sup_norm(&d, bg);
    for s in sup.iter_mut().skip(1) {
        d = geometry::covariant_derivative(&d, bg, 1)?;
        *s = geometry::sup_norm(&d, bg);
    }
    Ok(StepDiagnostics {
        t,
        dt,
        lambda_min: b.lambda_min,
        lambda_max: b.lambda_max,
        sup_derivatives: sup,
    })
}

/// Retries `attempt` with halved step sizes until it succeeds or the step
/// would fall below `dt_min`. Returns the accepted step and its result.
fn with_halving<T>(
    mut dt: f64,
    dt_min: f64,
    mut attempt: impl FnMut(f64) -> Result<T>,
) -> Result<(f64, T)> {
    loop {
        match attempt(dt) {
            Ok(v) => return Ok((dt, v)),
            Err(e @ (Error::Stability { .. } | Error::NonFinite { .. })) => {
                if dt * 0.5 < dt_min {
                    return Err(e);
                }
                dt *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Integrates the flow from `g0` to `cfg.t_end`.
///
/// Step size: the graded schedule, capped by `dt_max`, the CFL bound of the
/// current state and the distance to the next snapshot time (snapshots are
/// hit exactly). Failed steps are retried at half the size; once that would
/// go below `dt_min` the run aborts and returns what it has.
pub fn evolve(
    g0: &MetricField,
    cfg: &FlowConfig,
    bg: &BackgroundGeometry,
) -> std::result::Result<FlowTrajectory, Box<EvolveFailure>> {
    evolve_from(g0, 0.0, cfg, bg)
}

/// As [`evolve`], starting from a state `g_start` at time `t0`. The step
/// sequence depends only on the current state and time, so restarting from a
/// stored snapshot reproduces an uninterrupted run bit for bit.
pub fn evolve_from(
    g_start: &MetricField,
    t0: f64,
    cfg: &FlowConfig,
    bg: &BackgroundGeometry,
) -> std::result::Result<FlowTrajectory, Box<EvolveFailure>> {
    evolve_span(g_start, t0, cfg.t_end, cfg, bg)
}

/// As [`evolve_from`], stopping at `t1`, which must be a snapshot time or
/// `t_end`. Consecutive spans reproduce the single run.
pub fn evolve_span(
    g_start: &MetricField,
    t0: f64,
    t1: f64,
    cfg: &FlowConfig,
    bg: &BackgroundGeometry,
) -> std::result::Result<FlowTrajectory, Box<EvolveFailure>> {
    let g0 = g_start;
    let mut traj = FlowTrajectory {
        states: vec![FlowState {
            t: t0,
            metric: g0.clone(),
            snapshot: true,
        }],
        diagnostics: Vec::new(),
    };
    let fail = |error: Error, partial: FlowTrajectory| Box::new(EvolveFailure { error, partial });
    if let Err(e) = cfg.validate() {
        return Err(fail(e, traj));
    }
    if !(t0 >= 0.0 && t0 < t1) {
        let e = Error::InvalidInput(format!("start time {t0} outside [0, {t1})"));
        return Err(fail(e, traj));
    }
    if t1 != cfg.t_end && !cfg.snapshot_times.contains(&t1) {
        let e = Error::InvalidInput(format!("stop time {t1} is not a snapshot time"));
        return Err(fail(e, traj));
    }
    match diagnostics(g0, bg, t0, 0.0) {
        Ok(d) => traj.diagnostics.push(d),
        Err(e) => return Err(fail(e, traj)),
    }

    let mut targets: Vec<f64> = cfg
        .snapshot_times
        .iter()
        .copied()
        .chain(std::iter::once(cfg.t_end))
        .filter(|t| *t > t0 && *t <= t1)
        .collect();
    targets.sort_by(f64::total_cmp);
    targets.dedup();

    let mut g = g0.clone();
    let mut t = t0;
    let mut accepted = 0usize;
    for &target in &targets {
        while t < target {
            let bound = match cfl_bound(&g, bg, cfg.cfl) {
                Ok(b) => b,
                Err(e) => return Err(fail(e, traj)),
            };
            let mut dt = cfg.graded_dt(t).min(bound);
            let remaining = target - t;
            // land exactly on the target; avoid a sliver step just before it
            if dt >= remaining || remaining - dt < 1e-3 * dt {
                dt = remaining;
            }
            let landing = dt == remaining;
            let result = with_halving(dt, cfg.dt_min, |h| step_at(&g, t, h, bg));
            let (used, next) = match result {
                Ok(v) => v,
                Err(e) => return Err(fail(e, traj)),
            };
            t = if landing && used == dt {
                target
            } else {
                t + used
            };
            g = next;
            accepted += 1;
            match diagnostics(&g, bg, t, used) {
                Ok(d) => traj.diagnostics.push(d),
                Err(e) => return Err(fail(e, traj)),
            }
            let snap = t == target;
            let dense = cfg.store_every > 0 && accepted.is_multiple_of(cfg.store_every);
            if snap || dense {
                traj.states.push(FlowState {
                    t,
                    metric: g.clone(),
                    snapshot: snap,
                });
            }
        }
    }
    Ok(traj)
}

/// Displacement `ξ = χ_t - id` of the gauge diffeomorphism at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeMap {
    pub t: f64,
    grid: Grid,
    displacement: Vec<f64>,
}

impl GaugeMap {
    pub fn identity(grid: Grid, t: f64) -> Self {
        Self {
            t,
            grid,
            displacement: vec![0.0; grid.n() * grid.cell_count()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `n` components per cell.
    pub fn displacement(&self) -> &[f64] {
        &self.displacement
    }

    pub fn max_displacement(&self) -> f64 {
        let n = self.grid.n();
        self.displacement
            .chunks(n)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// `χ^* g`: `(δ + ∂ξ)^T g(x + ξ) (δ + ∂ξ)`, with `g` sampled by cubic
    /// interpolation.
    pub fn pull_back(&self, g: &MetricField) -> Result<MetricField> {
        let grid = self.grid;
        let n = grid.n();
        let n2 = n * n;
        let dxi = geometry::gradient_raw(&grid, &self.displacement, n);
        let src = g.data();
        let xi = &self.displacement;
        let mut out = vec![0.0; n2 * grid.cell_count()];
        par::fill(&mut out, n2, |c, o| {
            let mut x = grid.coords(c);
            for a in 0..n {
                x[a] += xi[c * n + a];
            }
            let mut gs = [0.0; 9];
            interp::sample(&grid, src, n2, &x, &mut gs);
            // jac[a][i] = ∂_i χ^a
            let mut jac = [[0.0; MAX_DIM]; MAX_DIM];
            for a in 0..n {
                for i in 0..n {
                    jac[a][i] = dxi[c * n2 + i * n + a] + if a == i { 1.0 } else { 0.0 };
                }
            }
            for i in 0..n {
                for j in i..n {
                    let mut v = 0.0;
                    for a in 0..n {
                        for b in 0..n {
                            v += jac[a][i] * 0.5 * (gs[a * n + b] + gs[b * n + a]) * jac[b][j];
                        }
                    }
                    o[i * n + j] = v;
                    o[j * n + i] = v;
                }
            }
        });
        MetricField::from_components(grid, out)
    }
}

/// Ricci-flow residuals `‖∂_t ĝ + 2 Ric(ĝ)‖_∞` at interior snapshots, for
/// the pulled-back `ĝ = χ^* g` and, as a contrast, for `g` itself.
#[derive(Debug, Clone, PartialEq)]
pub struct PullbackReport {
    pub times: Vec<f64>,
    pub residual: Vec<f64>,
    pub unpulled_residual: Vec<f64>,
}

fn three_point(t: [f64; 3], f: [&MetricField; 3]) -> Vec<f64> {
    let h1 = t[1] - t[0];
    let h2 = t[2] - t[1];
    let a = -h2 / (h1 * (h1 + h2));
    let b = (h2 - h1) / (h1 * h2);
    let c = h1 / (h2 * (h1 + h2));
    f[0].data()
        .iter()
        .zip(f[1].data())
        .zip(f[2].data())
        .map(|((x, y), z)| a * x + b * y + c * z)
        .collect()
}

fn ricci_residual(t: [f64; 3], f: [&MetricField; 3]) -> Result<f64> {
    let dt = three_point(t, f);
    let ric = geometry::curvature_tensors(f[1])?.ricci;
    Ok(dt
        .iter()
        .zip(ric.data())
        .map(|(a, r)| (a + 2.0 * r).abs())
        .fold(0.0, f64::max))
}

/// Integrates `∂_t χ = X ∘ χ`, `χ_0 = id`, with Heun steps between stored
/// states, and measures how well `χ_t^* g(t)` solves the Ricci flow.
///
/// Uses every stored state, so runs with `store_every > 0` give the most
/// accurate residuals. Returns one gauge map per snapshot.
pub fn pullback_to_ricci_flow(
    traj: &FlowTrajectory,
    bg: &BackgroundGeometry,
) -> Result<(Vec<GaugeMap>, PullbackReport)> {
    let states = traj.states();
    if traj.snapshots().count() < 3 {
        return Err(Error::InvalidInput(
            "gauge pullback needs at least three snapshots".into(),
        ));
    }
    let grid = *traj.grid();
    let n = grid.n();
    let limit = 0.5 * grid.min_period();
    let vector = |k: usize| deturck_vector(&states[k].metric, bg);

    let mut chi = GaugeMap::identity(grid, states[0].t);
    let mut maps = vec![chi.clone()];
    let mut x_cur = vector(0)?;
    // rolling windows of (t, ĝ) and (t, g)
    let mut pulled: Vec<(f64, MetricField)> = vec![(states[0].t, states[0].metric.clone())];
    let mut report = PullbackReport {
        times: Vec::new(),
        residual: Vec::new(),
        unpulled_residual: Vec::new(),
    };
    for k in 0..states.len() - 1 {
        let dt = states[k + 1].t - states[k].t;
        let x_next = vector(k + 1)?;
        let xi = &chi.displacement;
        let mut next = vec![0.0; xi.len()];
        let (xc, xn) = (x_cur.data(), x_next.data());
        par::fill(&mut next, n, |c, o| {
            let base = grid.coords(c);
            let mut p = base;
            for a in 0..n {
                p[a] += xi[c * n + a];
            }
            let mut k1 = [0.0; MAX_DIM];
            interp::sample(&grid, xc, n, &p, &mut k1);
            let mut q = base;
            for a in 0..n {
                q[a] += xi[c * n + a] + dt * k1[a];
            }
            let mut k2 = [0.0; MAX_DIM];
            interp::sample(&grid, xn, n, &q, &mut k2);
            for a in 0..n {
                o[a] = xi[c * n + a] + 0.5 * dt * (k1[a] + k2[a]);
            }
        });
        chi = GaugeMap {
            t: states[k + 1].t,
            grid,
            displacement: next,
        };
        let m = chi.max_displacement();
        if !(m < limit) {
            return Err(Error::GaugeBlowup {
                t: chi.t,
                displacement: m,
            });
        }
        x_cur = x_next;
        if states[k + 1].snapshot {
            maps.push(chi.clone());
        }
        pulled.push((chi.t, chi.pull_back(&states[k + 1].metric)?));
        if pulled.len() > 3 {
            pulled.remove(0);
        }
        // residual at the middle state once it has a neighbour on each side
        if pulled.len() == 3 && k >= 1 && states[k].snapshot {
            let ts = [pulled[0].0, pulled[1].0, pulled[2].0];
            report.times.push(ts[1]);
            report.residual.push(ricci_residual(
                ts,
                [&pulled[0].1, &pulled[1].1, &pulled[2].1],
            )?);
            report.unpulled_residual.push(ricci_residual(
                ts,
                [
                    &states[k - 1].metric,
                    &states[k].metric,
                    &states[k + 1].metric,
                ],
            )?);
        }
    }
    Ok((maps, report))
}
