//! Rough initial metrics, singular-set masks and chart-wise mollification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Grid, Point, MAX_DIM};
use crate::linalg::{self, Mat};
use crate::metric::{BackgroundGeometry, MetricField};
use crate::par;

/// C^∞ step: 0 for `s <= 0`, 1 for `s >= 1`.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / s).exp();
    let b = (-1.0 / (1.0 - s)).exp();
    a / (a + b)
}

/// Derivative of [`smooth_step`].
pub fn smooth_step_derivative(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    let a = (-1.0 / s).exp();
    let b = (-1.0 / (1.0 - s)).exp();
    let da = a / (s * s);
    let db = -b / ((1.0 - s) * (1.0 - s));
    (da * (a + b) - a * (da + db)) / ((a + b) * (a + b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialKind {
    Flat,
    /// `e^{2φ} δ` with `φ = A sin(x1 - c1) sin(x2 - c2)`.
    ConformalBump,
    /// `(1 + A ρ^s χ(ρ)) δ`, `ρ` the periodic distance to each apex.
    HoelderCone,
    /// `δ + A ρ^s χ(ρ) (x̂ ⊗ x̂)`: anisotropic radial cone.
    MorreyFamily,
    /// Conformal random Fourier series with `|k|^{-(1+s)}` amplitudes.
    RandomW1p,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialDataSpec {
    pub kind: InitialKind,
    pub centers: Vec<Vec<f64>>,
    pub amplitude: f64,
    /// Hölder power `s = δ/p` of the profile; the gradient scales as `ρ^{s-1}`.
    pub exponent: f64,
    pub lambda_cap: f64,
    pub seed: u64,
    /// Radii `(inner, outer)` of the cone profile cutoff: exact power law
    /// inside `inner`, smoothly switched off by `outer`.
    pub support: (f64, f64),
}

impl InitialDataSpec {
    pub fn flat() -> Self {
        Self {
            kind: InitialKind::Flat,
            centers: Vec::new(),
            amplitude: 0.0,
            exponent: 0.5,
            lambda_cap: 1.0,
            seed: 0,
            support: (0.5, 1.0),
        }
    }

    pub fn conformal_bump(amplitude: f64) -> Self {
        Self {
            kind: InitialKind::ConformalBump,
            amplitude,
            lambda_cap: (2.0 * amplitude.abs()).exp() * (1.0 + 1e-12),
            ..Self::flat()
        }
    }

    pub fn hoelder_cone(center: &[f64], amplitude: f64, exponent: f64) -> Self {
        let lam = if amplitude >= 0.0 {
            1.0 + amplitude
        } else {
            1.0 / (1.0 + amplitude)
        };
        Self {
            kind: InitialKind::HoelderCone,
            centers: vec![center.to_vec()],
            amplitude,
            exponent,
            lambda_cap: lam,
            ..Self::flat()
        }
    }

    fn check(&self, grid: &Grid) -> Result<()> {
        let n = grid.n();
        for c in &self.centers {
            if c.len() != n {
                return Err(Error::InitialData(format!(
                    "center {c:?} does not have {n} coordinates"
                )));
            }
        }
        if !(self.lambda_cap >= 1.0) {
            return Err(Error::InitialData("lambda_cap must be at least 1".into()));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::InitialData("amplitude must be finite".into()));
        }
        match self.kind {
            InitialKind::HoelderCone | InitialKind::MorreyFamily => {
                if self.centers.is_empty() {
                    return Err(Error::InitialData(
                        "cone data needs at least one center".into(),
                    ));
                }
                if !(self.exponent > 0.0 && self.exponent < 1.0) {
                    return Err(Error::InitialData(format!(
                        "cone exponent {} outside (0, 1)",
                        self.exponent
                    )));
                }
                let (inner, outer) = self.support;
                if !(inner > 0.0 && outer > inner && outer < 0.5 * grid.min_period()) {
                    return Err(Error::InitialData(format!(
                        "cone support ({inner}, {outer}) must satisfy 0 < inner < outer < half period"
                    )));
                }
            }
            InitialKind::RandomW1p if !(self.exponent > 0.0) => {
                return Err(Error::InitialData(
                    "random_w1p exponent must be positive".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// Upper bound for `Λ₀` implied by the construction.
    fn lambda_bound(&self) -> Result<f64> {
        let a = self.amplitude;
        let count = self.centers.len().max(1) as f64;
        let lam = match self.kind {
            InitialKind::Flat => 1.0,
            InitialKind::ConformalBump | InitialKind::RandomW1p => (2.0 * a.abs()).exp(),
            InitialKind::HoelderCone | InitialKind::MorreyFamily => {
                // profile ρ^s χ(ρ) takes values in [0, outer^s]
                let peak = self.support.1.powf(self.exponent) * count;
                let lo = 1.0 + a.min(0.0) * peak;
                let hi = 1.0 + a.max(0.0) * peak;
                if lo <= 0.0 {
                    return Err(Error::InitialData(format!(
                        "amplitude {a} makes the metric degenerate"
                    )));
                }
                hi.max(1.0 / lo)
            }
        };
        Ok(lam)
    }
}

/// Places a cone apex half a cell off the grid nodes so no sample sits on it.
pub fn offset_apex(grid: &Grid, center: &[f64]) -> Point {
    let mut p = [0.0; MAX_DIM];
    for a in 0..grid.n() {
        let h = grid.spacing()[a];
        let l = grid.period(a);
        let x = center[a].rem_euclid(l);
        p[a] = ((x / h).floor() + 0.5) * h;
    }
    p
}

/// Cone profile `f` with `f' = s ρ^{s-1} χ(ρ)`: exactly `ρ^s` inside
/// `inner`, constant beyond `outer`. Cutting off the derivative rather than
/// the value keeps `|f'| <= s ρ^{s-1}` everywhere, so the apex dominates every
/// gradient norm.
fn cone_profile(rho: f64, s: f64, support: (f64, f64)) -> f64 {
    let (inner, outer) = support;
    if rho <= inner {
        return rho.powf(s);
    }
    let end = rho.min(outer);
    // composite 5-point Gauss-Legendre on [inner, end]
    const NODES: [f64; 5] = [
        -0.906_179_845_938_664,
        -0.538_469_310_105_683,
        0.0,
        0.538_469_310_105_683,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.236_926_885_056_189,
        0.478_628_670_499_366,
        0.568_888_888_888_889,
        0.478_628_670_499_366,
        0.236_926_885_056_189,
    ];
    let panels = 8;
    let width = (end - inner) / panels as f64;
    let mut tail = 0.0;
    for k in 0..panels {
        let mid = inner + (k as f64 + 0.5) * width;
        for (x, w) in NODES.iter().zip(WEIGHTS) {
            let r = mid + 0.5 * width * x;
            let chi = 1.0 - smooth_step((r - inner) / (outer - inner));
            tail += 0.5 * width * w * s * r.powf(s - 1.0) * chi;
        }
    }
    inner.powf(s) + tail
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskGeometry {
    Empty,
    Points(Vec<Point>),
    Segment {
        from: Point,
        to: Point,
    },
    Circle {
        center: Point,
        radius: f64,
        normal_axis: usize,
    },
}

/// Cells belonging to the singular set `Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSetMask {
    grid: Grid,
    cells: Vec<usize>,
    geometry: MaskGeometry,
}

impl SingularSetMask {
    pub fn empty(grid: Grid) -> Self {
        Self {
            grid,
            cells: Vec::new(),
            geometry: MaskGeometry::Empty,
        }
    }

    fn nearest_cell(grid: &Grid, p: &[f64]) -> usize {
        let mut idx = [0usize; MAX_DIM];
        for a in 0..grid.n() {
            let i = (p[a] / grid.spacing()[a]).round() as isize;
            idx[a] = i.rem_euclid(grid.dims()[a] as isize) as usize;
        }
        grid.linear_index(&idx)
    }

    fn from_samples(
        grid: Grid,
        samples: impl Iterator<Item = Point>,
        geometry: MaskGeometry,
    ) -> Self {
        let mut cells: Vec<usize> = samples.map(|p| Self::nearest_cell(&grid, &p)).collect();
        cells.sort_unstable();
        cells.dedup();
        Self {
            grid,
            cells,
            geometry,
        }
    }

    /// One cell per point: the grid node nearest to it (ties resolved downward).
    pub fn points(grid: Grid, points: &[Point]) -> Self {
        let pts: Vec<Point> = points.to_vec();
        let mut cells: Vec<usize> = pts
            .iter()
            .map(|p| {
                let mut idx = [0usize; MAX_DIM];
                for a in 0..grid.n() {
                    let i = (p[a] / grid.spacing()[a] - 0.5).ceil() as isize;
                    idx[a] = i.rem_euclid(grid.dims()[a] as isize) as usize;
                }
                grid.linear_index(&idx)
            })
            .collect();
        cells.sort_unstable();
        cells.dedup();
        Self {
            grid,
            cells,
            geometry: MaskGeometry::Points(pts),
        }
    }

    pub fn segment(grid: Grid, from: Point, to: Point) -> Self {
        let len = (0..grid.n())
            .map(|a| (to[a] - from[a]).powi(2))
            .sum::<f64>()
            .sqrt();
        let steps = ((len / grid.min_spacing()) * 4.0).ceil().max(1.0) as usize;
        let samples = (0..=steps).map(move |k| {
            let t = k as f64 / steps as f64;
            let mut p = [0.0; MAX_DIM];
            for a in 0..MAX_DIM {
                p[a] = from[a] + t * (to[a] - from[a]);
            }
            p
        });
        Self::from_samples(grid, samples, MaskGeometry::Segment { from, to })
    }

    /// Circle of `radius` around `center` in the plane orthogonal to
    /// `normal_axis` (3D grids).
    pub fn circle(grid: Grid, center: Point, radius: f64, normal_axis: usize) -> Result<Self> {
        if grid.n() != 3 || normal_axis > 2 {
            return Err(Error::InvalidInput("circle masks live on 3D grids".into()));
        }
        let (u, v) = match normal_axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let steps =
            ((2.0 * std::f64::consts::PI * radius / grid.min_spacing()) * 4.0).ceil() as usize;
        let samples = (0..steps).map(move |k| {
            let th = 2.0 * std::f64::consts::PI * k as f64 / steps as f64;
            let mut p = center;
            p[u] += radius * th.cos();
            p[v] += radius * th.sin();
            p
        });
        Ok(Self::from_samples(
            grid,
            samples,
            MaskGeometry::Circle {
                center,
                radius,
                normal_axis,
            },
        ))
    }

    pub fn from_cells(grid: Grid, mut cells: Vec<usize>) -> Self {
        cells.sort_unstable();
        cells.dedup();
        Self {
            grid,
            cells,
            geometry: MaskGeometry::Empty,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn geometry(&self) -> &MaskGeometry {
        &self.geometry
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }

    pub fn as_flags(&self) -> Vec<bool> {
        let mut f = vec![false; self.grid.cell_count()];
        for &c in &self.cells {
            f[c] = true;
        }
        f
    }

    /// Periodic distance from every cell to the nearest mask cell; cells
    /// farther than `reach` get `f64::INFINITY`.
    pub fn distance_field(&self, reach: f64) -> Vec<f64> {
        let grid = &self.grid;
        let mut d = vec![f64::INFINITY; grid.cell_count()];
        let offsets = grid.ball_offsets(reach + grid.min_spacing() * 1e-9);
        for &m in &self.cells {
            for o in &offsets {
                let c = grid.offset(m, o);
                let r = (0..grid.n())
                    .map(|a| (o[a] as f64 * grid.spacing()[a]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if r < d[c] {
                    d[c] = r;
                }
            }
        }
        d
    }

    /// Mask centroid (minimal-image unwrapped around the first cell) and the
    /// largest distance from it to any mask cell.
    pub fn centroid_and_extent(&self) -> Option<(Point, f64)> {
        let first = *self.cells.first()?;
        let grid = &self.grid;
        let x0 = grid.coords(first);
        let mut sum = [0.0; MAX_DIM];
        for &c in &self.cells {
            let x = grid.coords(c);
            for a in 0..grid.n() {
                sum[a] += x0[a] + grid.periodic_delta(x0[a], x[a], a);
            }
        }
        let k = self.cells.len() as f64;
        let mut p = [0.0; MAX_DIM];
        for a in 0..grid.n() {
            p[a] = (sum[a] / k).rem_euclid(grid.period(a));
        }
        let extent = self
            .cells
            .iter()
            .map(|&c| grid.periodic_distance(&p, &grid.coords(c)))
            .fold(0.0, f64::max);
        Some((p, extent))
    }
}

/// Builds `g₀` and its singular set from a spec.
pub fn make_initial_metric(
    spec: &InitialDataSpec,
    grid: &Grid,
) -> Result<(MetricField, SingularSetMask)> {
    spec.check(grid)?;
    let lam = spec.lambda_bound()?;
    if lam > spec.lambda_cap * (1.0 + 1e-12) {
        return Err(Error::InitialData(format!(
            "amplitude {} gives Λ₀ = {lam:.6} above lambda_cap {}",
            spec.amplitude, spec.lambda_cap
        )));
    }
    let n = grid.n();
    let g = *grid;
    let a = spec.amplitude;
    match spec.kind {
        InitialKind::Flat => Ok((MetricField::identity(g), SingularSetMask::empty(g))),
        InitialKind::ConformalBump => {
            let c = spec
                .centers
                .first()
                .cloned()
                .unwrap_or_else(|| vec![0.0; n]);
            let m = MetricField::from_fn(g, move |x| {
                let phi = a * (x[0] - c[0]).sin() * (x[1] - c[1]).sin();
                scaled_identity((2.0 * phi).exp())
            });
            Ok((m, SingularSetMask::empty(g)))
        }
        InitialKind::HoelderCone | InitialKind::MorreyFamily => {
            let apexes: Vec<Point> = spec.centers.iter().map(|c| offset_apex(&g, c)).collect();
            let s = spec.exponent;
            let support = spec.support;
            let radial = spec.kind == InitialKind::MorreyFamily;
            let ap = apexes.clone();
            let m = MetricField::from_fn(g, move |x| {
                let mut out = linalg::IDENTITY;
                let mut conformal = 0.0;
                for p in &ap {
                    let mut dx = [0.0; MAX_DIM];
                    for k in 0..n {
                        dx[k] = g.periodic_delta(p[k], x[k], k);
                    }
                    let rho = (0..n).map(|k| dx[k] * dx[k]).sum::<f64>().sqrt();
                    let f = a * cone_profile(rho, s, support);
                    if radial {
                        for i in 0..n {
                            for j in 0..n {
                                out[i][j] += f * dx[i] * dx[j] / (rho * rho);
                            }
                        }
                    } else {
                        conformal += f;
                    }
                }
                if !radial {
                    for (i, row) in out.iter_mut().enumerate().take(n) {
                        row[i] += conformal;
                    }
                }
                out
            });
            Ok((m, SingularSetMask::points(g, &apexes)))
        }
        InitialKind::RandomW1p => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let kmax = (g.dims().iter().copied().min().unwrap_or(8) / 4).max(2) as i64;
            let mut modes: Vec<([f64; MAX_DIM], f64, f64)> = Vec::new();
            let mut norm = 0.0;
            let range = if n == 3 { kmax } else { 0 };
            for k0 in -kmax..=kmax {
                for k1 in -kmax..=kmax {
                    for k2 in -range..=range {
                        let kk = [k0 as f64, k1 as f64, k2 as f64];
                        let mag = (k0 * k0 + k1 * k1 + k2 * k2) as f64;
                        if mag == 0.0 || mag.sqrt() > kmax as f64 {
                            continue;
                        }
                        let w = mag.sqrt().powf(-(1.0 + spec.exponent));
                        let phase = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
                        let amp = w * (rng.gen::<f64>() - 0.5) * 2.0;
                        norm += amp.abs();
                        let mut wave = [0.0; MAX_DIM];
                        for ax in 0..n {
                            wave[ax] = kk[ax] * 2.0 * std::f64::consts::PI / g.period(ax);
                        }
                        modes.push((wave, amp, phase));
                    }
                }
            }
            let scale = if norm > 0.0 { a / norm } else { 0.0 };
            let m = MetricField::from_fn(g, move |x| {
                let mut phi = 0.0;
                for (wave, amp, phase) in &modes {
                    let arg: f64 = (0..n).map(|k| wave[k] * x[k]).sum::<f64>() + phase;
                    phi += amp * arg.cos();
                }
                scaled_identity((2.0 * scale * phi).exp())
            });
            Ok((m, SingularSetMask::empty(g)))
        }
    }
}

fn scaled_identity(s: f64) -> Mat {
    let mut m = linalg::IDENTITY;
    for (i, row) in m.iter_mut().enumerate() {
        row[i] *= s;
    }
    m
}

/// Extreme eigenvalues of `g` relative to `h` over all cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiLipschitz {
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl BiLipschitz {
    /// `Λ = max(1/λ_min, λ_max)`.
    pub fn lambda(&self) -> f64 {
        (1.0 / self.lambda_min).max(self.lambda_max)
    }
}

pub fn bilipschitz_constants(g: &MetricField, bg: &BackgroundGeometry) -> Result<BiLipschitz> {
    g.tensor().check_finite()?;
    let n = g.n();
    let e = par::map(g.grid().cell_count(), |c| {
        let ev = bg.relative_eigenvalues(&g.at(c), c);
        (ev[0], ev[n - 1])
    });
    let lambda_min = e.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
    let lambda_max = e.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(BiLipschitz {
        lambda_min,
        lambda_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifierConfig {
    /// Scale index `i`; the kernel radius is `chart_radius / i`.
    pub index: usize,
    /// Radius of the near-Σ chart, a ball around the mask centroid.
    pub chart_radius: f64,
    /// Width of the partition-of-unity transition at the chart edge.
    pub overlap: f64,
}

impl MollifierConfig {
    pub fn kernel_radius(&self) -> f64 {
        self.chart_radius / self.index as f64
    }
}

/// Discrete mollifier weights `e^{-1/(1-|y|^2)}` on the grid ball of
/// `radius`, normalised to sum to one.
pub fn mollifier_weights(grid: &Grid, radius: f64) -> Vec<([isize; MAX_DIM], f64)> {
    let mut w: Vec<([isize; MAX_DIM], f64)> = grid
        .ball_offsets(radius)
        .into_iter()
        .map(|o| {
            let r2: f64 = (0..grid.n())
                .map(|a| (o[a] as f64 * grid.spacing()[a] / radius).powi(2))
                .sum();
            (o, (-1.0 / (1.0 - r2)).exp())
        })
        .filter(|(_, v)| *v > 0.0)
        .collect();
    if w.is_empty() {
        w.push(([0; MAX_DIM], 1.0));
    }
    let total: f64 = w.iter().map(|(_, v)| v).sum();
    for (_, v) in w.iter_mut() {
        *v /= total;
    }
    w
}

/// Partition-of-unity weight of the near-Σ chart at every cell: 1 inside
/// `chart_radius - overlap` of the centroid, 0 beyond `chart_radius`.
pub fn chart_weight(grid: &Grid, center: &Point, cfg: &MollifierConfig) -> Vec<f64> {
    let inner = cfg.chart_radius - cfg.overlap;
    par::map(grid.cell_count(), |c| {
        let rho = grid.periodic_distance(center, &grid.coords(c));
        1.0 - smooth_step((rho - inner) / cfg.overlap)
    })
}

/// Two-chart mollification `g_i = φ (η_{1/i} * g₀) + (1 - φ) g₀`.
///
/// `φ` is the near-Σ chart weight. The blend is written as
/// `g₀ + φ Σ w (g₀(· - y) - g₀)`, so constant data is reproduced exactly and
/// `g_i = g₀` exactly wherever `φ = 0`.
pub fn mollify(
    g0: &MetricField,
    mask: &SingularSetMask,
    cfg: &MollifierConfig,
) -> Result<MetricField> {
    if cfg.index == 0 {
        return Err(Error::InvalidInput(
            "mollifier index must be at least 1".into(),
        ));
    }
    if !(cfg.overlap > 0.0 && cfg.overlap < cfg.chart_radius) {
        return Err(Error::InvalidInput(format!(
            "overlap {} must lie in (0, chart_radius = {})",
            cfg.overlap, cfg.chart_radius
        )));
    }
    let grid = *g0.grid();
    if cfg.chart_radius >= 0.5 * grid.min_period() {
        return Err(Error::InvalidInput(
            "chart radius exceeds half a period".into(),
        ));
    }
    let (center, extent) = match mask.centroid_and_extent() {
        Some(v) => v,
        None => {
            let mut p = [0.0; MAX_DIM];
            for a in 0..grid.n() {
                p[a] = 0.5 * grid.period(a);
            }
            (p, 0.0)
        }
    };
    let required = extent + cfg.overlap;
    if cfg.chart_radius <= required {
        return Err(Error::ChartTooSmall {
            chart_radius: cfg.chart_radius,
            required,
        });
    }
    let n = grid.n();
    let w = mollifier_weights(&grid, cfg.kernel_radius());
    let phi = chart_weight(&grid, &center, cfg);
    let src = g0.data();
    let width = n * n;
    let mut out = vec![0.0; src.len()];
    par::fill(&mut out, width, |c, o| {
        let own = &src[c * width..(c + 1) * width];
        if phi[c] == 0.0 {
            o.copy_from_slice(own);
            return;
        }
        // convolve increments so constant data comes back bit for bit
        let mut acc = [0.0; 9];
        for (off, wt) in &w {
            let nb = grid.offset(c, off) * width;
            for k in 0..width {
                acc[k] += wt * (src[nb + k] - own[k]);
            }
        }
        for k in 0..width {
            o[k] = own[k] + phi[c] * acc[k];
        }
    });
    MetricField::from_components(grid, out)
}
