//! Meters: Morrey functional, decay exponents, tube-volume codimension and
//! distances of a trajectory to its initial data.

use crate::error::{Error, Result};
use crate::fields::SingularSetMask;
use crate::flow::FlowTrajectory;
use crate::geometry;
use crate::grid::Grid;
use crate::metric::{BackgroundGeometry, MetricField};
use crate::par;

/// Floor substituted for zero averages before taking logarithms.
pub const ZERO_FLOOR: f64 = 1e-300;

/// Ordinary least squares `y = a + b x`; returns `(b, a, r²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 && sxx > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    (slope, intercept, r2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorreyReport {
    pub p: f64,
    /// Fitted `δ`, clamped into `(0, p]`.
    pub delta_fit: f64,
    /// Slope plus `p` before clamping.
    pub delta_raw: f64,
    pub l0_fit: f64,
    pub r0: f64,
    /// `(r, max over centers of the ball average of |∇̃g|^p)`.
    pub table: Vec<(f64, f64)>,
    pub center_stride: usize,
}

impl MorreyReport {
    /// Smallest `L` with `avg(r) <= L r^{δ - p}` on every tabulated radius.
    pub fn constant_for(&self, delta: f64) -> f64 {
        self.table
            .iter()
            .map(|(r, a)| a * r.powf(self.p - delta))
            .fold(0.0, f64::max)
    }
}

/// Sup over a stride-2 center subsample of ball averages of `|∇̃g|^p`,
/// fitted to `L₀ r^{δ - p}`. The subsample under-approximates the sup over
/// all of `M`.
pub fn morrey_functional(
    g: &MetricField,
    bg: &BackgroundGeometry,
    p: f64,
    radii: &[f64],
) -> Result<MorreyReport> {
    morrey_functional_strided(g, bg, p, radii, 2)
}

/// As [`morrey_functional`] with an explicit center stride (1 = every cell).
pub fn morrey_functional_strided(
    g: &MetricField,
    bg: &BackgroundGeometry,
    p: f64,
    radii: &[f64],
    stride: usize,
) -> Result<MorreyReport> {
    if !(p >= 1.0) {
        return Err(Error::InvalidInput(format!(
            "Morrey exponent p = {p} must be >= 1"
        )));
    }
    let grid = *g.grid();
    let lo = 4.0 * grid.min_spacing();
    let hi = 0.25 * grid.min_period();
    if radii.len() < 2 {
        return Err(Error::InvalidInput(
            "Morrey fit needs at least two radii".into(),
        ));
    }
    if let Some(r) = radii.iter().find(|r| !(**r > lo && **r < hi)) {
        return Err(Error::InvalidInput(format!(
            "radius {r} outside the validity window ({lo:.4}, {hi:.4})"
        )));
    }
    let stride = stride.max(1);
    let d = geometry::covariant_derivative(g.tensor(), bg, 1)?;
    let norm = geometry::tensor_norm_h(&d, bg);
    let weight: Vec<f64> = (0..grid.cell_count())
        .map(|c| bg.volume_density(c))
        .collect();
    let f: Vec<f64> = norm
        .data()
        .iter()
        .zip(&weight)
        .map(|(v, w)| v.powf(p) * w)
        .collect();

    let centers: Vec<usize> = (0..grid.cell_count())
        .filter(|&c| {
            let idx = grid.multi_index(c);
            (0..grid.n()).all(|a| idx[a].is_multiple_of(stride))
        })
        .collect();

    let mut table = Vec::with_capacity(radii.len());
    for &r in radii {
        let offsets = grid.ball_offsets(r);
        let avgs = par::map(centers.len(), |k| {
            let c = centers[k];
            let mut num = 0.0;
            let mut den = 0.0;
            for o in &offsets {
                let q = grid.offset(c, o);
                num += f[q];
                den += weight[q];
            }
            num / den
        });
        table.push((r, par::max(&avgs)));
    }

    let r0 = radii.iter().copied().fold(0.0, f64::max);
    if table.iter().all(|(_, a)| *a == 0.0) {
        return Ok(MorreyReport {
            p,
            delta_fit: p,
            delta_raw: p,
            l0_fit: ZERO_FLOOR,
            r0,
            table,
            center_stride: stride,
        });
    }
    let x: Vec<f64> = table.iter().map(|(r, _)| r.ln()).collect();
    let y: Vec<f64> = table.iter().map(|(_, a)| a.max(ZERO_FLOOR).ln()).collect();
    let (slope, intercept, _) = linear_fit(&x, &y);
    let delta_raw = slope + p;
    Ok(MorreyReport {
        p,
        delta_fit: delta_raw.clamp(f64::MIN_POSITIVE, p),
        delta_raw,
        l0_fit: intercept.exp(),
        r0,
        table,
        center_stride: stride,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub samples: usize,
}

/// Least-squares slope of `log value` against `log t` over `window`.
pub fn fit_decay_exponent(series: &[(f64, f64)], window: (f64, f64)) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .collect();
    if let Some((t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "non-positive value {v} at t = {t}"
        )));
    }
    if pts.len() < 8 {
        return Err(Error::InvalidInput(format!(
            "{} samples in window, at least 8 needed",
            pts.len()
        )));
    }
    let x: Vec<f64> = pts.iter().map(|(t, _)| t.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|(_, v)| v.ln()).collect();
    let (slope, intercept, r2) = linear_fit(&x, &y);
    Ok(DecayFit {
        slope,
        intercept,
        r2,
        samples: pts.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodimReport {
    pub epsilons: Vec<f64>,
    pub volumes: Vec<f64>,
    pub d0: f64,
    /// Largest validated radius.
    pub b: f64,
    /// `max V(ε) / ε^{d₀}` over the validated radii.
    pub c: f64,
}

/// `Vol_h(Σ(ε))` by counting cells within `ε` of the mask, and the exponent
/// of a log-log fit.
pub fn tube_volume_codimension(
    mask: &SingularSetMask,
    grid: &Grid,
    epsilons: &[f64],
) -> Result<CodimReport> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    if mask.grid() != grid {
        return Err(Error::InvalidInput("mask lives on a different grid".into()));
    }
    if epsilons.len() < 2 {
        return Err(Error::InvalidInput(
            "codimension fit needs at least two radii".into(),
        ));
    }
    let floor = 2.0 * grid.min_spacing();
    for w in epsilons.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidInput("epsilons must increase".into()));
        }
    }
    if epsilons[0] < floor {
        return Err(Error::InvalidInput(format!(
            "epsilon {} below twice the spacing ({floor:.4})",
            epsilons[0]
        )));
    }
    let largest = epsilons[epsilons.len() - 1];
    let dist = mask.distance_field(largest);
    let mut sorted: Vec<f64> = dist.into_iter().filter(|d| d.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let cv = grid.cell_volume();
    let volumes: Vec<f64> = epsilons
        .iter()
        .map(|e| sorted.partition_point(|d| d < e) as f64 * cv)
        .collect();
    let x: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = volumes.iter().map(|v| v.ln()).collect();
    let (d0, _, _) = linear_fit(&x, &y);
    let d0 = d0.max(0.0);
    let c = epsilons
        .iter()
        .zip(&volumes)
        .map(|(e, v)| v / e.powf(d0))
        .fold(0.0, f64::max);
    Ok(CodimReport {
        epsilons: epsilons.to_vec(),
        volumes,
        d0,
        b: largest,
        c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub t: f64,
    pub c0_global: f64,
    pub c0_away: f64,
    pub c1_away: f64,
    pub c2_away: f64,
}

impl ConvergenceRow {
    pub const CSV_HEADER: &'static str = "t,c0_global,c0_away,c1_away,c2_away";

    pub fn csv_row(&self) -> String {
        format!(
            "{:e},{:e},{:e},{:e},{:e}",
            self.t, self.c0_global, self.c0_away, self.c1_away, self.c2_away
        )
    }
}

/// Per snapshot: `sup |g(t) - g₀|` over the torus, and `C⁰`, `C¹`, `C²`
/// distances over cells at least `margin` away from the mask.
pub fn convergence_meter(
    traj: &FlowTrajectory,
    g0: &MetricField,
    exclusion: &SingularSetMask,
    margin: f64,
    bg: &BackgroundGeometry,
) -> Result<Vec<ConvergenceRow>> {
    let grid = *g0.grid();
    let away: Vec<bool> = if exclusion.is_empty() {
        vec![true; grid.cell_count()]
    } else {
        exclusion
            .distance_field(margin)
            .iter()
            .map(|d| *d >= margin)
            .collect()
    };
    let sup_away = |v: &[f64]| {
        v.iter()
            .zip(&away)
            .filter(|(_, a)| **a)
            .map(|(x, _)| *x)
            .fold(0.0, f64::max)
    };
    let mut rows = Vec::new();
    for s in traj.snapshots() {
        let diff = s.metric.tensor().sub(g0.tensor())?;
        let c0 = geometry::tensor_norm_h(&diff, bg);
        let d1 = geometry::covariant_derivative(&diff, bg, 1)?;
        let c1 = geometry::tensor_norm_h(&d1, bg);
        let d2 = geometry::covariant_derivative(&d1, bg, 1)?;
        let c2 = geometry::tensor_norm_h(&d2, bg);
        rows.push(ConvergenceRow {
            t: s.t,
            c0_global: c0.max().max(0.0),
            c0_away: sup_away(c0.data()),
            c1_away: sup_away(c1.data()),
            c2_away: sup_away(c2.data()),
        });
    }
    Ok(rows)
}
