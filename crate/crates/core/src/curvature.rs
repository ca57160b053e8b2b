//! Lee–LeFloch distributional scalar curvature.
//!
//! For `g ∈ L^∞ ∩ W^{1,2}` the pairing with a test function `u` is
//!
//! ```text
//! ⟨⟨R_g, u⟩⟩ = ∫ ( -V·∇̃(u ρ) + F u ρ ) dμ_h,     ρ = dμ_g / dμ_h,
//! ```
//!
//! which needs only first derivatives of `g`. For `C²` metrics it agrees with
//! `∫ R_g u dμ_g`.

use crate::analysis::{linear_fit, tube_volume_codimension};
use crate::error::{Error, Result};
use crate::fields::SingularSetMask;
use crate::geometry;
use crate::grid::{Grid, Point, MAX_DIM};
use crate::linalg;
use crate::metric::{BackgroundGeometry, MetricField};
use crate::par;
use crate::tensor::{ScalarField, Slot, TensorField};

#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    Everywhere,
    Ball {
        center: Point,
        radius: f64,
    },
    /// Cells closer than `radius` to a mask.
    Tube {
        radius: f64,
    },
}

/// Non-negative scalar field with a declared support.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    values: ScalarField,
    support: Support,
    sup_gradient: f64,
}

fn sup_gradient(u: &ScalarField) -> f64 {
    let grid = u.grid();
    let d = geometry::gradient_raw(grid, u.data(), 1);
    d.chunks(grid.n())
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Fifth-order smoothstep `6x⁵ - 15x⁴ + 10x³` clamped to `[0, 1]`.
pub fn quintic_step(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (x * (6.0 * x - 15.0) + 10.0)
}

impl TestFunction {
    /// Validates `u >= 0` and, for ball supports, `u = 0` outside the ball.
    pub fn from_field(values: ScalarField, support: Support) -> Result<Self> {
        let grid = *values.grid();
        if let Some(c) = values.data().iter().position(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "test function negative or non-finite at cell {c}"
            )));
        }
        match &support {
            Support::Everywhere => {}
            Support::Ball { center, radius } => {
                let outside = (0..grid.cell_count()).find(|&c| {
                    values.get(c) != 0.0
                        && grid.periodic_distance(center, &grid.coords(c)) >= *radius
                });
                if let Some(c) = outside {
                    return Err(Error::InvalidInput(format!(
                        "test function nonzero outside its ball at cell {c}"
                    )));
                }
            }
            Support::Tube { .. } => {
                return Err(Error::InvalidInput(
                    "tube supports come from cutoff_family only".into(),
                ))
            }
        }
        let sup_gradient = sup_gradient(&values);
        Ok(Self {
            values,
            support,
            sup_gradient,
        })
    }

    pub fn constant(grid: Grid, value: f64) -> Result<Self> {
        Self::from_field(ScalarField::constant(grid, value), Support::Everywhere)
    }

    /// Smooth bump `exp(1 - 1/(1 - ρ²/R²))`, peak 1 at `center`.
    pub fn bump(grid: Grid, center: Point, radius: f64) -> Result<Self> {
        let u = ScalarField::from_fn(grid, |x| {
            let s = grid.periodic_distance(&center, x) / radius;
            if s < 1.0 {
                (1.0 - 1.0 / (1.0 - s * s)).exp()
            } else {
                0.0
            }
        });
        Self::from_field(u, Support::Ball { center, radius })
    }

    /// Equal to 1 within `inner` of `center`, smoothly zero by `outer`.
    pub fn plateau(grid: Grid, center: Point, inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && outer > inner) {
            return Err(Error::InvalidInput(
                "plateau needs 0 < inner < outer".into(),
            ));
        }
        let u = ScalarField::from_fn(grid, |x| {
            let r = grid.periodic_distance(&center, x);
            1.0 - crate::fields::smooth_step((r - inner) / (outer - inner))
        });
        Self::from_field(
            u,
            Support::Ball {
                center,
                radius: outer,
            },
        )
    }

    pub fn values(&self) -> &ScalarField {
        &self.values
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    /// `sup |∇u|` measured with central differences.
    pub fn sup_gradient(&self) -> f64 {
        self.sup_gradient
    }

    pub fn c1_norm(&self) -> f64 {
        self.values.sup_abs() + self.sup_gradient
    }

    /// Pointwise product; keeps the tighter of the two supports.
    pub fn product(&self, other: &TestFunction) -> TestFunction {
        let values = self.values.zip_with(&other.values, |a, b| a * b);
        let support = match (&self.support, &other.support) {
            (Support::Everywhere, s) => s.clone(),
            (s, _) => s.clone(),
        };
        let sup_gradient = sup_gradient(&values);
        TestFunction {
            values,
            support,
            sup_gradient,
        }
    }
}

/// Cutoff `η_ε`: 1 within `ε` of the mask, 0 beyond `2ε`, quintic ramp in
/// the distance between.
pub fn cutoff_family(mask: &SingularSetMask, grid: &Grid, eps: f64) -> Result<TestFunction> {
    let h = grid.min_spacing();
    if eps < 4.0 * h {
        return Err(Error::InvalidInput(format!(
            "cutoff radius {eps} below four cells ({:.4})",
            4.0 * h
        )));
    }
    if mask.grid() != grid {
        return Err(Error::InvalidInput("mask lives on a different grid".into()));
    }
    let dist = mask.distance_field(2.0 * eps);
    let data: Vec<f64> = dist
        .iter()
        .map(|&d| {
            if d <= eps {
                1.0
            } else {
                1.0 - quintic_step((d - eps) / eps)
            }
        })
        .collect();
    let values = ScalarField::from_data(*grid, data)?;
    let sup_gradient = sup_gradient(&values);
    Ok(TestFunction {
        values,
        support: Support::Tube { radius: 2.0 * eps },
        sup_gradient,
    })
}

#[derive(Debug, Clone)]
pub struct LeeLeFlochFields {
    /// `Ψ^k_{ij}`, slots `[Contra, Co, Co]`.
    pub psi: TensorField,
    /// `V^k`.
    pub v: TensorField,
    pub f: ScalarField,
    /// `dμ_g / dμ_h = sqrt(det g / det h)`.
    pub density: ScalarField,
}

pub fn lee_lefloch_fields(g: &MetricField, bg: &BackgroundGeometry) -> Result<LeeLeFlochFields> {
    let grid = *g.grid();
    let n = grid.n();
    let (n2, n3) = (n * n, n * n * n);
    let inv = g.inverses()?;
    let d = geometry::covariant_derivative(g.tensor(), bg, 1)?;
    let cells = grid.cell_count();

    let mut psi = vec![0.0; n3 * cells];
    par::fill(&mut psi, n3, |c, o| {
        let dc = d.cell(c);
        let dd = |a: usize, b: usize, e: usize| dc[a * n2 + b * n + e];
        let gi = &inv[c].0;
        for i in 0..n {
            for j in i..n {
                for k in 0..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        s += gi[k][l] * (dd(i, j, l) + dd(j, i, l) - dd(l, i, j));
                    }
                    o[k * n2 + i * n + j] = 0.5 * s;
                    o[k * n2 + j * n + i] = 0.5 * s;
                }
            }
        }
    });

    let per_cell = par::map(cells, |c| {
        let gi = &inv[c].0;
        let ps = &psi[c * n3..(c + 1) * n3];
        let p = |k: usize, i: usize, j: usize| ps[k * n2 + i * n + j];
        let dc = d.cell(c);
        // ∇̃_k g^{ij} = -g^{ia} g^{jb} ∇̃_k g_{ab}
        let mut dgi = [0.0; 27];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for a in 0..n {
                        for b in 0..n {
                            s += gi[i][a] * gi[j][b] * dc[k * n2 + a * n + b];
                        }
                    }
                    dgi[k * n2 + i * n + j] = -s;
                }
            }
        }
        let mut v = [0.0; MAX_DIM];
        for (k, vk) in v.iter_mut().enumerate().take(n) {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += gi[i][j] * p(k, i, j) - gi[i][k] * p(j, j, i);
                }
            }
            *vk = s;
        }
        let mut f = 0.0;
        if !bg.is_flat() {
            let hi = bg.inverse_at(c);
            let r = bg.riemann().cell(c);
            for j in 0..n {
                for l in 0..n {
                    let mut ric = 0.0;
                    for i in 0..n {
                        for k in 0..n {
                            ric += hi[i][k] * r[((i * n + j) * n + k) * n + l];
                        }
                    }
                    f += gi[j][l] * ric;
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    f -= dgi[k * n2 + i * n + j] * p(k, i, j);
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    f += dgi[k * n2 + i * n + k] * p(j, j, i);
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    for l in 0..n {
                        s += p(k, k, l) * p(l, i, j) - p(k, j, l) * p(l, i, k);
                    }
                }
                f += gi[i][j] * s;
            }
        }
        let hdet = if bg.is_flat() {
            1.0
        } else {
            linalg::det(&bg.metric().at(c), n)
        };
        (v, f, (inv[c].1 / hdet).sqrt())
    });

    let mut vdata = vec![0.0; n * cells];
    for (c, (v, _, _)) in per_cell.iter().enumerate() {
        vdata[c * n..(c + 1) * n].copy_from_slice(&v[..n]);
    }
    Ok(LeeLeFlochFields {
        psi: TensorField::from_raw(grid, vec![Slot::Contra, Slot::Co, Slot::Co], psi),
        v: TensorField::from_raw(grid, vec![Slot::Contra], vdata),
        f: ScalarField::from_raw(grid, per_cell.iter().map(|x| x.1).collect()),
        density: ScalarField::from_raw(grid, per_cell.iter().map(|x| x.2).collect()),
    })
}

/// Value of a pairing together with the size of its integrand, used as the
/// scale for sign tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pairing {
    pub value: f64,
    pub scale: f64,
}

fn pairing_with(
    fields: &LeeLeFlochFields,
    bg: &BackgroundGeometry,
    u: &ScalarField,
    a: f64,
) -> Pairing {
    let grid = *u.grid();
    let n = grid.n();
    let w: Vec<f64> = u
        .data()
        .iter()
        .zip(fields.density.data())
        .map(|(x, r)| x * r)
        .collect();
    let dw = geometry::gradient_raw(&grid, &w, 1);
    let cv = grid.cell_volume();
    let parts = par::map(grid.cell_count(), |c| {
        let vc = fields.v.cell(c);
        let mut vd = 0.0;
        for k in 0..n {
            vd += vc[k] * dw[c * n + k];
        }
        let mu = bg.volume_density(c) * cv;
        let fw = fields.f.get(c) * w[c];
        let aw = a * w[c];
        ((-vd + fw - aw) * mu, (vd.abs() + fw.abs() + aw.abs()) * mu)
    });
    let value = parts.iter().map(|p| p.0).sum();
    let scale = parts.iter().map(|p| p.1).sum();
    Pairing { value, scale }
}

/// `⟨⟨R_g - a, u⟩⟩` by cell-midpoint quadrature; the `a` term is
/// `a ∫ u dμ_g` with the same density field.
pub fn distributional_scalar_pairing(
    g: &MetricField,
    bg: &BackgroundGeometry,
    u: &TestFunction,
    a: f64,
) -> Result<f64> {
    Ok(distributional_pairing_detailed(g, bg, u, a)?.value)
}

pub fn distributional_pairing_detailed(
    g: &MetricField,
    bg: &BackgroundGeometry,
    u: &TestFunction,
    a: f64,
) -> Result<Pairing> {
    if u.values().grid() != g.grid() {
        return Err(Error::InvalidInput(
            "test function on a different grid".into(),
        ));
    }
    let fields = lee_lefloch_fields(g, bg)?;
    Ok(pairing_with(&fields, bg, u.values(), a))
}

/// `∫ (R_g - a) u dμ_g` from the classical curvature.
pub fn classical_scalar_pairing(g: &MetricField, u: &TestFunction, a: f64) -> Result<f64> {
    let grid = *g.grid();
    let inv = g.inverses()?;
    let r = geometry::curvature_tensors(g)?.scalar;
    let cv = grid.cell_volume();
    let terms: Vec<f64> = (0..grid.cell_count())
        .map(|c| {
            let dmu = (inv[c].1).sqrt() * cv;
            (r.get(c) - a) * u.values().get(c) * dmu
        })
        .collect();
    Ok(par::sum(&terms))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemovabilityRow {
    pub eps: f64,
    pub terms: [f64; 4],
    /// `⟨R_g - a, η_ε u⟩`.
    pub pairing: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemovabilityReport {
    /// Fitted codimension of the mask.
    pub d: f64,
    /// Checked surrogate `δ' = δ/2`.
    pub delta_prime: f64,
    pub required_codimension: f64,
    pub rows: Vec<RemovabilityRow>,
    /// Log-log slopes of I–IV in ε; NaN when a term vanishes identically.
    pub fitted_rates: [f64; 4],
    /// `d-1+δ/p`, `d-2+δ/p`, `d-2+2δ/p`, `d`.
    pub predicted_rates: [f64; 4],
    /// Each term non-increasing as ε shrinks.
    pub decreasing: [bool; 4],
    pub total_pairing: f64,
    pub scale: f64,
}

impl RemovabilityReport {
    pub const CSV_HEADER: &'static str = "eps,I,II,III,IV,pairing";

    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{:e},{:e},{:e},{:e},{:e},{:e}",
                    r.eps, r.terms[0], r.terms[1], r.terms[2], r.terms[3], r.pairing
                )
            })
            .collect()
    }

    /// Total pairing at least `-tol · scale`.
    pub fn nonnegative_within(&self, tol: f64) -> bool {
        self.total_pairing >= -tol * self.scale
    }
}

/// Removability of a classical lower bound `R_g >= a` across `Σ`.
///
/// For each ε the four bounding terms of the Hölder split are evaluated on
/// the support `Σ(2ε)` of the cutoff, with `G = ∫|∇̃g|^p`, `V = Vol_h`:
///
/// ```text
/// I   = C G^{1/p} V^{1-1/p}
/// II  = C G^{1/p} (∫|∇̃η_ε|^{p/(p-1)})^{(p-1)/p}
/// III = C G^{2/p} V^{1-2/p}
/// IV  = sup|tr_g R̃ic - a| · sup(u ρ) · V
/// ```
///
/// where `C = sup(uρ) + sup|∇̃(uρ)|`. Refuses when the fitted codimension is
/// below `2 - δ'/p` with `δ' = δ/2`.
#[allow(clippy::too_many_arguments)]
pub fn removability_experiment(
    g: &MetricField,
    mask: &SingularSetMask,
    bg: &BackgroundGeometry,
    p: f64,
    delta: f64,
    u: &TestFunction,
    a: f64,
    eps_list: &[f64],
) -> Result<RemovabilityReport> {
    if !(p >= 2.0) {
        return Err(Error::InvalidInput(format!(
            "removability needs p >= 2, got {p}"
        )));
    }
    if !(delta > 0.0 && delta <= p) {
        return Err(Error::InvalidInput(format!(
            "delta = {delta} must lie in (0, p]"
        )));
    }
    let grid = *g.grid();
    let codim = tube_volume_codimension(mask, &grid, eps_list)?;
    let delta_prime = 0.5 * delta;
    let required = 2.0 - delta_prime / p;
    if codim.d0 < required {
        return Err(Error::Codimension {
            fitted: codim.d0,
            required,
        });
    }
    let d = codim.d0;
    let fields = lee_lefloch_fields(g, bg)?;
    let dg = geometry::covariant_derivative(g.tensor(), bg, 1)?;
    let grad_p: Vec<f64> = geometry::tensor_norm_h(&dg, bg)
        .data()
        .iter()
        .map(|v| v.powf(p))
        .collect();
    let w: Vec<f64> = u
        .values()
        .data()
        .iter()
        .zip(fields.density.data())
        .map(|(x, r)| x * r)
        .collect();
    let w_sup = par::max(&w).max(0.0);
    let w_field = ScalarField::from_raw(grid, w.clone());
    let cu = w_sup + sup_gradient(&w_field);
    // tr_g R̃ic per cell, zero on flat backgrounds
    let inv = g.inverses()?;
    let n = grid.n();
    let tr_ric: Vec<f64> = par::map(grid.cell_count(), |c| {
        if bg.is_flat() {
            return 0.0;
        }
        let gi = &inv[c].0;
        let hi = bg.inverse_at(c);
        let r = bg.riemann().cell(c);
        let mut t = 0.0;
        for j in 0..n {
            for l in 0..n {
                let mut ric = 0.0;
                for i in 0..n {
                    for k in 0..n {
                        ric += hi[i][k] * r[((i * n + j) * n + k) * n + l];
                    }
                }
                t += gi[j][l] * ric;
            }
        }
        t
    });
    let q = p / (p - 1.0);
    let cv = grid.cell_volume();
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let eta = cutoff_family(mask, &grid, eps)?;
        let deta = geometry::gradient_raw(&grid, eta.values().data(), 1);
        let mut gsum = 0.0;
        let mut vol = 0.0;
        let mut esum = 0.0;
        let mut curv_sup: f64 = 0.0;
        for c in 0..grid.cell_count() {
            let in_tube = eta.values().get(c) > 0.0 || (0..n).any(|k| deta[c * n + k] != 0.0);
            if !in_tube {
                continue;
            }
            let mu = bg.volume_density(c) * cv;
            gsum += grad_p[c] * mu;
            vol += mu;
            let gn = (0..n).map(|k| deta[c * n + k].powi(2)).sum::<f64>().sqrt();
            esum += gn.powf(q) * mu;
            curv_sup = curv_sup.max((tr_ric[c] - a).abs());
        }
        let i1 = cu * gsum.powf(1.0 / p) * vol.powf(1.0 - 1.0 / p);
        let i2 = cu * gsum.powf(1.0 / p) * esum.powf(1.0 / q);
        let i3 = cu * gsum.powf(2.0 / p) * vol.powf(1.0 - 2.0 / p);
        let i4 = curv_sup * w_sup * vol;
        let pairing = pairing_with(&fields, bg, eta.product(u).values(), a).value;
        rows.push(RemovabilityRow {
            eps,
            terms: [i1, i2, i3, i4],
            pairing,
        });
    }
    let mut fitted = [f64::NAN; 4];
    let mut decreasing = [true; 4];
    for k in 0..4 {
        let vals: Vec<f64> = rows.iter().map(|r| r.terms[k]).collect();
        decreasing[k] = vals.windows(2).all(|w| w[0] <= w[1]);
        if vals.iter().all(|v| *v > 0.0) {
            let x: Vec<f64> = rows.iter().map(|r| r.eps.ln()).collect();
            let y: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
            fitted[k] = linear_fit(&x, &y).0;
        }
    }
    let total = pairing_with(&fields, bg, u.values(), a);
    let s = delta / p;
    Ok(RemovabilityReport {
        d,
        delta_prime,
        required_codimension: required,
        rows,
        fitted_rates: fitted,
        predicted_rates: [d - 1.0 + s, d - 2.0 + s, d - 2.0 + 2.0 * s, d],
        decreasing,
        total_pairing: total.value,
        scale: total.scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn conformal(grid: Grid, phi: impl Fn(&Point) -> f64 + Sync + Send) -> MetricField {
        MetricField::from_fn(grid, move |x| {
            let e = (2.0 * phi(x)).exp();
            [[e, 0.0, 0.0], [0.0, e, 0.0], [0.0, 0.0, e]]
        })
    }

    #[test]
    fn flat_fields_vanish() {
        let g = Grid::cubic(2, 16, 2.0 * PI).unwrap();
        let bg = BackgroundGeometry::flat(g);
        let f = lee_lefloch_fields(&MetricField::identity(g), &bg).unwrap();
        assert_eq!(f.psi.max_abs(), 0.0);
        assert_eq!(f.v.max_abs(), 0.0);
        assert_eq!(f.f.sup_abs(), 0.0);
        assert!(f.density.data().iter().all(|d| *d == 1.0));
        let u = TestFunction::bump(g, [3.0, 3.0, 0.0], 1.0).unwrap();
        assert_eq!(
            distributional_scalar_pairing(&MetricField::identity(g), &bg, &u, 0.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn constant_metric_density() {
        let g = Grid::cubic(3, 8, 1.0).unwrap();
        let bg = BackgroundGeometry::flat(g);
        let m = MetricField::identity(g).scaled(4.0);
        let f = lee_lefloch_fields(&m, &bg).unwrap();
        assert_eq!(f.v.max_abs(), 0.0);
        assert_eq!(f.f.sup_abs(), 0.0);
        assert!(f.density.data().iter().all(|d| (*d - 8.0).abs() < 1e-14));
    }

    #[test]
    fn conformal_fields_match_closed_form() {
        // 2D, g = e^{2φ}δ: V^k = -2 e^{-2φ} ∂_k φ, F = -4 e^{-2φ} |∇φ|²
        let mut errs = Vec::new();
        for cells in [32, 64] {
            let g = Grid::cubic(2, cells, 2.0 * PI).unwrap();
            let bg = BackgroundGeometry::flat(g);
            let phi = |x: &Point| 0.2 * x[0].sin() * (x[1] + 0.5).cos();
            let m = conformal(g, phi);
            let f = lee_lefloch_fields(&m, &bg).unwrap();
            let mut err: f64 = 0.0;
            for c in 0..g.cell_count() {
                let x = g.coords(c);
                let e = (-2.0 * phi(&x)).exp();
                let d = [
                    0.2 * x[0].cos() * (x[1] + 0.5).cos(),
                    -0.2 * x[0].sin() * (x[1] + 0.5).sin(),
                ];
                err = err.max((f.v.cell(c)[0] + 2.0 * e * d[0]).abs());
                err = err.max((f.v.cell(c)[1] + 2.0 * e * d[1]).abs());
                err = err.max((f.f.get(c) + 4.0 * e * (d[0] * d[0] + d[1] * d[1])).abs());
            }
            errs.push(err);
        }
        assert!(errs[0] / errs[1] > 3.5, "{errs:?}");
    }

    #[test]
    fn pairing_is_linear_and_shifts_with_a() {
        let g = Grid::cubic(2, 32, 2.0 * PI).unwrap();
        let bg = BackgroundGeometry::flat(g);
        let m = conformal(g, |x| 0.1 * x[0].cos());
        let u1 = TestFunction::bump(g, [2.0, 2.0, 0.0], 1.5).unwrap();
        let u2 = TestFunction::bump(g, [4.0, 3.0, 0.0], 1.0).unwrap();
        let sum = TestFunction::from_field(
            u1.values().zip_with(u2.values(), |a, b| a + b),
            Support::Everywhere,
        )
        .unwrap();
        let p1 = distributional_scalar_pairing(&m, &bg, &u1, 0.0).unwrap();
        let p2 = distributional_scalar_pairing(&m, &bg, &u2, 0.0).unwrap();
        let ps = distributional_scalar_pairing(&m, &bg, &sum, 0.0).unwrap();
        assert!((ps - p1 - p2).abs() < 1e-13);
        let shifted = distributional_scalar_pairing(&m, &bg, &u1, 0.7).unwrap();
        let fields = lee_lefloch_fields(&m, &bg).unwrap();
        let mass: f64 = (0..g.cell_count())
            .map(|c| u1.values().get(c) * fields.density.get(c) * g.cell_volume())
            .sum();
        assert!((p1 - shifted - 0.7 * mass).abs() < 1e-12);
    }

    #[test]
    fn agrees_with_classical_curvature() {
        let mut gaps = Vec::new();
        for cells in [32, 64] {
            let g = Grid::cubic(2, cells, 2.0 * PI).unwrap();
            let bg = BackgroundGeometry::flat(g);
            let m = conformal(g, |x| 0.15 * x[0].sin() + 0.1 * x[1].cos());
            let u = TestFunction::bump(g, [PI, PI, 0.0], 2.0).unwrap();
            let d = distributional_scalar_pairing(&m, &bg, &u, 0.0).unwrap();
            let c = classical_scalar_pairing(&m, &u, 0.0).unwrap();
            gaps.push((d - c).abs());
        }
        assert!(gaps[0] / gaps[1] > 3.4, "{gaps:?}");
    }

    #[test]
    fn cutoff_properties() {
        let g = Grid::cubic(2, 128, 2.0 * PI).unwrap();
        let mask = SingularSetMask::points(g, &[[PI, PI, 0.0]]);
        for eps in [0.2, 0.4] {
            let eta = cutoff_family(&mask, &g, eps).unwrap();
            for &c in mask.cells() {
                assert_eq!(eta.values().get(c), 1.0);
            }
            let area =
                eta.values().data().iter().filter(|v| **v > 0.0).count() as f64 * g.cell_volume();
            assert!(area <= PI * (2.0 * eps).powi(2) * 1.2);
            assert!(eta.sup_gradient() * eps <= 4.0);
        }
        assert!(cutoff_family(&mask, &g, 0.05).is_err());
    }

    #[test]
    fn test_function_validation() {
        let g = Grid::cubic(2, 16, 1.0).unwrap();
        let neg = ScalarField::constant(g, -1.0);
        assert!(TestFunction::from_field(neg, Support::Everywhere).is_err());
        let one = ScalarField::constant(g, 1.0);
        assert!(TestFunction::from_field(
            one,
            Support::Ball {
                center: [0.5, 0.5, 0.0],
                radius: 0.1
            }
        )
        .is_err());
    }

    #[test]
    fn segment_mask_is_refused() {
        let g = Grid::cubic(2, 128, 2.0 * PI).unwrap();
        let bg = BackgroundGeometry::flat(g);
        let mask = SingularSetMask::segment(g, [1.0, 3.0, 0.0], [4.0, 3.0, 0.0]);
        let u = TestFunction::constant(g, 1.0).unwrap();
        let r = removability_experiment(
            &MetricField::identity(g),
            &mask,
            &bg,
            2.0,
            1.0,
            &u,
            0.0,
            &[0.2, 0.4, 0.8],
        );
        assert!(matches!(r, Err(Error::Codimension { .. })));
    }

    #[test]
    fn flat_removability_terms_vanish() {
        let g = Grid::cubic(2, 128, 2.0 * PI).unwrap();
        let bg = BackgroundGeometry::flat(g);
        let mask = SingularSetMask::points(g, &[[PI, PI, 0.0]]);
        let u = TestFunction::constant(g, 1.0).unwrap();
        let r = removability_experiment(
            &MetricField::identity(g),
            &mask,
            &bg,
            2.0,
            1.0,
            &u,
            0.0,
            &[0.2, 0.4, 0.8],
        )
        .unwrap();
        for row in &r.rows {
            assert_eq!(row.terms, [0.0; 4]);
            assert_eq!(row.pairing, 0.0);
        }
        assert_eq!(r.total_pairing, 0.0);
    }
}
