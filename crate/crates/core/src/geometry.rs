//! Discrete tensor calculus on periodic grids: central second-order
//! differences, Christoffel symbols, covariant derivatives with respect to
//! the background connection, curvature tensors and pointwise `h`-norms.
//!
//! Curvature sign convention: `R(∂_i, ∂_j)∂_k = R^l_{ijk} ∂_l` with
//! `R^l_{ijk} = ∂_i Γ^l_{jk} - ∂_j Γ^l_{ik} + Γ^l_{im} Γ^m_{jk} - Γ^l_{jm} Γ^m_{ik}`,
//! `R_{ijkl} = g_{km} R^m_{ijl}` (so `R_{ijij} > 0` on spheres),
//! `Ric_{jl} = g^{ik} R_{ijkl}` and `R = g^{jl} Ric_{jl}`.

use crate::error::{Error, Result};
use crate::grid::{Grid, MAX_DIM};
use crate::linalg::{self, Mat};
use crate::metric::{BackgroundGeometry, MetricField};
use crate::par;
use crate::tensor::{ScalarField, Slot, TensorField};

/// Central first differences of a `width`-component field.
/// Output layout per cell: `[axis][component]`.
pub fn gradient_raw(grid: &Grid, data: &[f64], width: usize) -> Vec<f64> {
    let n = grid.n();
    let mut out = vec![0.0; n * width * grid.cell_count()];
    let inv2h: Vec<f64> = grid.spacing().iter().map(|h| 0.5 / h).collect();
    par::fill(&mut out, n * width, |c, o| {
        let st = grid.unit_steps(c);
        for a in 0..n {
            let p = (c as isize + st[a][1]) as usize * width;
            let m = (c as isize + st[a][0]) as usize * width;
            let s = inv2h[a];
            let plus = &data[p..p + width];
            let minus = &data[m..m + width];
            for ((v, x), y) in o[a * width..(a + 1) * width]
                .iter_mut()
                .zip(plus)
                .zip(minus)
            {
                *v = (x - y) * s;
            }
        }
    });
    out
}

/// Compact second differences: three-point on the diagonal, four-corner on
/// mixed pairs. Output layout per cell: `[p][q][component]`, symmetric in
/// `(p, q)` bit-for-bit.
pub fn hessian_raw(grid: &Grid, data: &[f64], width: usize) -> Vec<f64> {
    let n = grid.n();
    let mut out = vec![0.0; n * n * width * grid.cell_count()];
    let h = grid.spacing().to_vec();
    par::fill(&mut out, n * n * width, |c, o| {
        hessian_cell(grid, &h, data, width, c, o);
    });
    out
}

#[inline]
pub(crate) fn hessian_cell(
    grid: &Grid,
    h: &[f64],
    data: &[f64],
    width: usize,
    c: usize,
    o: &mut [f64],
) {
    match grid.n() {
        2 => hessian_cell_n::<2>(grid, h, data, width, c, o),
        _ => hessian_cell_n::<3>(grid, h, data, width, c, o),
    }
}

#[inline(always)]
fn hessian_cell_n<const N: usize>(
    grid: &Grid,
    h: &[f64],
    data: &[f64],
    width: usize,
    c: usize,
    o: &mut [f64],
) {
    let n = N;
    let c0 = c * width;
    let st = grid.unit_steps(c);
    let at = |d: isize| (c as isize + d) as usize * width;
    for p in 0..n {
        let cp = at(st[p][1]);
        let cm = at(st[p][0]);
        let s = 1.0 / (h[p] * h[p]);
        for k in 0..width {
            o[(p * n + p) * width + k] = (data[cp + k] - 2.0 * data[c0 + k] + data[cm + k]) * s;
        }
        for q in p + 1..n {
            let pp = at(st[p][1] + st[q][1]);
            let pm = at(st[p][1] + st[q][0]);
            let mp = at(st[p][0] + st[q][1]);
            let mm = at(st[p][0] + st[q][0]);
            let s = 0.25 / (h[p] * h[q]);
            for k in 0..width {
                let v = (data[pp + k] - data[pm + k] - data[mp + k] + data[mm + k]) * s;
                o[(p * n + q) * width + k] = v;
                o[(q * n + p) * width + k] = v;
            }
        }
    }
}

/// Plain partial derivative `∂T`, derivative index prepended.
pub fn partial_derivative(t: &TensorField) -> TensorField {
    let grid = *t.grid();
    let data = gradient_raw(&grid, t.data(), t.width());
    let mut slots = vec![Slot::Co];
    slots.extend_from_slice(t.slots());
    TensorField::from_raw(grid, slots, data)
}

/// Christoffel symbols `Γ^k_{ij}` of `g`, stored with slots
/// `[Contra, Co, Co]` in index order `(k, i, j)`.
pub fn christoffels(g: &MetricField) -> Result<TensorField> {
    let inv = g.inverses()?;
    Ok(christoffels_with(g, &inv))
}

pub(crate) fn christoffels_with(g: &MetricField, inv: &[(Mat, f64)]) -> TensorField {
    let grid = *g.grid();
    let n = grid.n();
    let n2 = n * n;
    let dg = gradient_raw(&grid, g.data(), n2);
    let mut out = vec![0.0; n * n2 * grid.cell_count()];
    par::fill(&mut out, n * n2, |c, o| {
        let d = &dg[c * n * n2..(c + 1) * n * n2];
        let gi = &inv[c].0;
        christoffel_cell(n, d, gi, o);
    });
    TensorField::from_raw(grid, vec![Slot::Contra, Slot::Co, Slot::Co], out)
}

/// One cell of `Γ^k_{ij}` from `d[a][b][c] = ∂_a g_{bc}` and `g^{-1}`.
#[inline]
pub(crate) fn christoffel_cell(n: usize, d: &[f64], gi: &Mat, o: &mut [f64]) {
    let n2 = n * n;
    let dd = |a: usize, b: usize, c: usize| d[a * n2 + b * n + c];
    for i in 0..n {
        for j in i..n {
            let mut lowered = [0.0; MAX_DIM];
            for (l, v) in lowered.iter_mut().enumerate().take(n) {
                *v = dd(i, j, l) + dd(j, i, l) - dd(l, i, j);
            }
            for k in 0..n {
                let mut s = 0.0;
                for l in 0..n {
                    s += gi[k][l] * lowered[l];
                }
                let v = 0.5 * s;
                o[k * n2 + i * n + j] = v;
                o[k * n2 + j * n + i] = v;
            }
        }
    }
}

/// Digits of a flattened component index (slot order, base `n`).
#[inline]
fn digits(mut comp: usize, n: usize, rank: usize, out: &mut [usize]) {
    for s in (0..rank).rev() {
        out[s] = comp % n;
        comp /= n;
    }
}

/// `∇̃T` once: central differences plus background Christoffel corrections.
fn nabla_once(t: &TensorField, bg: &BackgroundGeometry) -> TensorField {
    let mut d = partial_derivative(t);
    if bg.is_flat() {
        return d;
    }
    let grid = *t.grid();
    let n = grid.n();
    let rank = t.rank();
    let width = t.width();
    let slots = t.slots().to_vec();
    let gam = bg.christoffels();
    let src = t.data();
    par::fill(d.data_mut(), n * width, |c, o| {
        let tc = &src[c * width..(c + 1) * width];
        let gc = gam.cell(c);
        let gamma = |k: usize, i: usize, j: usize| gc[(k * n + i) * n + j];
        let mut idx = [0usize; 8];
        for dir in 0..n {
            for comp in 0..width {
                digits(comp, n, rank, &mut idx);
                let mut corr = 0.0;
                for (s, slot) in slots.iter().enumerate() {
                    let stride = n.pow((rank - 1 - s) as u32);
                    let base = comp - idx[s] * stride;
                    for m in 0..n {
                        let v = tc[base + m * stride];
                        corr += match slot {
                            Slot::Co => -gamma(m, dir, idx[s]) * v,
                            Slot::Contra => gamma(idx[s], dir, m) * v,
                        };
                    }
                }
                o[dir * width + comp] += corr;
            }
        }
    });
    d
}

/// `∇̃^k T`, derivative indices prepended (the last one applied comes first).
/// On a flat background this is the `k`-fold central difference.
pub fn covariant_derivative(
    t: &TensorField,
    bg: &BackgroundGeometry,
    order: usize,
) -> Result<TensorField> {
    if order == 0 {
        return Err(Error::InvalidInput(
            "derivative order must be at least 1".into(),
        ));
    }
    t.check_finite()?;
    let mut out = nabla_once(t, bg);
    for _ in 1..order {
        out = nabla_once(&out, bg);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Curvature {
    pub riemann: TensorField,
    pub ricci: TensorField,
    pub scalar: ScalarField,
}

/// Riemann, Ricci and scalar curvature of `g`. Riemann is assembled from
/// Christoffel symbols and their central differences, then projected onto
/// its algebraic symmetries so that `R_ijkl = -R_jikl = -R_ijlk = R_klij`
/// hold exactly.
pub fn curvature_tensors(g: &MetricField) -> Result<Curvature> {
    let inv = g.inverses()?;
    Ok(curvature_with(g, &inv))
}

pub(crate) fn curvature_with(g: &MetricField, inv: &[(Mat, f64)]) -> Curvature {
    let grid = *g.grid();
    let n = grid.n();
    let (n2, n3, n4) = (n * n, n * n * n, n * n * n * n);
    let gam = christoffels_with(g, inv);
    let dgam = gradient_raw(&grid, gam.data(), n3);
    let cells = grid.cell_count();

    let mut riem = vec![0.0; n4 * cells];
    par::fill(&mut riem, n4, |c, o| {
        let gc = gam.cell(c);
        let dc = &dgam[c * n4..(c + 1) * n4];
        let gm = g.at(c);
        let gamma = |l: usize, i: usize, j: usize| gc[l * n2 + i * n + j];
        let dgamma = |a: usize, l: usize, i: usize, j: usize| dc[a * n3 + l * n2 + i * n + j];
        // R^l_{ijk}
        let mut up = [0.0; 81];
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let mut v = dgamma(i, l, j, k) - dgamma(j, l, i, k);
                        for m in 0..n {
                            v += gamma(l, i, m) * gamma(m, j, k) - gamma(l, j, m) * gamma(m, i, k);
                        }
                        up[((l * n + i) * n + j) * n + k] = v;
                    }
                }
            }
        }
        // R_{ijkl} = g_{km} R^m_{ijl}
        let mut low = [0.0; 81];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let mut v = 0.0;
                        for m in 0..n {
                            v += gm[k][m] * up[((m * n + i) * n + j) * n + l];
                        }
                        low[((i * n + j) * n + k) * n + l] = v;
                    }
                }
            }
        }
        let at = |i: usize, j: usize, k: usize, l: usize| low[((i * n + j) * n + k) * n + l];
        let anti = |i: usize, j: usize, k: usize, l: usize| {
            0.25 * (at(i, j, k, l) - at(j, i, k, l) - at(i, j, l, k) + at(j, i, l, k))
        };
        for v in o.iter_mut() {
            *v = 0.0;
        }
        for i in 0..n {
            for j in i + 1..n {
                for k in 0..n {
                    for l in k + 1..n {
                        let v = 0.5 * (anti(i, j, k, l) + anti(k, l, i, j));
                        o[((i * n + j) * n + k) * n + l] = v;
                        o[((j * n + i) * n + k) * n + l] = -v;
                        o[((i * n + j) * n + l) * n + k] = -v;
                        o[((j * n + i) * n + l) * n + k] = v;
                    }
                }
            }
        }
    });

    let mut ric = vec![0.0; n2 * cells];
    par::fill(&mut ric, n2, |c, o| {
        let r = &riem[c * n4..(c + 1) * n4];
        let gi = &inv[c].0;
        for j in 0..n {
            for l in j..n {
                let mut v = 0.0;
                for i in 0..n {
                    for k in 0..n {
                        v += gi[i][k] * r[((i * n + j) * n + k) * n + l];
                    }
                }
                o[j * n + l] = v;
                o[l * n + j] = v;
            }
        }
    });

    let scalar = par::map(cells, |c| {
        let gi = &inv[c].0;
        let r = &ric[c * n2..(c + 1) * n2];
        let mut v = 0.0;
        for j in 0..n {
            for l in 0..n {
                v += gi[j][l] * r[j * n + l];
            }
        }
        v
    });

    Curvature {
        riemann: TensorField::from_raw(grid, vec![Slot::Co; 4], riem),
        ricci: TensorField::from_raw(grid, vec![Slot::Co; 2], ric),
        scalar: ScalarField::from_raw(grid, scalar),
    }
}

/// Applies `m` along one slot of a cell's components.
fn transform_slot(src: &[f64], n: usize, rank: usize, slot: usize, m: &Mat, dst: &mut [f64]) {
    let stride = n.pow((rank - 1 - slot) as u32);
    let mut idx = [0usize; 8];
    for (comp, out) in dst.iter_mut().enumerate() {
        digits(comp, n, rank, &mut idx);
        let base = comp - idx[slot] * stride;
        let mut v = 0.0;
        for k in 0..n {
            v += m[idx[slot]][k] * src[base + k * stride];
        }
        *out = v;
    }
}

/// Pointwise `|T|_h`: every slot contracted with `h^{-1}` (covariant) or
/// `h` (contravariant).
pub fn tensor_norm_h(t: &TensorField, bg: &BackgroundGeometry) -> ScalarField {
    let grid = *t.grid();
    let n = grid.n();
    let w = t.width();
    let rank = t.rank();
    let slots = t.slots().to_vec();
    let data = par::map(grid.cell_count(), |c| {
        let tc = t.cell(c);
        if bg.is_flat() || rank == 0 {
            return tc.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        // components in an h-orthonormal frame
        let li = bg.chol_inverse_at(c);
        let l = linalg::cholesky(&bg.metric().at(c), n).unwrap_or(linalg::IDENTITY);
        let mut lt = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..n {
            for j in 0..n {
                lt[i][j] = l[j][i];
            }
        }
        let mut a = tc.to_vec();
        let mut b = vec![0.0; w];
        for (s, slot) in slots.iter().enumerate() {
            let m = match slot {
                Slot::Co => &li,
                Slot::Contra => &lt,
            };
            transform_slot(&a, n, rank, s, m, &mut b);
            std::mem::swap(&mut a, &mut b);
        }
        a.iter().map(|v| v * v).sum::<f64>().sqrt()
    });
    ScalarField::from_raw(grid, data)
}

/// `sup_M |T|_h`.
pub fn sup_norm(t: &TensorField, bg: &BackgroundGeometry) -> f64 {
    tensor_norm_h(t, bg).max()
}
