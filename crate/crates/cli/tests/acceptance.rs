//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test -p rml-cli --test acceptance`.

use std::f64::consts::PI;
use std::time::Instant;

use rml_core::analysis::{
    convergence_meter, fit_decay_exponent, linear_fit, morrey_functional, tube_volume_codimension,
};
use rml_core::curvature::{
    classical_scalar_pairing, distributional_scalar_pairing, removability_experiment, TestFunction,
};
use rml_core::fields::{
    make_initial_metric, mollify, offset_apex, smooth_step, InitialDataSpec, MollifierConfig,
    SingularSetMask,
};
use rml_core::flow::{self, evolve, rdf_rhs, FlowConfig, FlowState, FlowTrajectory};
use rml_core::grid::Point;
use rml_core::heat::{
    duality_pairing, heat_kernel_gaussian_check, monotonicity_functional, solve_conjugate_heat,
    solve_heat_under_flow,
};
use rml_core::{BackgroundGeometry, Grid, MetricField, ScalarField};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn torus(cells: usize) -> Grid {
    Grid::cubic(2, cells, 2.0 * PI).unwrap()
}

fn identity_distance(g: &MetricField) -> f64 {
    g.c0_distance(&MetricField::identity(*g.grid()))
}

fn c1_flat_fixed_point() -> Outcome {
    let grid = torus(64);
    let bg = BackgroundGeometry::flat(grid);
    let mut g = MetricField::identity(grid);
    let dt = flow::cfl_bound(&g, &bg, 0.5).unwrap();
    let start = Instant::now();
    for _ in 0..1000 {
        g = flow::step(&g, dt, &bg).unwrap();
    }
    let secs = start.elapsed().as_secs_f64();
    let d = identity_distance(&g);
    outcome(
        d <= 1e-10 && secs < 5.0,
        format!("|g - δ|∞ = {d:.2e} after 1000 steps ({secs:.2}s)"),
    )
}

fn c2_linearization() -> Outcome {
    let grid = torus(128);
    let bg = BackgroundGeometry::flat(grid);
    let eps = 1e-4;
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, t_end) in [(1.0f64, 0.3), (2.0, 0.1)] {
        let g0 = MetricField::from_fn(grid, move |x| {
            [
                [1.0, 0.0, 0.0],
                [0.0, 1.0 + eps * (k * x[0]).sin(), 0.0],
                [0.0; 3],
            ]
        });
        let amplitude = |g: &MetricField| {
            let s: f64 = (0..grid.cell_count())
                .map(|c| (g.at(c)[1][1] - 1.0) * (k * grid.coords(c)[0]).sin())
                .sum();
            2.0 * s / grid.cell_count() as f64
        };
        let traj = evolve(&g0, &FlowConfig::new(t_end), &bg).unwrap();
        let rate = -(amplitude(traj.final_metric()) / amplitude(&g0)).ln() / t_end;
        let rel = (rate / (k * k) - 1.0).abs();
        pass &= rel <= 0.02;
        parts.push(format!("k={k}: rate {rate:.5} (rel err {rel:.1e})"));
    }
    outcome(pass, parts.join(", "))
}

/// `φ = A sin(x - c) sin(y - d)` with analytic derivatives.
#[derive(Clone, Copy)]
struct Phi {
    a: f64,
    c: f64,
    d: f64,
}

impl Phi {
    fn value(&self, x: &[f64]) -> f64 {
        self.a * (x[0] - self.c).sin() * (x[1] - self.d).sin()
    }
    fn grad(&self, x: &[f64]) -> [f64; 3] {
        let (sx, cx) = (x[0] - self.c).sin_cos();
        let (sy, cy) = (x[1] - self.d).sin_cos();
        [self.a * cx * sy, self.a * sx * cy, 0.0]
    }
    fn laplacian(&self, x: &[f64]) -> f64 {
        -2.0 * self.value(x)
    }
}

/// `-2 Ric - L_X g = 2 Δφ δ + 2 (n - 2) dφ ⊗ dφ` for `g = e^{2φ} δ`.
fn conformal_rhs_oracle(phi: Phi, n: usize, x: &[f64]) -> [[f64; 3]; 3] {
    let d = phi.grad(x);
    let lap = phi.laplacian(x);
    let mut m = [[0.0; 3]; 3];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = 2.0 * (n as f64 - 2.0) * d[i] * d[j];
        }
        m[i][i] += 2.0 * lap;
    }
    m
}

fn conformal_metric(grid: Grid, phi: Phi) -> MetricField {
    let n = grid.n();
    MetricField::from_fn(grid, move |x| {
        let e = (2.0 * phi.value(x)).exp();
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate().take(n) {
            row[i] = e;
        }
        m
    })
}

fn c3_geometric_identity() -> Outcome {
    let phi = Phi {
        a: 0.2,
        c: 0.3,
        d: 1.1,
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for (n, sizes) in [(2usize, vec![32usize, 64, 128]), (3, vec![16, 32, 64])] {
        let mut errs = Vec::new();
        for &cells in &sizes {
            let grid = Grid::cubic(n, cells, 2.0 * PI).unwrap();
            let bg = BackgroundGeometry::flat(grid);
            let rhs = rdf_rhs(&conformal_metric(grid, phi), &bg).unwrap();
            let mut err = 0.0f64;
            for c in 0..grid.cell_count() {
                let o = conformal_rhs_oracle(phi, n, &grid.coords(c));
                let v = rhs.cell(c);
                for i in 0..n {
                    for j in 0..n {
                        err = err.max((v[i * n + j] - o[i][j]).abs());
                    }
                }
            }
            errs.push(err);
        }
        let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        pass &= orders.iter().all(|o| *o >= 1.8);
        parts.push(format!(
            "{n}D errors {:?} orders {:?}",
            errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>(),
            orders.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>()
        ));
    }
    outcome(pass, parts.join("; "))
}

/// Cone run shared by criteria 4, 5, 6, 14 and 15.
struct ConeRun {
    g0: MetricField,
    mask: SingularSetMask,
    bg: BackgroundGeometry,
    traj: FlowTrajectory,
    snapshots: Vec<f64>,
    apex: Point,
}

/// `(1 - 0.3 ρ^{1/2}) δ` near the apex: `δ = 1`, `p = 2`. The power law is
/// exact out to radius 1, well beyond the diffusion length `√t ≈ 0.32` at
/// the final time, and `R > 0` there.
fn cone_spec() -> InitialDataSpec {
    let mut spec = InitialDataSpec::hoelder_cone(&[PI, PI], -0.3, 0.5);
    spec.support = (1.0, 2.5);
    spec.lambda_cap = 2.0;
    spec
}

fn cone_run(cells: usize) -> ConeRun {
    let grid = torus(cells);
    let bg = BackgroundGeometry::flat(grid);
    let (g0, mask) = make_initial_metric(&cone_spec(), &grid).unwrap();
    let t_end = 0.1;
    let snapshots: Vec<f64> = (0..8).map(|j| t_end / 2f64.powi(j)).rev().collect();
    let mut cfg = FlowConfig::new(t_end);
    cfg.snapshot_times = snapshots.clone();
    cfg.early_time_refinement = 0.5;
    cfg.dt_min = 1e-7;
    cfg.store_every = 4;
    let traj = evolve(&g0, &cfg, &bg).unwrap();
    ConeRun {
        apex: offset_apex(&grid, &[PI, PI]),
        g0,
        mask,
        bg,
        traj,
        snapshots,
    }
}

fn c4_smoothing(run: &ConeRun) -> Outcome {
    let series = |k: usize| -> Vec<(f64, f64)> {
        run.traj
            .diagnostics()
            .iter()
            .filter(|d| d.t > 0.0)
            .map(|d| (d.t, d.sup_derivatives[k]))
            .collect()
    };
    let f1 = fit_decay_exponent(&series(0), (1e-3, 1e-1)).unwrap();
    let f2 = fit_decay_exponent(&series(1), (1e-3, 1e-1)).unwrap();
    let pass = f1.slope >= -0.35 && f2.slope >= -0.9 && f1.r2 >= 0.9 && f2.r2 >= 0.9;
    outcome(
        pass,
        format!(
            "|∇̃g| slope {:.3} (r² {:.3}), |∇̃²g| slope {:.3} (r² {:.3}), {} samples",
            f1.slope, f1.r2, f2.slope, f2.r2, f1.samples
        ),
    )
}

fn c5_bilipschitz(run: &ConeRun) -> Outcome {
    let d = run.traj.diagnostics();
    let l0 = d[0].lambda();
    let worst = d.iter().map(|x| x.lambda()).fold(0.0, f64::max);
    outcome(
        worst <= 2.0 * l0,
        format!(
            "Λ₀ = {l0:.4}, max Λ(t) = {worst:.4} over {} steps",
            d.len() - 1
        ),
    )
}

fn snapshot_trajectory(run: &ConeRun) -> FlowTrajectory {
    let states: Vec<FlowState> = run
        .traj
        .states()
        .iter()
        .filter(|s| s.snapshot)
        .cloned()
        .collect();
    FlowTrajectory::from_states(states).unwrap()
}

fn c6_return_to_data(run: &ConeRun) -> Outcome {
    let traj = snapshot_trajectory(run);
    let rows = convergence_meter(&traj, &run.g0, &run.mask, 0.2, &run.bg).unwrap();
    let early: Vec<_> = rows
        .iter()
        .filter(|r| r.t > 0.0 && run.snapshots[..4].contains(&r.t))
        .collect();
    let c0_ok = early.len() == 4 && early.windows(2).all(|w| w[0].c0_global < w[1].c0_global);
    let c2_ok = early.len() == 4 && early.windows(2).all(|w| w[0].c2_away < w[1].c2_away);
    outcome(
        c0_ok && c2_ok,
        format!(
            "t {:?}: C⁰ {:?}, C² away {:?}",
            early
                .iter()
                .map(|r| format!("{:.2e}", r.t))
                .collect::<Vec<_>>(),
            early
                .iter()
                .map(|r| format!("{:.3e}", r.c0_global))
                .collect::<Vec<_>>(),
            early
                .iter()
                .map(|r| format!("{:.3e}", r.c2_away))
                .collect::<Vec<_>>()
        ),
    )
}

fn c7_mollifier() -> Outcome {
    // The smallest kernel (radius 0.075) must span enough cells to resolve
    // the apex; at 256² the sampled cone already hides part of the deficit.
    let grid = torus(512);
    let bg = BackgroundGeometry::flat(grid);
    let (g0, mask) = make_initial_metric(&cone_spec(), &grid).unwrap();
    let (chart, overlap) = (1.2, 0.3);
    let radii = [0.125, 0.25, 0.5];
    let delta = 1.0;
    let l0 = morrey_functional(&g0, &bg, 2.0, &radii)
        .unwrap()
        .constant_for(delta);

    let constant = MetricField::constant(grid, [[1.3, 0.1, 0.0], [0.1, 0.8, 0.0], [0.0; 3]]);
    let mut constants_exact = true;
    let mut c0 = Vec::new();
    let mut morrey_ok = true;
    let mut worst_morrey = 0.0f64;
    let mut outside_exact = true;
    let center = offset_apex(&grid, &[PI, PI]);
    for i in [2usize, 4, 8, 16] {
        let cfg = MollifierConfig {
            index: i,
            chart_radius: chart,
            overlap,
        };
        constants_exact &= mollify(&constant, &mask, &cfg).unwrap().data() == constant.data();
        let gi = mollify(&g0, &mask, &cfg).unwrap();
        c0.push((i as f64, gi.c0_distance(&g0)));
        let li = morrey_functional(&gi, &bg, 2.0, &radii)
            .unwrap()
            .constant_for(delta);
        worst_morrey = worst_morrey.max(li / l0);
        morrey_ok &= li <= 3.0 * l0;
        if i == 16 {
            let reach = chart + cfg.kernel_radius();
            for c in 0..grid.cell_count() {
                if grid.periodic_distance(&center, &grid.coords(c)) > reach {
                    outside_exact &= gi.at(c) == g0.at(c);
                }
            }
        }
    }
    // C⁰ distance against i^{-δ/p}
    let s = 0.5;
    let normalised: Vec<f64> = c0.iter().map(|(i, d)| d * i.powf(s)).collect();
    let spread = normalised.iter().copied().fold(0.0, f64::max)
        / normalised.iter().copied().fold(f64::INFINITY, f64::min);
    let (slope, _, _) = linear_fit(
        &c0.iter().map(|(i, _)| i.ln()).collect::<Vec<_>>(),
        &c0.iter().map(|(_, d)| d.ln()).collect::<Vec<_>>(),
    );
    let pass = constants_exact && spread <= 2.0 && morrey_ok && outside_exact;
    outcome(
        pass,
        format!(
            "constants exact: {constants_exact}; C⁰ {:?}, C⁰·i^(δ/p) spread {spread:.2} (slope {slope:.3}); \
             max L_i/L₀ {worst_morrey:.3}; identity outside chart: {outside_exact}",
            c0.iter().map(|(_, d)| format!("{d:.3e}")).collect::<Vec<_>>()
        ),
    )
}

fn wide_cone(cells: usize) -> (Grid, MetricField, SingularSetMask) {
    let grid = torus(cells);
    let (g, mask) = make_initial_metric(&cone_spec(), &grid).unwrap();
    (grid, g, mask)
}

fn c8_morrey() -> Outcome {
    let (grid, g, _) = wide_cone(256);
    let bg = BackgroundGeometry::flat(grid);
    let radii = [0.125, 0.25, 0.5];
    let cone = morrey_functional(&g, &bg, 2.0, &radii).unwrap();
    let (bump, _) = make_initial_metric(&InitialDataSpec::conformal_bump(0.1), &grid).unwrap();
    let smooth = morrey_functional(&bump, &bg, 2.0, &radii).unwrap();
    let pass = (0.8..=1.2).contains(&cone.delta_fit) && smooth.delta_fit >= 0.85 * 2.0;
    outcome(
        pass,
        format!(
            "cone δ = {:.3}, smooth bump δ = {:.3}",
            cone.delta_fit, smooth.delta_fit
        ),
    )
}

fn c9_codimension() -> Outcome {
    let grid = torus(256);
    let h = grid.min_spacing();
    let eps: Vec<f64> = (1..5).map(|k| 2.0 * h * 2f64.powi(k)).collect();
    let point = SingularSetMask::points(grid, &[[PI, PI, 0.0]]);
    let p = tube_volume_codimension(&point, &grid, &eps).unwrap();
    let segment = SingularSetMask::segment(grid, [1.5, 3.0, 0.0], [1.5 + PI, 3.0, 0.0]);
    let s = tube_volume_codimension(&segment, &grid, &[0.05, 0.1, 0.2]).unwrap();
    let pass = (1.85..=2.15).contains(&p.d0) && (0.85..=1.15).contains(&s.d0);
    outcome(
        pass,
        format!("point d₀ = {:.3}, segment d₀ = {:.3}", p.d0, s.d0),
    )
}

fn c10_classical_agreement() -> Outcome {
    let phi = Phi {
        a: 0.15,
        c: 0.4,
        d: -0.7,
    };
    let mut gaps = Vec::new();
    for cells in [32, 64, 128] {
        let grid = torus(cells);
        let bg = BackgroundGeometry::flat(grid);
        let m = conformal_metric(grid, phi);
        let u = TestFunction::bump(grid, [PI, PI, 0.0], 2.0).unwrap();
        let d = distributional_scalar_pairing(&m, &bg, &u, 0.0).unwrap();
        let c = classical_scalar_pairing(&m, &u, 0.0).unwrap();
        gaps.push((d - c).abs());
    }
    let orders: Vec<f64> = gaps.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    outcome(
        orders.iter().all(|o| *o >= 1.8),
        format!(
            "gaps {:?}, orders {:?}",
            gaps.iter().map(|g| format!("{g:.2e}")).collect::<Vec<_>>(),
            orders.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>()
        ),
    )
}

/// Smoothed cone `e^{2φ} δ`, `φ' = (β - 1) ρ / (ρ² + σ²)` inside radius 1,
/// switched off smoothly by radius 1.5.
struct SmoothCone {
    beta: f64,
    sigma: f64,
    center: Point,
}

impl SmoothCone {
    fn chi(rho: f64) -> f64 {
        1.0 - smooth_step((rho - 1.0) / 0.5)
    }

    fn phi(&self, rho: f64) -> f64 {
        0.5 * (self.beta - 1.0) * (rho * rho + self.sigma * self.sigma).ln() * Self::chi(rho)
    }

    fn dphi(&self, rho: f64) -> f64 {
        // exact inside radius 1, where the oracle is evaluated
        (self.beta - 1.0) * rho / (rho * rho + self.sigma * self.sigma)
    }

    fn metric(&self, grid: Grid) -> MetricField {
        let (c, this) = (self.center, SmoothCone { ..*self });
        MetricField::from_fn(grid, move |x| {
            let rho = grid.periodic_distance(&c, x);
            let e = (2.0 * this.phi(rho)).exp();
            [[e, 0.0, 0.0], [0.0, e, 0.0], [0.0; 3]]
        })
    }

    /// Rotation angle of a vector parallel-transported once around the
    /// circle of radius `r` (RK4 on the Levi-Civita connection).
    fn holonomy(&self, r: f64, steps: usize) -> f64 {
        let dphi = self.dphi(r);
        let rhs = |theta: f64, v: [f64; 2]| -> [f64; 2] {
            let (s, c) = theta.sin_cos();
            let grad = [dphi * c, dphi * s];
            let vel = [-r * s, r * c];
            // Γ^k_ij = δ^k_i φ_j + δ^k_j φ_i - δ_ij φ_k
            let gv = grad[0] * v[0] + grad[1] * v[1];
            let gt = grad[0] * vel[0] + grad[1] * vel[1];
            let tv = vel[0] * v[0] + vel[1] * v[1];
            let mut out = [0.0; 2];
            for k in 0..2 {
                out[k] = -(vel[k] * gv + v[k] * gt - tv * grad[k]);
            }
            out
        };
        let h = 2.0 * PI / steps as f64;
        let mut v = [1.0, 0.0];
        for i in 0..steps {
            let t = i as f64 * h;
            let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
            let k1 = rhs(t, v);
            let k2 = rhs(t + 0.5 * h, add(v, k1, 0.5 * h));
            let k3 = rhs(t + 0.5 * h, add(v, k2, 0.5 * h));
            let k4 = rhs(t + h, add(v, k3, h));
            for k in 0..2 {
                v[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
            }
        }
        v[1].atan2(v[0]).abs()
    }
}

fn c11_cone_deficit() -> Outcome {
    let grid = torus(256);
    let bg = BackgroundGeometry::flat(grid);
    let h = grid.min_spacing();
    let cone = SmoothCone {
        beta: 0.8,
        sigma: 3.0 * h,
        center: [PI, PI, 0.0],
    };
    let (r1, r2) = (0.5, 0.9);
    let u = TestFunction::plateau(grid, cone.center, r1, r2).unwrap();
    let pairing = distributional_scalar_pairing(&cone.metric(grid), &bg, &u, 0.0).unwrap();

    // ∫ R u dμ = 2 ∫ u dΘ, Θ(ρ) the holonomy of the circle of radius ρ
    let samples = 400;
    let mut oracle = 0.0;
    let mut prev = 0.0;
    for j in 1..=samples {
        let rho = r2 * j as f64 / samples as f64;
        let theta = cone.holonomy(rho, 2000);
        let mid = rho - 0.5 * r2 / samples as f64;
        let um = 1.0 - smooth_step((mid - r1) / (r2 - r1));
        oracle += 2.0 * um * (theta - prev);
        prev = theta;
    }
    let target = 4.0 * PI * (1.0 - cone.beta);
    let rel = (pairing / target - 1.0).abs();
    let rel_oracle = (pairing / oracle - 1.0).abs();
    outcome(
        rel <= 0.07 && rel_oracle <= 0.07,
        format!(
            "pairing {pairing:.4}, 4π(1-β) = {target:.4} (rel {rel:.3}), holonomy oracle {oracle:.4} (rel {rel_oracle:.3})"
        ),
    )
}

fn c12_removability() -> Outcome {
    let (grid, g, mask) = wide_cone(256);
    let bg = BackgroundGeometry::flat(grid);
    let apex = offset_apex(&grid, &[PI, PI]);
    let u = TestFunction::bump(grid, apex, 0.8).unwrap();
    let r = removability_experiment(&g, &mask, &bg, 2.0, 1.0, &u, -0.01, &[0.1, 0.2, 0.4]).unwrap();
    let rates_ok = (0..4).all(|k| (r.fitted_rates[k] - r.predicted_rates[k]).abs() <= 0.3);
    let decreasing = r.decreasing.iter().all(|d| *d);
    let sign = r.nonnegative_within(1e-3);
    outcome(
        rates_ok && decreasing && sign,
        format!(
            "fitted {:?} vs predicted {:?}; decreasing {decreasing}; pairing {:.4e} (scale {:.3e})",
            r.fitted_rates.map(|x| (x * 1000.0).round() / 1000.0),
            r.predicted_rates.map(|x| (x * 1000.0).round() / 1000.0),
            r.total_pairing,
            r.scale
        ),
    )
}

fn kernel_constant(run: &ConeRun, times: &[f64]) -> f64 {
    let grid = *run.g0.grid();
    let apex_cell = (0..grid.cell_count())
        .min_by(|a, b| {
            let da = grid.periodic_distance(&run.apex, &grid.coords(*a));
            let db = grid.periodic_distance(&run.apex, &grid.coords(*b));
            da.total_cmp(&db)
        })
        .unwrap();
    let far = grid.linear_index(&[grid.dims()[0] / 8, grid.dims()[1] / 8]);
    heat_kernel_gaussian_check(&run.traj, &run.bg, &[apex_cell, far], times)
        .unwrap()
        .c_fit
}

fn flat_trajectory(cells: usize, t_end: f64, states: usize) -> FlowTrajectory {
    let grid = torus(cells);
    let m = MetricField::identity(grid);
    FlowTrajectory::from_states(
        (0..=states)
            .map(|k| FlowState {
                t: t_end * k as f64 / states as f64,
                metric: m.clone(),
                snapshot: true,
            })
            .collect(),
    )
    .unwrap()
}

fn c13_kernel(fine: &ConeRun) -> Outcome {
    let flat = flat_trajectory(64, 0.1, 40);
    let grid = *flat.grid();
    let bg = BackgroundGeometry::flat(grid);
    let src = [grid.linear_index(&[10, 20]), grid.linear_index(&[40, 40])];
    let flat_c = heat_kernel_gaussian_check(&flat, &bg, &src, &[0.025, 0.05, 0.1])
        .unwrap()
        .c_fit;
    let coarse = cone_run(64);
    let times = [0.025, 0.05, 0.1];
    let c64 = kernel_constant(&coarse, &times);
    let c128 = kernel_constant(fine, &times);
    let rel = (c128 / c64 - 1.0).abs();
    outcome(
        flat_c <= 20.0 && rel <= 0.3,
        format!("flat C = {flat_c:.3}; cone C = {c64:.3} (64²) vs {c128:.3} (128²), rel {rel:.3}"),
    )
}

fn c14_monotonicity(run: &ConeRun) -> Outcome {
    let u = TestFunction::bump(*run.g0.grid(), run.apex, 0.4).unwrap();
    let v = solve_conjugate_heat(&run.traj, &run.bg, &u).unwrap();
    let undershoot = v.check_undershoot(u.values().sup_abs(), 1e-6).is_ok();
    let series = monotonicity_functional(&run.traj, &v, 0.0).unwrap();
    let scale = series.iter().map(|(_, x)| x.abs()).fold(0.0, f64::max);
    let worst = series
        .windows(2)
        .map(|w| w[0].1 - w[1].1)
        .fold(f64::NEG_INFINITY, f64::max);
    let cone_ok = worst <= 1e-3 * scale && undershoot;

    let t_end = 0.1;
    let states = 50;
    let flat = flat_trajectory(64, t_end, states);
    let grid = *flat.grid();
    let bg = BackgroundGeometry::flat(grid);
    let uf = TestFunction::bump(grid, [PI, PI, 0.0], 1.0).unwrap();
    let vf = solve_conjugate_heat(&flat, &bg, &uf).unwrap();
    let fs = monotonicity_functional(&flat, &vf, -1.0).unwrap();
    let dt = t_end / states as f64;
    let drift = fs
        .iter()
        .map(|(_, x)| (x / fs[0].1 - 1.0).abs())
        .fold(0.0, f64::max);
    let flat_ok = drift <= dt * dt;
    outcome(
        cone_ok && flat_ok,
        format!(
            "cone: {} states, worst drop {worst:.3e} vs tol {:.3e}, min v {:.2e}; flat a=-1 drift {drift:.2e} (dt² = {:.1e})",
            series.len(),
            1e-3 * scale,
            v.min_value(),
            dt * dt
        ),
    )
}

fn c15_adjointness(run: &ConeRun) -> Outcome {
    let grid = *run.g0.grid();
    let u0 = ScalarField::from_fn(grid, |x| 1.0 + 0.5 * x[0].cos());
    let u = solve_heat_under_flow(&run.traj, &run.bg, &u0).unwrap();
    let w = TestFunction::bump(grid, run.apex, 0.8).unwrap();
    let v = solve_conjugate_heat(&run.traj, &run.bg, &w).unwrap();
    let pairs = duality_pairing(&run.traj, &u, &v).unwrap();
    let p0 = pairs[0].1;
    let drift = pairs
        .iter()
        .map(|(_, p)| (p / p0 - 1.0).abs())
        .fold(0.0, f64::max);
    outcome(
        drift < 1e-3,
        format!("relative drift {drift:.2e} over {} states", pairs.len()),
    )
}

const DETERMINISM_CONFIG: &str = r#"seed = 42
[grid]
dim = 2
cells = 48

[initial]
kind = "hoelder_cone"
amplitude = -0.3
exponent = 0.5
centers = [[3.0, 3.0]]

[flow]
t_end = 0.02
snapshot_times = [0.005, 0.01]
early_time_refinement = 0.5
store_every = 2

[decay]
window = [0.001, 0.02]

[morrey]
p = 2
radii = [0.6, 1.2]

[codim]
epsilons = [0.6, 0.8, 1.0, 1.2]

[curvature]
delta = 1.0
a = -0.01
eps_list = [0.6, 0.8]
test = { kind = "bump", center = [3.0, 3.0], radius = 2.5 }

[monotone]
test = { kind = "bump", center = [3.0, 3.0], radius = 1.5 }

[kernel]
sources = [[24, 24], [5, 30]]
times = [0.01, 0.02]

[mollify]
indices = [2, 4]
chart_radius = 1.5
overlap = 0.5
"#;

fn suite_manifests(threads: usize, root: &std::path::Path) -> String {
    let cfg = rml_cli::parse_config(DETERMINISM_CONFIG).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap();
    pool.install(|| {
        let mut all = String::new();
        for cmd in [
            rml_cli::Command::Evolve,
            rml_cli::Command::Morrey,
            rml_cli::Command::Rdist,
            rml_cli::Command::Codim,
            rml_cli::Command::Monotone,
            rml_cli::Command::Mollify,
            rml_cli::Command::Kernelcheck,
        ] {
            let out = root.join(cmd.name());
            let m = rml_cli::run(cmd, &cfg, &out, false).unwrap();
            all.push_str(&m.render());
        }
        all
    })
}

fn c16_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(2)
        .max(2);
    let a = suite_manifests(1, &tmp.path().join("a"));
    let b = suite_manifests(threads, &tmp.path().join("b"));
    let c = suite_manifests(threads, &tmp.path().join("c"));
    outcome(
        a == b && b == c,
        format!(
            "7 pipelines, {} manifest lines, 1 vs {threads} threads and repeat identical: {}",
            a.lines().count(),
            a == b && b == c
        ),
    )
}

fn main() {
    // the libtest harness flags are irrelevant here
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |k: usize| filter.as_deref().is_none_or(|f| f == k.to_string());
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut record = |k: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        if !wanted(k) {
            return;
        }
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!(
            "criterion {k:>2} {} {name}: {} [{secs:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((k, name, o, secs));
    };

    record(1, "flat fixed point", &c1_flat_fixed_point);
    record(2, "linearization", &c2_linearization);
    record(3, "geometric identity", &c3_geometric_identity);
    let needs_cone = [4, 5, 6, 13, 14, 15].iter().any(|k| wanted(*k));
    let t = Instant::now();
    let cone = needs_cone.then(|| cone_run(128));
    let cone_secs = t.elapsed().as_secs_f64();
    if let Some(run) = &cone {
        println!(
            "   shared cone run: 128², {} steps, {} stored states [{cone_secs:.1}s]",
            run.traj.diagnostics().len() - 1,
            run.traj.states().len()
        );
        record(4, "smoothing exponents", &|| c4_smoothing(run));
        record(5, "bi-Lipschitz preservation", &|| c5_bilipschitz(run));
        record(6, "C⁰ return to data", &|| c6_return_to_data(run));
    }
    record(7, "mollifier suite", &c7_mollifier);
    record(8, "Morrey estimator", &c8_morrey);
    record(9, "codimension estimator", &c9_codimension);
    record(
        10,
        "classical-distributional agreement",
        &c10_classical_agreement,
    );
    record(11, "cone deficit", &c11_cone_deficit);
    record(12, "removability rates", &c12_removability);
    if let Some(run) = &cone {
        record(13, "Gaussian kernel bound", &|| c13_kernel(run));
        record(14, "monotonicity", &|| c14_monotonicity(run));
        record(15, "adjointness", &|| c15_adjointness(run));
    }
    record(16, "determinism", &c16_determinism);

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
