//! Subcommand pipelines. Each one builds the initial data, runs one chain of
//! library operations and writes its artifacts through [`OutputDir`].

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rml_core::analysis::{
    convergence_meter, fit_decay_exponent, morrey_functional_strided, tube_volume_codimension,
    ConvergenceRow, MorreyReport,
};
use rml_core::curvature::{
    classical_scalar_pairing, distributional_pairing_detailed, removability_experiment,
    RemovabilityReport, TestFunction,
};
use rml_core::fields::{
    bilipschitz_constants, make_initial_metric, mollify, MollifierConfig, SingularSetMask,
};
use rml_core::flow::{evolve, evolve_span, FlowConfig, FlowState, FlowTrajectory, StepDiagnostics};
use rml_core::grid::{Point, MAX_DIM};
use rml_core::heat::{
    duality_pairing, heat_kernel_gaussian_check, monotonicity_functional, solve_conjugate_heat,
    solve_heat_under_flow,
};
use rml_core::report::{csv_floats, Report};
use rml_core::{BackgroundGeometry, Grid, MetricField};

use crate::config::{ConfigError, ConfigIssue, ExperimentConfig, MaskSpec, TestFunctionSpec};
use crate::manifest::{Manifest, OutputDir};
use crate::snapshot::Snapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Evolve,
    Morrey,
    Rdist,
    Codim,
    Monotone,
    Mollify,
    Kernelcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Evolve => "evolve",
            Command::Morrey => "morrey",
            Command::Rdist => "rdist",
            Command::Codim => "codim",
            Command::Monotone => "monotone",
            Command::Mollify => "mollify",
            Command::Kernelcheck => "kernelcheck",
        }
    }
}

/// Failure class of a run, mapped to the process exit status.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if cause.is::<crate::manifest::ManifestError>()
            || cause.is::<crate::snapshot::SnapshotError>()
            || cause.is::<std::io::Error>()
        {
            return 4;
        }
        if cause.is::<rml_core::Error>() || cause.is::<rml_core::flow::EvolveFailure>() {
            return 3;
        }
    }
    3
}

fn missing(section: &str) -> anyhow::Error {
    ConfigError {
        issues: vec![ConfigIssue {
            line: None,
            field: section.into(),
            message: "section required by this subcommand".into(),
        }],
    }
    .into()
}

fn point(v: &[f64]) -> Point {
    let mut p = [0.0; MAX_DIM];
    for (a, x) in v.iter().take(MAX_DIM).enumerate() {
        p[a] = *x;
    }
    p
}

struct Setup {
    grid: Grid,
    g0: MetricField,
    mask: SingularSetMask,
    bg: BackgroundGeometry,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let grid = Grid::cubic(cfg.grid.dim, cfg.grid.cells, cfg.grid.period)?;
    let (g0, mask) = make_initial_metric(&cfg.initial_spec(), &grid)?;
    Ok(Setup {
        grid,
        g0,
        mask,
        bg: BackgroundGeometry::flat(grid),
    })
}

fn test_function(grid: Grid, spec: &TestFunctionSpec) -> Result<TestFunction> {
    Ok(match spec {
        TestFunctionSpec::Constant { value } => TestFunction::constant(grid, *value)?,
        TestFunctionSpec::Bump { center, radius } => {
            TestFunction::bump(grid, point(center), *radius)?
        }
        TestFunctionSpec::Plateau {
            center,
            inner,
            outer,
        } => TestFunction::plateau(grid, point(center), *inner, *outer)?,
    })
}

fn mask_from(grid: Grid, spec: &MaskSpec) -> Result<SingularSetMask> {
    Ok(match spec {
        MaskSpec::Points { points } => {
            let pts: Vec<Point> = points.iter().map(|p| point(p)).collect();
            SingularSetMask::points(grid, &pts)
        }
        MaskSpec::Segment { from, to } => SingularSetMask::segment(grid, point(from), point(to)),
        MaskSpec::Circle {
            center,
            radius,
            normal_axis,
        } => SingularSetMask::circle(grid, point(center), *radius, *normal_axis)?,
    })
}

/// Dyadic radii `period/8, period/16, ...` above four cells.
fn default_radii(grid: &Grid) -> Vec<f64> {
    let mut r = grid.min_period() / 8.0;
    let mut out = Vec::new();
    while r > 4.0 * grid.min_spacing() {
        out.push(r);
        r /= 2.0;
    }
    out.reverse();
    out
}

fn flow_config(cfg: &ExperimentConfig) -> Result<FlowConfig> {
    cfg.flow_config().ok_or_else(|| missing("flow"))
}

fn run_flow(g0: &MetricField, fc: &FlowConfig, bg: &BackgroundGeometry) -> Result<FlowTrajectory> {
    evolve(g0, fc, bg).map_err(|f| anyhow!(f.error).context("flow integration failed"))
}

/// Runs one subcommand and returns the final manifest.
pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Path, resume: bool) -> Result<Manifest> {
    if resume && cmd != Command::Evolve {
        bail!(ConfigError {
            issues: vec![ConfigIssue {
                line: None,
                field: "--resume".into(),
                message: "only the evolve subcommand can resume".into(),
            }],
        });
    }
    let s = setup(cfg)?;
    let mut dir = match (resume, Manifest::load(out)?) {
        (true, Some(m)) => OutputDir::with_manifest(out, m)?,
        _ => OutputDir::create(out)?,
    };
    let mut report = Report::new();
    report
        .entry("command", cmd.name())
        .entry("grid", format!("{}^{}", cfg.grid.cells, cfg.grid.dim))
        .float("period", cfg.grid.period)
        .entry("seed", cfg.seed);
    let lam = bilipschitz_constants(&s.g0, &s.bg)?;
    report.float("lambda0", lam.lambda());
    let outcome = match cmd {
        Command::Evolve => cmd_evolve(cfg, &s, &mut dir, &mut report, resume),
        Command::Morrey => cmd_morrey(cfg, &s, &mut dir, &mut report),
        Command::Rdist => cmd_rdist(cfg, &s, &mut dir, &mut report),
        Command::Codim => cmd_codim(cfg, &s, &mut dir, &mut report),
        Command::Monotone => cmd_monotone(cfg, &s, &mut dir, &mut report),
        Command::Mollify => cmd_mollify(cfg, &s, &mut dir, &mut report),
        Command::Kernelcheck => cmd_kernel(cfg, &s, &mut dir, &mut report),
    };
    if let Err(e) = &outcome {
        report
            .entry("status", "failed")
            .entry("error", e.to_string().replace('\n', " "));
    } else {
        report.entry("status", "ok");
    }
    dir.write_bytes("report.txt", report.render().as_bytes())?;
    dir.flush_manifest()?;
    outcome.map(|_| dir.manifest().clone())
}

fn snapshot_name(k: usize) -> String {
    format!("snapshots/snap_{k:04}.rdfs")
}

fn parse_diagnostics(text: &str) -> Result<Vec<StepDiagnostics>> {
    text.lines()
        .skip(1)
        .map(|line| {
            let v: Vec<f64> = line
                .split(',')
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .with_context(|| format!("bad diagnostics row {line:?}"))?;
            if v.len() != 8 {
                bail!("diagnostics row {line:?} has {} columns", v.len());
            }
            Ok(StepDiagnostics {
                t: v[0],
                dt: v[1],
                lambda_min: v[2],
                lambda_max: v[3],
                sup_derivatives: [v[4], v[5], v[6], v[7]],
            })
        })
        .collect()
}

fn cmd_evolve(
    cfg: &ExperimentConfig,
    s: &Setup,
    dir: &mut OutputDir,
    report: &mut Report,
    resume: bool,
) -> Result<()> {
    let fc = flow_config(cfg)?;
    let mut times = vec![0.0];
    times.extend(fc.snapshot_times.iter().copied().filter(|t| *t > 0.0));
    times.push(fc.t_end);
    times.sort_by(f64::total_cmp);
    times.dedup();

    let mut states: Vec<FlowState> = vec![FlowState {
        t: 0.0,
        metric: s.g0.clone(),
        snapshot: true,
    }];
    let mut diags: Vec<StepDiagnostics> = Vec::new();
    let mut start = 0;
    if resume {
        let missing = dir.manifest().verify(dir.root())?;
        let present = |k: usize| {
            let name = snapshot_name(k);
            dir.manifest().files.contains_key(&name) && !missing.contains(&name)
        };
        while start + 1 < times.len() && present(start + 1) {
            start += 1;
        }
        for k in 1..=start {
            let snap = Snapshot::read(&dir.root().join(snapshot_name(k)))?;
            if snap.t != times[k] {
                bail!(
                    "snapshot {k} has time {} but the schedule expects {}",
                    snap.t,
                    times[k]
                );
            }
            let metric = snap
                .into_metric()
                .ok_or_else(|| anyhow!("snapshot {k} is not a metric"))?;
            states.push(FlowState {
                t: times[k],
                metric,
                snapshot: true,
            });
        }
        if start > 0 && !missing.iter().any(|m| m == "diagnostics.csv") {
            let text = std::fs::read_to_string(dir.root().join("diagnostics.csv"))?;
            diags = parse_diagnostics(&text)?
                .into_iter()
                .filter(|d| d.t <= times[start])
                .collect();
        } else {
            start = 0;
            states.truncate(1);
        }
        report.float("resumed_from", times[start]);
    }
    if start == 0 {
        dir.write_bytes(
            &snapshot_name(0),
            &Snapshot::metric(0.0, s.g0.clone()).to_bytes(),
        )?;
    }

    let mut failure = None;
    for k in start..times.len() - 1 {
        let g = states.last().expect("initial state").metric.clone();
        match evolve_span(&g, times[k], times[k + 1], &fc, &s.bg) {
            Ok(seg) => {
                let skip = usize::from(!diags.is_empty());
                diags.extend(seg.diagnostics().iter().skip(skip).copied());
                let last = seg.states().last().expect("segment end").clone();
                dir.write_bytes(
                    &snapshot_name(k + 1),
                    &Snapshot::metric(last.t, last.metric.clone()).to_bytes(),
                )?;
                states.push(FlowState {
                    snapshot: true,
                    ..last
                });
            }
            Err(f) => {
                let skip = usize::from(!diags.is_empty());
                diags.extend(f.partial.diagnostics().iter().skip(skip).copied());
                failure = Some(f.error);
            }
        }
        let rows: Vec<String> = diags.iter().map(|d| d.csv_row()).collect();
        dir.write_csv("diagnostics.csv", StepDiagnostics::CSV_HEADER, &rows)?;
        dir.flush_manifest()?;
        if failure.is_some() {
            break;
        }
    }
    report.entry("steps", diags.len().saturating_sub(1));
    let max_lambda = diags.iter().map(|d| d.lambda()).fold(0.0, f64::max);
    report.float("max_lambda", max_lambda);
    if let Some(e) = failure {
        report.float("failed_at", diags.last().map(|d| d.t).unwrap_or(0.0));
        return Err(anyhow!(e).context("flow integration failed"));
    }

    let traj = FlowTrajectory::from_states(states)?;
    let margin = cfg.flow.as_ref().map(|f| f.margin).unwrap_or(0.2);
    let rows = convergence_meter(&traj, &s.g0, &s.mask, margin, &s.bg)?;
    let csv: Vec<String> = rows.iter().map(|r| r.csv_row()).collect();
    dir.write_csv("convergence.csv", ConvergenceRow::CSV_HEADER, &csv)?;
    report.float("t_final", traj.final_time());

    if let Some(d) = &cfg.decay {
        let window = (d.window[0], d.window[1]);
        for (k, name) in [(0, "d1"), (1, "d2")] {
            let series: Vec<(f64, f64)> = diags
                .iter()
                .filter(|x| x.t > 0.0)
                .map(|x| (x.t, x.sup_derivatives[k]))
                .collect();
            let fit = fit_decay_exponent(&series, window)?;
            report
                .float(&format!("decay_{name}_slope"), fit.slope)
                .float(&format!("decay_{name}_r2"), fit.r2)
                .entry(&format!("decay_{name}_samples"), fit.samples);
        }
    }
    Ok(())
}

fn morrey(
    cfg: &ExperimentConfig,
    g: &MetricField,
    bg: &BackgroundGeometry,
) -> Result<MorreyReport> {
    let m = cfg.morrey.as_ref().ok_or_else(|| missing("morrey"))?;
    let radii = if m.radii.is_empty() {
        default_radii(g.grid())
    } else {
        m.radii.clone()
    };
    Ok(morrey_functional_strided(g, bg, m.p, &radii, m.stride)?)
}

fn cmd_morrey(
    cfg: &ExperimentConfig,
    s: &Setup,
    dir: &mut OutputDir,
    report: &mut Report,
) -> Result<()> {
    let r = morrey(cfg, &s.g0, &s.bg)?;
    report
        .float("p", r.p)
        .float("delta_fit", r.delta_fit)
        .float("delta_raw", r.delta_raw)
        .float("l0_fit", r.l0_fit)
        .float("r0", r.r0)
        .entry("center_stride", r.center_stride);
    let rows: Vec<String> = r.table.iter().map(|(a, b)| csv_floats(&[*a, *b])).collect();
    dir.write_csv("morrey.csv", "r,ball_average", &rows)?;
    Ok(())
}

fn cmd_rdist(
    cfg: &ExperimentConfig,
    s: &Setup,
    dir: &mut OutputDir,
    report: &mut Report,
) -> Result<()> {
    let k = cfg.curvature.as_ref().ok_or_else(|| missing("curvature"))?;
    let p = cfg.morrey.as_ref().ok_or_else(|| missing("morrey"))?.p;
    let u = test_function(s.grid, &k.test)?;
    let pairing = distributional_pairing_detailed(&s.g0, &s.bg, &u, k.a)?;
    report
        .float("pairing", pairing.value)
        .float("pairing_scale", pairing.scale);
    if let Ok(c) = classical_scalar_pairing(&s.g0, &u, k.a) {
        report.float("classical_pairing", c);
    }
    let mask = singular_set(cfg, s)?;
    if mask.is_empty() {
        report.entry("removability", "skipped (empty singular set)");
        return Ok(());
    }
    let r: RemovabilityReport =
        removability_experiment(&s.g0, &mask, &s.bg, p, k.delta, &u, k.a, &k.eps_list)?;
    report
        .float("codimension", r.d)
        .float("delta_prime", r.delta_prime)
        .float("required_codimension", r.required_codimension)
        .entry("fitted_rates", csv_floats(&r.fitted_rates))
        .entry("predicted_rates", csv_floats(&r.predicted_rates))
        .entry("decreasing", format!("{:?}", r.decreasing))
        .float("total_pairing", r.total_pairing)
        .float("scale", r.scale)
        .entry("nonnegative", r.nonnegative_within(1e-3));
    dir.write_csv(
        "removability.csv",
        RemovabilityReport::CSV_HEADER,
        &r.csv_rows(),
    )?;
    Ok(())
}

/// The `[codim] mask` override, else the singular set of the initial data.
fn singular_set(cfg: &ExperimentConfig, s: &Setup) -> Result<SingularSetMask> {
    match cfg.codim.as_ref().and_then(|k| k.mask.as_ref()) {
        Some(m) => mask_from(s.grid, m),
        None => Ok(s.mask.clone()),
    }
}

fn cmd_codim(
    cfg: &ExperimentConfig,
    s: &Setup,
    dir: &mut OutputDir,
    report: &mut Report,
) -> Result<()> {
    let k = cfg.codim.as_ref().ok_or_else(|| missing("codim"))?;
    let mask = singular_set(cfg, s)?;
    let r = tube_volume_codimension(&mask, &s.grid, &k.epsilons)?;
    report.float("d0", r.d0).float("b", r.b).float("c", r.c);
    let rows: Vec<String> = r
        .epsilons
        .iter()
        .zip(&r.volumes)
        .map(|(e, v)| csv_floats(&[*e, *v]))
        .collect();
    dir.write_csv("codim.csv", "eps,volume", &rows)?;
    Ok(())
}

fn cmd_monotone(
    cfg: &ExperimentConfig,
    s: &Setup,
    dir: &mut OutputDir,
    report: &mut Report,
) -> Result<()> {
    let m = cfg.monotone.as_ref().ok_or_else(|| missing("monotone"))?;
    let fc = flow_config(cfg)?;
    let traj = run_flow(&s.g0, &fc, &s.bg)?;
    let u_final = test_function(s.grid, &m.test)?;
    let v = solve_conjugate_heat(&traj, &s.bg, &u_final)?;
    report.float("conjugate_min", v.min_value());
    v.check_undershoot(u_final.values().sup_abs(), 1e-6)?;
    let series = monotonicity_functional(&traj, &v, m.a)?;
    let forward = match &m.forward {
        Some(spec) => test_function(s.grid, spec)?,
        None => TestFunction::constant(s.grid, 1.0)?,
    };
    let u = solve_heat_under_flow(&traj, &s.bg, forward.values())?;
    let pairs = duality_pairing(&traj, &u, &v)?;

    let scale = series.iter().map(|(_, x)| x.abs()).fold(0.0, f64::max);
    let worst_drop = series
        .windows(2)
        .map(|w| w[0].1 - w[1].1)
        .fold(f64::NEG_INFINITY, f64::max);
    let p0 = pairs[0].1;
    let drift = pairs
        .iter()
        .map(|(_, p)| ((p - p0) / p0).abs())
        .fold(0.0, f64::max);
    report
        .float("a", m.a)
        .entry("states", series.len())
        .float("series_scale", scale)
        .float("worst_drop", worst_drop)
        .entry("non_decreasing", worst_drop <= 1e-3 * scale)
        .float("duality_drift", drift);
    let rows: Vec<String> = series
        .iter()
        .zip(&pairs)
        .map(|((t, f), (_, p))| csv_floats(&[*t, *f, *p]))
        .collect();
    dir.write_csv("monotone.csv", "t,functional,duality", &rows)?;
    Ok(())
}

fn cmd_mollify(
    cfg: &ExperimentConfig,
    s: &Setup,
    dir: &mut OutputDir,
    report: &mut Report,
) -> Result<()> {
    let k = cfg.mollify.as_ref().ok_or_else(|| missing("mollify"))?;
    let base = cfg
        .morrey
        .as_ref()
        .map(|_| morrey(cfg, &s.g0, &s.bg))
        .transpose()?;
    if let Some(b) = &base {
        report.float("l0_data", b.constant_for(b.delta_fit));
    }
    let mut rows = Vec::new();
    for &i in &k.indices {
        let mc = MollifierConfig {
            index: i,
            chart_radius: k.chart_radius,
            overlap: k.overlap,
        };
        let gi = mollify(&s.g0, &s.mask, &mc)?;
        let c0 = gi.c0_distance(&s.g0);
        let lam = bilipschitz_constants(&gi, &s.bg)?.lambda();
        let l0 = match &base {
            Some(b) => morrey(cfg, &gi, &s.bg)?.constant_for(b.delta_fit),
            None => f64::NAN,
        };
        rows.push(format!("{i},{}", csv_floats(&[c0, lam, l0])));
        dir.write_bytes(
            &format!("mollified/index_{i:03}.rdfs"),
            &Snapshot::metric(0.0, gi).to_bytes(),
        )?;
    }
    dir.write_csv(
        "mollify.csv",
        "index,c0_distance,lambda,morrey_constant",
        &rows,
    )?;
    Ok(())
}

fn cmd_kernel(
    cfg: &ExperimentConfig,
    s: &Setup,
    dir: &mut OutputDir,
    report: &mut Report,
) -> Result<()> {
    let k = cfg.kernel.as_ref().ok_or_else(|| missing("kernel"))?;
    let fc = flow_config(cfg)?;
    let traj = run_flow(&s.g0, &fc, &s.bg)?;
    let sources: Vec<usize> = k.sources.iter().map(|ix| s.grid.linear_index(ix)).collect();
    let r = heat_kernel_gaussian_check(&traj, &s.bg, &sources, &k.times)?;
    report.float("c_fit", r.c_fit);
    let rows: Vec<String> = r
        .sources
        .iter()
        .map(|f| format!("{},{:e},{},{:e}", f.source, f.c, f.samples, f.median_margin))
        .collect();
    dir.write_csv("kernel.csv", "source,c,samples,median_margin", &rows)?;
    let masses: Vec<String> = r
        .masses
        .iter()
        .map(|(y, t, m)| format!("{y},{}", csv_floats(&[*t, *m])))
        .collect();
    dir.write_csv("kernel_mass.csv", "source,t,mass", &masses)?;
    Ok(())
}
