//! Experiment configuration: TOML with strict keys and validation errors that
//! point at the offending line.

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;

use rml_core::fields::{InitialDataSpec, InitialKind};
use rml_core::flow::FlowConfig;
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration")?;
        for i in &self.issues {
            write!(f, "\n  {i}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub grid: GridSpec,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub flow: Option<FlowSection>,
    #[serde(default)]
    pub morrey: Option<MorreySection>,
    #[serde(default)]
    pub decay: Option<DecaySection>,
    #[serde(default)]
    pub codim: Option<CodimSection>,
    #[serde(default)]
    pub curvature: Option<CurvatureSection>,
    #[serde(default)]
    pub monotone: Option<MonotoneSection>,
    #[serde(default)]
    pub kernel: Option<KernelSection>,
    #[serde(default)]
    pub mollify: Option<MollifySection>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub cells: usize,
    #[serde(default = "two_pi")]
    pub period: f64,
}

fn two_pi() -> f64 {
    2.0 * PI
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    Flat,
    ConformalBump,
    HoelderCone,
    MorreyFamily,
    RandomW1p,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default = "flat_kind")]
    pub kind: KindName,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "half")]
    pub exponent: f64,
    #[serde(default)]
    pub centers: Vec<Vec<f64>>,
    #[serde(default)]
    pub lambda_cap: Option<f64>,
    #[serde(default = "default_support")]
    pub support: [f64; 2],
}

fn flat_kind() -> KindName {
    KindName::Flat
}
fn half() -> f64 {
    0.5
}
fn default_support() -> [f64; 2] {
    [0.5, 1.0]
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            kind: KindName::Flat,
            amplitude: 0.0,
            exponent: 0.5,
            centers: Vec::new(),
            lambda_cap: None,
            support: default_support(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub t_end: f64,
    #[serde(default = "half")]
    pub cfl: f64,
    #[serde(default = "default_dt_min")]
    pub dt_min: f64,
    #[serde(default)]
    pub dt_max: Option<f64>,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default)]
    pub early_time_refinement: f64,
    #[serde(default)]
    pub store_every: usize,
    /// Exclusion radius around the singular set for the convergence meter.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_dt_min() -> f64 {
    1e-9
}
fn default_margin() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorreySection {
    pub p: f64,
    #[serde(default)]
    pub radii: Vec<f64>,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    pub window: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum MaskSpec {
    Points {
        points: Vec<Vec<f64>>,
    },
    Segment {
        from: Vec<f64>,
        to: Vec<f64>,
    },
    Circle {
        center: Vec<f64>,
        radius: f64,
        normal_axis: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodimSection {
    pub epsilons: Vec<f64>,
    /// Defaults to the singular set of the initial data.
    #[serde(default)]
    pub mask: Option<MaskSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum TestFunctionSpec {
    Constant {
        value: f64,
    },
    Bump {
        center: Vec<f64>,
        radius: f64,
    },
    Plateau {
        center: Vec<f64>,
        inner: f64,
        outer: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvatureSection {
    pub delta: f64,
    #[serde(default)]
    pub a: f64,
    pub eps_list: Vec<f64>,
    pub test: TestFunctionSpec,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonotoneSection {
    #[serde(default)]
    pub a: f64,
    pub test: TestFunctionSpec,
    /// Initial data of the forward heat solve used for the duality check.
    #[serde(default)]
    pub forward: Option<TestFunctionSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    /// Multi-indices of the source cells.
    pub sources: Vec<Vec<usize>>,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifySection {
    pub indices: Vec<usize>,
    pub chart_radius: f64,
    pub overlap: f64,
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError {
        issues: vec![ConfigIssue {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            field: "toml".into(),
            message: e.message().to_string(),
        }],
    })?;
    let issues = validate(&cfg, text);
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { issues })
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key = ...` inside `[section]` (empty section: top level).
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

struct Checker<'a> {
    text: &'a str,
    issues: Vec<ConfigIssue>,
}

impl Checker<'_> {
    fn require(&mut self, ok: bool, section: &str, key: &str, message: impl Into<String>) {
        if !ok {
            let field = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            self.issues.push(ConfigIssue {
                line: locate(self.text, section, key).or_else(|| locate_header(self.text, section)),
                field,
                message: message.into(),
            });
        }
    }
}

fn locate_header(text: &str, section: &str) -> Option<usize> {
    text.lines()
        .position(|l| l.trim() == format!("[{section}]"))
        .map(|i| i + 1)
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

fn validate(cfg: &ExperimentConfig, text: &str) -> Vec<ConfigIssue> {
    let mut c = Checker {
        text,
        issues: Vec::new(),
    };
    let n = cfg.grid.dim;
    c.require(
        (2..=3).contains(&n),
        "grid",
        "dim",
        format!("{n} must be 2 or 3"),
    );
    c.require(
        cfg.grid.cells >= 8,
        "grid",
        "cells",
        format!("{} must be at least 8", cfg.grid.cells),
    );
    c.require(
        positive(cfg.grid.period),
        "grid",
        "period",
        "must be positive",
    );

    let init = &cfg.initial;
    for p in &init.centers {
        c.require(
            p.len() == n,
            "initial",
            "centers",
            format!("each center needs {n} coordinates"),
        );
    }
    c.require(
        init.support[0] > 0.0 && init.support[0] < init.support[1],
        "initial",
        "support",
        "needs 0 < inner < outer",
    );
    c.require(
        init.exponent > 0.0 && init.exponent <= 1.0,
        "initial",
        "exponent",
        format!("{} must lie in (0, 1]", init.exponent),
    );

    if let Some(f) = &cfg.flow {
        c.require(positive(f.t_end), "flow", "t_end", "must be positive");
        c.require(
            f.cfl > 0.0 && f.cfl < 1.0,
            "flow",
            "cfl",
            format!("{} must lie in (0, 1)", f.cfl),
        );
        c.require(positive(f.dt_min), "flow", "dt_min", "must be positive");
        if let Some(m) = f.dt_max {
            c.require(m >= f.dt_min, "flow", "dt_max", "must be at least dt_min");
        }
        c.require(
            f.snapshot_times.iter().all(|t| *t >= 0.0 && *t <= f.t_end),
            "flow",
            "snapshot_times",
            "every time must lie in [0, t_end]",
        );
        c.require(
            f.early_time_refinement >= 0.0,
            "flow",
            "early_time_refinement",
            "must be non-negative",
        );
        c.require(f.margin >= 0.0, "flow", "margin", "must be non-negative");
    }

    let p = cfg.morrey.as_ref().map(|m| m.p);
    if let Some(m) = &cfg.morrey {
        c.require(
            m.p >= 1.0,
            "morrey",
            "p",
            format!("{} must be at least 1", m.p),
        );
        c.require(m.stride >= 1, "morrey", "stride", "must be at least 1");
        c.require(
            m.radii.iter().all(|r| positive(*r)),
            "morrey",
            "radii",
            "radii must be positive",
        );
    }
    if let Some(d) = &cfg.decay {
        c.require(
            positive(d.window[0]) && d.window[0] < d.window[1],
            "decay",
            "window",
            "needs 0 < start < end",
        );
        c.require(
            cfg.flow.is_some(),
            "decay",
            "window",
            "decay fits need a [flow] section",
        );
    }
    if let Some(k) = &cfg.codim {
        c.require(
            !k.epsilons.is_empty() && k.epsilons.iter().all(|e| positive(*e)),
            "codim",
            "epsilons",
            "needs positive radii",
        );
    }
    for (section, requested) in [
        ("curvature", cfg.curvature.is_some()),
        ("monotone", cfg.monotone.is_some()),
    ] {
        if !requested {
            continue;
        }
        match p {
            None => c.require(
                false,
                section,
                "test",
                "needs the Morrey exponent from [morrey] p",
            ),
            Some(p) => c.require(
                p >= 2.0,
                "morrey",
                "p",
                format!("p = {p} is below 2; the {section} experiment requires p >= 2"),
            ),
        }
    }
    if let Some(k) = &cfg.curvature {
        c.require(positive(k.delta), "curvature", "delta", "must be positive");
        c.require(
            !k.eps_list.is_empty(),
            "curvature",
            "eps_list",
            "must not be empty",
        );
    }
    if let Some(m) = &cfg.monotone {
        c.require(
            cfg.flow.is_some(),
            "monotone",
            "test",
            "needs a [flow] section",
        );
        c.require(m.a.is_finite(), "monotone", "a", "must be finite");
    }
    if let Some(k) = &cfg.kernel {
        c.require(
            cfg.flow.is_some(),
            "kernel",
            "times",
            "needs a [flow] section",
        );
        c.require(
            k.sources
                .iter()
                .all(|s| s.len() == n && s.iter().all(|i| *i < cfg.grid.cells)),
            "kernel",
            "sources",
            format!("each source needs {n} indices below {}", cfg.grid.cells),
        );
        c.require(!k.times.is_empty(), "kernel", "times", "must not be empty");
    }
    if let Some(m) = &cfg.mollify {
        c.require(
            !m.indices.is_empty() && m.indices.iter().all(|i| *i >= 1),
            "mollify",
            "indices",
            "needs indices >= 1",
        );
        c.require(
            m.overlap > 0.0 && m.overlap < m.chart_radius,
            "mollify",
            "overlap",
            "needs 0 < overlap < chart_radius",
        );
    }
    c.issues
}

impl ExperimentConfig {
    pub fn initial_spec(&self) -> InitialDataSpec {
        let i = &self.initial;
        let kind = match i.kind {
            KindName::Flat => InitialKind::Flat,
            KindName::ConformalBump => InitialKind::ConformalBump,
            KindName::HoelderCone => InitialKind::HoelderCone,
            KindName::MorreyFamily => InitialKind::MorreyFamily,
            KindName::RandomW1p => InitialKind::RandomW1p,
        };
        let base = match kind {
            InitialKind::ConformalBump => InitialDataSpec::conformal_bump(i.amplitude),
            InitialKind::HoelderCone => InitialDataSpec::hoelder_cone(
                i.centers.first().map(|c| c.as_slice()).unwrap_or(&[]),
                i.amplitude,
                i.exponent,
            ),
            _ => InitialDataSpec::flat(),
        };
        let mut spec = InitialDataSpec {
            kind,
            centers: i.centers.clone(),
            amplitude: i.amplitude,
            exponent: i.exponent,
            seed: self.seed,
            support: (i.support[0], i.support[1]),
            ..base
        };
        if let Some(cap) = i.lambda_cap {
            spec.lambda_cap = cap;
        } else if matches!(kind, InitialKind::MorreyFamily | InitialKind::RandomW1p) {
            spec.lambda_cap = f64::INFINITY;
        }
        spec
    }

    pub fn flow_config(&self) -> Option<FlowConfig> {
        self.flow.as_ref().map(|f| {
            let mut cfg = FlowConfig::new(f.t_end);
            cfg.cfl = f.cfl;
            cfg.dt_min = f.dt_min;
            if let Some(m) = f.dt_max {
                cfg.dt_max = m;
            }
            if !f.snapshot_times.is_empty() {
                let mut times = f.snapshot_times.clone();
                times.sort_by(f64::total_cmp);
                times.dedup();
                cfg.snapshot_times = times;
            }
            cfg.early_time_refinement = f.early_time_refinement;
            cfg.store_every = f.store_every;
            cfg
        })
    }
}
