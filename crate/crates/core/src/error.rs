use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate metric at cell {cell}: relative pivot {pivot:e} below tolerance")]
    DegenerateMetric { cell: usize, pivot: f64 },

    #[error("non-finite value at cell {cell}")]
    NonFinite { cell: usize },

    #[error("initial data: {0}")]
    InitialData(String),

    #[error(
        "stability failure at t = {t}: dt = {dt:e}, min relative eigenvalue {min_eigenvalue:e}"
    )]
    Stability {
        t: f64,
        dt: f64,
        min_eigenvalue: f64,
    },

    #[error("time step {dt:e} exceeds the stability bound {bound:e}")]
    Cfl { dt: f64, bound: f64 },

    #[error("gauge displacement {displacement} exceeds half a period at t = {t}")]
    GaugeBlowup { t: f64, displacement: f64 },

    #[error("singular set mask is empty")]
    EmptyMask,

    #[error("chart radius {chart_radius} does not contain the singular set (needs > {required})")]
    ChartTooSmall { chart_radius: f64, required: f64 },

    #[error("singular set codimension {fitted:.3} is below the required {required:.3}")]
    Codimension { fitted: f64, required: f64 },

    #[error("negative undershoot {undershoot:e} exceeds tolerance {tolerance:e}")]
    Undershoot { undershoot: f64, tolerance: f64 },
}
