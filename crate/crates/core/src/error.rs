//! Crate-wide error type. Geometric and numerical failures carry enough
//! context (node index, offending value) to point at the defect directly.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid axis {axis} has non-positive spacing {spacing}")]
    InvalidSpacing { axis: usize, spacing: f64 },

    #[error("coefficient matrix asymmetric at node {node}: |h12 - h21| = {diff:e}")]
    AsymmetricCoefficients { node: usize, diff: f64 },

    #[error("coefficient matrix not uniformly elliptic: min eigenvalue {min_eig:e} at node {node}")]
    NotElliptic { node: usize, min_eig: f64 },

    #[error("operation requires analytic coefficient derivatives (tabulated field supplied)")]
    NeedsAnalyticCoefficients,

    #[error("operation requires analytic weight derivatives of order {order}")]
    NeedsAnalyticWeight { order: usize },

    #[error("weight normalization infeasible even at scale a = {a_max}")]
    NormalizationInfeasible { a_max: f64 },

    #[error("unexpected critical point(s) of the weight at nodes {nodes:?} (min |grad| = {grad:e})")]
    SecondCriticalPoint { nodes: Vec<usize>, grad: f64 },

    #[error("weight minimum is {value:e} at node {node}, expected 0 at the prescribed critical point")]
    NonzeroMinimum { node: usize, value: f64 },

    #[error("observed boundary portion is empty")]
    EmptyGamma0,

    #[error("neighborhood radii violate 0 < delta0 < delta: delta0 = {delta0}, delta = {delta}")]
    RadiusOrder { delta0: f64, delta: f64 },

    #[error("complement of the observation neighborhood is empty; shrink omega")]
    EmptyComplement,

    #[error("shift takes the critical point outside the closed domain")]
    ShiftOutOfDomain,

    #[error("no delta2 < delta0 with the shifted boundary neighborhood inside omega0")]
    Delta2Containment,

    #[error("weight exceeds T^2/4 off the inner neighborhood: max d = {value} > {limit}")]
    Step2Bound { value: f64, limit: f64 },

    #[error("no feasible Carleman parameters: inclusion '{link}' broken at {violations} nodes")]
    NoFeasibleParameters { link: String, violations: usize },

    #[error("frame self-check failed: the two groupings of A differ by {diff:e} (relative)")]
    FrameInconsistent { diff: f64 },

    #[error("sample point ({t}, {s}, {x:?}) lies outside the sampling region (bracket = {bracket:e})")]
    OutsideSamplingRegion { t: f64, s: f64, x: [f64; 2], bracket: f64 },

    #[error("no spectral threshold on the sweep grid; worst margin {worst_margin:e} at lambda = {lambda}")]
    NoThreshold { lambda: f64, worst_margin: f64 },

    #[error("elliptic assembly needs diagonally-structured coefficients")]
    NonDiagonalCoefficients,

    #[error("operator not positive definite: pivot {pivot:e} at row {row}")]
    Indefinite { row: usize, pivot: f64 },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("time step {dt} violates the stability bound {dt_max}")]
    CflViolation { dt: f64, dt_max: f64 },

    #[error("wave solution blew up at step {step}: max |w| = {max:e}")]
    BlowUp { step: usize, max: f64 },

    #[error("time {t} outside the trajectory range [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },

    #[error("energy is zero along the trajectory; bound fit needs nonzero data")]
    ZeroEnergy,

    #[error("integration windows must satisfy 0 <= S1 < S2 < T2 < T1 <= T")]
    WindowOrder,

    #[error("requested {m} modes but only {available} interior nodes")]
    TooManyModes { m: usize, available: usize },

    #[error("region grid incompatible with solver grid: {0}")]
    GridMismatch(String),

    #[error("wave solve for basis datum {index} failed: {source}")]
    SolverFailure {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("weight fails the certification hypotheses: {detail}")]
    WeightCondition { detail: String },

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
