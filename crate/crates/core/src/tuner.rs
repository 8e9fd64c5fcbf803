//! Tuning jobs: thread-size resolution, device-limit constraints, strategy
//! execution against a backend and output verification.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::backend::{Backend, BackendError, Buffer, ElemType, EvaluationRequest, Status};
use crate::device::DeviceModel;
use crate::expr::Expr;
use crate::rng::seeded;
use crate::search::{SearchError, SearchOutcome, Strategy};
use crate::space::{Configuration, Constraint, SearchSpace, SpaceError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TunerError {
    #[error("dimension {dim}: {numerator} is not divisible by {divisor}")]
    InexactDivision {
        dim: usize,
        numerator: u64,
        divisor: u64,
    },
    #[error("dimension {dim}: divisor is zero")]
    ZeroDivisor { dim: usize },
    #[error("thread size overflow in dimension {dim}")]
    Overflow { dim: usize },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("modifier references unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("no configuration satisfies the user and device constraints")]
    EmptySpaceAfterConstraints,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("buffer shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("reference failed: {0}")]
    Reference(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeTarget {
    Global,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeOp {
    Multiply,
    Divide,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SizeFactor {
    One,
    Param(String),
}

impl From<&str> for SizeFactor {
    fn from(s: &str) -> Self {
        if s == "1" {
            SizeFactor::One
        } else {
            SizeFactor::Param(s.into())
        }
    }
}

/// Multiplies or divides the global or local size, per dimension, by a
/// parameter's value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadSizeModifier {
    pub target: SizeTarget,
    pub op: SizeOp,
    pub factors: Vec<SizeFactor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgRole {
    Input,
    Output,
    Scalar,
}

impl ArgRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ArgRole::Input => "input",
            ArgRole::Output => "output",
            ArgRole::Scalar => "scalar",
        }
    }
}

/// Deterministic buffer contents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Constant(f64),
    Ramp {
        start: f64,
        step: f64,
    },
    /// f32: uniform in `[0, 1)`; i32: uniform in `[0, 1000)`.
    Uniform {
        seed: u64,
    },
}

impl fmt::Display for Fill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fill::Constant(c) => write!(f, "constant:{c}"),
            Fill::Ramp { start, step } => write!(f, "ramp:{start}:{step}"),
            Fill::Uniform { seed } => write!(f, "uniform:{seed}"),
        }
    }
}

impl FromStr for Fill {
    type Err = String;

    /// `constant:<c>`, `ramp:<start>:<step>` or `uniform:<seed>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default();
        let rest: Vec<&str> = parts.collect();
        let num = |t: &str| {
            t.parse::<f64>()
                .map_err(|_| format!("bad number `{t}` in fill `{s}`"))
        };
        match (kind, rest.as_slice()) {
            ("constant", [c]) => Ok(Fill::Constant(num(c)?)),
            ("ramp", [a, b]) => Ok(Fill::Ramp {
                start: num(a)?,
                step: num(b)?,
            }),
            ("uniform", [seed]) => Ok(Fill::Uniform {
                seed: seed.parse().map_err(|_| format!("bad seed in fill `{s}`"))?,
            }),
            _ => Err(format!("unknown fill `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArgumentSpec {
    pub role: ArgRole,
    pub elem: ElemType,
    /// Element count; 1 for scalars.
    pub length: usize,
    pub fill: Fill,
}

impl ArgumentSpec {
    pub fn input(elem: ElemType, length: usize, fill: Fill) -> Self {
        ArgumentSpec {
            role: ArgRole::Input,
            elem,
            length,
            fill,
        }
    }

    pub fn output(elem: ElemType, length: usize) -> Self {
        ArgumentSpec {
            role: ArgRole::Output,
            elem,
            length,
            fill: Fill::Constant(0.0),
        }
    }

    pub fn scalar(elem: ElemType, value: f64) -> Self {
        ArgumentSpec {
            role: ArgRole::Scalar,
            elem,
            length: 1,
            fill: Fill::Constant(value),
        }
    }

    /// Scalar value, for scalar arguments.
    pub fn value(&self) -> Option<f64> {
        match (self.role, self.fill) {
            (ArgRole::Scalar, Fill::Constant(c)) => Some(c),
            _ => None,
        }
    }

    pub fn materialize(&self) -> Buffer {
        let n = self.length;
        match self.elem {
            ElemType::F32 => Buffer::F32(match self.fill {
                Fill::Constant(c) => alloc::vec![c as f32; n],
                Fill::Ramp { start, step } => (0..n).map(|i| (start + step * i as f64) as f32).collect(),
                Fill::Uniform { seed } => {
                    let mut rng = seeded(seed);
                    (0..n).map(|_| rng.gen::<f32>()).collect()
                }
            }),
            ElemType::I32 => Buffer::I32(match self.fill {
                Fill::Constant(c) => alloc::vec![c as i32; n],
                Fill::Ramp { start, step } => (0..n).map(|i| (start + step * i as f64) as i32).collect(),
                Fill::Uniform { seed } => {
                    let mut rng = seeded(seed);
                    (0..n).map(|_| rng.gen_range(0..1000)).collect()
                }
            }),
        }
    }
}

/// A tunable kernel: base thread sizes, size modifiers and arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub name: String,
    /// Opaque to the tuner; handed to backends (e.g. a source path).
    pub source_ref: String,
    pub global: Vec<u64>,
    pub local: Vec<u64>,
    pub modifiers: Vec<ThreadSizeModifier>,
    pub arguments: Vec<ArgumentSpec>,
    /// Integer expression over parameters giving local-memory bytes used.
    pub local_mem: Option<String>,
}

impl KernelSpec {
    pub fn new(name: &str, source_ref: &str, global: &[u64], local: &[u64]) -> Self {
        KernelSpec {
            name: name.into(),
            source_ref: source_ref.into(),
            global: global.to_vec(),
            local: local.to_vec(),
            modifiers: Vec::new(),
            arguments: Vec::new(),
            local_mem: None,
        }
    }

    fn modifier(&mut self, target: SizeTarget, op: SizeOp, factors: &[&str]) -> &mut Self {
        self.modifiers.push(ThreadSizeModifier {
            target,
            op,
            factors: factors.iter().map(|f| SizeFactor::from(*f)).collect(),
        });
        self
    }

    pub fn mul_global_size(&mut self, factors: &[&str]) -> &mut Self {
        self.modifier(SizeTarget::Global, SizeOp::Multiply, factors)
    }

    pub fn div_global_size(&mut self, factors: &[&str]) -> &mut Self {
        self.modifier(SizeTarget::Global, SizeOp::Divide, factors)
    }

    pub fn mul_local_size(&mut self, factors: &[&str]) -> &mut Self {
        self.modifier(SizeTarget::Local, SizeOp::Multiply, factors)
    }

    pub fn div_local_size(&mut self, factors: &[&str]) -> &mut Self {
        self.modifier(SizeTarget::Local, SizeOp::Divide, factors)
    }

    pub fn add_argument(&mut self, arg: ArgumentSpec) -> &mut Self {
        self.arguments.push(arg);
        self
    }

    pub fn set_local_memory(&mut self, expr: &str) -> &mut Self {
        self.local_mem = Some(expr.into());
        self
    }

    pub fn rank(&self) -> usize {
        self.global.len()
    }

    pub fn validate(&self) -> Result<(), TunerError> {
        let rank = self.rank();
        if !(1..=3).contains(&rank) || self.local.len() != rank {
            return Err(TunerError::InvalidKernel(format!(
                "global rank {} and local rank {} must match and lie in 1..=3",
                rank,
                self.local.len()
            )));
        }
        if self.global.iter().chain(&self.local).any(|&s| s == 0) {
            return Err(TunerError::InvalidKernel("base sizes must be at least 1".into()));
        }
        if let Some(m) = self.modifiers.iter().find(|m| m.factors.len() != rank) {
            return Err(TunerError::InvalidKernel(format!(
                "modifier has {} factors for a rank-{rank} kernel",
                m.factors.len()
            )));
        }
        Ok(())
    }

    pub fn output_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.arguments
            .iter()
            .enumerate()
            .filter(|(_, a)| a.role == ArgRole::Output)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadSizes {
    pub global: Vec<u64>,
    pub local: Vec<u64>,
}

/// Modifiers with factor names resolved to parameter positions.
#[derive(Debug, Clone)]
struct ResolvedModifiers {
    base_global: Vec<u64>,
    base_local: Vec<u64>,
    steps: Vec<(SizeTarget, SizeOp, Vec<Option<usize>>)>,
}

impl ResolvedModifiers {
    fn new(kernel: &KernelSpec, space: &SearchSpace) -> Result<Self, TunerError> {
        kernel.validate()?;
        let mut steps = Vec::with_capacity(kernel.modifiers.len());
        for m in &kernel.modifiers {
            let mut positions = Vec::with_capacity(m.factors.len());
            for f in &m.factors {
                positions.push(match f {
                    SizeFactor::One => None,
                    SizeFactor::Param(name) => Some(
                        space
                            .position(name)
                            .ok_or_else(|| TunerError::UnknownParameter(name.clone()))?,
                    ),
                });
            }
            steps.push((m.target, m.op, positions));
        }
        Ok(ResolvedModifiers {
            base_global: kernel.global.clone(),
            base_local: kernel.local.clone(),
            steps,
        })
    }

    fn apply(&self, values: &[u64]) -> Result<ThreadSizes, TunerError> {
        let mut sizes = ThreadSizes {
            global: self.base_global.clone(),
            local: self.base_local.clone(),
        };
        for (target, op, positions) in &self.steps {
            let dims = match target {
                SizeTarget::Global => &mut sizes.global,
                SizeTarget::Local => &mut sizes.local,
            };
            for (dim, (size, pos)) in dims.iter_mut().zip(positions).enumerate() {
                let factor = pos.map_or(1, |p| values[p]);
                match op {
                    SizeOp::Multiply => {
                        *size = size.checked_mul(factor).ok_or(TunerError::Overflow { dim })?;
                    }
                    SizeOp::Divide => {
                        if factor == 0 {
                            return Err(TunerError::ZeroDivisor { dim });
                        }
                        if *size % factor != 0 {
                            return Err(TunerError::InexactDivision {
                                dim,
                                numerator: *size,
                                divisor: factor,
                            });
                        }
                        *size /= factor;
                    }
                }
            }
        }
        Ok(sizes)
    }
}

/// Global and local sizes for `config`: base sizes with every modifier
/// applied in order. Divisions must be exact.
pub fn resolve_thread_sizes(
    kernel: &KernelSpec,
    space: &SearchSpace,
    config: &Configuration,
) -> Result<ThreadSizes, TunerError> {
    ResolvedModifiers::new(kernel, space)?.apply(config.values())
}

/// Constraints implied by the device: resolvable thread sizes, local sizes
/// within per-dimension and total limits, and local memory within capacity.
pub fn device_constraints(
    kernel: &KernelSpec,
    device: &DeviceModel,
    space: &SearchSpace,
) -> Result<Vec<Constraint>, TunerError> {
    let modifiers = ResolvedModifiers::new(kernel, space)?;
    let per_dim = device.max_local_per_dim;
    let total = device.max_local_total;
    let mut out = alloc::vec![Constraint::Predicate {
        label: format!("device {}: workgroup limits", device.name),
        check: Arc::new(move |values: &[u64]| match modifiers.apply(values) {
            Ok(sizes) => {
                sizes.local.iter().zip(per_dim).all(|(l, cap)| *l <= cap)
                    && sizes
                        .local
                        .iter()
                        .try_fold(1u64, |acc, l| acc.checked_mul(*l))
                        .is_some_and(|p| p <= total)
            }
            Err(_) => false,
        }),
    }];
    if let Some(text) = &kernel.local_mem {
        let expr: Expr = space.parse_constraint(text)?;
        let cap = device.local_mem_bytes;
        out.push(Constraint::Predicate {
            label: format!("device {}: local memory <= {cap} bytes", device.name),
            check: Arc::new(move |values: &[u64]| {
                expr.eval(values)
                    .is_ok_and(|bytes| bytes <= 0 || (bytes as u64) <= cap)
            }),
        });
    }
    Ok(out)
}

/// Trusted implementation whose outputs candidates are compared against.
pub trait Reference: Send + Sync {
    /// Output buffers (in output-argument order) for the given arguments.
    fn outputs(&self, arguments: &[Buffer]) -> Result<Vec<Buffer>, TunerError>;
}

impl<F> Reference for F
where
    F: Fn(&[Buffer]) -> Result<Vec<Buffer>, TunerError> + Send + Sync,
{
    fn outputs(&self, arguments: &[Buffer]) -> Result<Vec<Buffer>, TunerError> {
        self(arguments)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rel: 1e-4, abs: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferReport {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    /// First element outside tolerance and its absolute error.
    pub first_failure: Option<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub passed: bool,
    pub buffers: Vec<BufferReport>,
}

/// Elementwise comparison: passes iff `|c - r| <= abs + rel * |r|` for every
/// f32 element. i32 buffers must match exactly.
pub fn verify_outputs(
    candidate: &[Buffer],
    reference: &[Buffer],
    rel_tol: f64,
    abs_tol: f64,
) -> Result<VerificationReport, TunerError> {
    if candidate.len() != reference.len() {
        return Err(TunerError::ShapeMismatch(format!(
            "{} candidate buffers vs {} reference buffers",
            candidate.len(),
            reference.len()
        )));
    }
    let mut buffers = Vec::with_capacity(candidate.len());
    for (i, (c, r)) in candidate.iter().zip(reference).enumerate() {
        if c.len() != r.len() || c.elem_type() != r.elem_type() {
            return Err(TunerError::ShapeMismatch(format!(
                "buffer {i}: {} {} vs {} {}",
                c.len(),
                c.elem_type().as_str(),
                r.len(),
                r.elem_type().as_str()
            )));
        }
        let mut report = BufferReport {
            max_abs_error: 0.0,
            max_rel_error: 0.0,
            first_failure: None,
        };
        let mut check = |idx: usize, cv: f64, rv: f64, limit: f64| {
            let err = libm::fabs(cv - rv);
            let err = if err.is_nan() { f64::INFINITY } else { err };
            report.max_abs_error = report.max_abs_error.max(err);
            if rv != 0.0 {
                report.max_rel_error = report.max_rel_error.max(err / libm::fabs(rv));
            }
            if err > limit && report.first_failure.is_none() {
                report.first_failure = Some((idx, err));
            }
        };
        match (c, r) {
            (Buffer::F32(cv), Buffer::F32(rv)) => {
                for (idx, (a, b)) in cv.iter().zip(rv).enumerate() {
                    let b = *b as f64;
                    check(idx, *a as f64, b, abs_tol + rel_tol * libm::fabs(b));
                }
            }
            (Buffer::I32(cv), Buffer::I32(rv)) => {
                for (idx, (a, b)) in cv.iter().zip(rv).enumerate() {
                    check(idx, *a as f64, *b as f64, 0.0);
                }
            }
            _ => unreachable!(),
        }
        buffers.push(report);
    }
    Ok(VerificationReport {
        passed: buffers.iter().all(|b| b.first_failure.is_none()),
        buffers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verification {
    NotRequested,
    Passed,
    Failed(VerificationReport),
    /// Reference set but the backend returned nothing to compare.
    Missing,
    /// Digest comparison failed.
    DigestMismatch,
}

impl Verification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verification::NotRequested => "n/a",
            Verification::Passed => "pass",
            Verification::Failed(_) | Verification::DigestMismatch => "fail",
            Verification::Missing => "missing",
        }
    }

    pub fn acceptable(&self) -> bool {
        matches!(self, Verification::NotRequested | Verification::Passed)
    }
}

/// Everything needed to tune one kernel.
#[derive(Clone)]
pub struct TuningJob {
    pub kernel: KernelSpec,
    /// Parameters plus user constraints; device constraints are added by
    /// [`run_tuning`].
    pub space: SearchSpace,
    pub device: DeviceModel,
    pub reference: Option<Arc<dyn Reference>>,
    pub tolerances: Tolerances,
    /// Overrides the backend's default repetition count.
    pub repetitions: Option<u32>,
}

impl fmt::Debug for TuningJob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TuningJob")
            .field("kernel", &self.kernel)
            .field("space", &self.space)
            .field("device", &self.device)
            .field("reference", &self.reference.is_some())
            .field("tolerances", &self.tolerances)
            .field("repetitions", &self.repetitions)
            .finish()
    }
}

impl TuningJob {
    pub fn new(kernel: KernelSpec, space: SearchSpace, device: DeviceModel) -> Self {
        TuningJob {
            kernel,
            space,
            device,
            reference: None,
            tolerances: Tolerances::default(),
            repetitions: None,
        }
    }

    pub fn with_reference(mut self, reference: Arc<dyn Reference>) -> Self {
        self.reference = Some(reference);
        self
    }

    /// User constraints plus device constraints.
    pub fn constrained_space(&self) -> Result<SearchSpace, TunerError> {
        let mut space = self.space.clone();
        space.extend_constraints(device_constraints(&self.kernel, &self.device, &self.space)?);
        Ok(space)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub step: usize,
    pub config: Configuration,
    pub canonical: String,
    pub status: Status,
    pub time_ms: Option<f64>,
    pub sizes: ThreadSizes,
    pub best_so_far: Option<f64>,
    pub verification: Verification,
    pub diagnostic: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningMetadata {
    pub seed: u64,
    pub strategy: String,
    pub device: String,
    pub kernel: String,
    pub budget: u64,
    pub valid_configurations: u64,
    pub failures: usize,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningResult {
    pub rows: Vec<ResultRow>,
    /// Index into `rows`.
    pub best: Option<usize>,
    pub metadata: TuningMetadata,
    pub outcome: SearchOutcome,
}

impl TuningResult {
    pub fn best_row(&self) -> Option<&ResultRow> {
        self.best.map(|i| &self.rows[i])
    }
}

/// Runs `strategy` over the job's space (user and device constraints)
/// against `backend`, recording one row per unique evaluation.
///
/// With a reference set, every successful configuration is verified after
/// timing; failures are kept as rows but reported to the search as failed,
/// so they never become best.
pub fn run_tuning(
    job: &TuningJob,
    backend: &mut dyn Backend,
    strategy: &Strategy,
    seed: u64,
) -> Result<TuningResult, TunerError> {
    strategy.validate()?;
    run_tuning_in(job, &job.constrained_space()?, backend, strategy, seed)
}

/// [`run_tuning`] over a space already built by
/// [`TuningJob::constrained_space`], so repeated runs share its cached
/// enumeration.
pub fn run_tuning_in(
    job: &TuningJob,
    space: &SearchSpace,
    backend: &mut dyn Backend,
    strategy: &Strategy,
    seed: u64,
) -> Result<TuningResult, TunerError> {
    strategy.validate()?;
    let valid = space.valid_count()?;
    if valid == 0 {
        return Err(TunerError::EmptySpaceAfterConstraints);
    }
    let modifiers = ResolvedModifiers::new(&job.kernel, space)?;
    let repetitions = job.repetitions.unwrap_or_else(|| backend.default_repetitions());
    let want_outputs = job.reference.is_some();
    let arguments: Vec<Buffer> = if want_outputs {
        job.kernel
            .arguments
            .iter()
            .map(ArgumentSpec::materialize)
            .collect()
    } else {
        Vec::new()
    };

    let mut reference_outputs: Option<Vec<Buffer>> = None;
    let mut rows: Vec<ResultRow> = Vec::new();
    let mut fatal: Option<TunerError> = None;

    let outcome = strategy.run(
        space,
        |config: &Configuration| {
            if fatal.is_some() {
                return None;
            }
            let sizes = match modifiers.apply(config.values()) {
                Ok(s) => s,
                Err(e) => {
                    fatal = Some(e);
                    return None;
                }
            };
            let canonical = space.canonical(config);
            let request = EvaluationRequest {
                kernel: &job.kernel,
                config: space.named(config),
                canonical: canonical.clone(),
                global: sizes.global.clone(),
                local: sizes.local.clone(),
                device: &job.device.name,
                repetitions,
                arguments: &arguments,
                want_outputs,
            };
            let result = match backend.evaluate(&request) {
                Ok(r) => r,
                Err(e) => {
                    fatal = Some(e.into());
                    return None;
                }
            };
            let success = result.is_success();
            let verification = match (&job.reference, success) {
                (Some(reference), true) => {
                    if reference_outputs.is_none() {
                        match reference.outputs(&arguments) {
                            Ok(out) => reference_outputs = Some(out),
                            Err(e) => {
                                fatal = Some(e);
                                return None;
                            }
                        }
                    }
                    let expected = reference_outputs.as_deref().unwrap_or(&[]);
                    if let Some(outputs) = &result.outputs {
                        match verify_outputs(outputs, expected, job.tolerances.rel, job.tolerances.abs) {
                            Ok(report) if report.passed => Verification::Passed,
                            Ok(report) => Verification::Failed(report),
                            Err(e) => {
                                fatal = Some(e);
                                return None;
                            }
                        }
                    } else if let Some(digests) = &result.outputs_digest {
                        let expected: Vec<u64> = expected.iter().map(Buffer::digest).collect();
                        if *digests == expected {
                            Verification::Passed
                        } else {
                            Verification::DigestMismatch
                        }
                    } else {
                        Verification::Missing
                    }
                }
                _ => Verification::NotRequested,
            };
            let time = if success && verification.acceptable() {
                result.time_ms
            } else {
                None
            };
            rows.push(ResultRow {
                step: rows.len(),
                config: config.clone(),
                canonical,
                status: result.status,
                time_ms: if success { result.time_ms } else { None },
                sizes,
                best_so_far: None,
                verification,
                diagnostic: result.diagnostic,
            });
            time
        },
        seed,
    )?;
    if let Some(e) = fatal {
        return Err(e);
    }
    debug_assert_eq!(rows.len(), outcome.trace.len());
    for (row, step) in rows.iter_mut().zip(&outcome.trace) {
        row.best_so_far = step.best_so_far;
    }
    let best = outcome
        .best
        .as_ref()
        .and_then(|(c, _)| outcome.trace.iter().position(|s| &s.config == c));
    Ok(TuningResult {
        rows,
        best,
        metadata: TuningMetadata {
            seed,
            strategy: strategy.to_string(),
            device: job.device.name.clone(),
            kernel: job.kernel.name.clone(),
            budget: outcome.budget,
            valid_configurations: valid,
            failures: outcome.failures,
            steps: outcome.steps,
        },
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{EvaluationResult, ModelKind, SyntheticBackend, SyntheticModel};

    pub(crate) fn copy_job() -> TuningJob {
        let mut kernel = KernelSpec::new("copy", "copy.cl", &[2048], &[64]);
        kernel.div_global_size(&["WPT"]);
        kernel
            .add_argument(ArgumentSpec::input(
                ElemType::F32,
                2048,
                Fill::Ramp {
                    start: 0.0,
                    step: 1.0,
                },
            ))
            .add_argument(ArgumentSpec::output(ElemType::F32, 2048));
        let mut space = SearchSpace::new();
        space.add_parameter("WPT", &[1, 2, 4]).unwrap();
        TuningJob::new(kernel, space, DeviceModel::preset("K40m").unwrap())
    }

    #[test]
    fn copy_kernel_sizes() {
        let job = copy_job();
        for (wpt, global) in [(1, 2048), (2, 1024), (4, 512)] {
            let sizes =
                resolve_thread_sizes(&job.kernel, &job.space, &Configuration(alloc::vec![wpt])).unwrap();
            assert_eq!(sizes.global, [global]);
            assert_eq!(sizes.local, [64]);
        }
    }

    #[test]
    fn inexact_division() {
        let mut job = copy_job();
        job.space = SearchSpace::new();
        job.space.add_parameter("WPT", &[3]).unwrap();
        assert_eq!(
            resolve_thread_sizes(&job.kernel, &job.space, &Configuration(alloc::vec![3])),
            Err(TunerError::InexactDivision {
                dim: 0,
                numerator: 2048,
                divisor: 3
            })
        );
        job.space = SearchSpace::new();
        job.space.add_parameter("WPT", &[0]).unwrap();
        assert_eq!(
            resolve_thread_sizes(&job.kernel, &job.space, &Configuration(alloc::vec![0])),
            Err(TunerError::ZeroDivisor { dim: 0 })
        );
    }

    #[test]
    fn multiply_then_divide_round_trips() {
        let mut kernel = KernelSpec::new("k", "k.cl", &[256, 64], &[4, 2]);
        kernel.mul_global_size(&["A", "1"]).div_global_size(&["A", "1"]);
        kernel.mul_local_size(&["1", "A"]).div_local_size(&["1", "A"]);
        let mut space = SearchSpace::new();
        space.add_parameter("A", &[1, 2, 3, 7]).unwrap();
        for c in space.enumerate_valid().unwrap() {
            let s = resolve_thread_sizes(&kernel, &space, c).unwrap();
            assert_eq!(s.global, [256, 64]);
            assert_eq!(s.local, [4, 2]);
        }
    }

    #[test]
    fn invalid_kernels() {
        let k = KernelSpec::new("k", "", &[1, 2], &[1]);
        assert!(matches!(k.validate(), Err(TunerError::InvalidKernel(_))));
        let mut k = KernelSpec::new("k", "", &[4], &[1]);
        k.mul_local_size(&["A", "B"]);
        assert!(matches!(k.validate(), Err(TunerError::InvalidKernel(_))));
        let k = KernelSpec::new("k", "", &[0], &[1]);
        assert!(k.validate().is_err());
    }

    #[test]
    fn workgroup_cap_rejects_large_local() {
        let mut kernel = KernelSpec::new("copy", "", &[4096], &[1]);
        kernel.mul_local_size(&["WG"]);
        let mut space = SearchSpace::new();
        space
            .add_parameter("WG", &[32, 64, 128, 256, 512, 1024, 2048])
            .unwrap();
        let device = DeviceModel::preset("K40m").unwrap();
        space.extend_constraints(device_constraints(&kernel, &device, &space).unwrap());
        let wgs: Vec<u64> = space.enumerate_valid().unwrap().iter().map(|c| c.0[0]).collect();
        assert_eq!(wgs, [32, 64, 128, 256, 512, 1024]);
    }

    #[test]
    fn vacuous_device_constraints() {
        let job = copy_job();
        let space = job.constrained_space().unwrap();
        assert_eq!(space.valid_count().unwrap(), 3);
        let mut tiny = job.clone();
        tiny.device.max_local_total = 32;
        assert_eq!(tiny.constrained_space().unwrap().valid_count().unwrap(), 0);
    }

    #[test]
    fn verify_identical_and_tolerant() {
        let r = alloc::vec![Buffer::F32(alloc::vec![1.0; 8])];
        let rep = verify_outputs(&r, &r, 1e-4, 1e-6).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.buffers[0].max_abs_error, 0.0);

        let c = alloc::vec![Buffer::F32(alloc::vec![1.0 + 1e-7; 8])];
        assert!(verify_outputs(&c, &r, 1e-4, 1e-6).unwrap().passed);
    }

    #[test]
    fn verify_reports_gross_mismatch() {
        let r = alloc::vec![Buffer::F32(alloc::vec![1.0; 8])];
        let mut bad = alloc::vec![1.0f32; 8];
        bad[5] = 2.0;
        let rep = verify_outputs(&[Buffer::F32(bad)], &r, 1e-4, 1e-6).unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.buffers[0].first_failure, Some((5, 1.0)));
        assert_eq!(rep.buffers[0].max_abs_error, 1.0);
    }

    #[test]
    fn verify_shape_mismatch_and_exact_ints() {
        let r = alloc::vec![Buffer::I32(alloc::vec![1, 2])];
        assert!(matches!(
            verify_outputs(&[Buffer::I32(alloc::vec![1])], &r, 1.0, 1.0),
            Err(TunerError::ShapeMismatch(_))
        ));
        assert!(matches!(
            verify_outputs(&[], &r, 1.0, 1.0),
            Err(TunerError::ShapeMismatch(_))
        ));
        let rep = verify_outputs(&[Buffer::I32(alloc::vec![1, 3])], &r, 1.0, 1.0).unwrap();
        assert!(!rep.passed);
    }

    #[test]
    fn fill_round_trip() {
        for f in [
            Fill::Constant(1.5),
            Fill::Ramp {
                start: -1.0,
                step: 0.25,
            },
            Fill::Uniform { seed: 42 },
        ] {
            assert_eq!(f.to_string().parse::<Fill>().unwrap(), f);
        }
        assert!("sine:1".parse::<Fill>().is_err());
    }

    #[test]
    fn copy_job_full_search() {
        let job = copy_job();
        let mut backend = SyntheticBackend::new(SyntheticModel::new(ModelKind::HashRandom, 1, 1.0));
        let result = run_tuning(&job, &mut backend, &Strategy::Full, 0).unwrap();
        assert_eq!(result.rows.len(), 3);
        let best = result.best_row().unwrap();
        let min = result
            .rows
            .iter()
            .filter_map(|r| r.time_ms)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best.time_ms, Some(min));
        assert_eq!(result.rows[2].sizes.global, [512]);
    }

    #[test]
    fn empty_after_device_constraints() {
        let mut job = copy_job();
        job.kernel.local = alloc::vec![4096];
        let mut backend = SyntheticBackend::new(SyntheticModel::new(ModelKind::HashRandom, 1, 1.0));
        assert_eq!(
            run_tuning(&job, &mut backend, &Strategy::Full, 0).unwrap_err(),
            TunerError::EmptySpaceAfterConstraints
        );
    }

    struct Broken;
    impl Backend for Broken {
        fn evaluate(&mut self, _: &EvaluationRequest<'_>) -> Result<EvaluationResult, BackendError> {
            Err(BackendError::SpawnFailure("no such file".into()))
        }
    }

    #[test]
    fn backend_errors_abort() {
        let job = copy_job();
        assert!(matches!(
            run_tuning(&job, &mut Broken, &Strategy::Full, 0),
            Err(TunerError::Backend(BackendError::SpawnFailure(_)))
        ));
    }

    struct Digests(bool);
    impl Backend for Digests {
        fn evaluate(&mut self, req: &EvaluationRequest<'_>) -> Result<EvaluationResult, BackendError> {
            let mut r = EvaluationResult::success(req.value("WPT").unwrap() as f64);
            let out = req.arguments[0].clone();
            r.outputs_digest = Some(alloc::vec![if self.0 { out.digest() } else { 0 }]);
            Ok(r)
        }
    }

    #[test]
    fn digest_verification() {
        let job = copy_job().with_reference(Arc::new(|args: &[Buffer]| Ok(alloc::vec![args[0].clone()])));
        let ok = run_tuning(&job, &mut Digests(true), &Strategy::Full, 0).unwrap();
        assert!(ok.rows.iter().all(|r| r.verification == Verification::Passed));
        assert_eq!(ok.best_row().unwrap().time_ms, Some(1.0));
        let bad = run_tuning(&job, &mut Digests(false), &Strategy::Full, 0).unwrap();
        assert!(bad
            .rows
            .iter()
            .all(|r| r.verification == Verification::DigestMismatch));
        assert!(bad.best.is_none());
    }
}
