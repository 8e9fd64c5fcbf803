//! JSON job files.
//!
//! A job names a kernel (a built-in `conv` or `gemm` template, or a
//! `custom` kernel with its own parameters), a device, a backend, a search
//! strategy and a seed. The schema is published in `docs/job.schema.json`;
//! unknown fields are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use ktune_core::backend::{ElemType, ModelKind, SyntheticBackend, SyntheticModel};
use ktune_core::landscapes::{self, ConvShape, GemmShape};
use ktune_core::search::PsoParams;
use ktune_core::tuner::{
    ArgRole, ArgumentSpec, Fill, Reference, SizeFactor, SizeOp, SizeTarget, ThreadSizeModifier, Tolerances,
};
use ktune_core::{Backend, DeviceModel, Fraction, KernelSpec, SearchSpace, Strategy, TuningJob};
use serde::de::{self, Deserializer};
use serde::Deserialize;

use crate::external::{ExternalBackend, DEFAULT_REPETITIONS};
use crate::replay::{ReplayBackend, ReplayTable};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobFile {
    pub kernel: KernelDef,
    #[serde(default)]
    pub parameters: Vec<ParameterDef>,
    #[serde(default)]
    pub constraints: Vec<String>,
    pub device: DeviceDef,
    pub backend: BackendDef,
    pub strategy: StrategyDef,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub repetitions: Option<u32>,
    #[serde(default)]
    pub verify: bool,
    #[serde(default)]
    pub tolerances: Option<TolerancesDef>,
    #[serde(default)]
    pub outputs: OutputsDef,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "template", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelDef {
    Conv {
        #[serde(default = "default_filter")]
        filter: u64,
        #[serde(default = "default_width")]
        width: u64,
        #[serde(default = "default_height")]
        height: u64,
    },
    Gemm {
        #[serde(default = "default_gemm_dim")]
        m: u64,
        #[serde(default = "default_gemm_dim")]
        n: u64,
        #[serde(default = "default_gemm_dim")]
        k: u64,
    },
    Custom {
        name: String,
        #[serde(default)]
        source: String,
        global: Vec<u64>,
        local: Vec<u64>,
        #[serde(default)]
        modifiers: Vec<ModifierDef>,
        #[serde(default)]
        arguments: Vec<ArgumentDef>,
        #[serde(default)]
        local_memory: Option<String>,
    },
}

fn default_filter() -> u64 {
    7
}

fn default_width() -> u64 {
    8192
}

fn default_height() -> u64 {
    4096
}

fn default_gemm_dim() -> u64 {
    2048
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModifierDef {
    pub target: TargetDef,
    pub op: OpDef,
    /// One parameter name (or `"1"`) per dimension.
    pub factors: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetDef {
    Global,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpDef {
    Multiply,
    Divide,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArgumentDef {
    pub role: RoleDef,
    #[serde(rename = "type")]
    pub elem: ElemDef,
    #[serde(default)]
    pub length: Option<usize>,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub fill: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleDef {
    Input,
    Output,
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemDef {
    F32,
    I32,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterDef {
    pub name: String,
    pub values: Vec<u64>,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum DeviceDef {
    Preset(String),
    Explicit(ExplicitDevice),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitDevice {
    pub name: String,
    pub max_local_total: u64,
    pub max_local_per_dim: [u64; 3],
    pub local_mem_bytes: u64,
    #[serde(default)]
    pub peak_gflops: Option<f64>,
    #[serde(default)]
    pub peak_gbs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendDef {
    Synthetic {
        model: String,
        #[serde(default)]
        noise_seed: u64,
        #[serde(default = "default_base_time")]
        base_time_ms: f64,
    },
    Replay {
        path: PathBuf,
    },
    External {
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_s: f64,
        #[serde(default = "default_workers")]
        workers: usize,
    },
}

fn default_base_time() -> f64 {
    1.0
}

fn default_timeout() -> f64 {
    60.0
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StrategyDef {
    Full,
    Random {
        fraction: FractionDef,
    },
    Annealing {
        fraction: FractionDef,
        temperature: f64,
    },
    Pso {
        fraction: FractionDef,
        #[serde(default = "default_swarm")]
        swarm_size: usize,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        beta: f64,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
}

fn default_swarm() -> usize {
    PsoParams::default().swarm_size
}

fn default_alpha() -> f64 {
    PsoParams::default().alpha
}

fn default_gamma() -> f64 {
    PsoParams::default().gamma
}

/// A fraction written as `"num/den"` or as the integer `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FractionDef(pub Fraction);

impl<'de> Deserialize<'de> for FractionDef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Whole(u64),
            Text(String),
        }
        let fraction = match Raw::deserialize(deserializer)? {
            Raw::Whole(n) => Fraction::new(n, 1),
            Raw::Text(text) => parse_fraction(&text).map_err(de::Error::custom)?,
        };
        if !fraction.is_valid() {
            return Err(de::Error::custom(format!(
                "fraction {fraction} must lie in (0, 1]"
            )));
        }
        Ok(FractionDef(fraction))
    }
}

pub fn parse_fraction(text: &str) -> std::result::Result<Fraction, String> {
    let bad = || format!("`{text}` is not a fraction like \"1/32\"");
    match text.split_once('/') {
        Some((n, d)) => Ok(Fraction::new(
            n.trim().parse().map_err(|_| bad())?,
            d.trim().parse().map_err(|_| bad())?,
        )),
        None => Ok(Fraction::new(text.trim().parse().map_err(|_| bad())?, 1)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesDef {
    pub rel: f64,
    pub abs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsDef {
    #[serde(default)]
    pub results: Option<PathBuf>,
    #[serde(default)]
    pub stats: Option<PathBuf>,
}

/// How to construct a backend for one search.
#[derive(Clone)]
pub enum BackendConfig {
    Synthetic {
        model: SyntheticModel,
        oracle: Option<Arc<dyn Reference>>,
    },
    Replay(Arc<ReplayTable>),
    External(ExternalBackend),
}

impl fmt::Debug for BackendConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendConfig::Synthetic { model, oracle } => f
                .debug_struct("Synthetic")
                .field("model", model)
                .field("oracle", &oracle.is_some())
                .finish(),
            BackendConfig::Replay(t) => f.debug_tuple("Replay").field(&t.len()).finish(),
            BackendConfig::External(e) => f.debug_tuple("External").field(e).finish(),
        }
    }
}

impl BackendConfig {
    pub fn build(&self) -> Box<dyn Backend + Send> {
        match self {
            BackendConfig::Synthetic { model, oracle } => {
                let mut b = SyntheticBackend::new(*model);
                if let Some(o) = oracle {
                    b = b.with_oracle(o.clone());
                }
                Box::new(b)
            }
            BackendConfig::Replay(table) => Box::new(ReplayBackend::new((**table).clone())),
            BackendConfig::External(e) => Box::new(e.clone()),
        }
    }

    /// Whether evaluations are pure and cheap enough to sweep a whole space.
    pub fn is_pure(&self) -> bool {
        !matches!(self, BackendConfig::External(_))
    }

    pub fn concurrency_safe(&self) -> bool {
        match self {
            BackendConfig::External(e) => e.workers > 1,
            _ => true,
        }
    }
}

/// A validated, ready-to-run job.
#[derive(Debug, Clone)]
pub struct Job {
    pub path: PathBuf,
    pub tuning: TuningJob,
    pub strategy: Strategy,
    pub seed: u64,
    pub backend: BackendConfig,
    pub outputs: OutputsDef,
}

impl Job {
    pub fn load(path: &Path) -> Result<Job> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Job::parse(&text, path, base)
    }

    /// Parses `text`; relative paths inside the job resolve against `base`.
    pub fn parse(text: &str, path: &Path, base: &Path) -> Result<Job> {
        let invalid = |message: String| Error::Job {
            path: path.to_path_buf(),
            message,
        };
        let file: JobFile = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        file.resolve(base)
            .map_err(|e| match e {
                Error::Usage(message) => invalid(message),
                other => other,
            })
            .map(|(tuning, strategy, backend, outputs)| Job {
                path: path.to_path_buf(),
                tuning,
                strategy,
                seed: file.seed,
                backend,
                outputs,
            })
    }
}

fn usage(message: impl Into<String>) -> Error {
    Error::Usage(message.into())
}

impl JobFile {
    fn resolve(&self, base: &Path) -> Result<(TuningJob, Strategy, BackendConfig, OutputsDef)> {
        let device = self.device.resolve()?;
        let (kernel, mut space, oracle) = self.kernel.resolve(&device, &self.parameters)?;
        for c in &self.constraints {
            space
                .add_constraint(c)
                .map_err(|e| usage(format!("constraint `{c}`: {e}")))?;
        }
        kernel.validate().map_err(|e| usage(e.to_string()))?;

        let mut tuning = TuningJob::new(kernel, space, device);
        if self.verify {
            let reference = oracle
                .clone()
                .ok_or_else(|| usage("`verify` needs a conv or gemm template, which carry a reference"))?;
            tuning = tuning.with_reference(reference);
        }
        if let Some(t) = self.tolerances {
            tuning.tolerances = Tolerances {
                rel: t.rel,
                abs: t.abs,
            };
        }
        if self.repetitions == Some(0) {
            return Err(usage("`repetitions` must be at least 1"));
        }
        tuning.repetitions = self.repetitions;

        let strategy = self.strategy.resolve();
        strategy.validate().map_err(|e| usage(e.to_string()))?;
        let backend = self
            .backend
            .resolve(base, if self.verify { oracle } else { None })?;
        let outputs = OutputsDef {
            results: self.outputs.results.as_ref().map(|p| base.join(p)),
            stats: self.outputs.stats.as_ref().map(|p| base.join(p)),
        };
        Ok((tuning, strategy, backend, outputs))
    }
}

impl DeviceDef {
    fn resolve(&self) -> Result<DeviceModel> {
        match self {
            DeviceDef::Preset(name) => DeviceModel::preset(name).ok_or_else(|| {
                usage(format!(
                    "unknown device preset `{name}` (expected one of {})",
                    ktune_core::device::PRESETS.join(", ")
                ))
            }),
            DeviceDef::Explicit(d) => {
                if d.max_local_total == 0 || d.max_local_per_dim.contains(&0) {
                    return Err(usage("device limits must be at least 1"));
                }
                Ok(DeviceModel {
                    name: d.name.clone(),
                    max_local_total: d.max_local_total,
                    max_local_per_dim: d.max_local_per_dim,
                    local_mem_bytes: d.local_mem_bytes,
                    peak_gflops: d.peak_gflops,
                    peak_gbs: d.peak_gbs,
                })
            }
        }
    }
}

type ResolvedKernel = (KernelSpec, SearchSpace, Option<Arc<dyn Reference>>);

impl KernelDef {
    fn resolve(&self, device: &DeviceModel, parameters: &[ParameterDef]) -> Result<ResolvedKernel> {
        let template_params = || {
            if parameters.is_empty() {
                Ok(())
            } else {
                Err(usage(
                    "templates define their own parameters; use `constraints` to narrow them",
                ))
            }
        };
        match self {
            KernelDef::Conv {
                filter,
                width,
                height,
            } => {
                template_params()?;
                let shape =
                    ConvShape::new(*width, *height, *filter, *filter).map_err(|e| usage(e.to_string()))?;
                Ok((
                    landscapes::conv_kernel(&shape),
                    landscapes::conv_user_space(&shape, device),
                    Some(landscapes::conv_oracle(&shape)),
                ))
            }
            KernelDef::Gemm { m, n, k } => {
                template_params()?;
                let shape = GemmShape::new(*m, *n, *k).map_err(|e| usage(e.to_string()))?;
                Ok((
                    landscapes::gemm_kernel(&shape),
                    landscapes::gemm_user_space(),
                    Some(landscapes::gemm_oracle(&shape)),
                ))
            }
            KernelDef::Custom {
                name,
                source,
                global,
                local,
                modifiers,
                arguments,
                local_memory,
            } => {
                if parameters.is_empty() {
                    return Err(usage("a custom kernel needs at least one parameter"));
                }
                let mut space = SearchSpace::new();
                for p in parameters {
                    let added = match &p.labels {
                        Some(labels) => {
                            let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
                            space.add_labeled_parameter(&p.name, &p.values, &labels)
                        }
                        None => space.add_parameter(&p.name, &p.values),
                    };
                    added.map_err(|e| usage(e.to_string()))?;
                }
                let mut kernel = KernelSpec::new(name, source, global, local);
                for m in modifiers {
                    kernel.modifiers.push(ThreadSizeModifier {
                        target: match m.target {
                            TargetDef::Global => SizeTarget::Global,
                            TargetDef::Local => SizeTarget::Local,
                        },
                        op: match m.op {
                            OpDef::Multiply => SizeOp::Multiply,
                            OpDef::Divide => SizeOp::Divide,
                        },
                        factors: m.factors.iter().map(|f| SizeFactor::from(f.as_str())).collect(),
                    });
                }
                for (i, a) in arguments.iter().enumerate() {
                    kernel.add_argument(a.resolve().map_err(|e| usage(format!("argument {i}: {e}")))?);
                }
                if let Some(expr) = local_memory {
                    space
                        .parse_constraint(expr)
                        .map_err(|e| usage(format!("local_memory `{expr}`: {e}")))?;
                    kernel.set_local_memory(expr);
                }
                Ok((kernel, space, None))
            }
        }
    }
}

impl ArgumentDef {
    fn resolve(&self) -> std::result::Result<ArgumentSpec, String> {
        let elem = match self.elem {
            ElemDef::F32 => ElemType::F32,
            ElemDef::I32 => ElemType::I32,
        };
        let fill = self.fill.as_deref().map(str::parse::<Fill>).transpose()?;
        match self.role {
            RoleDef::Scalar => {
                let value = self.value.ok_or("scalar arguments need a `value`")?;
                if self.length.is_some() || self.fill.is_some() {
                    return Err("scalar arguments take only `value`".into());
                }
                Ok(ArgumentSpec::scalar(elem, value))
            }
            role => {
                let length = self.length.ok_or("buffer arguments need a `length`")?;
                if self.value.is_some() {
                    return Err("buffer arguments take `length` and `fill`, not `value`".into());
                }
                Ok(ArgumentSpec {
                    role: if role == RoleDef::Input {
                        ArgRole::Input
                    } else {
                        ArgRole::Output
                    },
                    elem,
                    length,
                    fill: fill.unwrap_or(Fill::Constant(0.0)),
                })
            }
        }
    }
}

impl BackendDef {
    fn resolve(&self, base: &Path, oracle: Option<Arc<dyn Reference>>) -> Result<BackendConfig> {
        match self {
            BackendDef::Synthetic {
                model,
                noise_seed,
                base_time_ms,
            } => {
                let kind: ModelKind = model.parse().map_err(usage)?;
                if !(base_time_ms.is_finite() && *base_time_ms > 0.0) {
                    return Err(usage("`base_time_ms` must be positive"));
                }
                Ok(BackendConfig::Synthetic {
                    model: SyntheticModel::new(kind, *noise_seed, *base_time_ms),
                    oracle,
                })
            }
            BackendDef::Replay { path } => {
                let table = ReplayTable::load(&base.join(path))?;
                Ok(BackendConfig::Replay(Arc::new(table)))
            }
            BackendDef::External {
                command,
                timeout_s,
                workers,
            } => {
                if command.is_empty() {
                    return Err(usage("`command` must name a program"));
                }
                if !(timeout_s.is_finite() && *timeout_s > 0.0) {
                    return Err(usage("`timeout_s` must be positive"));
                }
                let mut backend =
                    ExternalBackend::new(command.clone()).with_timeout(Duration::from_secs_f64(*timeout_s));
                backend.repetitions = DEFAULT_REPETITIONS;
                backend.workers = (*workers).max(1);
                Ok(BackendConfig::External(backend))
            }
        }
    }
}

impl StrategyDef {
    pub fn resolve(&self) -> Strategy {
        match *self {
            StrategyDef::Full => Strategy::Full,
            StrategyDef::Random { fraction } => Strategy::Random { fraction: fraction.0 },
            StrategyDef::Annealing {
                fraction,
                temperature,
            } => Strategy::Annealing {
                fraction: fraction.0,
                temperature,
            },
            StrategyDef::Pso {
                fraction,
                swarm_size,
                alpha,
                beta,
                gamma,
            } => Strategy::Pso {
                fraction: fraction.0,
                params: PsoParams {
                    swarm_size,
                    alpha,
                    beta,
                    gamma,
                },
            },
        }
    }
}
