//! Backend contract and the synthetic performance model.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::landscapes::{CONV_PARAMS, GEMM_PARAMS};
use crate::rng::{fnv1a64, fnv1a64_extend, mix64, unit_interval};
use crate::tuner::{KernelSpec, Reference};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("model `{model}` requires parameter `{missing}`")]
    UnknownParameterSet { model: &'static str, missing: String },
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("failed to spawn runner: {0}")]
    SpawnFailure(String),
    #[error("runner protocol violation: {message}")]
    ProtocolViolation { message: String, stderr: String },
    #[error("malformed replay file at line {line}: {reason}")]
    MalformedReplayFile { line: u64, reason: String },
    #[error("reference computation failed: {0}")]
    Reference(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemType {
    F32,
    I32,
}

impl ElemType {
    pub fn as_str(self) -> &'static str {
        match self {
            ElemType::F32 => "f32",
            ElemType::I32 => "i32",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Buffer {
    F32(Vec<f32>),
    I32(Vec<i32>),
}

impl Buffer {
    pub fn len(&self) -> usize {
        match self {
            Buffer::F32(v) => v.len(),
            Buffer::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn elem_type(&self) -> ElemType {
        match self {
            Buffer::F32(_) => ElemType::F32,
            Buffer::I32(_) => ElemType::I32,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match self {
            Buffer::F32(v) => Some(v),
            Buffer::I32(_) => None,
        }
    }

    /// FNV-1a 64 over the little-endian element bytes.
    pub fn digest(&self) -> u64 {
        let mut h = fnv1a64(&[]);
        match self {
            Buffer::F32(v) => v.iter().for_each(|x| h = fnv1a64_extend(h, &x.to_le_bytes())),
            Buffer::I32(v) => v.iter().for_each(|x| h = fnv1a64_extend(h, &x.to_le_bytes())),
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    CompileError,
    RuntimeError,
    Missing,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Success => "success",
            Status::CompileError => "compile_error",
            Status::RuntimeError => "runtime_error",
            Status::Missing => "missing",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationResult {
    pub status: Status,
    /// Milliseconds, present on success.
    pub time_ms: Option<f64>,
    /// Output buffers in argument order, when the backend returns them.
    pub outputs: Option<Vec<Buffer>>,
    /// Per-output FNV-1a digests, when only digests are returned.
    pub outputs_digest: Option<Vec<u64>>,
    pub diagnostic: String,
}

impl EvaluationResult {
    pub fn success(time_ms: f64) -> Self {
        EvaluationResult {
            status: Status::Success,
            time_ms: Some(time_ms),
            outputs: None,
            outputs_digest: None,
            diagnostic: String::new(),
        }
    }

    pub fn failed(status: Status, diagnostic: impl Into<String>) -> Self {
        EvaluationResult {
            status,
            time_ms: None,
            outputs: None,
            outputs_digest: None,
            diagnostic: diagnostic.into(),
        }
    }

    /// Success with a positive finite time.
    pub fn is_success(&self) -> bool {
        self.status == Status::Success && self.time_ms.is_some_and(|t| t.is_finite() && t > 0.0)
    }
}

/// Everything a backend needs to run one configuration.
#[derive(Debug, Clone)]
pub struct EvaluationRequest<'a> {
    pub kernel: &'a KernelSpec,
    /// `(name, value)` pairs in parameter order.
    pub config: Vec<(&'a str, u64)>,
    pub canonical: String,
    pub global: Vec<u64>,
    pub local: Vec<u64>,
    pub device: &'a str,
    pub repetitions: u32,
    /// Materialized arguments, aligned with `kernel.arguments`; empty unless
    /// outputs are wanted.
    pub arguments: &'a [Buffer],
    pub want_outputs: bool,
}

impl EvaluationRequest<'_> {
    pub fn value(&self, name: &str) -> Option<u64> {
        self.config.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

pub trait Backend {
    fn evaluate(&mut self, request: &EvaluationRequest<'_>) -> Result<EvaluationResult, BackendError>;

    /// Whether independent searches may evaluate on separate instances concurrently.
    fn concurrency_safe(&self) -> bool {
        false
    }

    fn default_repetitions(&self) -> u32 {
        1
    }
}

impl<B: Backend + ?Sized> Backend for &mut B {
    fn evaluate(&mut self, request: &EvaluationRequest<'_>) -> Result<EvaluationResult, BackendError> {
        (**self).evaluate(request)
    }

    fn concurrency_safe(&self) -> bool {
        (**self).concurrency_safe()
    }

    fn default_repetitions(&self) -> u32 {
        (**self).default_repetitions()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    ConvLike,
    GemmLike,
    HashRandom,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::ConvLike => "conv-like",
            ModelKind::GemmLike => "gemm-like",
            ModelKind::HashRandom => "hash-random",
        }
    }
}

impl core::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conv-like" => Ok(ModelKind::ConvLike),
            "gemm-like" => Ok(ModelKind::GemmLike),
            "hash-random" => Ok(ModelKind::HashRandom),
            other => Err(alloc::format!(
                "unknown model `{other}` (expected conv-like, gemm-like or hash-random)"
            )),
        }
    }
}

/// Deterministic stand-in for measured kernel times.
///
/// `time = base_time * product(penalties) * (1 + 0.02 * u)` where `u` in
/// `[0, 1)` comes from hashing the noise seed with the canonical
/// configuration encoding. Penalty tables (factor per value, 1.0 = best):
///
/// conv-like:
///
/// | term                   | values → factor                                   |
/// |------------------------|---------------------------------------------------|
/// | `Xwg*Ywg`              | ≤64 1.6, 128 1.25, 256 1.0, 512 1.1, ≥1024 1.35   |
/// | `Xwg`                  | 8 1.5, 16 1.2, 32 1.0, 64 1.05                    |
/// | `Xwpt`                 | 1 1.3, 2 1.0, 4 1.1, 8 1.4                        |
/// | `Ywpt`                 | 1 1.5, 2 1.2, 4 1.0, 8 1.05                       |
/// | `Lcache`               | 0 1.8, 1 1.3, 2 1.0                               |
/// | `VW`                   | 1 1.2, 2 1.0, 4 1.05, 8 1.15                      |
/// | `PAD`                  | 0 with `Lcache` ≥ 1: 1.1, otherwise 1.0           |
/// | `UNR`                  | 0 1.3, 1 1.0                                      |
/// | `Xwpt*Ywpt` ≥ 32 and `Lcache` = 0 | ×4 (register/cache cliff)              |
///
/// gemm-like (`Mwi = Mwg/MdimC`, `Nwi = Nwg/NdimC`):
///
/// | term                   | values → factor                                   |
/// |------------------------|---------------------------------------------------|
/// | `Mwi*Nwi`              | 1 3.0, 2 2.2, 4 1.6, 8 1.25, 16 1.05, 32 1.0, 64 1.15, 128 1.6, ≥256 2.2 |
/// | `MdimC*NdimC`          | ≤64 1.3, 128 1.1, 256 1.0, 512 1.1, ≥1024 1.3     |
/// | `LcacheA`, `LcacheB`   | 0 1.5, 1 1.0                                      |
/// | `Kwg`                  | 16 1.1, 32 1.0, 64 1.05, 128 1.2                  |
/// | `Mvec`, `Nvec`         | 1 1.25, 2 1.1, 4 1.0, 8 1.05                      |
/// | `Mstride`, `Nstride`   | 0 1.05, 1 1.0                                     |
/// | `MdimA`, `NdimB`       | 8 1.06, 16 1.0, 32 1.02                           |
/// | `Kwi`                  | 2 1.08, 8 1.0                                     |
/// | `Mwi*Nwi` ≥ 64 and `Mvec*Nvec` ≥ 16 | ×2.5 (register spill)                |
///
/// hash-random: a single factor `1 + 9 * v` with `v` an independent hash of
/// the configuration; accepts any parameter set.
///
/// Values outside a table fall back to the table's worst factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticModel {
    pub kind: ModelKind,
    pub noise_seed: u64,
    pub base_time_ms: f64,
}

const NOISE_AMPLITUDE: f64 = 0.02;
const HASH_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn lookup(table: &[(u64, f64)], value: u64) -> f64 {
    table
        .iter()
        .find(|(v, _)| *v == value)
        .map(|(_, f)| *f)
        .unwrap_or_else(|| table.iter().map(|(_, f)| *f).fold(1.0, f64::max))
}

/// Table keyed by thresholds: first entry whose bound is ≥ value.
fn bounded(table: &[(u64, f64)], value: u64) -> f64 {
    table
        .iter()
        .find(|(bound, _)| value <= *bound)
        .or(table.last())
        .map_or(1.0, |(_, f)| *f)
}

fn configuration_hash(seed: u64, canonical: &str) -> u64 {
    let h = fnv1a64_extend(fnv1a64(&seed.to_le_bytes()), canonical.as_bytes());
    mix64(h)
}

impl SyntheticModel {
    pub fn new(kind: ModelKind, noise_seed: u64, base_time_ms: f64) -> Self {
        SyntheticModel {
            kind,
            noise_seed,
            base_time_ms,
        }
    }

    fn required(&self) -> &'static [&'static str] {
        match self.kind {
            ModelKind::ConvLike => &CONV_PARAMS,
            ModelKind::GemmLike => &GEMM_PARAMS,
            ModelKind::HashRandom => &[],
        }
    }

    /// Model time in milliseconds for `(name, value)` pairs plus their
    /// canonical encoding.
    pub fn time(&self, config: &[(&str, u64)], canonical: &str) -> Result<f64, BackendError> {
        let mut values = BTreeMap::new();
        for (n, v) in config {
            values.insert(*n, *v);
        }
        for name in self.required() {
            if !values.contains_key(name) {
                return Err(BackendError::UnknownParameterSet {
                    model: self.kind.as_str(),
                    missing: name.to_string(),
                });
            }
        }
        let get = |n: &str| values[n];
        let penalty = match self.kind {
            ModelKind::ConvLike => conv_penalty(get),
            ModelKind::GemmLike => gemm_penalty(get),
            ModelKind::HashRandom => {
                1.0 + 9.0 * unit_interval(configuration_hash(self.noise_seed ^ HASH_SALT, canonical))
            }
        };
        let u = unit_interval(configuration_hash(self.noise_seed, canonical));
        Ok(self.base_time_ms * penalty * (1.0 + NOISE_AMPLITUDE * u))
    }
}

fn conv_penalty(get: impl Fn(&str) -> u64) -> f64 {
    let (xwg, ywg, xwpt, ywpt) = (get("Xwg"), get("Ywg"), get("Xwpt"), get("Ywpt"));
    let cache = get("Lcache");
    let mut p = bounded(
        &[(64, 1.6), (128, 1.25), (256, 1.0), (512, 1.1), (u64::MAX, 1.35)],
        xwg * ywg,
    );
    p *= lookup(&[(8, 1.5), (16, 1.2), (32, 1.0), (64, 1.05)], xwg);
    p *= lookup(&[(1, 1.3), (2, 1.0), (4, 1.1), (8, 1.4)], xwpt);
    p *= lookup(&[(1, 1.5), (2, 1.2), (4, 1.0), (8, 1.05)], ywpt);
    p *= lookup(&[(0, 1.8), (1, 1.3), (2, 1.0)], cache);
    p *= lookup(&[(1, 1.2), (2, 1.0), (4, 1.05), (8, 1.15)], get("VW"));
    if get("PAD") == 0 && cache >= 1 {
        p *= 1.1;
    }
    p *= lookup(&[(0, 1.3), (1, 1.0)], get("UNR"));
    if xwpt * ywpt >= 32 && cache == 0 {
        p *= 4.0;
    }
    p
}

fn gemm_penalty(get: impl Fn(&str) -> u64) -> f64 {
    let mwi = get("Mwg") / get("MdimC").max(1);
    let nwi = get("Nwg") / get("NdimC").max(1);
    let (mvec, nvec) = (get("Mvec"), get("Nvec"));
    let tile = mwi * nwi;
    let mut p = bounded(
        &[
            (1, 3.0),
            (2, 2.2),
            (4, 1.6),
            (8, 1.25),
            (16, 1.05),
            (32, 1.0),
            (64, 1.15),
            (128, 1.6),
            (u64::MAX, 2.2),
        ],
        tile,
    );
    p *= bounded(
        &[(64, 1.3), (128, 1.1), (256, 1.0), (512, 1.1), (u64::MAX, 1.3)],
        get("MdimC") * get("NdimC"),
    );
    p *= lookup(&[(0, 1.5), (1, 1.0)], get("LcacheA"));
    p *= lookup(&[(0, 1.5), (1, 1.0)], get("LcacheB"));
    p *= lookup(&[(16, 1.1), (32, 1.0), (64, 1.05), (128, 1.2)], get("Kwg"));
    let vec = [(1, 1.25), (2, 1.1), (4, 1.0), (8, 1.05)];
    p *= lookup(&vec, mvec) * lookup(&vec, nvec);
    let stride = [(0, 1.05), (1, 1.0)];
    p *= lookup(&stride, get("Mstride")) * lookup(&stride, get("Nstride"));
    let reshape = [(8, 1.06), (16, 1.0), (32, 1.02)];
    p *= lookup(&reshape, get("MdimA")) * lookup(&reshape, get("NdimB"));
    p *= lookup(&[(2, 1.08), (8, 1.0)], get("Kwi"));
    if tile >= 64 && mvec * nvec >= 16 {
        p *= 2.5;
    }
    p
}

/// Times a request with the synthetic model. Outputs are left empty; see
/// [`SyntheticBackend`] for reference-backed outputs.
pub fn evaluate_synthetic(
    request: &EvaluationRequest<'_>,
    model: &SyntheticModel,
) -> Result<EvaluationResult, BackendError> {
    let t = model.time(&request.config, &request.canonical)?;
    Ok(EvaluationResult::success(t))
}

/// Backend serving [`SyntheticModel`] times. When an oracle is attached and
/// the request wants outputs, they are produced by running the oracle on
/// the request's arguments (a correct kernel by construction).
#[derive(Clone)]
pub struct SyntheticBackend {
    pub model: SyntheticModel,
    oracle: Option<Arc<dyn Reference>>,
    cached: Option<(u64, Vec<Buffer>)>,
}

impl fmt::Debug for SyntheticBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SyntheticBackend")
            .field("model", &self.model)
            .field("oracle", &self.oracle.is_some())
            .finish()
    }
}

impl SyntheticBackend {
    pub fn new(model: SyntheticModel) -> Self {
        SyntheticBackend {
            model,
            oracle: None,
            cached: None,
        }
    }

    pub fn with_oracle(mut self, oracle: Arc<dyn Reference>) -> Self {
        self.oracle = Some(oracle);
        self
    }
}

impl Backend for SyntheticBackend {
    fn evaluate(&mut self, request: &EvaluationRequest<'_>) -> Result<EvaluationResult, BackendError> {
        let mut result = evaluate_synthetic(request, &self.model)?;
        if let (true, Some(oracle)) = (request.want_outputs, &self.oracle) {
            let key = request
                .arguments
                .iter()
                .fold(fnv1a64(&[]), |h, b| fnv1a64_extend(h, &b.digest().to_le_bytes()));
            let outputs = match &self.cached {
                Some((k, out)) if *k == key => out.clone(),
                _ => {
                    let out = oracle
                        .outputs(request.arguments)
                        .map_err(|e| BackendError::Reference(e.to_string()))?;
                    self.cached = Some((key, out.clone()));
                    out
                }
            };
            result.outputs = Some(outputs);
        }
        Ok(result)
    }

    fn concurrency_safe(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_fnv_of_le_bytes() {
        let b = Buffer::F32(alloc::vec![1.0, -2.5]);
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(b.digest(), fnv1a64(&bytes));
        assert_eq!(Buffer::I32(alloc::vec![]).digest(), fnv1a64(b""));
    }

    #[test]
    fn hash_random_is_pure_and_bounded() {
        let m = SyntheticModel::new(ModelKind::HashRandom, 7, 2.0);
        let cfg = [("A", 1u64), ("B", 4)];
        let a = m.time(&cfg, "A=1;B=4").unwrap();
        let b = m.time(&cfg, "A=1;B=4").unwrap();
        assert_eq!(a, b);
        assert!((2.0..2.0 * 10.0 * 1.02).contains(&a));
        let other = SyntheticModel::new(ModelKind::HashRandom, 8, 2.0);
        assert_ne!(a, other.time(&cfg, "A=1;B=4").unwrap());
    }

    #[test]
    fn conv_model_requires_its_parameters() {
        let m = SyntheticModel::new(ModelKind::ConvLike, 0, 1.0);
        let err = m.time(&[("WPT", 1)], "WPT=1").unwrap_err();
        assert!(matches!(
            err,
            BackendError::UnknownParameterSet {
                model: "conv-like",
                ..
            }
        ));
    }

    #[test]
    fn conv_register_cliff() {
        let base = |xwpt: u64, ywpt: u64, cache: u64| {
            conv_penalty(|n| match n {
                "Xwg" => 32,
                "Ywg" => 8,
                "Xwpt" => xwpt,
                "Ywpt" => ywpt,
                "Lcache" => cache,
                "VW" => 1,
                "PAD" => 0,
                _ => 1,
            })
        };
        let without = base(4, 8, 0) / base(4, 8, 1);
        let below = base(2, 8, 0) / base(2, 8, 1);
        assert!((without / below - 4.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_tables() {
        let t = [(64, 1.6), (128, 1.25), (u64::MAX, 2.0)];
        assert_eq!(bounded(&t, 8), 1.6);
        assert_eq!(bounded(&t, 100), 1.25);
        assert_eq!(bounded(&t, 4096), 2.0);
        assert_eq!(lookup(&[(1, 1.2), (2, 1.0)], 3), 1.2);
    }
}
