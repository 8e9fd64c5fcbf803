//! External-command backend: one subprocess per evaluation, speaking a
//! single JSON document each way over stdin and stdout.
//!
//! Request:
//!
//! ```json
//! {"kernel": "copy", "source_ref": "copy.cl", "config": {"WPT": 2},
//!  "global": [1024], "local": [64],
//!  "args": [{"role": "input", "type": "f32", "length": 2048, "fill": "ramp:0:1"},
//!           {"role": "scalar", "type": "f32", "value": 0.5, "fill": "constant:0.5"}],
//!  "repetitions": 3, "want_outputs": false}
//! ```
//!
//! Response:
//!
//! ```json
//! {"status": "ok", "time_ms": 1.5, "outputs_digest": ["cbf29ce484222325"],
//!  "outputs": [[0.0, 1.0]], "message": "..."}
//! ```
//!
//! `status` is `ok`, `compile_error` or `runtime_error`; `time_ms` is
//! required with `ok` and is the minimum over the requested repetitions.
//! `outputs_digest` holds one 16-digit hex FNV-1a 64 digest per output
//! argument over its little-endian bytes; `outputs` carries full buffers
//! when requested. Evaluations that outlive the timeout are killed and
//! reported as `runtime_error` with diagnostic `timeout`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use ktune_core::backend::{ElemType, Status};
use ktune_core::tuner::ArgRole;
use ktune_core::{Backend, BackendError, Buffer, EvaluationRequest, EvaluationResult};
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_REPETITIONS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRequest {
    pub kernel: String,
    pub source_ref: String,
    pub config: BTreeMap<String, u64>,
    pub global: Vec<u64>,
    pub local: Vec<u64>,
    pub args: Vec<WireArg>,
    pub repetitions: u32,
    pub want_outputs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireArg {
    pub role: String,
    #[serde(rename = "type")]
    pub elem: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub fill: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireStatus {
    Ok,
    CompileError,
    RuntimeError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireResponse {
    pub status: WireStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs_digest: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl WireRequest {
    pub fn from_request(request: &EvaluationRequest<'_>) -> Self {
        let kernel = request.kernel;
        WireRequest {
            kernel: kernel.name.clone(),
            source_ref: kernel.source_ref.clone(),
            config: request.config.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
            global: request.global.clone(),
            local: request.local.clone(),
            args: kernel
                .arguments
                .iter()
                .map(|a| WireArg {
                    role: a.role.as_str().into(),
                    elem: a.elem.as_str().into(),
                    length: (a.role != ArgRole::Scalar).then_some(a.length),
                    value: a.value(),
                    fill: a.fill.to_string(),
                })
                .collect(),
            repetitions: request.repetitions,
            want_outputs: request.want_outputs,
        }
    }
}

pub fn format_digest(digest: u64) -> String {
    format!("{digest:016x}")
}

fn violation(message: impl Into<String>, stderr: &str) -> BackendError {
    BackendError::ProtocolViolation {
        message: message.into(),
        stderr: stderr.into(),
    }
}

/// Converts a runner response into an evaluation result, typing output
/// buffers after the kernel's output arguments.
pub fn interpret_response(
    response: WireResponse,
    output_types: &[ElemType],
    stderr: &str,
) -> Result<EvaluationResult, BackendError> {
    let message = response.message.unwrap_or_default();
    let mut result = match response.status {
        WireStatus::CompileError => return Ok(EvaluationResult::failed(Status::CompileError, message)),
        WireStatus::RuntimeError => return Ok(EvaluationResult::failed(Status::RuntimeError, message)),
        WireStatus::Ok => match response.time_ms {
            Some(t) if t.is_finite() && t > 0.0 => EvaluationResult::success(t),
            Some(t) => {
                return Err(violation(
                    format!("time_ms {t} must be positive and finite"),
                    stderr,
                ))
            }
            None => return Err(violation("status ok without time_ms", stderr)),
        },
    };
    result.diagnostic = message;
    if let Some(digests) = response.outputs_digest {
        let parsed: Result<Vec<u64>, _> = digests.iter().map(|d| u64::from_str_radix(d, 16)).collect();
        result.outputs_digest =
            Some(parsed.map_err(|_| violation(format!("bad outputs_digest {digests:?}"), stderr))?);
    }
    if let Some(outputs) = response.outputs {
        if outputs.len() != output_types.len() {
            return Err(violation(
                format!(
                    "{} output buffers for {} output arguments",
                    outputs.len(),
                    output_types.len()
                ),
                stderr,
            ));
        }
        result.outputs = Some(
            outputs
                .into_iter()
                .zip(output_types)
                .map(|(values, ty)| match ty {
                    ElemType::F32 => Buffer::F32(values.into_iter().map(|v| v as f32).collect()),
                    ElemType::I32 => Buffer::I32(values.into_iter().map(|v| v as i32).collect()),
                })
                .collect(),
        );
    }
    Ok(result)
}

/// Runs an external command per evaluation. The command's arguments may
/// contain `{kernel}` and `{source_ref}`, substituted per request.
#[derive(Debug, Clone)]
pub struct ExternalBackend {
    pub command: Vec<String>,
    pub timeout: Duration,
    pub repetitions: u32,
    /// More than one declares the runner safe for concurrent searches.
    pub workers: usize,
}

impl ExternalBackend {
    pub fn new(command: Vec<String>) -> Self {
        ExternalBackend {
            command,
            timeout: DEFAULT_TIMEOUT,
            repetitions: DEFAULT_REPETITIONS,
            workers: 1,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn argv(&self, request: &EvaluationRequest<'_>) -> Vec<String> {
        self.command
            .iter()
            .map(|a| {
                a.replace("{kernel}", &request.kernel.name)
                    .replace("{source_ref}", &request.kernel.source_ref)
            })
            .collect()
    }
}

fn drain(mut pipe: impl Read + Send + 'static) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = pipe.read_to_end(&mut buf);
        buf
    })
}

/// Evaluates `request` by spawning `command` (after placeholder
/// substitution) with the JSON request on stdin.
pub fn evaluate_external(
    request: &EvaluationRequest<'_>,
    command: &[String],
    timeout: Duration,
) -> Result<EvaluationResult, BackendError> {
    let Some((program, args)) = command.split_first() else {
        return Err(BackendError::SpawnFailure("empty command".into()));
    };
    let payload = serde_json::to_vec(&WireRequest::from_request(request))
        .map_err(|e| BackendError::SpawnFailure(format!("cannot encode request: {e}")))?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| BackendError::SpawnFailure(format!("{program}: {e}")))?;
    let mut stdin = child.stdin.take().expect("stdin is piped");
    let writer = thread::spawn(move || {
        // A runner may exit without reading its input.
        let _ = stdin.write_all(&payload);
    });
    let stdout = drain(child.stdout.take().expect("stdout is piped"));
    let stderr = drain(child.stderr.take().expect("stderr is piped"));

    let status = match child.wait_timeout(timeout) {
        Ok(Some(status)) => status,
        Ok(None) => {
            let _ = child.kill();
            let _ = child.wait();
            log::warn!("{} timed out after {:?}", request.canonical, timeout);
            // Grandchildren may still hold the pipes open; the reader
            // threads are left to finish on their own.
            return Ok(EvaluationResult::failed(Status::RuntimeError, "timeout"));
        }
        Err(e) => return Err(BackendError::SpawnFailure(format!("waiting for {program}: {e}"))),
    };
    let _ = writer.join();
    let stdout = stdout.join().unwrap_or_default();
    let stderr = String::from_utf8_lossy(&stderr.join().unwrap_or_default()).into_owned();

    let response: WireResponse = match serde_json::from_slice(&stdout) {
        Ok(r) => r,
        Err(e) => {
            let message = if status.success() {
                format!("unreadable response: {e}")
            } else {
                format!("runner exited with {status} without a valid response: {e}")
            };
            return Err(violation(message, &stderr));
        }
    };
    let output_types: Vec<ElemType> = request
        .kernel
        .output_indices()
        .map(|i| request.kernel.arguments[i].elem)
        .collect();
    interpret_response(response, &output_types, &stderr)
}

impl Backend for ExternalBackend {
    fn evaluate(&mut self, request: &EvaluationRequest<'_>) -> Result<EvaluationResult, BackendError> {
        let argv = self.argv(request);
        log::debug!("running {:?} for {}", argv, request.canonical);
        evaluate_external(request, &argv, self.timeout)
    }

    fn concurrency_safe(&self) -> bool {
        self.workers > 1
    }

    fn default_repetitions(&self) -> u32 {
        self.repetitions
    }
}
