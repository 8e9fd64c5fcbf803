use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use ktune::external::{
    evaluate_external, format_digest, interpret_response, ExternalBackend, WireRequest, WireResponse,
    WireStatus,
};
use ktune_core::backend::ElemType;
use ktune_core::tuner::{ArgumentSpec, Fill};
use ktune_core::{Backend, BackendError, Buffer, EvaluationRequest, KernelSpec, Status};
use serde_json::json;

fn copy_kernel() -> KernelSpec {
    let mut kernel = KernelSpec::new("copy", "kernels/copy.cl", &[2048], &[64]);
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
        .add_argument(ArgumentSpec::output(ElemType::F32, 2048))
        .add_argument(ArgumentSpec::scalar(ElemType::F32, 0.5));
    kernel
}

fn request(kernel: &KernelSpec) -> EvaluationRequest<'_> {
    EvaluationRequest {
        kernel,
        config: vec![("WPT", 2)],
        canonical: "WPT=2".into(),
        global: vec![1024],
        local: vec![64],
        device: "K40m",
        repetitions: 3,
        arguments: &[],
        want_outputs: false,
    }
}

fn script(dir: &Path, name: &str, body: &str) -> Vec<String> {
    let path = dir.join(name);
    fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    vec!["sh".into(), path.to_string_lossy().into_owned()]
}

const TIMEOUT: Duration = Duration::from_secs(20);

#[test]
fn request_json_is_schema_exact() {
    let kernel = copy_kernel();
    let wire = WireRequest::from_request(&request(&kernel));
    let value = serde_json::to_value(&wire).unwrap();
    assert_eq!(
        value,
        json!({
            "kernel": "copy",
            "source_ref": "kernels/copy.cl",
            "config": {"WPT": 2},
            "global": [1024],
            "local": [64],
            "args": [
                {"role": "input", "type": "f32", "length": 2048, "fill": "ramp:0:1"},
                {"role": "output", "type": "f32", "length": 2048, "fill": "constant:0"},
                {"role": "scalar", "type": "f32", "value": 0.5, "fill": "constant:0.5"}
            ],
            "repetitions": 3,
            "want_outputs": false
        })
    );
    let back: WireRequest = serde_json::from_value(value).unwrap();
    assert_eq!(back, wire);
}

#[test]
fn response_round_trips_and_rejects_unknown_fields() {
    let resp = WireResponse {
        status: WireStatus::Ok,
        time_ms: Some(1.25),
        outputs_digest: Some(vec![format_digest(0xcbf29ce484222325)]),
        outputs: Some(vec![vec![1.0, 2.0]]),
        message: Some("fine".into()),
    };
    let text = serde_json::to_string(&resp).unwrap();
    assert_eq!(
        text,
        r#"{"status":"ok","time_ms":1.25,"outputs_digest":["cbf29ce484222325"],"outputs":[[1.0,2.0]],"message":"fine"}"#
    );
    assert_eq!(serde_json::from_str::<WireResponse>(&text).unwrap(), resp);
    assert!(serde_json::from_str::<WireResponse>(r#"{"status":"ok","time_ms":1,"extra":1}"#).is_err());
    assert!(serde_json::from_str::<WireResponse>(r#"{"status":"done"}"#).is_err());

    let result = interpret_response(resp, &[ElemType::F32], "").unwrap();
    assert_eq!(result.time_ms, Some(1.25));
    assert_eq!(result.outputs_digest, Some(vec![0xcbf29ce484222325]));
    assert_eq!(result.outputs, Some(vec![Buffer::F32(vec![1.0, 2.0])]));
}

#[test]
fn runner_receives_the_request_on_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let seen = dir.path().join("seen.json");
    let cmd = script(
        dir.path(),
        "echo.sh",
        &format!(
            "cat > '{}'\necho '{{\"status\":\"ok\",\"time_ms\":2.5}}'",
            seen.display()
        ),
    );
    let kernel = copy_kernel();
    let req = request(&kernel);
    let result = evaluate_external(&req, &cmd, TIMEOUT).unwrap();
    assert_eq!(result.status, Status::Success);
    assert_eq!(result.time_ms, Some(2.5));
    let received: WireRequest = serde_json::from_slice(&fs::read(&seen).unwrap()).unwrap();
    assert_eq!(received, WireRequest::from_request(&req));
}

#[test]
fn compile_and_runtime_errors_are_failed_evaluations() {
    let dir = tempfile::tempdir().unwrap();
    let kernel = copy_kernel();
    let req = request(&kernel);
    for (status, expected) in [
        ("compile_error", Status::CompileError),
        ("runtime_error", Status::RuntimeError),
    ] {
        let cmd = script(
            dir.path(),
            &format!("{status}.sh"),
            &format!("cat > /dev/null\necho '{{\"status\":\"{status}\",\"message\":\"boom\"}}'"),
        );
        let result = evaluate_external(&req, &cmd, TIMEOUT).unwrap();
        assert_eq!(result.status, expected);
        assert_eq!(result.time_ms, None);
        assert_eq!(result.diagnostic, "boom");
    }
}

#[test]
fn slow_runner_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = script(dir.path(), "slow.sh", "exec sleep 30");
    let kernel = copy_kernel();
    let started = Instant::now();
    let result = evaluate_external(&request(&kernel), &cmd, Duration::from_millis(300)).unwrap();
    assert!(started.elapsed() < Duration::from_secs(10));
    assert_eq!(result.status, Status::RuntimeError);
    assert_eq!(result.diagnostic, "timeout");
}

#[test]
fn garbage_output_is_a_protocol_violation_with_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let kernel = copy_kernel();
    let req = request(&kernel);
    let cmd = script(
        dir.path(),
        "crash.sh",
        "cat > /dev/null\necho 'segfault' >&2\nexit 3",
    );
    match evaluate_external(&req, &cmd, TIMEOUT) {
        Err(BackendError::ProtocolViolation { message, stderr }) => {
            assert!(message.contains("exited"), "{message}");
            assert!(stderr.contains("segfault"));
        }
        other => panic!("{other:?}"),
    }
    let cmd = script(
        dir.path(),
        "ok_no_time.sh",
        "cat > /dev/null\necho '{\"status\":\"ok\"}'",
    );
    assert!(matches!(
        evaluate_external(&req, &cmd, TIMEOUT),
        Err(BackendError::ProtocolViolation { .. })
    ));
    let missing = vec!["/nonexistent/runner".to_string()];
    assert!(matches!(
        evaluate_external(&req, &missing, TIMEOUT),
        Err(BackendError::SpawnFailure(_))
    ));
}

#[test]
fn backend_substitutes_placeholders() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("args.sh");
    fs::write(
        &path,
        "#!/bin/sh\ncat > /dev/null\n[ \"$1\" = copy ] && [ \"$2\" = kernels/copy.cl ] && echo '{\"status\":\"ok\",\"time_ms\":1}'\n",
    )
    .unwrap();
    let mut backend = ExternalBackend::new(vec![
        "sh".into(),
        path.to_string_lossy().into_owned(),
        "{kernel}".into(),
        "{source_ref}".into(),
    ]);
    let kernel = copy_kernel();
    let result = backend.evaluate(&request(&kernel)).unwrap();
    assert_eq!(result.time_ms, Some(1.0));
    assert!(!backend.concurrency_safe());
    assert_eq!(backend.default_repetitions(), 3);
}
