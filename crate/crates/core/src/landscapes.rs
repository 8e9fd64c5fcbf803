//! The 2D-convolution and GEMM case studies: parameter spaces with
//! reconstructed constraints, kernel thread-size rules, CPU reference
//! implementations, throughput metrics and the published best-found
//! configurations.
//!
//! The published constraint sets are not available, so the constraints here
//! are reconstructions. Raw sizes are exact (12,288 and 2,654,208); the
//! constrained counts differ from the published 3,424 and 241,600 and are
//! reported rather than matched.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;

use crate::backend::{Buffer, ElemType};
use crate::device::DeviceModel;
use crate::rng::seeded;
use crate::space::{Configuration, SearchSpace};
use crate::tuner::{device_constraints, ArgRole, ArgumentSpec, Fill, KernelSpec, Reference, TunerError};

pub const CONV_PARAMS: [&str; 8] = ["Xwg", "Ywg", "Xwpt", "Ywpt", "Lcache", "VW", "PAD", "UNR"];

pub const GEMM_PARAMS: [&str; 14] = [
    "Mwg", "Nwg", "Kwg", "MdimC", "NdimC", "LcacheA", "LcacheB", "MdimA", "NdimB", "Mstride", "Nstride",
    "Mvec", "Nvec", "Kwi",
];

/// Published constrained sizes, for reporting.
pub const PUBLISHED_CONV_SIZE: u64 = 3424;
pub const PUBLISHED_GEMM_SIZE: u64 = 241_600;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LandscapeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("time must be positive, got {0} ms")]
    NonPositiveTime(f64),
    #[error("no published configuration for device `{0}`")]
    UnknownDevice(String),
    #[error("no published configuration for a {0}x{0} filter")]
    UnsupportedFilter(u64),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

impl From<LandscapeError> for TunerError {
    fn from(e: LandscapeError) -> Self {
        match e {
            LandscapeError::ShapeMismatch(m) => TunerError::ShapeMismatch(m),
            other => TunerError::Reference(format!("{other}")),
        }
    }
}

/// Image and filter dimensions of a convolution problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub x: u64,
    pub y: u64,
    pub xf: u64,
    pub yf: u64,
}

impl Default for ConvShape {
    fn default() -> Self {
        ConvShape {
            x: 8192,
            y: 4096,
            xf: 7,
            yf: 7,
        }
    }
}

impl ConvShape {
    pub fn new(x: u64, y: u64, xf: u64, yf: u64) -> Result<Self, LandscapeError> {
        if xf.is_multiple_of(2) || yf.is_multiple_of(2) {
            return Err(LandscapeError::InvalidProblem(format!(
                "filter {xf}x{yf} must be odd"
            )));
        }
        if x == 0 || y == 0 {
            return Err(LandscapeError::InvalidProblem("empty image".into()));
        }
        Ok(ConvShape { x, y, xf, yf })
    }

    pub fn halo_x(&self) -> u64 {
        (self.xf - 1) / 2
    }

    pub fn halo_y(&self) -> u64 {
        (self.yf - 1) / 2
    }

    pub fn padded_width(&self) -> u64 {
        self.x + 2 * self.halo_x()
    }

    pub fn padded_height(&self) -> u64 {
        self.y + 2 * self.halo_y()
    }
}

/// A convolution instance: `B[x,y] = w * sum_{i,j} F[i,j] * A[x+i, y+j]`.
///
/// `input` is row-major with an explicit zero border of the half-filter
/// size on every side; `filter` is row-major `yf` rows of `xf`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvProblem {
    pub shape: ConvShape,
    pub w: f32,
    pub filter: Vec<f32>,
    pub input: Vec<f32>,
}

impl ConvProblem {
    /// Uniform `[0, 1)` image interior and filter, zero border, `w = 1`.
    pub fn seeded(shape: ConvShape, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let (pw, ph) = (shape.padded_width() as usize, shape.padded_height() as usize);
        let (hx, hy) = (shape.halo_x() as usize, shape.halo_y() as usize);
        let mut input = alloc::vec![0.0f32; pw * ph];
        for row in hy..hy + shape.y as usize {
            for col in hx..hx + shape.x as usize {
                input[row * pw + col] = rng.gen();
            }
        }
        let filter = (0..shape.xf * shape.yf).map(|_| rng.gen()).collect();
        ConvProblem {
            shape,
            w: 1.0,
            filter,
            input,
        }
    }
}

/// CPU reference for [`ConvProblem`]; returns the `x * y` output row-major.
pub fn conv_reference(problem: &ConvProblem) -> Result<Vec<f32>, LandscapeError> {
    conv_apply(&problem.shape, problem.w, &problem.input, &problem.filter)
}

fn conv_apply(shape: &ConvShape, w: f32, input: &[f32], filter: &[f32]) -> Result<Vec<f32>, LandscapeError> {
    let (x, y) = (shape.x as usize, shape.y as usize);
    let (xf, yf) = (shape.xf as usize, shape.yf as usize);
    let pw = shape.padded_width() as usize;
    let ph = shape.padded_height() as usize;
    if input.len() != pw * ph {
        return Err(LandscapeError::ShapeMismatch(format!(
            "input has {} elements, expected {pw}x{ph}",
            input.len()
        )));
    }
    if filter.len() != xf * yf {
        return Err(LandscapeError::ShapeMismatch(format!(
            "filter has {} elements, expected {xf}x{yf}",
            filter.len()
        )));
    }
    let mut out = alloc::vec![0.0f32; x * y];
    for row in 0..y {
        for col in 0..x {
            let mut acc = 0.0f32;
            // Padded coordinates: output (col,row) centres at (col+hx, row+hy).
            for fj in 0..yf {
                let line = &input[(row + fj) * pw + col..(row + fj) * pw + col + xf];
                let taps = &filter[fj * xf..(fj + 1) * xf];
                for (a, f) in line.iter().zip(taps) {
                    acc += f * a;
                }
            }
            out[row * x + col] = w * acc;
        }
    }
    Ok(out)
}

/// `(GFLOPS, GB/s)` for a convolution timed at `time_ms`: `(1 + 2 Xf Yf) X Y`
/// operations and `2 X Y` four-byte elements moved.
pub fn conv_metrics(shape: &ConvShape, time_ms: f64) -> Result<(f64, f64), LandscapeError> {
    if !(time_ms > 0.0) {
        return Err(LandscapeError::NonPositiveTime(time_ms));
    }
    let seconds = time_ms / 1e3;
    let pixels = (shape.x * shape.y) as f64;
    let flops = (1.0 + 2.0 * (shape.xf * shape.yf) as f64) * pixels;
    let bytes = 2.0 * pixels * 4.0;
    Ok((flops / seconds / 1e9, bytes / seconds / 1e9))
}

/// GEMM dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GemmShape {
    pub m: u64,
    pub n: u64,
    pub k: u64,
}

impl Default for GemmShape {
    fn default() -> Self {
        GemmShape {
            m: 2048,
            n: 2048,
            k: 2048,
        }
    }
}

impl GemmShape {
    pub fn new(m: u64, n: u64, k: u64) -> Result<Self, LandscapeError> {
        if [m, n, k].iter().any(|d| !d.is_power_of_two()) {
            return Err(LandscapeError::InvalidProblem(format!(
                "dimensions {m}x{n}x{k} must be powers of two"
            )));
        }
        Ok(GemmShape { m, n, k })
    }
}

/// `C = alpha * A^T * B + beta * C` with `A` stored `K x M`, `B` stored
/// `K x N` and `C` stored `M x N`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GemmProblem {
    pub shape: GemmShape,
    pub alpha: f32,
    pub beta: f32,
    pub a: Vec<f32>,
    pub b: Vec<f32>,
    pub c: Vec<f32>,
}

impl GemmProblem {
    pub fn seeded(shape: GemmShape, alpha: f32, beta: f32, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let mut fill = |n: u64| (0..n).map(|_| rng.gen::<f32>()).collect::<Vec<f32>>();
        GemmProblem {
            shape,
            alpha,
            beta,
            a: fill(shape.k * shape.m),
            b: fill(shape.k * shape.n),
            c: fill(shape.m * shape.n),
        }
    }
}

/// CPU reference for [`GemmProblem`]; returns the updated `C`.
pub fn gemm_reference(problem: &GemmProblem) -> Result<Vec<f32>, LandscapeError> {
    gemm_apply(
        &problem.shape,
        problem.alpha,
        problem.beta,
        &problem.a,
        &problem.b,
        &problem.c,
    )
}

fn gemm_apply(
    shape: &GemmShape,
    alpha: f32,
    beta: f32,
    a: &[f32],
    b: &[f32],
    c: &[f32],
) -> Result<Vec<f32>, LandscapeError> {
    let (m, n, k) = (shape.m as usize, shape.n as usize, shape.k as usize);
    for (name, len, want) in [
        ("A", a.len(), k * m),
        ("B", b.len(), k * n),
        ("C", c.len(), m * n),
    ] {
        if len != want {
            return Err(LandscapeError::ShapeMismatch(format!(
                "{name} has {len} elements, expected {want}"
            )));
        }
    }
    let mut acc = alloc::vec![0.0f32; m * n];
    for kk in 0..k {
        let a_row = &a[kk * m..(kk + 1) * m];
        let b_row = &b[kk * n..(kk + 1) * n];
        for (mm, &av) in a_row.iter().enumerate() {
            let out = &mut acc[mm * n..(mm + 1) * n];
            for (o, &bv) in out.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Ok(acc
        .iter()
        .zip(c)
        .map(|(ab, c_old)| alpha * ab + beta * c_old)
        .collect())
}

/// `2 M N K` operations over `time_ms`, in GFLOPS.
pub fn gemm_gflops(m: u64, n: u64, k: u64, time_ms: f64) -> Result<f64, LandscapeError> {
    if !(time_ms > 0.0) {
        return Err(LandscapeError::NonPositiveTime(time_ms));
    }
    Ok(2.0 * (m as f64) * (n as f64) * (k as f64) / (time_ms / 1e3) / 1e9)
}

/// Convolution kernel: global `(X/Xwpt, Y/Ywpt)`, local `(Xwg, Ywg)`.
/// Arguments: padded input image, filter, output image.
pub fn conv_kernel(shape: &ConvShape) -> KernelSpec {
    let mut k = KernelSpec::new("conv", "conv.cl", &[shape.x, shape.y], &[1, 1]);
    k.div_global_size(&["Xwpt", "Ywpt"])
        .mul_local_size(&["Xwg", "Ywg"]);
    k.set_local_memory(&format!(
        "(Lcache >= 1) * 4 * (Xwg * Xwpt + {} + PAD) * (Ywg * Ywpt + {})",
        2 * shape.halo_x(),
        2 * shape.halo_y()
    ));
    let padded = (shape.padded_width() * shape.padded_height()) as usize;
    k.add_argument(ArgumentSpec::input(
        ElemType::F32,
        padded,
        Fill::Uniform { seed: 1 },
    ))
    .add_argument(ArgumentSpec::input(
        ElemType::F32,
        (shape.xf * shape.yf) as usize,
        Fill::Uniform { seed: 2 },
    ))
    .add_argument(ArgumentSpec::output(ElemType::F32, (shape.x * shape.y) as usize));
    k
}

/// Convolution parameters with the reconstructed user constraints:
///
/// - `VW <= Xwpt` and `Xwpt % VW == 0`: stores are vectorized along x
/// - `PAD` only with local memory (`Lcache >= 1`)
/// - `Lcache == 2` vector loads must tile the halo: `(2*Xhf) % VW == 0`
/// - `Lcache == 2` launches halo helper threads: the enlarged
///   `(Xwg+2Xhf) x (Ywg+2Yhf)` workgroup must fit the device
pub fn conv_user_space(shape: &ConvShape, device: &DeviceModel) -> SearchSpace {
    let (hx2, hy2) = (2 * shape.halo_x(), 2 * shape.halo_y());
    let mut s = SearchSpace::new();
    let built: Result<(), crate::space::SpaceError> = (|| {
        s.add_parameter("Xwg", &[8, 16, 32, 64])?;
        s.add_parameter("Ywg", &[8, 16, 32, 64])?;
        s.add_parameter("Xwpt", &[1, 2, 4, 8])?;
        s.add_parameter("Ywpt", &[1, 2, 4, 8])?;
        s.add_parameter("Lcache", &[0, 1, 2])?;
        s.add_parameter("VW", &[1, 2, 4, 8])?;
        s.add_parameter("PAD", &[0, 1])?;
        s.add_labeled_parameter("UNR", &[0, 1], &["no", "yes"])?;
        s.add_constraint("VW <= Xwpt && Xwpt % VW == 0")?;
        s.add_constraint("PAD == 0 || Lcache >= 1")?;
        s.add_constraint(&format!("Lcache != 2 || {hx2} % VW == 0"))?;
        s.add_constraint(&format!(
            "Lcache != 2 || ((Xwg + {hx2}) * (Ywg + {hy2}) <= {} && Xwg + {hx2} <= {} && Ywg + {hy2} <= {})",
            device.max_local_total.min(i64::MAX as u64),
            device.max_local_per_dim[0].min(i64::MAX as u64),
            device.max_local_per_dim[1].min(i64::MAX as u64),
        ))?;
        Ok(())
    })();
    built.expect("static convolution space definition");
    s
}

/// [`conv_user_space`] plus the device's automatic constraints.
pub fn conv_space(device: &DeviceModel, shape: &ConvShape) -> SearchSpace {
    let mut s = conv_user_space(shape, device);
    let implied = device_constraints(&conv_kernel(shape), device, &s).expect("conv kernel matches its space");
    s.extend_constraints(implied);
    s
}

/// GEMM kernel: global `(M*MdimC/Mwg, N*NdimC/Nwg)`, local `(MdimC, NdimC)`.
/// Arguments: A, B, C (read and written), alpha, beta.
pub fn gemm_kernel(shape: &GemmShape) -> KernelSpec {
    let mut k = KernelSpec::new("gemm", "gemm.cl", &[shape.m, shape.n], &[1, 1]);
    k.mul_global_size(&["MdimC", "NdimC"])
        .div_global_size(&["Mwg", "Nwg"])
        .mul_local_size(&["MdimC", "NdimC"]);
    k.set_local_memory("4 * Kwg * (LcacheA * Mwg + LcacheB * Nwg)");
    k.add_argument(ArgumentSpec::input(
        ElemType::F32,
        (shape.k * shape.m) as usize,
        Fill::Uniform { seed: 3 },
    ))
    .add_argument(ArgumentSpec::input(
        ElemType::F32,
        (shape.k * shape.n) as usize,
        Fill::Uniform { seed: 4 },
    ))
    .add_argument(ArgumentSpec {
        role: ArgRole::Output,
        elem: ElemType::F32,
        length: (shape.m * shape.n) as usize,
        fill: Fill::Uniform { seed: 5 },
    })
    .add_argument(ArgumentSpec::scalar(ElemType::F32, 1.0))
    .add_argument(ArgumentSpec::scalar(ElemType::F32, 0.5));
    k
}

/// GEMM parameters with the reconstructed user constraints:
///
/// - `MdimC | Mwg`, `NdimC | Nwg` (register tiles `Mwi`, `Nwi` are whole)
/// - `MdimA` and `NdimB` divide `MdimC*NdimC`; the derived `KdimA`, `KdimB`
///   are at most `Kwg` and divide it
/// - `Kwi | Kwg`
/// - `Mvec | Mwi`, `Nvec | Nwi`
pub fn gemm_user_space() -> SearchSpace {
    let mut s = SearchSpace::new();
    let built: Result<(), crate::space::SpaceError> = (|| {
        for name in ["Mwg", "Nwg", "Kwg"] {
            s.add_parameter(name, &[16, 32, 64, 128])?;
        }
        s.add_parameter("MdimC", &[8, 16, 32])?;
        s.add_parameter("NdimC", &[8, 16, 32])?;
        s.add_labeled_parameter("LcacheA", &[0, 1], &["no", "yes"])?;
        s.add_labeled_parameter("LcacheB", &[0, 1], &["no", "yes"])?;
        s.add_parameter("MdimA", &[8, 16, 32])?;
        s.add_parameter("NdimB", &[8, 16, 32])?;
        s.add_labeled_parameter("Mstride", &[0, 1], &["no", "yes"])?;
        s.add_labeled_parameter("Nstride", &[0, 1], &["no", "yes"])?;
        s.add_parameter("Mvec", &[1, 2, 4, 8])?;
        s.add_parameter("Nvec", &[1, 2, 4, 8])?;
        s.add_parameter("Kwi", &[2, 8])?;
        s.add_constraint("MdimC <= Mwg && Mwg % MdimC == 0")?;
        s.add_constraint("NdimC <= Nwg && Nwg % NdimC == 0")?;
        s.add_constraint("(MdimC * NdimC) % MdimA == 0")?;
        s.add_constraint("(MdimC * NdimC) % NdimB == 0")?;
        s.add_constraint("(MdimC * NdimC) / MdimA <= Kwg && Kwg % ((MdimC * NdimC) / MdimA) == 0")?;
        s.add_constraint("(MdimC * NdimC) / NdimB <= Kwg && Kwg % ((MdimC * NdimC) / NdimB) == 0")?;
        s.add_constraint("Mvec <= Mwg / MdimC && (Mwg / MdimC) % Mvec == 0")?;
        s.add_constraint("Nvec <= Nwg / NdimC && (Nwg / NdimC) % Nvec == 0")?;
        s.add_constraint("Kwg % Kwi == 0")?;
        Ok(())
    })();
    built.expect("static GEMM space definition");
    s
}

/// [`gemm_user_space`] plus the device's automatic constraints.
pub fn gemm_space(device: &DeviceModel, shape: &GemmShape) -> SearchSpace {
    let mut s = gemm_user_space();
    let implied = device_constraints(&gemm_kernel(shape), device, &s).expect("gemm kernel matches its space");
    s.extend_constraints(implied);
    s
}

/// Derived GEMM quantities `(Mwi, Nwi, KdimA, KdimB)` for a configuration of
/// [`gemm_user_space`].
pub fn gemm_derived(space: &SearchSpace, config: &Configuration) -> Option<(u64, u64, u64, u64)> {
    let v = |n: &str| space.value(config, n);
    let threads = v("MdimC")? * v("NdimC")?;
    Some((
        v("Mwg")? / v("MdimC")?,
        v("Nwg")? / v("NdimC")?,
        threads / v("MdimA")?,
        threads / v("NdimB")?,
    ))
}

/// Reference for [`conv_kernel`] arguments `[input, filter, output]`.
#[derive(Debug, Clone, Copy)]
pub struct ConvOracle {
    pub shape: ConvShape,
    pub w: f32,
}

impl Reference for ConvOracle {
    fn outputs(&self, arguments: &[Buffer]) -> Result<Vec<Buffer>, TunerError> {
        let (Some(input), Some(filter)) = (
            arguments.first().and_then(Buffer::as_f32),
            arguments.get(1).and_then(Buffer::as_f32),
        ) else {
            return Err(TunerError::ShapeMismatch(
                "conv expects f32 input and filter".into(),
            ));
        };
        Ok(alloc::vec![Buffer::F32(conv_apply(
            &self.shape,
            self.w,
            input,
            filter
        )?)])
    }
}

/// Reference for [`gemm_kernel`] arguments `[A, B, C, alpha, beta]`.
#[derive(Debug, Clone, Copy)]
pub struct GemmOracle {
    pub shape: GemmShape,
}

impl Reference for GemmOracle {
    fn outputs(&self, arguments: &[Buffer]) -> Result<Vec<Buffer>, TunerError> {
        let f = |i: usize| arguments.get(i).and_then(Buffer::as_f32);
        let (Some(a), Some(b), Some(c), Some(alpha), Some(beta)) = (f(0), f(1), f(2), f(3), f(4)) else {
            return Err(TunerError::ShapeMismatch(
                "gemm expects five f32 arguments".into(),
            ));
        };
        let (alpha, beta) = (
            alpha.first().copied().unwrap_or(1.0),
            beta.first().copied().unwrap_or(0.0),
        );
        Ok(alloc::vec![Buffer::F32(gemm_apply(
            &self.shape,
            alpha,
            beta,
            a,
            b,
            c
        )?)])
    }
}

pub fn conv_oracle(shape: &ConvShape) -> Arc<dyn Reference> {
    Arc::new(ConvOracle {
        shape: *shape,
        w: 1.0,
    })
}

pub fn gemm_oracle(shape: &GemmShape) -> Arc<dyn Reference> {
    Arc::new(GemmOracle { shape: *shape })
}

fn canonical_device(device: &str) -> Result<&'static str, LandscapeError> {
    DeviceModel::preset(device)
        .and_then(|d| crate::device::PRESETS.iter().copied().find(|p| *p == d.name))
        .ok_or_else(|| LandscapeError::UnknownDevice(device.into()))
}

/// Published best convolution parameters for `device` and a square filter
/// of size `filter` (3, 7 or 11). Available for K40m and GTX480.
pub fn best_known_conv(device: &str, filter: u64) -> Result<Vec<(&'static str, u64)>, LandscapeError> {
    // Xwg, Ywg, Xwpt, Ywpt, Lcache, VW, PAD, UNR
    let row: [u64; 8] = match (canonical_device(device)?, filter) {
        ("K40m", 3) => [32, 8, 1, 8, 0, 1, 0, 1],
        ("K40m", 7) => [32, 16, 2, 4, 2, 2, 1, 1],
        ("K40m", 11) => [32, 8, 2, 8, 2, 2, 1, 1],
        ("GTX480", 3) => [64, 8, 1, 4, 0, 1, 0, 1],
        ("GTX480", 7) => [32, 8, 2, 8, 2, 2, 0, 1],
        ("GTX480", 11) => [32, 8, 2, 4, 1, 2, 0, 1],
        ("K40m" | "GTX480", f) => return Err(LandscapeError::UnsupportedFilter(f)),
        (d, _) => return Err(LandscapeError::UnknownDevice(d.into())),
    };
    Ok(CONV_PARAMS.iter().copied().zip(row).collect())
}

/// Published best GEMM parameters for `device`.
pub fn best_known_gemm(device: &str) -> Result<Vec<(&'static str, u64)>, LandscapeError> {
    // Mwg, Nwg, Kwg, MdimC, NdimC, LcacheA, LcacheB, MdimA, NdimB,
    // Mstride, Nstride, Mvec, Nvec, Kwi
    let row: [u64; 14] = match canonical_device(device)? {
        "K40m" => [128, 128, 16, 16, 16, 1, 1, 32, 16, 1, 0, 2, 1, 8],
        "GTX480" => [64, 64, 32, 8, 16, 1, 1, 32, 32, 1, 0, 2, 2, 8],
        "HD7970" => [128, 128, 32, 16, 16, 1, 1, 32, 32, 0, 1, 4, 4, 2],
        "Iris" => [64, 64, 16, 8, 8, 1, 1, 8, 16, 1, 1, 4, 4, 8],
        d => return Err(LandscapeError::UnknownDevice(d.into())),
    };
    Ok(GEMM_PARAMS.iter().copied().zip(row).collect())
}

/// Cross-evaluation matrix: entry `[i][j]` is the performance of the
/// configuration tuned for case `j` applied to case `i`, relative to the
/// configuration tuned for case `i` (`time(i, i) / time(i, j)`).
pub fn cross_performance(
    cases: usize,
    mut time: impl FnMut(usize, usize) -> Option<f64>,
) -> Vec<Vec<Option<f64>>> {
    (0..cases)
        .map(|applied| {
            let own = time(applied, applied);
            (0..cases)
                .map(|tuned| match (own, time(applied, tuned)) {
                    (Some(own), Some(t)) if t > 0.0 => Some(own / t),
                    _ => None,
                })
                .collect()
        })
        .collect()
}
