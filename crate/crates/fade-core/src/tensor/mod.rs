//! Dense rank-4 tensors in NCHW layout plus the primitive operations the
//! upsampling operators are composed from.
//!
//! Data lives in one contiguous row-major buffer: element `(b, c, y, x)` sits
//! at `((b * C + c) * H + y) * W + x`. Every reduction in this module runs in
//! a fixed order (channels, then kernel rows, then kernel columns), so a
//! given input produces bit-identical output on every run.

use std::fmt;

mod io;
mod ops;

pub use io::{
    decode_tensor, load_tensor, read_tensor, save_tensor, write_tensor, TensorIoError, FTEN_MAGIC,
    FTEN_VERSION,
};
pub(crate) use ops::out_extent;
pub use ops::{
    add, bilinear_x2, concat_channels, conv2d, maxpool_x2, nn_interpolate_x2, pad2d,
    pixel_shuffle_x2, sigmoid_map, softmax_channels,
};

/// Scalar types the operators run on. `f32` is the production dtype; `f64`
/// is used for gradient certification. The numeric formulas are identical in
/// both widths.
pub trait Element:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    /// Dtype tag stored in the FTEN header: 1 = f32, 2 = f64.
    const DTYPE_CODE: u32;
    /// Bytes per element in the FTEN payload.
    const BYTES: usize;
    /// Human-readable dtype name for messages.
    const NAME: &'static str;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
    fn write_le(self, out: &mut Vec<u8>);
    /// Decodes one element from exactly `Self::BYTES` little-endian bytes.
    fn from_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE_CODE: u32 = 1;
    const BYTES: usize = 4;
    const NAME: &'static str = "f32";

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn exp(self) -> Self {
        self.exp()
    }
    fn abs(self) -> Self {
        self.abs()
    }
    fn maximum(self, other: Self) -> Self {
        self.max(other)
    }
    fn is_finite(self) -> bool {
        self.is_finite()
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn from_le(bytes: &[u8]) -> Self {
        let mut raw = [0u8; 4];
        raw.copy_from_slice(bytes);
        f32::from_le_bytes(raw)
    }
}

impl Element for f64 {
    const DTYPE_CODE: u32 = 2;
    const BYTES: usize = 8;
    const NAME: &'static str = "f64";

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        self.exp()
    }
    fn abs(self) -> Self {
        self.abs()
    }
    fn maximum(self, other: Self) -> Self {
        self.max(other)
    }
    fn is_finite(self) -> bool {
        self.is_finite()
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn from_le(bytes: &[u8]) -> Self {
        let mut raw = [0u8; 8];
        raw.copy_from_slice(bytes);
        f64::from_le_bytes(raw)
    }
}

/// Errors shared by the operator layer. Variants carry the offending sizes
/// so messages stay actionable without string formatting at call sites.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpError {
    /// Buffer length does not match the product of the declared dims.
    LengthMismatch { expected: usize, found: usize },
    /// A tensor dimension was zero.
    ZeroDim,
    /// Two tensors that must agree in shape do not.
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize, usize, usize),
        found: (usize, usize, usize, usize),
    },
    /// Convolution input channels differ from the weight's input channels.
    ChannelMismatch { input: usize, weights: usize },
    /// Convolution geometry does not divide into a positive integer output.
    NonIntegerOutputShape {
        extent: usize,
        pad: (usize, usize),
        kernel: usize,
        stride: usize,
    },
    /// Stride must be at least 1.
    ZeroStride,
    /// Bias length differs from the number of output channels.
    BiasMismatch { bias: usize, c_out: usize },
    /// Pooling or pixel-shuffle precondition on spatial parity failed.
    OddSpatialDims { h: usize, w: usize },
    /// Channel count must be a multiple of the given divisor.
    ChannelsNotDivisible { channels: usize, divisor: usize },
    /// Window or reassembly kernel size must be odd (and positive).
    UnsupportedWindow { size: usize },
    /// Kernel-map channel count is not a perfect square.
    NotSquareChannels { channels: usize },
    /// Reassembly was handed a kernel map that skipped normalization.
    UnnormalizedKernels,
    /// Gating fusion requires gate parameters.
    MissingGate,
    /// Name does not identify a registered differentiable operation.
    UnknownOp { name: String },
    /// A gradient or finite-difference probe produced NaN or infinity.
    NonFiniteGradient { op: &'static str },
    /// Name does not identify an operator or training arm.
    UnknownKind { name: String },
    /// Toy images must be even-sided and at least 8 px.
    BadSize { size: usize },
    /// Ablation budget below the supported minimum.
    BudgetTooSmall { budget: usize, minimum: usize },
    /// Benchmarks need at least 3 trials for a median.
    TooFewTrials { trials: usize },
}

impl fmt::Display for OpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpError::LengthMismatch { expected, found } => {
                write!(f, "buffer holds {found} elements, shape needs {expected}")
            }
            OpError::ZeroDim => write!(f, "tensor dimensions must all be positive"),
            OpError::ShapeMismatch {
                context,
                expected,
                found,
            } => write!(f, "{context}: expected shape {expected:?}, found {found:?}"),
            OpError::ChannelMismatch { input, weights } => {
                write!(f, "input has {input} channels but weights expect {weights}")
            }
            OpError::NonIntegerOutputShape {
                extent,
                pad,
                kernel,
                stride,
            } => write!(
                f,
                "extent {extent} with pad {pad:?}, kernel {kernel}, stride {stride} \
                 does not produce a positive integer output size"
            ),
            OpError::ZeroStride => write!(f, "stride must be at least 1"),
            OpError::BiasMismatch { bias, c_out } => {
                write!(f, "bias has {bias} entries for {c_out} output channels")
            }
            OpError::OddSpatialDims { h, w } => {
                write!(f, "spatial dims ({h}, {w}) must both be even")
            }
            OpError::ChannelsNotDivisible { channels, divisor } => {
                write!(f, "channel count {channels} must be divisible by {divisor}")
            }
            OpError::UnsupportedWindow { size } => {
                write!(f, "window size {size} is unsupported; it must be odd")
            }
            OpError::NotSquareChannels { channels } => {
                write!(
                    f,
                    "kernel map has {channels} channels, not a perfect square"
                )
            }
            OpError::UnnormalizedKernels => {
                write!(f, "kernel map must be normalized before reassembly")
            }
            OpError::MissingGate => write!(f, "gating fusion requires gate parameters"),
            OpError::UnknownOp { name } => write!(f, "unknown differentiable op '{name}'"),
            OpError::NonFiniteGradient { op } => {
                write!(f, "non-finite gradient encountered in '{op}'")
            }
            OpError::UnknownKind { name } => write!(f, "unknown kind '{name}'"),
            OpError::BadSize { size } => {
                write!(f, "toy image size {size} must be even and at least 8")
            }
            OpError::BudgetTooSmall { budget, minimum } => {
                write!(
                    f,
                    "budget of {budget} epochs is below the minimum {minimum}"
                )
            }
            OpError::TooFewTrials { trials } => {
                write!(
                    f,
                    "{trials} trials cannot produce a median; need at least 3"
                )
            }
        }
    }
}

impl std::error::Error for OpError {}

/// Explicit zero padding, one count per side. Asymmetric padding is first
/// class because the corner sub-processes pad single sides only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const ZERO: Padding = Padding {
        top: 0,
        bottom: 0,
        left: 0,
        right: 0,
    };

    #[must_use]
    pub fn uniform(p: usize) -> Padding {
        Padding {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    #[must_use]
    pub fn vertical(self) -> usize {
        self.top + self.bottom
    }

    #[must_use]
    pub fn horizontal(self) -> usize {
        self.left + self.right
    }
}

/// A dense rank-4 tensor in NCHW layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Element> Tensor4<T> {
    /// Wraps an existing buffer. The buffer length must equal `n*c*h*w` and
    /// every dimension must be positive.
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self, OpError> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(OpError::ZeroDim);
        }
        let expected = n * c * h * w;
        if data.len() != expected {
            return Err(OpError::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    /// All-zero tensor of the given shape. Panics on a zero dimension; shapes
    /// here always come from already validated tensors.
    #[must_use]
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        assert!(n > 0 && c > 0 && h > 0 && w > 0, "dims must be positive");
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        }
    }

    #[must_use]
    pub fn filled(n: usize, c: usize, h: usize, w: usize, value: T) -> Self {
        let mut t = Self::zeros(n, c, h, w);
        t.data.fill(value);
        t
    }

    #[must_use]
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    #[must_use]
    pub fn n(&self) -> usize {
        self.n
    }
    #[must_use]
    pub fn c(&self) -> usize {
        self.c
    }
    #[must_use]
    pub fn h(&self) -> usize {
        self.h
    }
    #[must_use]
    pub fn w(&self) -> usize {
        self.w
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    #[must_use]
    pub fn idx(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(b < self.n && c < self.c && y < self.h && x < self.w);
        ((b * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    #[must_use]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.idx(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, value: T) {
        let i = self.idx(b, c, y, x);
        self.data[i] = value;
    }

    #[inline]
    pub fn get_mut(&mut self, b: usize, c: usize, y: usize, x: usize) -> &mut T {
        let i = self.idx(b, c, y, x);
        &mut self.data[i]
    }

    #[must_use]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Elementwise map into a new tensor of the same shape.
    #[must_use]
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    #[must_use]
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest elementwise absolute difference; shapes must already agree.
    #[must_use]
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Convolution weights: kernel laid out as (c_out, c_in, k_h, k_w) plus an
/// optional per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights<T> {
    pub kernel: Tensor4<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Element> ConvWeights<T> {
    pub fn new(kernel: Tensor4<T>, bias: Option<Vec<T>>) -> Result<Self, OpError> {
        if let Some(b) = &bias {
            if b.len() != kernel.n() {
                return Err(OpError::BiasMismatch {
                    bias: b.len(),
                    c_out: kernel.n(),
                });
            }
        }
        Ok(ConvWeights { kernel, bias })
    }

    #[must_use]
    pub fn c_out(&self) -> usize {
        self.kernel.n()
    }
    #[must_use]
    pub fn c_in(&self) -> usize {
        self.kernel.c()
    }
    #[must_use]
    pub fn k_h(&self) -> usize {
        self.kernel.h()
    }
    #[must_use]
    pub fn k_w(&self) -> usize {
        self.kernel.w()
    }

    /// Same weights with the bias dropped; used where a shared kernel must
    /// contribute its bias exactly once across several applications.
    #[must_use]
    pub fn without_bias(&self) -> ConvWeights<T> {
        ConvWeights {
            kernel: self.kernel.clone(),
            bias: None,
        }
    }

    /// Zero-valued weights of the same shape, for gradient accumulation.
    #[must_use]
    pub fn zeros_like(&self) -> ConvWeights<T> {
        ConvWeights {
            kernel: Tensor4::zeros(
                self.kernel.n(),
                self.kernel.c(),
                self.kernel.h(),
                self.kernel.w(),
            ),
            bias: self.bias.as_ref().map(|b| vec![T::zero(); b.len()]),
        }
    }
}
