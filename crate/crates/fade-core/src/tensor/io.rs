//! FTEN: a minimal binary container for one rank-4 tensor.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..4    magic "FTEN"
//! bytes 4..8    format version, u32, currently 1
//! bytes 8..12   dtype code, u32: 1 = f32, 2 = f64
//! bytes 12..16  rank, u32, always 4
//! bytes 16..32  dims n, c, h, w as four u32 values
//! bytes 32..    payload, n*c*h*w elements row-major, little-endian
//! ```
//!
//! There is no compression and no alignment padding. A write followed by a
//! read of the same dtype reproduces the payload byte for byte. Readers
//! reject non-finite payloads so downstream operators never see NaN or
//! infinity from disk.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Element, Tensor4};

pub const FTEN_MAGIC: [u8; 4] = *b"FTEN";
pub const FTEN_VERSION: u32 = 1;

#[derive(Debug)]
pub enum TensorIoError {
    /// Leading bytes are not the FTEN magic.
    BadMagic {
        found: [u8; 4],
    },
    UnsupportedVersion {
        found: u32,
    },
    UnsupportedDtype {
        found: u32,
    },
    /// File dtype differs from the dtype requested by the caller.
    DtypeMismatch {
        file: u32,
        requested: u32,
    },
    /// Rank field must be 4.
    BadRank {
        found: u32,
    },
    /// A dimension of zero makes the payload empty and the tensor invalid.
    ZeroDim,
    /// Declared dims overflow the addressable payload size.
    DimOverflow,
    /// Fewer bytes than the header or declared payload require.
    TruncatedFile {
        needed: usize,
        got: usize,
    },
    /// Bytes remain after the declared payload.
    TrailingData {
        extra: usize,
    },
    /// Payload contains NaN or infinity at the given element index.
    NonFiniteData {
        index: usize,
    },
    Io(std::io::Error),
}

impl fmt::Display for TensorIoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorIoError::BadMagic { found } => {
                write!(f, "bad magic {found:?}, expected \"FTEN\"")
            }
            TensorIoError::UnsupportedVersion { found } => {
                write!(f, "unsupported format version {found}")
            }
            TensorIoError::UnsupportedDtype { found } => {
                write!(f, "unsupported dtype code {found}")
            }
            TensorIoError::DtypeMismatch { file, requested } => {
                write!(
                    f,
                    "file stores dtype code {file}, caller requested {requested}"
                )
            }
            TensorIoError::BadRank { found } => write!(f, "rank {found} unsupported, must be 4"),
            TensorIoError::ZeroDim => write!(f, "tensor dims must all be positive"),
            TensorIoError::DimOverflow => write!(f, "declared dims overflow payload size"),
            TensorIoError::TruncatedFile { needed, got } => {
                write!(f, "truncated file: needed {needed} bytes, got {got}")
            }
            TensorIoError::TrailingData { extra } => {
                write!(f, "{extra} unexpected bytes after payload")
            }
            TensorIoError::NonFiniteData { index } => {
                write!(f, "non-finite value at element {index}")
            }
            TensorIoError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for TensorIoError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            TensorIoError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for TensorIoError {
    fn from(e: std::io::Error) -> Self {
        TensorIoError::Io(e)
    }
}

/// Serializes one tensor to the writer.
pub fn write_tensor<T: Element, W: Write>(
    out: &mut W,
    tensor: &Tensor4<T>,
) -> Result<(), TensorIoError> {
    let (n, c, h, w) = tensor.shape();
    let mut buf = Vec::with_capacity(32 + tensor.len() * T::BYTES);
    buf.extend_from_slice(&FTEN_MAGIC);
    buf.extend_from_slice(&FTEN_VERSION.to_le_bytes());
    buf.extend_from_slice(&T::DTYPE_CODE.to_le_bytes());
    buf.extend_from_slice(&4u32.to_le_bytes());
    for dim in [n, c, h, w] {
        let dim = u32::try_from(dim).map_err(|_| TensorIoError::DimOverflow)?;
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    for &v in tensor.data() {
        v.write_le(&mut buf);
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Deserializes one tensor, consuming the reader to its end. The requested
/// element type must match the stored dtype code.
pub fn read_tensor<T: Element, R: Read>(input: &mut R) -> Result<Tensor4<T>, TensorIoError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let (tensor, used) = decode_tensor::<T>(&bytes)?;
    if bytes.len() > used {
        return Err(TensorIoError::TrailingData {
            extra: bytes.len() - used,
        });
    }
    Ok(tensor)
}

/// Decodes one tensor from the front of `bytes`, returning it together with
/// the number of bytes consumed. Lets several records share one file.
pub fn decode_tensor<T: Element>(bytes: &[u8]) -> Result<(Tensor4<T>, usize), TensorIoError> {
    const HEADER: usize = 32;
    if bytes.len() < HEADER {
        return Err(TensorIoError::TruncatedFile {
            needed: HEADER,
            got: bytes.len(),
        });
    }
    if bytes[0..4] != FTEN_MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[0..4]);
        return Err(TensorIoError::BadMagic { found });
    }
    let field = |at: usize| -> u32 {
        let mut raw = [0u8; 4];
        raw.copy_from_slice(&bytes[at..at + 4]);
        u32::from_le_bytes(raw)
    };
    let version = field(4);
    if version != FTEN_VERSION {
        return Err(TensorIoError::UnsupportedVersion { found: version });
    }
    let dtype = field(8);
    if dtype != 1 && dtype != 2 {
        return Err(TensorIoError::UnsupportedDtype { found: dtype });
    }
    if dtype != T::DTYPE_CODE {
        return Err(TensorIoError::DtypeMismatch {
            file: dtype,
            requested: T::DTYPE_CODE,
        });
    }
    let rank = field(12);
    if rank != 4 {
        return Err(TensorIoError::BadRank { found: rank });
    }
    let dims: Vec<usize> = (0..4).map(|i| field(16 + 4 * i) as usize).collect();
    if dims.contains(&0) {
        return Err(TensorIoError::ZeroDim);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(TensorIoError::DimOverflow)?;
    let payload = count
        .checked_mul(T::BYTES)
        .ok_or(TensorIoError::DimOverflow)?;
    let needed = HEADER + payload;
    if bytes.len() < needed {
        return Err(TensorIoError::TruncatedFile {
            needed,
            got: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let at = HEADER + i * T::BYTES;
        let v = T::from_le(&bytes[at..at + T::BYTES]);
        if !v.is_finite() {
            return Err(TensorIoError::NonFiniteData { index: i });
        }
        data.push(v);
    }
    let tensor =
        Tensor4::new(dims[0], dims[1], dims[2], dims[3], data).expect("validated dims and count");
    Ok((tensor, needed))
}

pub fn save_tensor<T: Element>(path: &Path, tensor: &Tensor4<T>) -> Result<(), TensorIoError> {
    let mut file = BufWriter::new(File::create(path)?);
    write_tensor(&mut file, tensor)?;
    file.flush()?;
    Ok(())
}

pub fn load_tensor<T: Element>(path: &Path) -> Result<Tensor4<T>, TensorIoError> {
    let mut file = BufReader::new(File::open(path)?);
    read_tensor(&mut file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor4<f32> {
        let data: Vec<f32> = (0..120).map(|v| v as f32 * 0.25 - 3.0).collect();
        Tensor4::new(2, 3, 4, 5, data).unwrap()
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let t = sample();
        let mut first = Vec::new();
        write_tensor(&mut first, &t).unwrap();
        let back: Tensor4<f32> = read_tensor(&mut first.as_slice()).unwrap();
        assert_eq!(back, t);
        let mut second = Vec::new();
        write_tensor(&mut second, &back).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn roundtrip_f64() {
        let data: Vec<f64> = (0..24).map(|v| v as f64 / 7.0).collect();
        let t = Tensor4::new(1, 2, 3, 4, data).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back: Tensor4<f64> = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &sample()).unwrap();
        buf[0] = b'X';
        let err = read_tensor::<f32, _>(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, TensorIoError::BadMagic { .. }), "{err}");
    }

    #[test]
    fn rejects_truncated_payload() {
        // Header declares 2*3*4*5 = 120 elements; hand it only 100.
        let mut buf = Vec::new();
        write_tensor(&mut buf, &sample()).unwrap();
        buf.truncate(32 + 100 * 4);
        let err = read_tensor::<f32, _>(&mut buf.as_slice()).unwrap_err();
        match err {
            TensorIoError::TruncatedFile { needed, got } => {
                assert_eq!(needed, 32 + 120 * 4);
                assert_eq!(got, 32 + 100 * 4);
            }
            other => panic!("expected TruncatedFile, got {other}"),
        }
    }

    #[test]
    fn rejects_trailing_bytes() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &sample()).unwrap();
        buf.push(0);
        let err = read_tensor::<f32, _>(&mut buf.as_slice()).unwrap_err();
        assert!(
            matches!(err, TensorIoError::TrailingData { extra: 1 }),
            "{err}"
        );
    }

    #[test]
    fn rejects_non_finite_payload() {
        let mut t = sample();
        t.data_mut()[7] = f32::NAN;
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let err = read_tensor::<f32, _>(&mut buf.as_slice()).unwrap_err();
        assert!(
            matches!(err, TensorIoError::NonFiniteData { index: 7 }),
            "{err}"
        );
    }

    #[test]
    fn rejects_dtype_mismatch() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &sample()).unwrap();
        let err = read_tensor::<f64, _>(&mut buf.as_slice()).unwrap_err();
        assert!(
            matches!(
                err,
                TensorIoError::DtypeMismatch {
                    file: 1,
                    requested: 2
                }
            ),
            "{err}"
        );
    }
}
