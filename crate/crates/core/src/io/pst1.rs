//! PST1 tensor files.
//!
//! ```text
//! b"PST1" | dtype: u8 (0 = f32, 1 = u16, 2 = u32) | ndim: u8 | ndim × u32 dims | payload
//! ```
//!
//! All integers and payload elements are little-endian; the payload is
//! row-major.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PST1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    U16 = 1,
    U32 = 2,
}

impl DType {
    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::U16),
            2 => Some(DType::U32),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::U16 => 2,
            DType::F32 | DType::U32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Tensor {
    F32(ArrayD<f32>),
    U16(ArrayD<u16>),
    U32(ArrayD<u32>),
}

impl Tensor {
    pub fn dtype(&self) -> DType {
        match self {
            Tensor::F32(_) => DType::F32,
            Tensor::U16(_) => DType::U16,
            Tensor::U32(_) => DType::U32,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::F32(a) => a.shape(),
            Tensor::U16(a) => a.shape(),
            Tensor::U32(a) => a.shape(),
        }
    }
}

pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let shape = tensor.shape();
    let count: usize = shape.iter().product();
    let mut out = Vec::with_capacity(6 + 4 * shape.len() + count * tensor.dtype().width());
    out.extend_from_slice(MAGIC);
    out.push(tensor.dtype() as u8);
    out.push(u8::try_from(shape.len()).expect("at most 255 dimensions"));
    for &d in shape {
        out.extend_from_slice(&u32::try_from(d).expect("dimension fits u32").to_le_bytes());
    }
    match tensor {
        Tensor::F32(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Tensor::U16(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Tensor::U32(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

/// Parses a PST1 buffer. `path` is only used to label errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let fail = |msg: String| Error::format(path, msg);
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(fail("not a PST1 file (bad magic)".into()));
    }
    let dtype = DType::from_code(bytes[4]).ok_or_else(|| fail(format!("unknown dtype code {}", bytes[4])))?;
    let ndim = bytes[5] as usize;
    let header = 6 + 4 * ndim;
    if bytes.len() < header {
        return Err(fail("truncated header".into()));
    }
    let shape: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| fail("dimension product overflows".into()))?;
    let payload = &bytes[header..];
    let expected = count
        .checked_mul(dtype.width())
        .ok_or_else(|| fail("dimension product overflows".into()))?;
    if payload.len() < expected {
        return Err(fail(format!("truncated payload: expected {expected} bytes, found {}", payload.len())));
    }
    if payload.len() > expected {
        return Err(fail(format!("{} trailing bytes after payload", payload.len() - expected)));
    }
    let dims = IxDyn(&shape);
    let tensor = match dtype {
        DType::F32 => Tensor::F32(ArrayD::from_shape_vec(
            dims,
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        )
        .unwrap()),
        DType::U16 => Tensor::U16(ArrayD::from_shape_vec(
            dims,
            payload.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().unwrap())).collect(),
        )
        .unwrap()),
        DType::U32 => Tensor::U32(ArrayD::from_shape_vec(
            dims,
            payload.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect(),
        )
        .unwrap()),
    };
    Ok(tensor)
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write(path: &Path, tensor: &Tensor) -> Result<()> {
    fs::write(path, encode(tensor)).map_err(|e| Error::io(path, e))
}

fn wrong(path: &Path, want: &str, got: &Tensor) -> Error {
    Error::format(path, format!("expected {want}, found {:?} tensor of shape {:?}", got.dtype(), got.shape()))
}

pub fn read_f32_3(path: &Path) -> Result<Array3<f32>> {
    match read(path)? {
        Tensor::F32(a) if a.ndim() == 3 => Ok(a.into_dimensionality().unwrap()),
        t => Err(wrong(path, "3-d f32", &t)),
    }
}

pub fn read_f32_2(path: &Path) -> Result<Array2<f32>> {
    match read(path)? {
        Tensor::F32(a) if a.ndim() == 2 => Ok(a.into_dimensionality().unwrap()),
        t => Err(wrong(path, "2-d f32", &t)),
    }
}

pub fn read_f32_1(path: &Path) -> Result<Vec<f32>> {
    match read(path)? {
        Tensor::F32(a) if a.ndim() == 1 => Ok(a.into_raw_vec_and_offset().0),
        t => Err(wrong(path, "1-d f32", &t)),
    }
}

pub fn read_u32_2(path: &Path) -> Result<Array2<u32>> {
    match read(path)? {
        Tensor::U32(a) if a.ndim() == 2 => Ok(a.into_dimensionality().unwrap()),
        t => Err(wrong(path, "2-d u32", &t)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("t.pst")
    }

    #[test]
    fn header_layout() {
        let t = Tensor::U16(ArrayD::from_shape_vec(IxDyn(&[2]), vec![1, 0x0102]).unwrap());
        assert_eq!(encode(&t), vec![b'P', b'S', b'T', b'1', 1, 1, 2, 0, 0, 0, 1, 0, 2, 1]);
    }

    #[test]
    fn malformed_inputs_name_the_file() {
        let err = decode(b"PSX1\0\0", p()).unwrap_err();
        assert!(err.to_string().starts_with("t.pst:"), "{err}");
        assert!(err.to_string().contains("magic"));
        let mut bytes = encode(&Tensor::F32(ArrayD::zeros(IxDyn(&[2, 2]))));
        bytes.pop();
        assert!(decode(&bytes, p()).unwrap_err().to_string().contains("truncated"));
        bytes.extend([0, 0]);
        assert!(decode(&bytes, p()).unwrap_err().to_string().contains("trailing"));
        assert!(decode(b"PST1\x07\0", p()).unwrap_err().to_string().contains("dtype"));
    }

    #[test]
    fn scalar_tensor() {
        let t = Tensor::F32(ArrayD::from_elem(IxDyn(&[]), 2.5));
        assert_eq!(decode(&encode(&t), p()).unwrap(), t);
    }

    proptest! {
        #[test]
        fn f32_round_trip_is_bit_identical(bits in prop::collection::vec(any::<u32>(), 0..64), split in 1usize..4) {
            let n = bits.len() / split * split;
            let vals: Vec<f32> = bits[..n].iter().map(|&b| f32::from_bits(b)).collect();
            let t = Tensor::F32(ArrayD::from_shape_vec(IxDyn(&[split, n / split]), vals).unwrap());
            let back = decode(&encode(&t), p()).unwrap();
            let (Tensor::F32(a), Tensor::F32(b)) = (&t, &back) else { panic!() };
            prop_assert_eq!(a.shape(), b.shape());
            prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        #[test]
        fn u32_round_trip(vals in prop::collection::vec(any::<u32>(), 0..64)) {
            let t = Tensor::U32(ArrayD::from_shape_vec(IxDyn(&[vals.len()]), vals).unwrap());
            prop_assert_eq!(decode(&encode(&t), p()).unwrap(), t);
        }
    }
}
