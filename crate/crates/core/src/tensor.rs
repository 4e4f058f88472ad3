//! Dense tensors and the STF1 interchange format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "STF1"
//! 4       1           dtype code (0 = f32, 1 = u8)
//! 5       1           ndim
//! 6       8 * ndim    dims, u64 each, row-major order
//! ...     numel * w   element data, row-major, little-endian
//! ```
//!
//! The reader rejects any file whose byte length disagrees with the sizes
//! declared in its header.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"STF1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    U8,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::U8 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
        }
    }
}

/// A row-major tensor. Shape is nonempty, every dimension is at least one
/// and the element count matches the product of the shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        validate_shape(&shape)?;
        let numel = checked_numel(&shape)
            .ok_or_else(|| Error::InvalidTensor(format!("shape {shape:?} overflows")))?;
        if numel != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} holds {numel} elements but data has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Tensor::new(shape, TensorData::F32(data))
    }

    pub fn from_u8(shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        Tensor::new(shape, TensorData::U8(data))
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = checked_numel(&shape).unwrap_or(0);
        Tensor::from_f32(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::U8(_) => Err(Error::InvalidTensor("expected f32 tensor, found u8".into())),
        }
    }

    pub fn into_f32(self) -> Result<Vec<f32>> {
        match self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::U8(_) => Err(Error::InvalidTensor("expected f32 tensor, found u8".into())),
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    /// Bitwise equality, including NaN payloads.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&self.data, &other.data) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::U8(a), TensorData::U8(b)) => a == b,
            _ => false,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let width = self.dtype().width();
        let mut out = Vec::with_capacity(6 + 8 * self.shape.len() + width * self.numel());
        out.extend_from_slice(MAGIC);
        out.push(self.dtype().code());
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::format("magic", "truncated before magic"));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::format("magic", "bad magic"));
        }
        let dtype_code = *bytes
            .get(4)
            .ok_or_else(|| Error::format("dtype", "truncated before dtype"))?;
        let dtype = DType::from_code(dtype_code)
            .ok_or_else(|| Error::format("dtype", format!("unknown dtype code {dtype_code}")))?;
        let ndim = *bytes
            .get(5)
            .ok_or_else(|| Error::format("ndim", "truncated before ndim"))? as usize;
        if ndim == 0 {
            return Err(Error::format("ndim", "ndim must be at least 1"));
        }
        let dims_end = 6 + 8 * ndim;
        if bytes.len() < dims_end {
            return Err(Error::format("dims", "truncated in dims"));
        }
        let mut shape = Vec::with_capacity(ndim);
        for chunk in bytes[6..dims_end].chunks_exact(8) {
            let d = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            if d == 0 {
                return Err(Error::format("dims", "dimension of size 0"));
            }
            let d = usize::try_from(d)
                .map_err(|_| Error::format("dims", format!("dimension {d} too large")))?;
            shape.push(d);
        }
        let payload_len = checked_numel(&shape)
            .and_then(|n| n.checked_mul(dtype.width()))
            .ok_or_else(|| Error::format("dims", "declared size overflows"))?;
        let payload = &bytes[dims_end..];
        if payload.len() < payload_len {
            return Err(Error::format(
                "data",
                format!("truncated: expected {payload_len} data bytes, found {}", payload.len()),
            ));
        }
        if payload.len() > payload_len {
            return Err(Error::format(
                "data",
                format!(
                    "trailing bytes: expected {payload_len} data bytes, found {}",
                    payload.len()
                ),
            ));
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
        };
        Tensor::new(shape, data)
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidTensor("shape must have at least one dimension".into()));
    }
    if shape.len() > u8::MAX as usize {
        return Err(Error::InvalidTensor(format!("rank {} exceeds 255", shape.len())));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::InvalidTensor(format!("dimension {pos} has size 0")));
    }
    Ok(())
}

fn checked_numel(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    validate_shape(t.shape())?;
    fs::write(path, t.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_f32_layout() {
        let t = Tensor::from_f32(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"STF1");
        expected.push(0x00);
        expected.push(0x02);
        expected.extend_from_slice(&[2, 0, 0, 0, 0, 0, 0, 0]);
        expected.extend_from_slice(&[2, 0, 0, 0, 0, 0, 0, 0]);
        // 1.0, 2.0, 3.0, 4.0 as IEEE-754 single, little-endian
        expected.extend_from_slice(&[0x00, 0x00, 0x80, 0x3f]);
        expected.extend_from_slice(&[0x00, 0x00, 0x00, 0x40]);
        expected.extend_from_slice(&[0x00, 0x00, 0x40, 0x40]);
        expected.extend_from_slice(&[0x00, 0x00, 0x80, 0x40]);
        let bytes = t.encode();
        assert_eq!(bytes.len(), 38);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn single_u8_layout() {
        let t = Tensor::from_u8(vec![1], vec![7]).unwrap();
        let mut expected = b"STF1".to_vec();
        expected.extend_from_slice(&[0x01, 0x01, 1, 0, 0, 0, 0, 0, 0, 0, 0x07]);
        assert_eq!(t.encode(), expected);
    }

    #[test]
    fn empty_shape_rejected() {
        assert!(matches!(
            Tensor::from_f32(vec![], vec![]),
            Err(Error::InvalidTensor(_))
        ));
        assert!(Tensor::from_f32(vec![2, 0], vec![]).is_err());
        assert!(Tensor::from_f32(vec![2, 2], vec![1.0]).is_err());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = Tensor::from_u8(vec![1], vec![7]).unwrap().encode();
        bytes[0] = b'X';
        match Tensor::decode(&bytes) {
            Err(Error::Format { field, message }) => {
                assert_eq!(field, "magic");
                assert!(message.contains("bad magic"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_data() {
        let bytes = Tensor::from_f32(vec![3], vec![1.0, 2.0, 3.0]).unwrap().encode();
        match Tensor::decode(&bytes[..bytes.len() - 2]) {
            Err(Error::Format { field, message }) => {
                assert_eq!(field, "data");
                assert!(message.contains("truncated"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_dtype_and_trailing_bytes() {
        let mut bytes = Tensor::from_u8(vec![1], vec![7]).unwrap().encode();
        bytes[4] = 9;
        assert!(matches!(
            Tensor::decode(&bytes),
            Err(Error::Format { field: "dtype", .. })
        ));
        let mut bytes = Tensor::from_u8(vec![1], vec![7]).unwrap().encode();
        bytes.push(0);
        assert!(matches!(
            Tensor::decode(&bytes),
            Err(Error::Format { field: "data", .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.stf");
        let data: Vec<f32> = (0..60).map(|i| (i as f32).sin()).collect();
        let t = Tensor::from_f32(vec![3, 4, 5], data).unwrap();
        write_tensor(&t, &path).unwrap();
        assert!(read_tensor(&path).unwrap().bit_eq(&t));
    }

    #[test]
    fn missing_parent_is_io_error() {
        let t = Tensor::from_u8(vec![1], vec![1]).unwrap();
        let err = write_tensor(&t, "/nonexistent-dir/for/sure/t.stf").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        prop::collection::vec(1usize..5, 1..4).prop_flat_map(|shape| {
            let n: usize = shape.iter().product();
            prop_oneof![
                prop::collection::vec(any::<u32>(), n).prop_map({
                    let shape = shape.clone();
                    move |bits| {
                        let data = bits.into_iter().map(f32::from_bits).collect();
                        Tensor::from_f32(shape.clone(), data).unwrap()
                    }
                }),
                prop::collection::vec(any::<u8>(), n)
                    .prop_map(move |data| Tensor::from_u8(shape.clone(), data).unwrap()),
            ]
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(t in arb_tensor()) {
            let back = Tensor::decode(&t.encode()).unwrap();
            prop_assert!(back.bit_eq(&t));
        }

        #[test]
        fn size_disagreement_is_rejected(t in arb_tensor(), cut in 1usize..8, extra in 1usize..8) {
            let bytes = t.encode();
            let cut = cut.min(bytes.len() - 6);
            prop_assert!(Tensor::decode(&bytes[..bytes.len() - cut]).is_err());
            let mut longer = bytes.clone();
            longer.extend(std::iter::repeat_n(0u8, extra));
            prop_assert!(Tensor::decode(&longer).is_err());
        }
    }
}
