//! The IDX tensor format: two zero bytes, a type code, a dimension count,
//! big-endian u32 dimensions, then big-endian values.

use std::path::Path;

use crate::error::{Result, RmlError};

#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    U8(Vec<u8>),
    I8(Vec<i8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl IdxData {
    fn type_code(&self) -> u8 {
        match self {
            IdxData::U8(_) => 0x08,
            IdxData::I8(_) => 0x09,
            IdxData::I16(_) => 0x0B,
            IdxData::I32(_) => 0x0C,
            IdxData::F32(_) => 0x0D,
            IdxData::F64(_) => 0x0E,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            IdxData::U8(v) => v.len(),
            IdxData::I8(v) => v.len(),
            IdxData::I16(v) => v.len(),
            IdxData::I32(v) => v.len(),
            IdxData::F32(v) => v.len(),
            IdxData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: IdxData,
}

impl IdxTensor {
    pub fn new(dims: Vec<usize>, data: IdxData) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(RmlError::Input(format!(
                "IDX dims {dims:?} do not hold {} values",
                data.len()
            )));
        }
        if dims.len() > u8::MAX as usize || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(RmlError::Input("IDX dims exceed the header range".into()));
        }
        Ok(IdxTensor { dims, data })
    }

    /// Values widened to f64; u8 payloads are scaled to `[0, 1]`.
    pub fn to_unit_f64(&self) -> Vec<f64> {
        match &self.data {
            IdxData::U8(v) => v.iter().map(|&b| b as f64 / 255.0).collect(),
            IdxData::I8(v) => v.iter().map(|&b| b as f64).collect(),
            IdxData::I16(v) => v.iter().map(|&b| b as f64).collect(),
            IdxData::I32(v) => v.iter().map(|&b| b as f64).collect(),
            IdxData::F32(v) => v.iter().map(|&b| b as f64).collect(),
            IdxData::F64(v) => v.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0, 0, self.data.type_code(), self.dims.len() as u8];
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        match &self.data {
            IdxData::U8(v) => out.extend_from_slice(v),
            IdxData::I8(v) => out.extend(v.iter().map(|&b| b as u8)),
            IdxData::I16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            IdxData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            IdxData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            IdxData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, message: String| RmlError::Format {
            offset: offset as u64,
            message,
        };
        if bytes.len() < 4 {
            return Err(fail(bytes.len(), "truncated IDX header".into()));
        }
        if bytes[0] != 0 || bytes[1] != 0 {
            return Err(fail(0, format!("bad IDX magic {:02x}{:02x}", bytes[0], bytes[1])));
        }
        let width = match bytes[2] {
            0x08 | 0x09 => 1,
            0x0B => 2,
            0x0C | 0x0D => 4,
            0x0E => 8,
            t => return Err(fail(2, format!("unknown IDX type code 0x{t:02x}"))),
        };
        let ndim = bytes[3] as usize;
        let header = 4 + 4 * ndim;
        if bytes.len() < header {
            return Err(fail(bytes.len(), format!("truncated IDX header: {ndim} dims expected")));
        }
        let dims: Vec<usize> = bytes[4..header]
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| fail(4, "IDX dims overflow".into()))?;
        let need = count
            .checked_mul(width)
            .and_then(|n| n.checked_add(header))
            .ok_or_else(|| fail(4, "IDX dims overflow".into()))?;
        if bytes.len() < need {
            return Err(fail(
                bytes.len(),
                format!("truncated IDX payload: {need} bytes expected"),
            ));
        }
        if bytes.len() > need {
            return Err(fail(need, "trailing bytes after IDX payload".into()));
        }
        let body = &bytes[header..];
        let data = match bytes[2] {
            0x08 => IdxData::U8(body.to_vec()),
            0x09 => IdxData::I8(body.iter().map(|&b| b as i8).collect()),
            0x0B => IdxData::I16(body.chunks_exact(2).map(|c| i16::from_be_bytes([c[0], c[1]])).collect()),
            0x0C => IdxData::I32(
                body.chunks_exact(4)
                    .map(|c| i32::from_be_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            0x0D => IdxData::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_be_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            _ => IdxData::F64(
                body.chunks_exact(8)
                    .map(|c| f64::from_be_bytes(c.try_into().expect("8-byte chunk")))
                    .collect(),
            ),
        };
        Ok(IdxTensor { dims, data })
    }
}

pub fn read_idx(path: &Path) -> Result<IdxTensor> {
    let bytes = std::fs::read(path).map_err(|e| RmlError::io(path, e))?;
    IdxTensor::from_bytes(&bytes)
}

pub fn write_idx(tensor: &IdxTensor, path: &Path) -> Result<()> {
    std::fs::write(path, tensor.to_bytes()).map_err(|e| RmlError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u8_round_trip_is_byte_identical() {
        let t = IdxTensor::new(vec![3, 4, 5], IdxData::U8((0..60).collect())).unwrap();
        let bytes = t.to_bytes();
        let back = IdxTensor::from_bytes(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn every_type_round_trips() {
        for data in [
            IdxData::I8(vec![-3, 4]),
            IdxData::I16(vec![-300, 12]),
            IdxData::I32(vec![-70000, 5]),
            IdxData::F32(vec![0.25, -1.5]),
            IdxData::F64(vec![1e-300, 0.1]),
        ] {
            let t = IdxTensor::new(vec![2], data).unwrap();
            assert_eq!(IdxTensor::from_bytes(&t.to_bytes()).unwrap(), t);
        }
    }

    #[test]
    fn u8_scales_to_unit_interval() {
        let t = IdxTensor::new(vec![2], IdxData::U8(vec![0, 255])).unwrap();
        assert_eq!(t.to_unit_f64(), vec![0.0, 1.0]);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let bad_magic = [1u8, 0, 8, 1, 0, 0, 0, 0];
        match IdxTensor::from_bytes(&bad_magic).unwrap_err() {
            RmlError::Format { offset, .. } => assert_eq!(offset, 0),
            e => panic!("{e}"),
        }
        assert!(IdxTensor::from_bytes(&[0, 0, 0, 0, 0, 0, 0, 0]).is_err());
        let mut t = IdxTensor::new(vec![4], IdxData::U8(vec![1, 2, 3, 4])).unwrap().to_bytes();
        t.pop();
        match IdxTensor::from_bytes(&t).unwrap_err() {
            RmlError::Format { offset, .. } => assert_eq!(offset, 11),
            e => panic!("{e}"),
        }
    }
}
