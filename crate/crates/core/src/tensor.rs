//! Dense row-major tensors and the TEN1 container format.
//!
//! TEN1 is the on-disk layout for every tensor artifact (dataset splits,
//! checkpoint weights, heatmaps): magic `TEN1`, a u8 rank, little-endian
//! u32 extents, then the payload — little-endian f32 for real-valued
//! tensors, raw u8 for masks and labels. The payload kind is fixed by the
//! artifact role; readers verify it against the byte count.

use std::io::{Read, Write};

use crate::error::{Error, Result};

const TEN1_MAGIC: &[u8; 4] = b"TEN1";
const MAX_RANK: usize = 4;

/// Row-major f32 tensor of rank 1..=4.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Tensor {
        let len = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: vec![0.0; len] }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f32>) -> Result<Tensor> {
        let expect: usize = dims.iter().product();
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::Shape(format!("rank {} outside 1..=4", dims.len())));
        }
        if data.len() != expect {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Tensor { dims: dims.to_vec(), data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Reinterpret with new dims of equal element count.
    pub fn reshaped(mut self, dims: &[usize]) -> Result<Tensor> {
        let expect: usize = dims.iter().product();
        if expect != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} -> {:?}",
                self.dims, dims
            )));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    /// True when every element is finite. Summing into f64 cannot overflow
    /// from finite f32 inputs, so a single reduction detects NaN/Inf.
    pub fn all_finite(&self) -> bool {
        let sum: f64 = self.data.iter().map(|&v| v as f64).sum();
        sum.is_finite()
    }

    pub fn write_ten1<W: Write>(&self, w: &mut W) -> Result<()> {
        write_header(w, &self.dims)?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_ten1<R: Read>(r: &mut R) -> Result<Tensor> {
        let dims = read_header(r)?;
        let len: usize = dims.iter().product();
        let mut buf = vec![0u8; len * 4];
        r.read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("f32 payload truncated: {e}")))?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Tensor { dims, data })
    }
}

/// Row-major u8 tensor (masks, labels).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteTensor {
    dims: Vec<usize>,
    data: Vec<u8>,
}

impl ByteTensor {
    pub fn from_vec(dims: &[usize], data: Vec<u8>) -> Result<ByteTensor> {
        let expect: usize = dims.iter().product();
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::Shape(format!("rank {} outside 1..=4", dims.len())));
        }
        if data.len() != expect {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(ByteTensor { dims: dims.to_vec(), data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.data
    }

    pub fn write_ten1<W: Write>(&self, w: &mut W) -> Result<()> {
        write_header(w, &self.dims)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    pub fn read_ten1<R: Read>(r: &mut R) -> Result<ByteTensor> {
        let dims = read_header(r)?;
        let len: usize = dims.iter().product();
        let mut data = vec![0u8; len];
        r.read_exact(&mut data)
            .map_err(|e| Error::Format(format!("u8 payload truncated: {e}")))?;
        Ok(ByteTensor { dims, data })
    }
}

fn write_header<W: Write>(w: &mut W, dims: &[usize]) -> Result<()> {
    w.write_all(TEN1_MAGIC)?;
    w.write_all(&[dims.len() as u8])?;
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Shape(format!("extent {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("missing TEN1 magic: {e}")))?;
    if &magic != TEN1_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected TEN1")));
    }
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)?;
    let rank = rank[0] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("rank {rank} outside 1..=4")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        dims.push(u32::from_le_bytes(b) as usize);
    }
    Ok(dims)
}

/// Read exactly one f32 TEN1 tensor from a file.
pub fn read_tensor_file(path: &std::path::Path) -> Result<Tensor> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    Tensor::read_ten1(&mut f)
}

/// Read exactly one u8 TEN1 tensor from a file.
pub fn read_byte_tensor_file(path: &std::path::Path) -> Result<ByteTensor> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    ByteTensor::read_ten1(&mut f)
}

pub fn write_tensor_file(path: &std::path::Path, t: &Tensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    t.write_ten1(&mut f)
}

pub fn write_byte_tensor_file(path: &std::path::Path, t: &ByteTensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    t.write_ten1(&mut f)
}
