//! Binary layout: magic `BTNS`, u32 rank, i32 flux (n, 2sz), then per leg a
//! direction byte, u32 sector count and `(i32 n, i32 2sz, u32 dim)` triples;
//! then u64 block count and per block its u32 sector ids followed by
//! little-endian f64 values. Blocks appear in canonical key order.

use std::io::{Read, Write};

use super::{BlockTensor, Direction, Index, QNum, Result, TensorError};

const MAGIC: &[u8; 4] = b"BTNS";

fn io_err(e: std::io::Error) -> TensorError {
    TensorError::Io(e.to_string())
}

pub fn write_tensor<W: Write>(t: &BlockTensor, w: &mut W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    buf.extend_from_slice(&t.flux().n.to_le_bytes());
    buf.extend_from_slice(&t.flux().two_sz.to_le_bytes());
    for idx in t.indices() {
        buf.push(match idx.dir() {
            Direction::In => 0,
            Direction::Out => 1,
        });
        buf.extend_from_slice(&(idx.n_sectors() as u32).to_le_bytes());
        for &(q, d) in idx.sectors() {
            buf.extend_from_slice(&q.n.to_le_bytes());
            buf.extend_from_slice(&q.two_sz.to_le_bytes());
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    buf.extend_from_slice(&(t.n_blocks() as u64).to_le_bytes());
    for (k, b) in t.blocks() {
        for &s in k {
            buf.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for x in b {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err)
}

struct Cursor<'a, R: Read> {
    r: &'a mut R,
}

impl<R: Read> Cursor<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.r.read_exact(&mut b).map_err(io_err)?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<BlockTensor> {
    let mut c = Cursor { r };
    if &c.bytes::<4>()? != MAGIC {
        return Err(TensorError::Malformed("bad magic".into()));
    }
    let rank = c.u32()? as usize;
    let flux = QNum::new(c.i32()?, c.i32()?);
    let mut indices = Vec::with_capacity(rank);
    for _ in 0..rank {
        let dir = match c.bytes::<1>()?[0] {
            0 => Direction::In,
            1 => Direction::Out,
            x => return Err(TensorError::Malformed(format!("direction byte {x}"))),
        };
        let ns = c.u32()? as usize;
        let mut sectors = Vec::with_capacity(ns);
        for _ in 0..ns {
            let q = QNum::new(c.i32()?, c.i32()?);
            sectors.push((q, c.u32()? as usize));
        }
        let idx = Index::new(dir, sectors.clone())?;
        if idx.sectors() != sectors.as_slice() {
            return Err(TensorError::Malformed("sectors not in canonical order".into()));
        }
        indices.push(idx);
    }
    let nb = c.u64()? as usize;
    let mut t = BlockTensor::new(indices, flux);
    for _ in 0..nb {
        let mut key = Vec::with_capacity(rank);
        for leg in 0..rank {
            let s = c.u32()? as usize;
            if s >= t.index(leg).n_sectors() {
                return Err(TensorError::Malformed(format!("sector {s} out of range")));
            }
            key.push(s);
        }
        let n = t.block_len(&key);
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(c.f64()?);
        }
        t.insert_block(key, data)?;
    }
    Ok(t)
}
