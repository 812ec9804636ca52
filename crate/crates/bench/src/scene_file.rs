//! SVOX scene files.
//!
//! Little-endian: magic `SVOX`, version `u32`, `h w d C` as `u32`, `N` as
//! `u64`, then `N` coordinates (`x y z` as `u32`) and `N x C` `f32`
//! features, row-major. Label grids use the same layout with `C = 1`, one
//! record per non-empty voxel holding the class as a float.

use std::path::Path;

use sparseocc_core::head::OccupancyGrid;
use sparseocc_core::{Coord, GridShape, SparseVoxelTensor};

use crate::error::BenchError;

pub const MAGIC: [u8; 4] = *b"SVOX";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 16 + 8;

pub fn encode(t: &SparseVoxelTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + t.len() * 12 + t.features().len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let s = t.shape();
    for v in [s.h, s.w, s.d, t.channels()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(t.len() as u64).to_le_bytes());
    for c in t.coords() {
        for v in c {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for f in t.features() {
        out.extend_from_slice(&f.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<SparseVoxelTensor, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic, expected SVOX".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let (h, w, d, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let n = usize::try_from(r.u64()?).map_err(|_| "record count overflows")?;
    let expected = n
        .checked_mul(12)
        .and_then(|a| n.checked_mul(c).and_then(|b| b.checked_mul(4)).and_then(|b| a.checked_add(b)))
        .ok_or("record count overflows")?;
    if bytes.len() - r.pos != expected {
        return Err(format!("expected {expected} payload bytes, found {}", bytes.len() - r.pos));
    }
    let shape = GridShape::new(h, w, d).map_err(|e| e.to_string())?;
    let mut coords: Vec<Coord> = Vec::with_capacity(n);
    for _ in 0..n {
        coords.push([r.u32()?, r.u32()?, r.u32()?]);
    }
    let feats = r.take(n * c * 4)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
    SparseVoxelTensor::new(shape, c, coords, feats).map_err(|e| e.to_string())
}

pub fn write_scene(path: &Path, t: &SparseVoxelTensor) -> Result<(), BenchError> {
    std::fs::write(path, encode(t)).map_err(|e| BenchError::io(path, e))
}

pub fn read_scene(path: &Path) -> Result<SparseVoxelTensor, BenchError> {
    let bytes = std::fs::read(path).map_err(|e| BenchError::io(path, e))?;
    decode(&bytes).map_err(|msg| BenchError::Format { path: path.into(), msg })
}

/// Non-empty voxels as a one-channel tensor.
pub fn labels_to_tensor(grid: &OccupancyGrid) -> SparseVoxelTensor {
    let mut coords = Vec::new();
    let mut feats = Vec::new();
    for (i, &l) in grid.labels.iter().enumerate() {
        if l != 0 {
            coords.push(grid.shape.coord_of(i));
            feats.push(l as f32);
        }
    }
    SparseVoxelTensor::new(grid.shape, 1, coords, feats).expect("coordinates come from the grid")
}

pub fn tensor_to_labels(t: &SparseVoxelTensor, classes: usize) -> Result<OccupancyGrid, String> {
    if t.channels() != 1 {
        return Err(format!("label files have one channel, found {}", t.channels()));
    }
    let mut grid = OccupancyGrid::empty(t.shape());
    for (&c, &v) in t.coords().iter().zip(t.features()) {
        if v.fract() != 0.0 || v < 1.0 || v as usize > classes {
            return Err(format!("label {v} at {c:?} is not a class in 1..={classes}"));
        }
        grid.labels[t.shape().linear(c)] = v as u16;
    }
    Ok(grid)
}

pub fn write_labels(path: &Path, grid: &OccupancyGrid) -> Result<(), BenchError> {
    write_scene(path, &labels_to_tensor(grid))
}

pub fn read_labels(path: &Path, classes: usize) -> Result<OccupancyGrid, BenchError> {
    let t = read_scene(path)?;
    tensor_to_labels(&t, classes).map_err(|msg| BenchError::Format { path: path.into(), msg })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor() -> SparseVoxelTensor {
        let sh = GridShape::new(3, 4, 5).unwrap();
        SparseVoxelTensor::new(sh, 2, vec![[2, 3, 4], [0, 1, 0]], vec![1.5, -2.0, f32::MIN_POSITIVE, 7.25]).unwrap()
    }

    #[test]
    fn round_trip() {
        let t = tensor();
        let bytes = encode(&t);
        assert_eq!(&bytes[..4], b"SVOX");
        assert_eq!(bytes.len(), HEADER_LEN + 2 * 12 + 4 * 4);
        assert_eq!(decode(&bytes).unwrap(), t);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&tensor());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode(&bad).is_err());
        // Coordinate outside the grid.
        let mut bad = bytes;
        bad[HEADER_LEN] = 200;
        assert!(decode(&bad).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let sh = GridShape::new(2, 2, 2).unwrap();
        let g = OccupancyGrid::new(sh, vec![0, 3, 0, 1, 0, 0, 2, 0], 3).unwrap();
        let t = labels_to_tensor(&g);
        assert_eq!(t.len(), 3);
        assert_eq!(tensor_to_labels(&t, 3).unwrap(), g);
        assert!(tensor_to_labels(&t, 2).is_err());
    }
}
