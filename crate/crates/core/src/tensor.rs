//! Bounded voxel grids and the COO sparse tensor.
//!
//! Active voxels are always kept in lexicographic `(x, y, z)` order. Dense
//! volumes use the matching row-major layout `((x * w + y) * d + z) * C + c`,
//! so iterating a dense volume and a sparse tensor visit voxels in the same
//! order.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Integer voxel coordinate `[x, y, z]`.
pub type Coord = [u32; 3];

/// Largest supported extent along any axis (coordinates pack into 21 bits).
pub const MAX_EXTENT: usize = 1 << 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub h: usize,
    pub w: usize,
    pub d: usize,
}

impl GridShape {
    pub fn new(h: usize, w: usize, d: usize) -> Result<Self> {
        if h == 0 || w == 0 || d == 0 {
            return Err(Error::EmptyDimension("grid extent"));
        }
        if h > MAX_EXTENT || w > MAX_EXTENT || d > MAX_EXTENT {
            return Err(Error::TooLarge("grid extent"));
        }
        Ok(Self { h, w, d })
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.h, self.w, self.d]
    }

    pub fn volume(&self) -> usize {
        self.h * self.w * self.d
    }

    /// True for a grid whose height axis has been collapsed.
    pub fn is_flat(&self) -> bool {
        self.d == 1
    }

    pub fn contains(&self, c: Coord) -> bool {
        (c[0] as usize) < self.h && (c[1] as usize) < self.w && (c[2] as usize) < self.d
    }

    /// Row-major linear index, matching the canonical coordinate order.
    pub fn linear(&self, c: Coord) -> usize {
        (c[0] as usize * self.w + c[1] as usize) * self.d + c[2] as usize
    }

    pub fn coord_of(&self, linear: usize) -> Coord {
        let z = linear % self.d;
        let y = (linear / self.d) % self.w;
        let x = linear / (self.d * self.w);
        [x as u32, y as u32, z as u32]
    }

    /// Shape after a strided convolution with "same" padding: ceiling division per axis.
    pub fn strided(&self, stride: [usize; 3]) -> GridShape {
        GridShape {
            h: self.h.div_ceil(stride[0]),
            w: self.w.div_ceil(stride[1]),
            d: self.d.div_ceil(stride[2]),
        }
    }

    pub fn flattened(&self) -> GridShape {
        GridShape { h: self.h, w: self.w, d: 1 }
    }

    /// Offset `c + delta`, or `None` if it leaves the grid.
    pub fn offset(&self, c: Coord, delta: [i32; 3]) -> Option<Coord> {
        let mut out = [0u32; 3];
        for a in 0..3 {
            let v = c[a] as i64 + delta[a] as i64;
            if v < 0 || v >= self.dims()[a] as i64 {
                return None;
            }
            out[a] = v as u32;
        }
        Some(out)
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.d)
    }
}

/// Exact open-addressing map from coordinate to row.
///
/// Keys pack `(x, y, z)` into 21 bits each and are scrambled with the
/// splitmix64 finalizer to pick a bucket. The packed key is stored alongside
/// the row, so lookups never report a false hit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoordIndex {
    mask: usize,
    slots: Vec<(u64, u32)>,
    len: usize,
}

const EMPTY_KEY: u64 = u64::MAX;
const AXIS_BITS: u32 = 21;

fn pack(c: Coord) -> u64 {
    ((c[0] as u64) << (2 * AXIS_BITS)) | ((c[1] as u64) << AXIS_BITS) | c[2] as u64
}

fn mix(mut k: u64) -> u64 {
    k = (k ^ (k >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    k = (k ^ (k >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    k ^ (k >> 31)
}

impl CoordIndex {
    pub fn with_capacity(n: usize) -> Self {
        let buckets = (n.max(4) * 2).next_power_of_two();
        Self { mask: buckets - 1, slots: vec![(EMPTY_KEY, 0); buckets], len: 0 }
    }

    /// Inserts `c -> row`, returning the previous row if `c` was present.
    pub fn insert(&mut self, c: Coord, row: u32) -> Option<u32> {
        if (self.len + 1) * 2 > self.slots.len() {
            self.grow();
        }
        let key = pack(c);
        let mut i = mix(key) as usize & self.mask;
        loop {
            let slot = &mut self.slots[i];
            if slot.0 == EMPTY_KEY {
                *slot = (key, row);
                self.len += 1;
                return None;
            }
            if slot.0 == key {
                let prev = slot.1;
                slot.1 = row;
                return Some(prev);
            }
            i = (i + 1) & self.mask;
        }
    }

    pub fn get(&self, c: Coord) -> Option<u32> {
        let key = pack(c);
        let mut i = mix(key) as usize & self.mask;
        loop {
            let slot = self.slots[i];
            if slot.0 == EMPTY_KEY {
                return None;
            }
            if slot.0 == key {
                return Some(slot.1);
            }
            i = (i + 1) & self.mask;
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn grow(&mut self) {
        let old = core::mem::take(&mut self.slots);
        self.mask = old.len() * 2 - 1;
        self.slots = vec![(EMPTY_KEY, 0); old.len() * 2];
        self.len = 0;
        for (key, row) in old {
            if key != EMPTY_KEY {
                let c = [
                    (key >> (2 * AXIS_BITS)) as u32,
                    ((key >> AXIS_BITS) & ((1 << AXIS_BITS) - 1)) as u32,
                    (key & ((1 << AXIS_BITS) - 1)) as u32,
                ];
                self.insert(c, row);
            }
        }
    }
}

/// COO sparse voxel tensor: active coordinates plus an `N x C` feature matrix.
///
/// Immutable once built; coordinates are distinct, in bounds and sorted.
/// Activity is positional, so an active voxel may carry an all-zero row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelTensor {
    shape: GridShape,
    channels: usize,
    coords: Vec<Coord>,
    features: Vec<f32>,
    index: CoordIndex,
}

impl SparseVoxelTensor {
    /// Builds a tensor from unordered parts, sorting rows into canonical order.
    pub fn new(shape: GridShape, channels: usize, coords: Vec<Coord>, features: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::EmptyDimension("channels"));
        }
        if features.len() != coords.len() * channels {
            return Err(Error::LengthMismatch {
                what: "features",
                expected: coords.len() * channels,
                actual: features.len(),
            });
        }
        if let Some(&coord) = coords.iter().find(|c| !shape.contains(**c)) {
            return Err(Error::CoordOutOfBounds { coord, shape });
        }
        if coords.len() > u32::MAX as usize {
            return Err(Error::TooLarge("active voxel count"));
        }
        let sorted = coords.windows(2).all(|w| w[0] < w[1]);
        let (coords, features) = if sorted {
            (coords, features)
        } else {
            let mut order: Vec<usize> = (0..coords.len()).collect();
            order.sort_unstable_by_key(|&i| coords[i]);
            if let Some(w) = order.windows(2).find(|w| coords[w[0]] == coords[w[1]]) {
                return Err(Error::DuplicateCoord(coords[w[0]]));
            }
            let mut f = Vec::with_capacity(features.len());
            for &i in &order {
                f.extend_from_slice(&features[i * channels..(i + 1) * channels]);
            }
            (order.iter().map(|&i| coords[i]).collect(), f)
        };
        Ok(Self::from_sorted(shape, channels, coords, features))
    }

    /// Caller guarantees sorted, distinct, in-bounds coordinates.
    pub(crate) fn from_sorted(shape: GridShape, channels: usize, coords: Vec<Coord>, features: Vec<f32>) -> Self {
        debug_assert!(coords.windows(2).all(|w| w[0] < w[1]));
        debug_assert_eq!(features.len(), coords.len() * channels);
        let mut index = CoordIndex::with_capacity(coords.len());
        for (row, &c) in coords.iter().enumerate() {
            index.insert(c, row as u32);
        }
        Self { shape, channels, coords, features, index }
    }

    pub fn empty(shape: GridShape, channels: usize) -> Result<Self> {
        Self::new(shape, channels, Vec::new(), Vec::new())
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn feature(&self, row: usize) -> &[f32] {
        &self.features[row * self.channels..(row + 1) * self.channels]
    }

    pub fn row_of(&self, c: Coord) -> Option<usize> {
        self.index.get(c).map(|r| r as usize)
    }

    pub fn index(&self) -> &CoordIndex {
        &self.index
    }

    /// Fraction of grid cells that are active.
    pub fn occupancy(&self) -> f64 {
        self.len() as f64 / self.shape.volume() as f64
    }

    /// Same active set, new features.
    pub fn with_features(&self, channels: usize, features: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::EmptyDimension("channels"));
        }
        if features.len() != self.len() * channels {
            return Err(Error::LengthMismatch {
                what: "features",
                expected: self.len() * channels,
                actual: features.len(),
            });
        }
        Ok(Self {
            shape: self.shape,
            channels,
            coords: self.coords.clone(),
            features,
            index: self.index.clone(),
        })
    }

    /// Keeps the rows for which `keep(row)` is true, preserving order.
    pub fn filter_rows(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let mut coords = Vec::new();
        let mut features = Vec::new();
        for row in 0..self.len() {
            if keep(row) {
                coords.push(self.coords[row]);
                features.extend_from_slice(self.feature(row));
            }
        }
        Self::from_sorted(self.shape, self.channels, coords, features)
    }

    /// Approximate heap footprint of coordinates and features.
    pub fn byte_size(&self) -> usize {
        self.coords.len() * core::mem::size_of::<Coord>() + self.features.len() * 4
    }

    /// Sums features over the height axis onto a `h x w x 1` grid.
    pub fn collapse_height(&self) -> Self {
        let shape = self.shape.flattened();
        let c = self.channels;
        let mut coords: Vec<Coord> = Vec::new();
        let mut features: Vec<f32> = Vec::new();
        // Canonical order groups every (x, y) column contiguously.
        for row in 0..self.len() {
            let [x, y, _] = self.coords[row];
            if coords.last().map(|l| l[0] == x && l[1] == y) != Some(true) {
                coords.push([x, y, 0]);
                features.extend(core::iter::repeat_n(0.0, c));
            }
            let base = features.len() - c;
            for (dst, src) in features[base..].iter_mut().zip(self.feature(row)) {
                *dst += *src;
            }
        }
        Self::from_sorted(shape, c, coords, features)
    }
}

/// Dense `h x w x d x C` feature volume.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVolume {
    shape: GridShape,
    channels: usize,
    values: Vec<f32>,
}

impl DenseVolume {
    pub fn zeros(shape: GridShape, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::EmptyDimension("channels"));
        }
        Ok(Self { shape, channels, values: vec![0.0; shape.volume() * channels] })
    }

    pub fn from_values(shape: GridShape, channels: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::EmptyDimension("channels"));
        }
        if values.len() != shape.volume() * channels {
            return Err(Error::LengthMismatch {
                what: "dense values",
                expected: shape.volume() * channels,
                actual: values.len(),
            });
        }
        Ok(Self { shape, channels, values })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn at(&self, c: Coord) -> &[f32] {
        let i = self.shape.linear(c) * self.channels;
        &self.values[i..i + self.channels]
    }

    pub fn at_mut(&mut self, c: Coord) -> &mut [f32] {
        let i = self.shape.linear(c) * self.channels;
        &mut self.values[i..i + self.channels]
    }
}

/// Gathers the voxels whose feature vector satisfies `active`.
pub fn sparsify(dense: &DenseVolume, mut active: impl FnMut(&[f32]) -> bool) -> SparseVoxelTensor {
    let c = dense.channels;
    let mut coords = Vec::new();
    let mut features = Vec::new();
    for (linear, f) in dense.values.chunks_exact(c).enumerate() {
        if active(f) {
            coords.push(dense.shape.coord_of(linear));
            features.extend_from_slice(f);
        }
    }
    SparseVoxelTensor::from_sorted(dense.shape, c, coords, features)
}

/// [`sparsify`] with the "any channel nonzero" predicate.
pub fn sparsify_nonzero(dense: &DenseVolume) -> SparseVoxelTensor {
    sparsify(dense, |f| f.iter().any(|&v| v != 0.0))
}

pub fn densify(sparse: &SparseVoxelTensor) -> DenseVolume {
    let mut out = DenseVolume::zeros(sparse.shape, sparse.channels).expect("channels validated at construction");
    scatter_rows(sparse, &mut out);
    out
}

/// Densifies with every inactive voxel set to `fill`.
pub fn densify_with_fill(sparse: &SparseVoxelTensor, fill: &[f32]) -> Result<DenseVolume> {
    if fill.len() != sparse.channels {
        return Err(Error::ChannelMismatch { expected: sparse.channels, actual: fill.len() });
    }
    let mut values = Vec::with_capacity(sparse.shape.volume() * sparse.channels);
    for _ in 0..sparse.shape.volume() {
        values.extend_from_slice(fill);
    }
    let mut out = DenseVolume { shape: sparse.shape, channels: sparse.channels, values };
    scatter_rows(sparse, &mut out);
    Ok(out)
}

fn scatter_rows(sparse: &SparseVoxelTensor, out: &mut DenseVolume) {
    for (row, &c) in sparse.coords.iter().enumerate() {
        out.at_mut(c).copy_from_slice(sparse.feature(row));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape(h: usize, w: usize, d: usize) -> GridShape {
        GridShape::new(h, w, d).unwrap()
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(GridShape::new(0, 4, 4).is_err());
        assert!(GridShape::new(4, 4, 1).unwrap().is_flat());
    }

    #[test]
    fn all_zero_volume_sparsifies_to_empty() {
        let v = DenseVolume::zeros(shape(4, 4, 4), 3).unwrap();
        assert!(sparsify_nonzero(&v).is_empty());
    }

    #[test]
    fn impulse_sparsifies_to_single_voxel() {
        let mut v = DenseVolume::zeros(shape(4, 4, 4), 2).unwrap();
        v.at_mut([1, 2, 3])[1] = 5.0;
        let s = sparsify_nonzero(&v);
        assert_eq!(s.coords(), &[[1, 2, 3]]);
        assert_eq!(s.feature(0), &[0.0, 5.0]);
    }

    #[test]
    fn seeded_round_trip_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sh = shape(16, 16, 8);
        let mut v = DenseVolume::zeros(sh, 3).unwrap();
        for f in v.values_mut().chunks_exact_mut(3) {
            if rng.gen_bool(0.2) {
                for x in f.iter_mut() {
                    *x = rng.gen_range(-1.0..1.0);
                }
            }
        }
        let s = sparsify_nonzero(&v);
        assert!(!s.is_empty());
        assert_eq!(densify(&s), v);
    }

    #[test]
    fn densify_empty_and_impulse() {
        let sh = shape(4, 4, 4);
        assert!(densify(&SparseVoxelTensor::empty(sh, 2).unwrap()).values().iter().all(|&v| v == 0.0));
        let s = SparseVoxelTensor::new(sh, 2, vec![[0, 0, 0]], vec![1.0, 2.0]).unwrap();
        let d = densify(&s);
        assert_eq!(d.at([0, 0, 0]), &[1.0, 2.0]);
        assert_eq!(d.values().iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn densify_fill_sets_every_inactive_voxel() {
        let sh = shape(3, 3, 2);
        let s = SparseVoxelTensor::new(sh, 2, vec![[1, 1, 1], [0, 2, 0]], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let e = [-0.5, 0.25];
        let d = densify_with_fill(&s, &e).unwrap();
        for lin in 0..sh.volume() {
            let c = sh.coord_of(lin);
            match s.row_of(c) {
                Some(r) => assert_eq!(d.at(c), s.feature(r)),
                None => assert_eq!(d.at(c), &e),
            }
        }
        assert!(densify_with_fill(&s, &[1.0]).is_err());
    }

    #[test]
    fn constructor_validates_and_sorts() {
        let sh = shape(4, 4, 4);
        assert!(matches!(
            SparseVoxelTensor::new(sh, 1, vec![[4, 0, 0]], vec![1.0]),
            Err(Error::CoordOutOfBounds { .. })
        ));
        assert!(matches!(
            SparseVoxelTensor::new(sh, 1, vec![[1, 0, 0], [0, 0, 0], [1, 0, 0]], vec![1.0, 2.0, 3.0]),
            Err(Error::DuplicateCoord([1, 0, 0]))
        ));
        assert!(SparseVoxelTensor::new(sh, 0, vec![], vec![]).is_err());
        let s = SparseVoxelTensor::new(sh, 1, vec![[2, 0, 0], [0, 3, 1], [0, 3, 0]], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.coords(), &[[0, 3, 0], [0, 3, 1], [2, 0, 0]]);
        assert_eq!(s.features(), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn zero_feature_rows_stay_active() {
        let sh = shape(2, 2, 2);
        let s = SparseVoxelTensor::new(sh, 1, vec![[1, 1, 1]], vec![0.0]).unwrap();
        assert_eq!(s.len(), 1);
        assert!(sparsify_nonzero(&densify(&s)).is_empty());
    }

    #[test]
    fn collapse_height_sums_columns() {
        let sh = shape(2, 2, 3);
        let s = SparseVoxelTensor::new(sh, 1, vec![[0, 0, 0], [0, 0, 2], [1, 1, 1]], vec![1.0, 2.0, 4.0]).unwrap();
        let c = s.collapse_height();
        assert_eq!(c.shape(), shape(2, 2, 1));
        assert_eq!(c.coords(), &[[0, 0, 0], [1, 1, 0]]);
        assert_eq!(c.features(), &[3.0, 4.0]);
    }

    #[test]
    fn coord_index_survives_growth() {
        let mut idx = CoordIndex::with_capacity(1);
        for i in 0..1000u32 {
            idx.insert([i % 17, i / 17, i % 5], i);
        }
        for i in 0..1000u32 {
            assert_eq!(idx.get([i % 17, i / 17, i % 5]), Some(i));
        }
        assert_eq!(idx.get([100, 100, 100]), None);
        assert_eq!(idx.insert([0, 0, 0], 7), Some(0));
    }

    fn arb_tensor() -> impl Strategy<Value = SparseVoxelTensor> {
        (1usize..8, 1usize..8, 1usize..6, 1usize..4).prop_flat_map(|(h, w, d, c)| {
            let sh = shape(h, w, d);
            proptest::collection::btree_set(0..sh.volume(), 0..=sh.volume()).prop_flat_map(move |set| {
                let n = set.len();
                let coords: Vec<Coord> = set.into_iter().map(|l| sh.coord_of(l)).collect();
                proptest::collection::vec(0.1f32..2.0, n * c).prop_map(move |f| {
                    SparseVoxelTensor::new(sh, c, coords.clone(), f).unwrap()
                })
            })
        })
    }

    proptest! {
        #[test]
        fn sparse_dense_sparse_identity(s in arb_tensor()) {
            let back = sparsify_nonzero(&densify(&s));
            prop_assert_eq!(back.coords(), s.coords());
            prop_assert_eq!(back.features(), s.features());
        }

        #[test]
        fn index_is_consistent(s in arb_tensor()) {
            for (i, &c) in s.coords().iter().enumerate() {
                prop_assert_eq!(s.row_of(c), Some(i));
            }
            prop_assert_eq!(s.index().len(), s.len());
        }
    }
}
