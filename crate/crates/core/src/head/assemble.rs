use alloc::vec;
use alloc::vec::Vec;

use super::decode::MaskPrediction;
use crate::error::{Error, Result};
use crate::flops::MacCount;
use crate::linalg::{sigmoid, softmax_in_place};
use crate::tensor::{Coord, GridShape};

/// Per-voxel semantic labels; 0 is empty, `1..=classes` are semantic classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyGrid {
    pub shape: GridShape,
    pub labels: Vec<u16>,
}

impl OccupancyGrid {
    pub fn empty(shape: GridShape) -> Self {
        Self { shape, labels: vec![0; shape.volume()] }
    }

    /// Validates length and that every label is at most `classes`.
    pub fn new(shape: GridShape, labels: Vec<u16>, classes: usize) -> Result<Self> {
        if labels.len() != shape.volume() {
            return Err(Error::LengthMismatch { what: "labels", expected: shape.volume(), actual: labels.len() });
        }
        if labels.iter().any(|&l| l as usize > classes) {
            return Err(Error::InvalidConfig("label exceeds the class count"));
        }
        Ok(Self { shape, labels })
    }

    pub fn get(&self, c: Coord) -> u16 {
        self.labels[self.shape.linear(c)]
    }

    pub fn occupied(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

/// Labels each kept voxel with the class maximizing
/// `sum_q softmax(class_logits)[q, c] * sigmoid(mask[q, v])`; the no-object
/// slot never wins and ties go to the smaller class. Voxels outside the kept
/// set are 0.
pub fn assemble_occupancy(pred: &MaskPrediction, shape: GridShape) -> Result<OccupancyGrid> {
    if let Some(&coord) = pred.coords.iter().find(|c| !shape.contains(**c)) {
        return Err(Error::CoordOutOfBounds { coord, shape });
    }
    let n_q = pred.num_queries();
    let classes = pred.num_classes();
    let mut probs = pred.class_logits.clone();
    for q in 0..n_q {
        softmax_in_place(probs.row_mut(q));
    }
    let mut grid = OccupancyGrid::empty(shape);
    if classes == 0 {
        return Ok(grid);
    }
    let mut score = vec![0.0f32; classes];
    for (i, &c) in pred.coords.iter().enumerate() {
        score.fill(0.0);
        for q in 0..n_q {
            let m = sigmoid(pred.occ_masks.get(q, i));
            for (s, p) in score.iter_mut().zip(&probs.row(q)[..classes]) {
                *s += p * m;
            }
        }
        let mut best = 0;
        for k in 1..classes {
            if score[k] > score[best] {
                best = k;
            }
        }
        grid.labels[shape.linear(c)] = best as u16 + 1;
    }
    Ok(grid)
}

/// Assembly cost: one MAC per (kept voxel, query, class); dense over every voxel.
pub fn assembly_macs(pred: &MaskPrediction, shape: GridShape) -> MacCount {
    let per = (pred.num_queries() * pred.num_classes()) as u64;
    MacCount::new(pred.coords.len() as u64 * per, shape.volume() as u64 * per)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn pred(coords: Vec<Coord>, masks: Matrix, logits: Matrix) -> MaskPrediction {
        let n_q = masks.rows();
        MaskPrediction {
            occ_masks: masks,
            empty_mask: vec![0.0; n_q],
            class_logits: logits,
            coords,
            shape: GridShape::new(2, 2, 2).unwrap(),
        }
    }

    #[test]
    fn no_kept_voxels_is_all_empty() {
        let sh = GridShape::new(2, 2, 2).unwrap();
        let p = pred(Vec::new(), Matrix::zeros(2, 0), Matrix::zeros(2, 4));
        assert_eq!(assemble_occupancy(&p, sh).unwrap(), OccupancyGrid::empty(sh));
    }

    #[test]
    fn one_hot_query_labels_its_voxel() {
        let sh = GridShape::new(2, 2, 2).unwrap();
        // Class slots: 3 semantic + no-object; query prefers class index 1 (label 2).
        let logits = Matrix::from_vec(1, 4, vec![-20.0, 20.0, -20.0, -20.0]).unwrap();
        let masks = Matrix::from_vec(1, 2, vec![20.0, -20.0]).unwrap();
        let g = assemble_occupancy(&pred(vec![[0, 1, 0], [1, 1, 1]], masks, logits), sh).unwrap();
        assert_eq!(g.get([0, 1, 0]), 2);
        assert_eq!(g.occupied(), 2);
        assert_eq!(g.get([0, 0, 0]), 0);
    }

    #[test]
    fn ties_go_to_smaller_class() {
        let sh = GridShape::new(2, 2, 2).unwrap();
        let p = pred(vec![[1, 0, 0]], Matrix::zeros(1, 1), Matrix::zeros(1, 3));
        assert_eq!(assemble_occupancy(&p, sh).unwrap().get([1, 0, 0]), 1);
    }

    #[test]
    fn label_range_checked() {
        let sh = GridShape::new(1, 1, 2).unwrap();
        assert!(OccupancyGrid::new(sh, vec![0, 3], 2).is_err());
        assert!(OccupancyGrid::new(sh, vec![0, 2], 2).is_ok());
        assert!(OccupancyGrid::new(sh, vec![0], 2).is_err());
    }
}
