use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparseocc_core::head::{
    assemble_occupancy, decode_queries, occupancy_filter, reconstruct_dense_mask, BinaryClassifier, ClassHead, QuerySet,
};
use sparseocc_core::linalg::Matrix;
use sparseocc_core::{Coord, GridShape, SparseVoxelTensor};

fn tensor(rng: &mut ChaCha8Rng, shape: GridShape, c: usize, density: f64) -> SparseVoxelTensor {
    let coords: Vec<Coord> = (0..shape.volume()).filter(|_| rng.gen_bool(density)).map(|i| shape.coord_of(i)).collect();
    let feats = (0..coords.len() * c).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    SparseVoxelTensor::new(shape, c, coords, feats).unwrap()
}

fn classifier(rng: &mut ChaCha8Rng, c: usize) -> BinaryClassifier {
    BinaryClassifier { weights: (0..c).map(|_| rng.gen_range(-1.0f32..1.0)).collect(), bias: rng.gen_range(-0.5..0.5) }
}

#[test]
fn raising_the_threshold_shrinks_the_kept_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..30 {
        let shape = GridShape::new(8, 8, 4).unwrap();
        let c = rng.gen_range(1..9);
        let t = tensor(&mut rng, shape, c, 0.5);
        let cls = classifier(&mut rng, c);
        let token = vec![0.0; c];
        let mut prev: Option<Vec<Coord>> = None;
        for th in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let f = occupancy_filter(&t, &cls, &token, th).unwrap();
            let kept = f.kept.coords().to_vec();
            assert!(kept.iter().all(|&k| t.row_of(k).is_some()));
            if let Some(p) = &prev {
                assert!(kept.iter().all(|k| p.contains(k)), "threshold {th} kept a new voxel");
            }
            assert_eq!(f.candidates, t.coords());
            prev = Some(kept);
        }
    }
}

#[test]
fn scatter_then_gather_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let shape = GridShape::new(rng.gen_range(1..9), rng.gen_range(1..9), rng.gen_range(1..5)).unwrap();
        let c = rng.gen_range(1..9);
        let n_q = rng.gen_range(1..6);
        let density = rng.gen_range(0.0..1.0);
        let t = tensor(&mut rng, shape, c, density);
        let token: Vec<f32> = (0..c).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let f = occupancy_filter(&t, &classifier(&mut rng, c), &token, 0.5).unwrap();
        let q = QuerySet::new(Matrix::from_vec(n_q, c, (0..n_q * c).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap());
        let head = ClassHead { weights: Matrix::zeros(c, 4), bias: vec![0.0; 4] };
        let (pred, _) = decode_queries(&q, &f, &head).unwrap();
        let dense = reconstruct_dense_mask(&pred, shape).unwrap();
        for qi in 0..n_q {
            for (i, &k) in pred.coords.iter().enumerate() {
                assert_eq!(dense.at(qi, k), pred.occ_masks.get(qi, i));
            }
            let empty = dense.query(qi).iter().filter(|&&v| v == pred.empty_mask[qi]).count();
            assert!(empty >= shape.volume() - pred.coords.len());
        }
    }
}

#[test]
fn assembled_labels_stay_inside_the_kept_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let shape = GridShape::new(6, 6, 3).unwrap();
    let c = 4;
    let t = tensor(&mut rng, shape, c, 0.5);
    let f = occupancy_filter(&t, &classifier(&mut rng, c), &vec![0.0; c], 0.5).unwrap();
    let q = QuerySet::new(Matrix::from_vec(3, c, (0..3 * c).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap());
    let head = ClassHead { weights: Matrix::from_vec(c, 4, (0..c * 4).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap(), bias: vec![0.0; 4] };
    let (pred, _) = decode_queries(&q, &f, &head).unwrap();
    let grid = assemble_occupancy(&pred, shape).unwrap();
    assert_eq!(grid.occupied(), f.kept_len());
    for lin in 0..shape.volume() {
        let p = shape.coord_of(lin);
        assert_eq!(grid.get(p) != 0, f.kept.row_of(p).is_some());
        assert!(grid.get(p) <= 3);
    }
}
