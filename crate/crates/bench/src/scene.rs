//! Deterministic synthetic scenes standing in for lifted camera features.
//!
//! The world is a two-voxel ground slab plus axis-aligned boxes (small
//! car-like boxes in the interior, tall building-like boxes near the border).
//! A sensor at the grid centre casts rays; the first solid voxel each ray hits
//! and up to `thickness` further solid voxels behind it along the ray form the
//! candidate shell. Candidates are taken nearest-first until the requested
//! active fraction is reached, so density falls off with range.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparseocc_core::head::OccupancyGrid;
use sparseocc_core::{Coord, GridShape, SparseVoxelTensor};

use crate::error::BenchError;

/// Semantic classes written to the ground-truth grid.
pub const CLASS_GROUND: u16 = 1;
pub const CLASS_CAR: u16 = 2;
pub const CLASS_BUILDING: u16 = 3;

/// Absolute tolerance on the achieved active fraction.
pub const DENSITY_TOLERANCE: f64 = 0.02;

const GROUND_LAYERS: usize = 2;
const MAX_THICKNESS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub shape: GridShape,
    pub channels: usize,
    pub density: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub tensor: SparseVoxelTensor,
    /// Ground-truth labels of the whole world, including unobserved solids.
    pub labels: OccupancyGrid,
}

impl Scene {
    pub fn active_fraction(&self) -> f64 {
        self.tensor.occupancy()
    }
}

pub fn gen_scene(cfg: &SceneConfig) -> Result<Scene, BenchError> {
    if !(cfg.density > 0.0 && cfg.density <= 1.0) {
        return Err(BenchError::Config(format!("density must be in (0, 1], got {}", cfg.density)));
    }
    if cfg.channels == 0 {
        return Err(BenchError::Config("channels must be at least 1".into()));
    }
    let shape = cfg.shape;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels = build_world(shape, &mut rng);
    let target = ((cfg.density * shape.volume() as f64).round() as usize).max(1);

    let mut thickness = 1;
    let candidates = loop {
        let c = cast_shells(shape, &labels, thickness);
        if c.len() >= target {
            break c;
        }
        if thickness >= MAX_THICKNESS {
            let best = c.len() as f64 / shape.volume() as f64;
            return Err(BenchError::Config(format!(
                "density {} is infeasible for grid {shape}: at most {best:.4} of the grid is observable",
                cfg.density
            )));
        }
        thickness *= 2;
    };

    let mut coords: Vec<Coord> = candidates.into_iter().take(target).map(|(_, c)| c).collect();
    coords.sort_unstable();
    let mut feats = Vec::with_capacity(coords.len() * cfg.channels);
    for _ in 0..coords.len() * cfg.channels {
        feats.push(rng.gen_range(-1.0f32..1.0));
    }
    let tensor = SparseVoxelTensor::new(shape, cfg.channels, coords, feats)?;
    Ok(Scene { tensor, labels })
}

fn build_world(shape: GridShape, rng: &mut ChaCha8Rng) -> OccupancyGrid {
    let mut grid = OccupancyGrid::empty(shape);
    let (h, w, d) = (shape.h, shape.w, shape.d);
    let mut fill = |lo: [usize; 3], hi: [usize; 3], class: u16| {
        for x in lo[0]..hi[0].min(h) {
            for y in lo[1]..hi[1].min(w) {
                for z in lo[2]..hi[2].min(d) {
                    grid.labels[shape.linear([x as u32, y as u32, z as u32])] = class;
                }
            }
        }
    };
    fill([0, 0, 0], [h, w, GROUND_LAYERS.min(d)], CLASS_GROUND);
    let area = h * w;
    let g = GROUND_LAYERS.min(d);
    // Cars: about one per 256 cells of ground area.
    for _ in 0..(area / 256).max(1) {
        let len = rng.gen_range(3..=6).min(h);
        let wid = rng.gen_range(2..=3).min(w);
        let (sx, sy) = if rng.gen_bool(0.5) { (len, wid) } else { (wid, len) };
        let x = rng.gen_range(0..=h.saturating_sub(sx));
        let y = rng.gen_range(0..=w.saturating_sub(sy));
        let top = (g + rng.gen_range(2..=3)).min(d);
        fill([x, y, g], [x + sx, y + sy, top], CLASS_CAR);
    }
    // Buildings: tall blocks hugging the border, about one per 1024 cells.
    let band = (h.min(w) / 6).max(1);
    for _ in 0..(area / 1024).max(1) {
        let sx = rng.gen_range(band / 2 + 1..=band + 1).min(h);
        let sy = rng.gen_range(band / 2 + 1..=band + 1).min(w);
        let (x, y) = match rng.gen_range(0..4) {
            0 => (0, rng.gen_range(0..=w - sy)),
            1 => (h - sx, rng.gen_range(0..=w - sy)),
            2 => (rng.gen_range(0..=h - sx), 0),
            _ => (rng.gen_range(0..=h - sx), w - sy),
        };
        let top = rng.gen_range(d / 2..=d).max(g + 1);
        fill([x, y, g], [x + sx, y + sy, top], CLASS_BUILDING);
    }
    grid
}

/// Shell voxels with their squared range from the sensor, nearest first.
fn cast_shells(shape: GridShape, world: &OccupancyGrid, thickness: usize) -> Vec<(u64, Coord)> {
    let (h, w, d) = (shape.h as f64, shape.w as f64, shape.d as f64);
    let origin = [h / 2.0, w / 2.0, (d * 0.75).max(GROUND_LAYERS as f64 + 0.5).min(d - 0.5)];
    let reach = (h * h + w * w + d * d).sqrt();
    let azimuths = (8.0 * (h + w)) as usize;
    let elevations = (4.0 * d) as usize + 8;
    let step = 0.25;
    let mut hit = vec![false; shape.volume()];
    let mut out = Vec::new();
    for ai in 0..azimuths {
        let az = (ai as f64 + 0.5) / azimuths as f64 * std::f64::consts::TAU;
        for ei in 0..elevations {
            // From straight down to slightly above the horizon.
            let el = -std::f64::consts::FRAC_PI_2 * (1.0 - (ei as f64 + 0.5) / elevations as f64) + 0.1;
            let dir = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
            let mut first: Option<f64> = None;
            let mut last = usize::MAX;
            let mut t = 0.0;
            while t < reach {
                let p = [origin[0] + dir[0] * t, origin[1] + dir[1] * t, origin[2] + dir[2] * t];
                if p[0] < 0.0 || p[1] < 0.0 || p[2] < 0.0 || p[0] >= h || p[1] >= w || p[2] >= d {
                    break;
                }
                let c = [p[0] as u32, p[1] as u32, p[2] as u32];
                let lin = shape.linear(c);
                t += step;
                if lin == last {
                    continue;
                }
                last = lin;
                if world.labels[lin] == 0 {
                    if first.is_some() {
                        break;
                    }
                    continue;
                }
                let t0 = *first.get_or_insert(t);
                if t - t0 > thickness as f64 {
                    break;
                }
                if !hit[lin] {
                    hit[lin] = true;
                    out.push((range2(origin, c), c));
                }
            }
        }
    }
    out.sort_unstable();
    out
}

fn range2(origin: [f64; 3], c: Coord) -> u64 {
    let mut r = 0.0;
    for a in 0..3 {
        let v = c[a] as f64 + 0.5 - origin[a];
        r += v * v;
    }
    (r * 16.0).round() as u64
}
