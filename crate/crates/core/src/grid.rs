//! Uniform spatial hash grid over 3D points for fixed-radius candidate queries.

use nalgebra::Point3;
use rustc_hash::FxHashMap;

type CellKey = [i32; 3];

/// Buckets item ids by the cubic cell containing their position.
///
/// Queries visit every cell overlapping the axis-aligned cube of half-width
/// `radius` around the query and return all ids stored there; callers apply
/// the exact distance test.
#[derive(Debug, Clone)]
pub struct SpatialHashGrid {
    cell_size: f64,
    cells: FxHashMap<CellKey, Vec<u32>>,
}

impl SpatialHashGrid {
    pub fn new(cell_size: f64) -> Self {
        assert!(cell_size.is_finite() && cell_size > 0.0, "cell size must be positive, got {cell_size}");
        Self { cell_size, cells: FxHashMap::default() }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    fn key(&self, p: &Point3<f64>) -> CellKey {
        [
            (p.x / self.cell_size).floor() as i32,
            (p.y / self.cell_size).floor() as i32,
            (p.z / self.cell_size).floor() as i32,
        ]
    }

    pub fn insert(&mut self, p: &Point3<f64>, id: u32) {
        let key = self.key(p);
        self.cells.entry(key).or_default().push(id);
    }

    /// Calls `visit` with every id whose cell overlaps the query cube. Ids
    /// within one cell arrive in insertion order.
    pub fn for_each_candidate(&self, p: &Point3<f64>, radius: f64, mut visit: impl FnMut(u32)) {
        let lo = self.key(&(p - nalgebra::Vector3::repeat(radius)));
        let hi = self.key(&(p + nalgebra::Vector3::repeat(radius)));
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    if let Some(ids) = self.cells.get(&[x, y, z]) {
                        ids.iter().copied().for_each(&mut visit);
                    }
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}
