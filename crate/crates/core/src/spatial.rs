//! Uniform-grid spatial hash for fixed-radius nearest-neighbor queries.

use std::collections::HashMap;

use crate::geometry::Point3;

type Cell = (i64, i64, i64);

pub struct SpatialHash<'a> {
    points: &'a [Point3],
    cell_size: f64,
    cells: HashMap<Cell, Vec<usize>>,
}

impl<'a> SpatialHash<'a> {
    /// `cell_size` should be at least the largest query radius; queries then
    /// only need the 27 cells around the query point.
    pub fn build(points: &'a [Point3], cell_size: f64) -> Self {
        assert!(cell_size > 0.0 && cell_size.is_finite(), "cell size must be positive");
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(p, cell_size)).or_default().push(i);
        }
        SpatialHash { points, cell_size, cells }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    /// Closest indexed point within `radius` of `query`, as `(index, squared
    /// distance)`. Ties go to the lower index.
    pub fn nearest_within(&self, query: &Point3, radius: f64) -> Option<(usize, f64)> {
        debug_assert!(radius <= self.cell_size);
        let (cx, cy, cz) = cell_of(query, self.cell_size);
        let r2 = radius * radius;
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &i in bucket {
                        let d2 = (self.points[i] - *query).norm_squared();
                        if d2 > r2 {
                            continue;
                        }
                        let better = match best {
                            None => true,
                            Some((bi, bd)) => d2 < bd || (d2 == bd && i < bi),
                        };
                        if better {
                            best = Some((i, d2));
                        }
                    }
                }
            }
        }
        best
    }
}

fn cell_of(p: &Point3, size: f64) -> Cell {
    (
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    )
}
