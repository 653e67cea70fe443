//! Cluster regions on a rectangular grid and participant locations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangle `[min.x, max.x] x [min.y, max.y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.min.x + self.max.x), 0.5 * (self.min.y + self.max.y))
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn area(&self) -> f64 {
        (self.max.x - self.min.x) * (self.max.y - self.min.y)
    }
}

/// Square cells tiling `[0, cols * cell_size] x [0, rows * cell_size]`, one
/// per cluster, indexed row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRegions {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
    pub centers: Vec<Point>,
    pub bounds: Vec<Rect>,
}

impl ClusterRegions {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// `(row, col)` of cluster `index`.
    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    pub fn domain(&self) -> Rect {
        Rect {
            min: Point::new(0.0, 0.0),
            max: Point::new(self.cols as f64 * self.cell_size, self.rows as f64 * self.cell_size),
        }
    }

    /// Largest distance between two cluster centers.
    pub fn max_center_distance(&self) -> f64 {
        let dx = (self.cols - 1) as f64 * self.cell_size;
        let dy = (self.rows - 1) as f64 * self.cell_size;
        dx.hypot(dy)
    }
}

pub fn grid_layout(rows: usize, cols: usize, cell_size: f64) -> Result<ClusterRegions> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "grid dimensions must be positive, got {rows} x {cols}"
        )));
    }
    if !(cell_size > 0.0) || !cell_size.is_finite() {
        return Err(Error::invalid(format!("cell size must be positive, got {cell_size}")));
    }
    let mut centers = Vec::with_capacity(rows * cols);
    let mut bounds = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let rect = Rect {
                min: Point::new(c as f64 * cell_size, r as f64 * cell_size),
                max: Point::new((c + 1) as f64 * cell_size, (r + 1) as f64 * cell_size),
            };
            centers.push(rect.center());
            bounds.push(rect);
        }
    }
    Ok(ClusterRegions {
        rows,
        cols,
        cell_size,
        centers,
        bounds,
    })
}

/// Draws `m` points uniformly inside each cluster's cell. The outer vector
/// is indexed by cluster.
pub fn sample_locations<R: Rng + ?Sized>(
    regions: &ClusterRegions,
    m: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Point>>> {
    if m == 0 {
        return Err(Error::invalid("cluster size must be at least 1"));
    }
    Ok(regions
        .bounds
        .iter()
        .map(|rect| {
            (0..m)
                .map(|_| {
                    let u: f64 = rng.gen();
                    let v: f64 = rng.gen();
                    Point::new(
                        rect.min.x + u * (rect.max.x - rect.min.x),
                        rect.min.y + v * (rect.max.y - rect.min.y),
                    )
                })
                .collect()
        })
        .collect())
}
