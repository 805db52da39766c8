//! Geographic domain, its rectangular discretization, and the unit-square
//! coordinate map used by the learning code.
//!
//! The domain is an axis-aligned rectangle in a local metric frame (meters),
//! split into `rows x cols` equally sized cells. Cell `(i, j)` addresses row
//! `i` (y direction) and column `j` (x direction); its center is
//! `(x_min + (j + 0.5) * pitch_x, y_min + (i + 0.5) * pitch_y)`.
//!
//! All model inputs are normalized to the unit square so the network never
//! sees raw metric coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A location in the metric domain frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Rectangular domain extent with an `rows x cols` cell discretization.
///
/// Immutable after construction; shared freely across threads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    rows: usize,
    cols: usize,
}

impl Grid {
    /// Validates the extent (strictly positive in both axes, finite) and the
    /// cell counts (at least 2x2).
    pub fn new(
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        for v in [x_min, x_max, y_min, y_max] {
            if !v.is_finite() {
                return Err(Error::InvalidGrid("extent must be finite".into()));
            }
        }
        if x_max <= x_min || y_max <= y_min {
            return Err(Error::InvalidGrid(format!(
                "degenerate extent [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2x2 cells, got {rows}x{cols}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
            rows,
            cols,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Cell width along x.
    pub fn pitch_x(&self) -> f64 {
        (self.x_max - self.x_min) / self.cols as f64
    }

    /// Cell height along y.
    pub fn pitch_y(&self) -> f64 {
        (self.y_max - self.y_min) / self.rows as f64
    }

    /// Smaller of the two cell pitches; used as the default clamp distance
    /// around the transmitter and as the stencil step in physical units.
    pub fn min_pitch(&self) -> f64 {
        self.pitch_x().min(self.pitch_y())
    }

    /// Center coordinate of cell `(i, j)`.
    pub fn cell_center(&self, i: usize, j: usize) -> Result<Point> {
        if i >= self.rows || j >= self.cols {
            return Err(Error::IndexOutOfRange(format!(
                "cell ({i}, {j}) outside {}x{} grid",
                self.rows, self.cols
            )));
        }
        Ok(Point::new(
            self.x_min + (j as f64 + 0.5) * self.pitch_x(),
            self.y_min + (i as f64 + 0.5) * self.pitch_y(),
        ))
    }

    /// Flat row-major index of cell `(i, j)`.
    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        i * self.cols + j
    }

    /// Affine map of `p` onto the unit square; points outside the extent map
    /// outside `[0, 1]^2`.
    pub fn normalize(&self, p: Point) -> Point {
        Point::new(
            (p.x - self.x_min) / (self.x_max - self.x_min),
            (p.y - self.y_min) / (self.y_max - self.y_min),
        )
    }

    /// Inverse of [`Grid::normalize`].
    pub fn denormalize(&self, p: Point) -> Point {
        Point::new(
            self.x_min + p.x * (self.x_max - self.x_min),
            self.y_min + p.y * (self.y_max - self.y_min),
        )
    }

    /// Stencil step of one cell pitch expressed in normalized coordinates
    /// (mean of the per-axis normalized pitches; they coincide on grids with
    /// square aspect).
    pub fn normalized_pitch(&self) -> f64 {
        0.5 * (1.0 / self.cols as f64 + 1.0 / self.rows as f64)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    /// Centers of every cell in row-major order.
    pub fn cell_centers(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.n_cells());
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.push(self.cell_center(i, j).expect("index in range"));
            }
        }
        out
    }
}
