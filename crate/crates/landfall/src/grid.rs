//! Dense row-major 2D grids.
//!
//! Images, masks and depth maps all share [`Grid`]. Row 0 is the top of the
//! image, column 0 the left edge; `(row, col)` indexing everywhere. Pixel
//! centres sit at integer coordinates, so the continuous point `(x, y)` in
//! pixel units maps to column `x`, row `y`.

use std::fmt;

/// Fixed-size rectangular array stored row-major.
#[derive(Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T> Grid<T> {
    /// Wraps an existing buffer. `data.len()` must equal `width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            width * height,
            "grid buffer length {} does not match {}x{}",
            data.len(),
            width,
            height
        );
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True when `(row, col)` given as signed offsets lands inside the grid.
    pub fn contains(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    pub fn get(&self, row: usize, col: usize) -> &T {
        assert!(row < self.height && col < self.width, "grid index out of bounds");
        &self.data[row * self.width + col]
    }

    pub fn get_mut(&mut self, row: usize, col: usize) -> &mut T {
        assert!(row < self.height && col < self.width, "grid index out of bounds");
        &mut self.data[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Iterates `(row, col, &value)` in row-major order.
    pub fn iter_cells(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| (i / w, i % w, v))
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Clone> Grid<T> {
    /// Grid with every cell set to `value`.
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> fmt::Debug for Grid<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Grid({}x{})", self.width, self.height)
    }
}

/// Single-channel image, intensities nominally in `[0, 1]`.
pub type GrayImage = Grid<f64>;

/// Boolean per-pixel mask; `true` marks the property the producer documents.
pub type Mask = Grid<bool>;

/// What the scalar stored per pixel measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthKind {
    /// Perpendicular distance to the image plane (camera-frame z).
    PlaneDepth,
    /// Euclidean distance along the viewing ray.
    RayDepth,
}

/// Per-pixel depth with explicit unknowns.
///
/// Unknown cells are stored as NaN internally but only ever surface as
/// `None`; all known values are finite and strictly positive.
#[derive(Clone)]
pub struct DepthMap {
    grid: Grid<f64>,
    kind: DepthKind,
}

impl DepthMap {
    /// All-unknown map.
    pub fn unknown(width: usize, height: usize, kind: DepthKind) -> Self {
        Self {
            grid: Grid::filled(width, height, f64::NAN),
            kind,
        }
    }

    /// Constant depth everywhere; `depth` must be finite and positive.
    pub fn constant(width: usize, height: usize, depth: f64, kind: DepthKind) -> Self {
        assert!(depth.is_finite() && depth > 0.0, "depth must be finite and positive");
        Self {
            grid: Grid::filled(width, height, depth),
            kind,
        }
    }

    /// Builds from raw values where NaN means unknown. Negative or
    /// non-finite entries other than NaN are rejected.
    pub fn from_grid(grid: Grid<f64>, kind: DepthKind) -> Self {
        for (_, _, &v) in grid.iter_cells() {
            assert!(
                v.is_nan() || (v.is_finite() && v > 0.0),
                "depth values must be positive finite or NaN"
            );
        }
        Self { grid, kind }
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn kind(&self) -> DepthKind {
        self.kind
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let v = *self.grid.get(row, col);
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    /// Sets one cell; `None` clears it to unknown.
    pub fn set(&mut self, row: usize, col: usize, depth: Option<f64>) {
        match depth {
            Some(d) => {
                assert!(d.is_finite() && d > 0.0, "depth must be finite and positive");
                *self.grid.get_mut(row, col) = d;
            }
            None => *self.grid.get_mut(row, col) = f64::NAN,
        }
    }

    pub fn known_count(&self) -> usize {
        self.grid.as_slice().iter().filter(|v| !v.is_nan()).count()
    }

    /// Iterates only the known cells as `(row, col, depth)`.
    pub fn iter_known(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.grid
            .iter_cells()
            .filter(|(_, _, v)| !v.is_nan())
            .map(|(r, c, v)| (r, c, *v))
    }

    /// Raw storage including NaN unknowns, row-major.
    pub fn raw(&self) -> &Grid<f64> {
        &self.grid
    }

    pub fn raw_mut(&mut self) -> &mut Grid<f64> {
        &mut self.grid
    }

    /// Marks the map as holding the other depth convention without touching
    /// values. Callers converting between conventions do the arithmetic.
    pub fn with_kind(mut self, kind: DepthKind) -> Self {
        self.kind = kind;
        self
    }
}

impl fmt::Debug for DepthMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "DepthMap({}x{}, {:?}, {} known)",
            self.width(),
            self.height(),
            self.kind,
            self.known_count()
        )
    }
}

impl PartialEq for DepthMap {
    /// Bit-level comparison so unknown (NaN) cells compare equal.
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.grid.width() == other.grid.width()
            && self.grid.height() == other.grid.height()
            && self
                .grid
                .as_slice()
                .iter()
                .zip(other.grid.as_slice())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Bilinear interpolation at continuous pixel coordinates `(x, y)`.
///
/// Returns `None` when the sample point falls outside the rectangle spanned
/// by the outermost pixel centres, so every returned value is a convex
/// combination of four real pixels.
pub fn bilinear_sample(image: &GrayImage, x: f64, y: f64) -> Option<f64> {
    let (v, _, _) = bilinear_sample_with_grad(image, x, y)?;
    Some(v)
}

/// Bilinear sample plus the derivative of the sampled value with respect to
/// the sample coordinates, `(value, d/dx, d/dy)`.
pub fn bilinear_sample_with_grad(image: &GrayImage, x: f64, y: f64) -> Option<(f64, f64, f64)> {
    let w = image.width();
    let h = image.height();
    if w == 0 || h == 0 {
        return None;
    }
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let c0 = (x.floor() as usize).min(w - 1);
    let r0 = (y.floor() as usize).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let r1 = (r0 + 1).min(h - 1);
    let fx = x - c0 as f64;
    let fy = y - r0 as f64;
    let v00 = *image.get(r0, c0);
    let v01 = *image.get(r0, c1);
    let v10 = *image.get(r1, c0);
    let v11 = *image.get(r1, c1);
    let top = v00 + (v01 - v00) * fx;
    let bottom = v10 + (v11 - v10) * fx;
    let value = top + (bottom - top) * fy;
    let ddx = (v01 - v00) * (1.0 - fy) + (v11 - v10) * fy;
    let ddy = bottom - top;
    Some((value, ddx, ddy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_roundtrip_indexing() {
        let mut g = Grid::filled(3, 2, 0i32);
        *g.get_mut(1, 2) = 7;
        assert_eq!(*g.get(1, 2), 7);
        assert_eq!(*g.get(0, 2), 0);
        let cells: Vec<_> = g.iter_cells().map(|(r, c, v)| (r, c, *v)).collect();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[5], (1, 2, 7));
    }

    #[test]
    fn depth_map_unknowns() {
        let mut d = DepthMap::unknown(4, 3, DepthKind::PlaneDepth);
        assert_eq!(d.known_count(), 0);
        d.set(2, 1, Some(5.0));
        assert_eq!(d.get(2, 1), Some(5.0));
        assert_eq!(d.get(0, 0), None);
        assert_eq!(d.known_count(), 1);
        d.set(2, 1, None);
        assert_eq!(d.known_count(), 0);
    }

    #[test]
    fn depth_map_equality_treats_unknowns_equal() {
        let a = DepthMap::unknown(2, 2, DepthKind::PlaneDepth);
        let b = DepthMap::unknown(2, 2, DepthKind::PlaneDepth);
        assert_eq!(a, b);
        let c = DepthMap::unknown(2, 2, DepthKind::RayDepth);
        assert_ne!(a, c);
    }

    #[test]
    fn bilinear_matches_corners_and_centre() {
        let img = GrayImage::from_vec(2, 2, vec![0.0, 1.0, 2.0, 3.0]);
        assert_relative_eq!(bilinear_sample(&img, 0.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(bilinear_sample(&img, 1.0, 0.0).unwrap(), 1.0);
        assert_relative_eq!(bilinear_sample(&img, 0.5, 0.5).unwrap(), 1.5);
        assert!(bilinear_sample(&img, -0.01, 0.0).is_none());
        assert!(bilinear_sample(&img, 0.0, 1.01).is_none());
    }

    #[test]
    fn bilinear_gradient_matches_finite_differences() {
        let img = GrayImage::from_vec(3, 3, vec![0.1, 0.5, 0.2, 0.9, 0.3, 0.7, 0.4, 0.8, 0.6]);
        let (x, y) = (1.3, 0.6);
        let (_, gx, gy) = bilinear_sample_with_grad(&img, x, y).unwrap();
        let e = 1e-6;
        let fx = (bilinear_sample(&img, x + e, y).unwrap() - bilinear_sample(&img, x - e, y).unwrap()) / (2.0 * e);
        let fy = (bilinear_sample(&img, x, y + e).unwrap() - bilinear_sample(&img, x, y - e).unwrap()) / (2.0 * e);
        assert_relative_eq!(gx, fx, max_relative = 1e-6);
        assert_relative_eq!(gy, fy, max_relative = 1e-6);
    }
}
