//! Dense 2D grids and world/cell coordinate transforms.
//!
//! Storage is row-major: cell `(i, j)` lives at `j * width + i`, with `i`
//! growing along world x and `j` along world y. A world point belongs to the
//! cell whose half-open square `[corner, corner + resolution)` contains it.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability assigned to cells that have never been observed.
pub const UNKNOWN_P: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub i: usize,
    pub j: usize,
}

impl Cell {
    pub const fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }

    /// Chebyshev distance in cells.
    pub fn chebyshev(&self, other: &Cell) -> usize {
        self.i.abs_diff(other.i).max(self.j.abs_diff(other.j))
    }
}

/// 8-neighborhood offsets in the fixed order E, NE, N, NW, W, SW, S, SE.
pub const NEIGHBORS_8: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    pub fn new(origin_x: f64, origin_y: f64, resolution: f64, width: usize, height: usize) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::Config(format!("resolution must be positive, got {resolution}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Config(format!("grid must be non-empty, got {width}x{height}")));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        Ok(Self {
            origin_x,
            origin_y,
            resolution,
            width,
            height,
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.i < self.width && cell.j < self.height
    }

    pub fn index(&self, cell: Cell) -> usize {
        debug_assert!(self.contains(cell));
        cell.j * self.width + cell.i
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    pub fn world_to_cell(&self, x: f64, y: f64) -> Result<Cell> {
        let fx = ((x - self.origin_x) / self.resolution).floor();
        let fy = ((y - self.origin_y) / self.resolution).floor();
        if fx >= 0.0 && fy >= 0.0 && fx < self.width as f64 && fy < self.height as f64 {
            Ok(Cell::new(fx as usize, fy as usize))
        } else {
            Err(Error::OutOfBounds { x, y })
        }
    }

    /// Center of the cell in world meters.
    pub fn cell_to_world(&self, cell: Cell) -> Result<(f64, f64)> {
        if !self.contains(cell) {
            return Err(Error::CellOutOfBounds(cell));
        }
        Ok(self.center(cell))
    }

    /// Unchecked variant of [`GridSpec::cell_to_world`] for cells known to be in bounds.
    pub(crate) fn center(&self, cell: Cell) -> (f64, f64) {
        (
            self.origin_x + (cell.i as f64 + 0.5) * self.resolution,
            self.origin_y + (cell.j as f64 + 0.5) * self.resolution,
        )
    }

    pub fn offset(&self, cell: Cell, di: i64, dj: i64) -> Option<Cell> {
        let i = cell.i as i64 + di;
        let j = cell.j as i64 + dj;
        if i < 0 || j < 0 || i >= self.width as i64 || j >= self.height as i64 {
            None
        } else {
            Some(Cell::new(i as usize, j as usize))
        }
    }

    /// In-bounds 8-neighbors in `NEIGHBORS_8` order.
    pub fn neighbors8(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        NEIGHBORS_8
            .iter()
            .filter_map(move |&(di, dj)| self.offset(cell, di, dj))
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.len()).map(|k| self.cell_at(k))
    }

    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_x,
            self.origin_y,
            self.origin_x + self.width as f64 * self.resolution,
            self.origin_y + self.height as f64 * self.resolution,
        )
    }
}

/// Value stored in a text raster cell.
pub trait RasterValue: Sized {
    fn write_token(&self, out: &mut String);
    fn parse_token(token: &str) -> Option<Self>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    spec: GridSpec,
    cells: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(spec: GridSpec, value: T) -> Self {
        Self {
            cells: vec![value; spec.len()],
            spec,
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(spec: GridSpec, cells: Vec<T>) -> Result<Self> {
        if cells.len() != spec.len() {
            return Err(Error::Config(format!(
                "grid expects {} cells, got {}",
                spec.len(),
                cells.len()
            )));
        }
        Ok(Self { spec, cells })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn get(&self, cell: Cell) -> Option<&T> {
        self.spec.contains(cell).then(|| &self.cells[self.spec.index(cell)])
    }

    pub fn get_mut(&mut self, cell: Cell) -> Option<&mut T> {
        if self.spec.contains(cell) {
            let k = self.spec.index(cell);
            Some(&mut self.cells[k])
        } else {
            None
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.cells
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.cells
    }

    pub fn iter(&self) -> impl Iterator<Item = (Cell, &T)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .map(|(k, v)| (self.spec.cell_at(k), v))
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            spec: self.spec,
            cells: self.cells.iter().map(f).collect(),
        }
    }
}

impl<T> std::ops::Index<Cell> for Grid<T> {
    type Output = T;
    fn index(&self, cell: Cell) -> &T {
        &self.cells[self.spec.index(cell)]
    }
}

impl<T> std::ops::IndexMut<Cell> for Grid<T> {
    fn index_mut(&mut self, cell: Cell) -> &mut T {
        let k = self.spec.index(cell);
        &mut self.cells[k]
    }
}

impl<T: RasterValue> Grid<T> {
    /// Serializes to the text raster: one header line, then one line per row `j`.
    pub fn to_raster(&self) -> String {
        let s = &self.spec;
        let mut out = format!(
            "{} {} {} {} {}\n",
            s.width, s.height, s.resolution, s.origin_x, s.origin_y
        );
        for j in 0..s.height {
            for i in 0..s.width {
                if i > 0 {
                    out.push(' ');
                }
                self[Cell::new(i, j)].write_token(&mut out);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_raster(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let bad_header = |msg: &str| Error::Parse {
            line: hline + 1,
            msg: msg.to_string(),
        };
        if fields.len() != 5 {
            return Err(bad_header("expected `width height resolution origin_x origin_y`"));
        }
        let width: usize = fields[0].parse().map_err(|_| bad_header("bad width"))?;
        let height: usize = fields[1].parse().map_err(|_| bad_header("bad height"))?;
        let res: f64 = fields[2].parse().map_err(|_| bad_header("bad resolution"))?;
        let ox: f64 = fields[3].parse().map_err(|_| bad_header("bad origin_x"))?;
        let oy: f64 = fields[4].parse().map_err(|_| bad_header("bad origin_y"))?;
        let spec = GridSpec::new(ox, oy, res, width, height)?;

        let mut cells = Vec::with_capacity(spec.len());
        for (n, line) in lines {
            for tok in line.split_whitespace() {
                let v = T::parse_token(tok).ok_or_else(|| Error::Parse {
                    line: n + 1,
                    msg: format!("bad cell value `{tok}`"),
                })?;
                cells.push(v);
            }
        }
        if cells.len() != spec.len() {
            return Err(Error::Parse {
                line: 0,
                msg: format!("expected {} cells, found {}", spec.len(), cells.len()),
            });
        }
        Ok(Self { spec, cells })
    }

    pub fn write_raster(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_raster()).map_err(|e| Error::io(path, e))
    }
}

/// Occupancy probability per cell; exactly `UNKNOWN_P` means never observed.
pub type OccupancyGrid = Grid<f64>;

impl OccupancyGrid {
    pub fn unknown(spec: GridSpec) -> Self {
        Grid::filled(spec, UNKNOWN_P)
    }

    pub fn is_unknown(&self, cell: Cell) -> bool {
        self[cell] == UNKNOWN_P
    }
}

impl RasterValue for f64 {
    fn write_token(&self, out: &mut String) {
        if *self == UNKNOWN_P {
            out.push('?');
        } else {
            let _ = write!(out, "{self}");
        }
    }

    fn parse_token(token: &str) -> Option<Self> {
        if token == "?" {
            return Some(UNKNOWN_P);
        }
        token.parse::<f64>().ok().filter(|p| (0.0..=1.0).contains(p))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Traversability {
    Unknown,
    /// 1 = perfectly traversable, 0 = untraversable.
    Score(f64),
}

pub type TraversabilityGrid = Grid<Traversability>;

impl RasterValue for Traversability {
    fn write_token(&self, out: &mut String) {
        match self {
            Traversability::Unknown => out.push('?'),
            Traversability::Score(s) => {
                let _ = write!(out, "{s}");
            }
        }
    }

    fn parse_token(token: &str) -> Option<Self> {
        if token == "?" {
            return Some(Traversability::Unknown);
        }
        token
            .parse::<f64>()
            .ok()
            .filter(|s| (0.0..=1.0).contains(s))
            .map(Traversability::Score)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Nav {
    Unknown,
    Free,
    Blocked,
}

pub type BinaryTraversabilityGrid = Grid<Nav>;

impl BinaryTraversabilityGrid {
    pub fn is_free(&self, cell: Cell) -> bool {
        self.get(cell) == Some(&Nav::Free)
    }
}

impl RasterValue for Nav {
    fn write_token(&self, out: &mut String) {
        out.push(match self {
            Nav::Unknown => '?',
            Nav::Free => '.',
            Nav::Blocked => '#',
        });
    }

    fn parse_token(token: &str) -> Option<Self> {
        match token {
            "?" => Some(Nav::Unknown),
            "." => Some(Nav::Free),
            "#" => Some(Nav::Blocked),
            _ => None,
        }
    }
}
