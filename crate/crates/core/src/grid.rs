//! Discretized floorplans: free space, walls and exits on a regular grid.
//!
//! Maps are read from a small ASCII format, one row per line:
//!
//! ```text
//! @cell_size=1.0
//! ..E
//! .#.
//! ...
//! ```
//!
//! `.` is free space, `#` a wall and `E` an exit. Lines starting with `@`
//! are `key=value` headers and must precede the grid.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::f64::consts::SQRT_2;
use std::fmt;

use arrayvec::ArrayVec;
use thiserror::Error;

pub const DEFAULT_CELL_SIZE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Free,
    Wall,
    Exit,
}

impl CellKind {
    pub fn glyph(self) -> char {
        match self {
            CellKind::Free => '.',
            CellKind::Wall => '#',
            CellKind::Exit => 'E',
        }
    }

    fn from_glyph(c: char) -> Option<Self> {
        match c {
            '.' => Some(CellKind::Free),
            '#' => Some(CellKind::Wall),
            'E' => Some(CellKind::Exit),
            _ => None,
        }
    }
}

/// Column/row index of a grid cell.
///
/// Ordering is row-major (by `y`, then `x`), i.e. reading order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridCoord {
    pub x: usize,
    pub y: usize,
}

impl GridCoord {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

impl Ord for GridCoord {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for GridCoord {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for GridCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// Neighbor list returned by [`GridMap::neighbors`]: cell plus step length in cell units.
pub type Neighbors = ArrayVec<(GridCoord, f64), 8>;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("empty map document")]
    Empty,
    #[error("line {line}: row has {found} cells, expected {expected}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {column}: unknown glyph {glyph:?}")]
    UnknownGlyph {
        line: usize,
        column: usize,
        glyph: char,
    },
    #[error("line {line}: {message}")]
    BadHeader { line: usize, message: String },
    #[error("no exits")]
    NoExits,
    #[error("invalid dimensions {width}x{height}")]
    BadDimensions { width: usize, height: usize },
    #[error("cell size must be positive and finite, got {0}")]
    BadCellSize(f64),
    #[error("cell {0} is out of bounds")]
    OutOfBounds(GridCoord),
    #[error("cell {0} is a wall")]
    WallCell(GridCoord),
    #[error("exit {0} is listed twice")]
    DuplicateExit(GridCoord),
    #[error("exit {0} is not an exit cell")]
    NotAnExit(GridCoord),
}

/// Immutable floorplan. Exits are kept in reading order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    width: usize,
    height: usize,
    cell_size: f64,
    cells: Vec<CellKind>,
    exits: Vec<GridCoord>,
    connectivity: Connectivity,
}

impl GridMap {
    /// Builds a map from row-major cells. Exits are collected from the cells.
    pub fn new(
        width: usize,
        height: usize,
        cell_size: f64,
        cells: Vec<CellKind>,
    ) -> Result<Self, GridError> {
        if width == 0 || height == 0 || cells.len() != width * height {
            return Err(GridError::BadDimensions { width, height });
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(GridError::BadCellSize(cell_size));
        }
        let exits: Vec<GridCoord> = cells
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == CellKind::Exit)
            .map(|(i, _)| GridCoord::new(i % width, i / width))
            .collect();
        if exits.is_empty() {
            return Err(GridError::NoExits);
        }
        Ok(Self {
            width,
            height,
            cell_size,
            cells,
            exits,
            connectivity: Connectivity::Eight,
        })
    }

    /// An all-free map with the given exit cells.
    pub fn open(width: usize, height: usize, exits: &[GridCoord]) -> Result<Self, GridError> {
        let mut cells = vec![CellKind::Free; width * height];
        for &e in exits {
            if e.x >= width || e.y >= height {
                return Err(GridError::OutOfBounds(e));
            }
            cells[e.y * width + e.x] = CellKind::Exit;
        }
        Self::new(width, height, DEFAULT_CELL_SIZE, cells)
    }

    pub fn with_connectivity(mut self, connectivity: Connectivity) -> Self {
        self.connectivity = connectivity;
        self
    }

    pub fn with_walls(mut self, walls: &[GridCoord]) -> Result<Self, GridError> {
        for &w in walls {
            if !self.in_bounds(w) {
                return Err(GridError::OutOfBounds(w));
            }
            let i = self.index(w);
            self.cells[i] = CellKind::Wall;
        }
        self.exits.retain(|e| self.cells[e.y * self.width + e.x] == CellKind::Exit);
        if self.exits.is_empty() {
            return Err(GridError::NoExits);
        }
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn exits(&self) -> &[GridCoord] {
        &self.exits
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn index(&self, c: GridCoord) -> usize {
        c.y * self.width + c.x
    }

    #[inline]
    pub fn coord(&self, index: usize) -> GridCoord {
        GridCoord::new(index % self.width, index / self.width)
    }

    #[inline]
    pub fn in_bounds(&self, c: GridCoord) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn kind(&self, c: GridCoord) -> Option<CellKind> {
        self.in_bounds(c).then(|| self.cells[self.index(c)])
    }

    #[inline]
    pub fn is_passable(&self, c: GridCoord) -> bool {
        matches!(self.kind(c), Some(CellKind::Free | CellKind::Exit))
    }

    pub fn is_exit(&self, c: GridCoord) -> bool {
        self.kind(c) == Some(CellKind::Exit)
    }

    pub fn free_cells(&self) -> impl Iterator<Item = GridCoord> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == CellKind::Free)
            .map(|(i, _)| self.coord(i))
    }

    pub fn free_count(&self) -> usize {
        self.cells.iter().filter(|k| **k == CellKind::Free).count()
    }

    /// World extent in meters as `(width, height)`.
    pub fn world_size(&self) -> (f64, f64) {
        (
            self.width as f64 * self.cell_size,
            self.height as f64 * self.cell_size,
        )
    }

    /// Cell containing a world position, or `None` outside the map.
    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<GridCoord> {
        if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 {
            return None;
        }
        let cx = (x / self.cell_size).floor() as usize;
        let cy = (y / self.cell_size).floor() as usize;
        let c = GridCoord::new(cx, cy);
        self.in_bounds(c).then_some(c)
    }

    /// World position of a cell's center.
    pub fn cell_center(&self, c: GridCoord) -> (f64, f64) {
        (
            (c.x as f64 + 0.5) * self.cell_size,
            (c.y as f64 + 0.5) * self.cell_size,
        )
    }

    /// Checks that `dsts` is a non-empty, duplicate-free list of exit cells.
    pub fn check_destinations(&self, dsts: &[GridCoord]) -> Result<(), GridError> {
        if dsts.is_empty() {
            return Err(GridError::NoExits);
        }
        for (i, &d) in dsts.iter().enumerate() {
            if !self.in_bounds(d) {
                return Err(GridError::OutOfBounds(d));
            }
            if !self.is_exit(d) {
                return Err(GridError::NotAnExit(d));
            }
            if dsts[..i].contains(&d) {
                return Err(GridError::DuplicateExit(d));
            }
        }
        Ok(())
    }

    /// Passable neighbors of `c` with their step length (1 or √2 cells).
    ///
    /// A diagonal step is dropped when both cells flanking it are walls.
    pub fn neighbors(&self, c: GridCoord) -> Result<Neighbors, GridError> {
        if !self.in_bounds(c) {
            return Err(GridError::OutOfBounds(c));
        }
        if self.cells[self.index(c)] == CellKind::Wall {
            return Err(GridError::WallCell(c));
        }
        let mut out = Neighbors::new();
        self.for_each_neighbor(c, |n, d| out.push((n, d)));
        Ok(out)
    }

    /// Unchecked neighbor walk used on the planner's hot path.
    #[inline]
    pub(crate) fn for_each_neighbor(&self, c: GridCoord, mut f: impl FnMut(GridCoord, f64)) {
        let (x, y) = (c.x as isize, c.y as isize);
        let (w, h) = (self.width as isize, self.height as isize);
        let open = |nx: isize, ny: isize| -> bool {
            nx >= 0
                && ny >= 0
                && nx < w
                && ny < h
                && self.cells[(ny * w + nx) as usize] != CellKind::Wall
        };
        for (dx, dy) in [(0, -1), (-1, 0), (1, 0), (0, 1)] {
            if open(x + dx, y + dy) {
                f(GridCoord::new((x + dx) as usize, (y + dy) as usize), 1.0);
            }
        }
        if self.connectivity == Connectivity::Four {
            return;
        }
        for (dx, dy) in [(-1, -1), (1, -1), (-1, 1), (1, 1)] {
            let (nx, ny) = (x + dx, y + dy);
            if !open(nx, ny) {
                continue;
            }
            // no corner cutting between two walls
            if !open(x + dx, y) && !open(x, y + dy) {
                continue;
            }
            f(GridCoord::new(nx as usize, ny as usize), SQRT_2);
        }
    }

    /// Serializes to the canonical text form accepted by [`parse_grid`].
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height + 24);
        if self.cell_size != DEFAULT_CELL_SIZE {
            out.push_str(&format!("@cell_size={}\n", self.cell_size));
        }
        for row in self.cells.chunks(self.width) {
            out.extend(row.iter().map(|k| k.glyph()));
            out.push('\n');
        }
        out
    }
}

/// Parses the ASCII map format. Errors carry 1-based line and column numbers.
pub fn parse_grid(text: &str) -> Result<GridMap, GridError> {
    let mut cell_size = DEFAULT_CELL_SIZE;
    let mut cells = Vec::new();
    let mut width = None;
    let mut height = 0;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if let Some(header) = line.strip_prefix('@') {
            if width.is_some() {
                return Err(GridError::BadHeader {
                    line: line_no,
                    message: "header after grid rows".into(),
                });
            }
            let (key, value) = header.split_once('=').ok_or_else(|| GridError::BadHeader {
                line: line_no,
                message: format!("expected key=value, got {header:?}"),
            })?;
            match key.trim() {
                "cell_size" => {
                    cell_size = value.trim().parse().map_err(|_| GridError::BadHeader {
                        line: line_no,
                        message: format!("bad cell_size {value:?}"),
                    })?;
                }
                other => {
                    return Err(GridError::BadHeader {
                        line: line_no,
                        message: format!("unknown key {other:?}"),
                    })
                }
            }
            continue;
        }
        if line.is_empty() && width.is_none() {
            continue;
        }
        let row_len = line.chars().count();
        let expected = *width.get_or_insert(row_len);
        if row_len != expected {
            return Err(GridError::RaggedRow {
                line: line_no,
                expected,
                found: row_len,
            });
        }
        for (col, ch) in line.chars().enumerate() {
            let kind = CellKind::from_glyph(ch).ok_or(GridError::UnknownGlyph {
                line: line_no,
                column: col + 1,
                glyph: ch,
            })?;
            cells.push(kind);
        }
        height += 1;
    }

    match width {
        None | Some(0) => Err(GridError::Empty),
        Some(w) => GridMap::new(w, height, cell_size, cells),
    }
}

/// Reachability report from [`validate_map`].
#[derive(Debug, Clone, PartialEq)]
pub struct MapDiagnostics {
    pub free_cells: usize,
    pub exits: usize,
    /// Free cells with no path to any exit, in reading order.
    pub unreachable: Vec<GridCoord>,
}

impl MapDiagnostics {
    pub fn unreachable_count(&self) -> usize {
        self.unreachable.len()
    }

    pub fn is_valid(&self) -> bool {
        self.unreachable.is_empty()
    }
}

/// Flood-fills from every exit and reports free cells that cannot reach one.
pub fn validate_map(map: &GridMap) -> MapDiagnostics {
    let mut seen = vec![false; map.len()];
    let mut queue: VecDeque<GridCoord> = VecDeque::new();
    for &e in map.exits() {
        seen[map.index(e)] = true;
        queue.push_back(e);
    }
    // adjacency is symmetric, so a reverse search from the exits suffices
    while let Some(c) = queue.pop_front() {
        map.for_each_neighbor(c, |n, _| {
            let i = map.index(n);
            if !seen[i] {
                seen[i] = true;
                queue.push_back(n);
            }
        });
    }
    let unreachable = map
        .free_cells()
        .filter(|c| !seen[map.index(*c)])
        .collect();
    MapDiagnostics {
        free_cells: map.free_count(),
        exits: map.exits().len(),
        unreachable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: usize, y: usize) -> GridCoord {
        GridCoord::new(x, y)
    }

    #[test]
    fn parses_small_map() {
        let map = parse_grid("..E\n.#.\n...").unwrap();
        assert_eq!((map.width(), map.height()), (3, 3));
        assert_eq!(map.exits(), &[c(2, 0)]);
        assert_eq!(map.kind(c(1, 1)), Some(CellKind::Wall));
        assert_eq!(map.free_count(), 7);
    }

    #[test]
    fn parses_single_exit_cell() {
        let map = parse_grid("E").unwrap();
        assert_eq!((map.width(), map.height()), (1, 1));
        assert_eq!(map.exits(), &[c(0, 0)]);
    }

    #[test]
    fn rejects_bad_documents() {
        assert_eq!(parse_grid("..\n.."), Err(GridError::NoExits));
        assert_eq!(parse_grid(""), Err(GridError::Empty));
        assert_eq!(parse_grid("@cell_size=2\n"), Err(GridError::Empty));
        assert_eq!(
            parse_grid("..E\n.."),
            Err(GridError::RaggedRow {
                line: 2,
                expected: 3,
                found: 2
            })
        );
        assert_eq!(
            parse_grid("..E\n.x."),
            Err(GridError::UnknownGlyph {
                line: 2,
                column: 2,
                glyph: 'x'
            })
        );
        assert!(matches!(
            parse_grid("E\n@cell_size=1"),
            Err(GridError::BadHeader { line: 2, .. })
        ));
        assert!(matches!(
            parse_grid("@cell_size=-1\nE"),
            Err(GridError::BadCellSize(_))
        ));
    }

    #[test]
    fn header_sets_cell_size() {
        let map = parse_grid("@cell_size=0.5\n.E\n..\n").unwrap();
        assert_eq!(map.cell_size(), 0.5);
        assert_eq!(map.world_to_cell(0.6, 0.2), Some(c(1, 0)));
        assert_eq!(map.world_to_cell(1.0, 0.2), None);
        assert_eq!(map.to_text(), "@cell_size=0.5\n.E\n..\n");
    }

    #[test]
    fn interior_cell_has_eight_neighbors() {
        let map = GridMap::open(3, 3, &[c(2, 2)]).unwrap();
        let n = map.neighbors(c(1, 1)).unwrap();
        assert_eq!(n.len(), 8);
        assert_eq!(n.iter().filter(|(_, d)| *d == 1.0).count(), 4);
        assert_eq!(n.iter().filter(|(_, d)| *d == SQRT_2).count(), 4);
    }

    #[test]
    fn corner_cell_is_clipped() {
        let map = GridMap::open(3, 3, &[c(2, 2)]).unwrap();
        let mut n: Vec<_> = map.neighbors(c(0, 0)).unwrap().into_iter().collect();
        n.sort_by_key(|a| a.0);
        assert_eq!(n, vec![(c(1, 0), 1.0), (c(0, 1), 1.0), (c(1, 1), SQRT_2)]);
    }

    #[test]
    fn no_corner_cutting_between_walls() {
        let map = GridMap::open(3, 3, &[c(2, 2)])
            .unwrap()
            .with_walls(&[c(1, 0), c(0, 1)])
            .unwrap();
        assert!(map.neighbors(c(0, 0)).unwrap().is_empty());

        // one flanking wall still lets the diagonal through
        let map = GridMap::open(3, 3, &[c(2, 2)])
            .unwrap()
            .with_walls(&[c(1, 0)])
            .unwrap();
        let n = map.neighbors(c(0, 0)).unwrap();
        assert!(n.contains(&(c(1, 1), SQRT_2)));
    }

    #[test]
    fn four_connectivity_drops_diagonals() {
        let map = GridMap::open(3, 3, &[c(2, 2)])
            .unwrap()
            .with_connectivity(Connectivity::Four);
        assert_eq!(map.neighbors(c(1, 1)).unwrap().len(), 4);
    }

    #[test]
    fn neighbors_rejects_walls_and_out_of_bounds() {
        let map = parse_grid("..E\n.#.\n...").unwrap();
        assert_eq!(map.neighbors(c(1, 1)), Err(GridError::WallCell(c(1, 1))));
        assert_eq!(map.neighbors(c(3, 0)), Err(GridError::OutOfBounds(c(3, 0))));
    }

    #[test]
    fn validate_counts_unreachable_cells() {
        let map = GridMap::open(3, 3, &[c(2, 2)]).unwrap();
        assert_eq!(validate_map(&map).unreachable_count(), 0);

        let map = parse_grid("E.#.\n..##\n....").unwrap();
        // (3,0) is enclosed by walls on the left and below
        let diag = validate_map(&map);
        assert_eq!(diag.unreachable, vec![c(3, 0)]);
    }

    #[test]
    fn destination_checks() {
        let map = parse_grid("E.E").unwrap();
        assert!(map.check_destinations(&[c(0, 0), c(2, 0)]).is_ok());
        assert_eq!(map.check_destinations(&[]), Err(GridError::NoExits));
        assert_eq!(
            map.check_destinations(&[c(1, 0)]),
            Err(GridError::NotAnExit(c(1, 0)))
        );
        assert_eq!(
            map.check_destinations(&[c(0, 0), c(0, 0)]),
            Err(GridError::DuplicateExit(c(0, 0)))
        );
    }
}
