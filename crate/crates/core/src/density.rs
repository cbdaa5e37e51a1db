//! Population density field.
//!
//! Every occupied cell spreads `gamma * N / sqrt(2*pi) * exp(-d^2 / 2)` onto the
//! cells of a square patch around it, where `d` is the distance in cell units
//! and `N` the number of agents in the cell. The field is rebuilt from scratch
//! for each snapshot.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use thiserror::Error;

use crate::grid::{GridCoord, GridMap};

pub const DEFAULT_GAMMA: f64 = 5.0;
pub const DEFAULT_PATCH_RADIUS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("position {index} ({x}, {y}) lies outside the map")]
    PositionOutOfBounds { index: usize, x: f64, y: f64 },
    #[error("cell {0} is out of bounds")]
    CellOutOfBounds(GridCoord),
    #[error("population grid is {found:?}, map is {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("gamma must be positive and finite, got {0}")]
    BadGamma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityParams {
    pub gamma: f64,
    /// Chebyshev radius of the patch each agent contributes to.
    pub patch_radius: usize,
}

impl Default for DensityParams {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            patch_radius: DEFAULT_PATCH_RADIUS,
        }
    }
}

impl DensityParams {
    /// Density an agent adds to its own cell.
    pub fn peak(&self) -> f64 {
        self.gamma / (2.0 * PI).sqrt()
    }
}

/// Agent count per occupied cell, iterated in reading order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PopulationCounts {
    width: usize,
    height: usize,
    counts: BTreeMap<GridCoord, u32>,
}

impl PopulationCounts {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            counts: BTreeMap::new(),
        }
    }

    pub fn for_map(map: &GridMap) -> Self {
        Self::new(map.width(), map.height())
    }

    pub fn add(&mut self, c: GridCoord, n: u32) -> Result<(), DensityError> {
        if c.x >= self.width || c.y >= self.height {
            return Err(DensityError::CellOutOfBounds(c));
        }
        if n > 0 {
            *self.counts.entry(c).or_insert(0) += n;
        }
        Ok(())
    }

    pub fn get(&self, c: GridCoord) -> u32 {
        self.counts.get(&c).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (GridCoord, u32)> + '_ {
        self.counts.iter().map(|(c, n)| (*c, *n))
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().map(|n| *n as u64).sum()
    }

    pub fn occupied(&self) -> usize {
        self.counts.len()
    }

    /// Multiset union of two populations over the same grid.
    pub fn merged(&self, other: &Self) -> Result<Self, DensityError> {
        if self.dims() != other.dims() {
            return Err(DensityError::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        let mut out = self.clone();
        for (c, n) in other.iter() {
            out.add(c, n)?;
        }
        Ok(out)
    }
}

/// Bins world positions (meters) into the cells that contain them.
pub fn bin_positions(
    positions: &[(f64, f64)],
    map: &GridMap,
) -> Result<PopulationCounts, DensityError> {
    let mut counts = PopulationCounts::for_map(map);
    for (index, &(x, y)) in positions.iter().enumerate() {
        let cell = map
            .world_to_cell(x, y)
            .ok_or(DensityError::PositionOutOfBounds { index, x, y })?;
        counts.add(cell, 1)?;
    }
    Ok(counts)
}

/// Immutable, versioned density snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    width: usize,
    height: usize,
    rho: Vec<f64>,
    params: DensityParams,
    version: u64,
}

impl DensityMap {
    /// An all-zero field.
    pub fn zeros(width: usize, height: usize, params: DensityParams) -> Self {
        Self {
            width,
            height,
            rho: vec![0.0; width * height],
            params,
            version: 0,
        }
    }

    pub fn for_map(map: &GridMap) -> Self {
        Self::zeros(map.width(), map.height(), DensityParams::default())
    }

    /// Builds a field from explicit row-major values. Negative values are rejected.
    pub fn from_values(
        width: usize,
        height: usize,
        rho: Vec<f64>,
        params: DensityParams,
    ) -> Option<Self> {
        if rho.len() != width * height || rho.iter().any(|v| !(*v >= 0.0)) {
            return None;
        }
        Some(Self {
            width,
            height,
            rho,
            params,
            version: 0,
        })
    }

    pub fn with_version(mut self, version: u64) -> Self {
        self.version = version;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn params(&self) -> DensityParams {
        self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn values(&self) -> &[f64] {
        &self.rho
    }

    pub fn matches(&self, map: &GridMap) -> bool {
        self.width == map.width() && self.height == map.height()
    }

    /// Density at a cell.
    pub fn query(&self, c: GridCoord) -> Result<f64, DensityError> {
        if c.x >= self.width || c.y >= self.height {
            return Err(DensityError::CellOutOfBounds(c));
        }
        Ok(self.rho[c.y * self.width + c.x])
    }

    #[inline]
    pub(crate) fn at(&self, c: GridCoord) -> f64 {
        self.rho[c.y * self.width + c.x]
    }

    pub fn max(&self) -> f64 {
        self.rho.iter().copied().fold(0.0, f64::max)
    }

    /// `x,y,rho` rows in reading order, with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rho.len() * 16 + 8);
        out.push_str("x,y,rho\n");
        for (i, v) in self.rho.iter().enumerate() {
            let _ = writeln!(out, "{},{},{:.6}", i % self.width, i / self.width, v);
        }
        out
    }
}

/// Builds a density field (version 0) from per-cell counts.
pub fn build_density(
    counts: &PopulationCounts,
    map: &GridMap,
    params: DensityParams,
) -> Result<DensityMap, DensityError> {
    if !(params.gamma.is_finite() && params.gamma > 0.0) {
        return Err(DensityError::BadGamma(params.gamma));
    }
    let expected = (map.width(), map.height());
    if counts.dims() != expected {
        return Err(DensityError::DimensionMismatch {
            expected,
            found: counts.dims(),
        });
    }
    let (w, h) = expected;
    let r = params.patch_radius;
    // kernel values indexed by squared offset
    let kernel: Vec<f64> = (0..=2 * r * r)
        .map(|d2| (-(d2 as f64) / 2.0).exp())
        .collect();
    let norm = (2.0 * PI).sqrt();

    let mut rho = vec![0.0; w * h];
    for (src, n) in counts.iter() {
        let weight = params.gamma * n as f64 / norm;
        let (x0, x1) = (src.x.saturating_sub(r), (src.x + r).min(w - 1));
        let (y0, y1) = (src.y.saturating_sub(r), (src.y + r).min(h - 1));
        for y in y0..=y1 {
            let dy = y.abs_diff(src.y);
            let row = &mut rho[y * w..(y + 1) * w];
            for (x, cell) in row.iter_mut().enumerate().take(x1 + 1).skip(x0) {
                let dx = x.abs_diff(src.x);
                *cell += weight * kernel[dx * dx + dy * dy];
            }
        }
    }
    Ok(DensityMap {
        width: w,
        height: h,
        rho,
        params,
        version: 0,
    })
}

/// Stamps successive snapshots with strictly increasing versions.
#[derive(Debug, Clone)]
pub struct DensityBuilder {
    params: DensityParams,
    next_version: u64,
}

impl DensityBuilder {
    pub fn new(params: DensityParams) -> Self {
        Self {
            params,
            next_version: 1,
        }
    }

    pub fn params(&self) -> DensityParams {
        self.params
    }

    pub fn rebuild(
        &mut self,
        counts: &PopulationCounts,
        map: &GridMap,
    ) -> Result<DensityMap, DensityError> {
        let dmap = build_density(counts, map, self.params)?.with_version(self.next_version);
        self.next_version += 1;
        Ok(dmap)
    }

    pub fn rebuild_from_positions(
        &mut self,
        positions: &[(f64, f64)],
        map: &GridMap,
    ) -> Result<DensityMap, DensityError> {
        let counts = bin_positions(positions, map)?;
        self.rebuild(&counts, map)
    }
}
