//! Population rasters, vertiport layout generation, and arrival-rate
//! calibration.
//!
//! Vertiports are placed by density-weighted sampling: each sampled site is
//! assigned the minimum disk that serves an equal share of the remaining
//! population, and the served population is zeroed before the next draw.
//! Dense regions therefore end up with many small-radius vertiports and
//! sparse regions with few large ones.

use crate::geom::Point;
use crate::world::{KinematicParams, PassengerId, VertiportId};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: malformed header: {reason}")]
    BadHeader { path: String, reason: String },
    #[error("{path}: expected {expected} values, found {found}")]
    DimensionMismatch {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}: invalid density {value} at row {row}, column {col}")]
    BadCell {
        path: String,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("population grid has no mass")]
    EmptyGrid,
    #[error("synthetic population mixture is empty")]
    EmptyMixture,
    #[error("requested {m} vertiports, need at least 1")]
    TooFewVertiports { m: usize },
    #[error("map invalid: {0}")]
    InvalidMap(String),
    #[error("arrival calibration failed: total served population is zero")]
    ZeroServedPopulation,
}

/// Gridded population counts. `density[row * width + col]` holds persons per
/// cell, row 0 at the bottom (lowest y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationGrid {
    pub width: usize,
    pub height: usize,
    /// Cell edge length, km.
    pub cell_size: f64,
    /// Lower-left corner of the grid, km.
    pub origin: Point,
    pub density: Vec<f64>,
}

impl PopulationGrid {
    pub fn new(
        width: usize,
        height: usize,
        cell_size: f64,
        origin: Point,
        density: Vec<f64>,
    ) -> Self {
        assert_eq!(density.len(), width * height);
        PopulationGrid {
            width,
            height,
            cell_size,
            origin,
            density,
        }
    }

    pub fn total_population(&self) -> f64 {
        self.density.iter().sum()
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Point {
        Point::new(
            self.origin.x + (col as f64 + 0.5) * self.cell_size,
            self.origin.y + (row as f64 + 0.5) * self.cell_size,
        )
    }

    fn validate_cells(&self, path: &str) -> Result<(), MapError> {
        for row in 0..self.height {
            for col in 0..self.width {
                let value = self.density[row * self.width + col];
                if !value.is_finite() || value < 0.0 {
                    return Err(MapError::BadCell {
                        path: path.to_string(),
                        row,
                        col,
                        value,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Supported raster file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridFormat {
    /// ESRI ASCII grid: ncols/nrows/xllcorner/yllcorner/cellsize header,
    /// optional NODATA_value (mapped to 0), first data row northernmost.
    EsriAscii,
    /// Headerless CSV, first row northernmost. Cell size and origin come
    /// from a `<path>.json` sidecar (`{"cell_size": km, "origin": [x, y]}`),
    /// defaulting to 1 km cells at the origin.
    Csv,
}

#[derive(Debug, Deserialize)]
struct CsvSidecar {
    #[serde(default = "default_cell_size")]
    cell_size: f64,
    #[serde(default)]
    origin: (f64, f64),
}

fn default_cell_size() -> f64 {
    1.0
}

/// Load a population raster from disk.
pub fn load_population_grid(path: &Path, format: GridFormat) -> Result<PopulationGrid, MapError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| MapError::Io {
        path: display.clone(),
        source,
    })?;
    match format {
        GridFormat::EsriAscii => parse_esri_ascii(&display, &text),
        GridFormat::Csv => {
            let sidecar_path = path.with_extension(format!(
                "{}.json",
                path.extension().and_then(|e| e.to_str()).unwrap_or("csv")
            ));
            let sidecar = match fs::read_to_string(&sidecar_path) {
                Ok(raw) => {
                    serde_json::from_str::<CsvSidecar>(&raw).map_err(|e| MapError::BadHeader {
                        path: sidecar_path.display().to_string(),
                        reason: e.to_string(),
                    })?
                }
                Err(_) => CsvSidecar {
                    cell_size: 1.0,
                    origin: (0.0, 0.0),
                },
            };
            parse_csv(&display, &text, sidecar.cell_size, sidecar.origin)
        }
    }
}

fn parse_esri_ascii(path: &str, text: &str) -> Result<PopulationGrid, MapError> {
    let mut ncols = None;
    let mut nrows = None;
    let mut xll = 0.0;
    let mut yll = 0.0;
    let mut cell_size = 1.0;
    let mut nodata: Option<f64> = None;
    let mut lines = text.lines().peekable();

    while let Some(line) = lines.peek() {
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else {
            lines.next();
            continue;
        };
        let key_lc = key.to_ascii_lowercase();
        if !matches!(
            key_lc.as_str(),
            "ncols" | "nrows" | "xllcorner" | "yllcorner" | "cellsize" | "nodata_value"
        ) {
            break;
        }
        let raw = parts.next().ok_or_else(|| MapError::BadHeader {
            path: path.to_string(),
            reason: format!("header key {key} has no value"),
        })?;
        let value: f64 = raw.parse().map_err(|_| MapError::BadHeader {
            path: path.to_string(),
            reason: format!("header value {raw} for {key} is not a number"),
        })?;
        match key_lc.as_str() {
            "ncols" => ncols = Some(value as usize),
            "nrows" => nrows = Some(value as usize),
            "xllcorner" => xll = value,
            "yllcorner" => yll = value,
            "cellsize" => cell_size = value,
            "nodata_value" => nodata = Some(value),
            _ => unreachable!(),
        }
        lines.next();
    }

    let (Some(width), Some(height)) = (ncols, nrows) else {
        return Err(MapError::BadHeader {
            path: path.to_string(),
            reason: "missing ncols/nrows".to_string(),
        });
    };
    if width == 0 || height == 0 || cell_size <= 0.0 {
        return Err(MapError::BadHeader {
            path: path.to_string(),
            reason: "non-positive dimensions or cellsize".to_string(),
        });
    }

    let mut values = Vec::with_capacity(width * height);
    for line in lines {
        for token in line.split_whitespace() {
            let v: f64 = token.parse().map_err(|_| MapError::BadHeader {
                path: path.to_string(),
                reason: format!("non-numeric cell value {token}"),
            })?;
            values.push(v);
        }
    }
    if values.len() != width * height {
        return Err(MapError::DimensionMismatch {
            path: path.to_string(),
            expected: width * height,
            found: values.len(),
        });
    }

    // File rows run north to south; storage rows run south to north.
    let mut density = vec![0.0; width * height];
    for (file_row, chunk) in values.chunks(width).enumerate() {
        let row = height - 1 - file_row;
        for (col, &v) in chunk.iter().enumerate() {
            density[row * width + col] = if Some(v) == nodata { 0.0 } else { v };
        }
    }

    let grid = PopulationGrid::new(width, height, cell_size, Point::new(xll, yll), density);
    grid.validate_cells(path)?;
    Ok(grid)
}

fn parse_csv(
    path: &str,
    text: &str,
    cell_size: f64,
    origin: (f64, f64),
) -> Result<PopulationGrid, MapError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| MapError::BadHeader {
                    path: path.to_string(),
                    reason: format!("non-numeric cell value {tok}"),
                })
            })
            .collect::<Result<Vec<f64>, MapError>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(MapError::DimensionMismatch {
            path: path.to_string(),
            expected: 1,
            found: 0,
        });
    }
    let width = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != width) {
        return Err(MapError::DimensionMismatch {
            path: path.to_string(),
            expected: width,
            found: bad.len(),
        });
    }
    let height = rows.len();
    // First CSV row is the northernmost; flip into bottom-up storage.
    let mut density = vec![0.0; width * height];
    for (file_row, row) in rows.iter().enumerate() {
        let grid_row = height - 1 - file_row;
        density[grid_row * width..(grid_row + 1) * width].copy_from_slice(row);
    }
    let grid = PopulationGrid::new(
        width,
        height,
        cell_size,
        Point::new(origin.0, origin.1),
        density,
    );
    grid.validate_cells(path)?;
    Ok(grid)
}

/// One isotropic-or-not Gaussian component of a synthetic population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBlob {
    /// Center, km.
    pub cx: f64,
    pub cy: f64,
    /// Standard deviations, km.
    pub sx: f64,
    pub sy: f64,
    /// Total population contributed by this component.
    pub weight: f64,
}

/// Mixture of Gaussians plus a uniform floor, integrated onto a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub origin: (f64, f64),
    pub gaussians: Vec<GaussianBlob>,
    /// Population spread uniformly over the whole map.
    pub uniform_weight: f64,
}

/// Deterministically rasterize a synthetic population mixture.
pub fn synth_population(spec: &SyntheticSpec) -> Result<PopulationGrid, MapError> {
    if spec.gaussians.is_empty() && spec.uniform_weight <= 0.0 {
        return Err(MapError::EmptyMixture);
    }
    if spec.gaussians.iter().any(|g| g.weight < 0.0) || spec.uniform_weight < 0.0 {
        return Err(MapError::EmptyMixture);
    }
    let area = spec.cell_size * spec.cell_size;
    let map_area = (spec.width * spec.height) as f64 * area;
    let mut density = vec![0.0; spec.width * spec.height];
    for row in 0..spec.height {
        for col in 0..spec.width {
            let x = spec.origin.0 + (col as f64 + 0.5) * spec.cell_size;
            let y = spec.origin.1 + (row as f64 + 0.5) * spec.cell_size;
            let mut d = spec.uniform_weight / map_area;
            for g in &spec.gaussians {
                let zx = (x - g.cx) / g.sx;
                let zy = (y - g.cy) / g.sy;
                let pdf = (-(zx * zx + zy * zy) / 2.0).exp()
                    / (std::f64::consts::TAU * g.sx * g.sy);
                d += g.weight * pdf;
            }
            density[row * spec.width + col] = d * area;
        }
    }
    let grid = PopulationGrid::new(
        spec.width,
        spec.height,
        spec.cell_size,
        Point::new(spec.origin.0, spec.origin.1),
        density,
    );
    if grid.total_population() <= 0.0 {
        return Err(MapError::EmptyGrid);
    }
    Ok(grid)
}

/// A passenger hub: position, calibrated hourly arrival rate, and the queue
/// of waiting passengers (runtime state, not exported with maps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertiport {
    pub id: VertiportId,
    pub x: f64,
    pub y: f64,
    /// Hourly passenger arrival rate.
    pub lambda: f64,
    /// Population inside this vertiport's serving disk at generation time.
    pub served_population: f64,
    #[serde(skip)]
    pub waiting: Vec<PassengerId>,
}

impl Vertiport {
    pub fn new(id: VertiportId, pos: Point) -> Self {
        Vertiport {
            id,
            x: pos.x,
            y: pos.y,
            lambda: 0.0,
            served_population: 0.0,
            waiting: Vec::new(),
        }
    }

    pub fn pos(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// A square map: side length, vertiports, and the number of flight levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldMap {
    /// Side of the square map, km.
    pub side_length: f64,
    /// South-west corner, km.
    #[serde(default = "origin_default")]
    pub origin: Point,
    pub flight_levels: u32,
    pub vertiports: Vec<Vertiport>,
}

fn origin_default() -> Point {
    Point::new(0.0, 0.0)
}

impl WorldMap {
    pub fn new(side_length: f64, flight_levels: u32, vertiports: Vec<Vertiport>) -> Self {
        WorldMap {
            side_length,
            origin: origin_default(),
            flight_levels,
            vertiports,
        }
    }

    pub fn vertiport(&self, id: VertiportId) -> Option<&Vertiport> {
        self.vertiports.iter().find(|v| v.id == id)
    }

    pub fn vertiport_mut(&mut self, id: VertiportId) -> Option<&mut Vertiport> {
        self.vertiports.iter_mut().find(|v| v.id == id)
    }

    /// Id of the vertiport closest to `p` (lowest id wins ties).
    pub fn nearest_vertiport(&self, p: Point) -> VertiportId {
        self.vertiports
            .iter()
            .map(|v| (v.pos().dist(p), v.id))
            .min_by(|a, b| a.partial_cmp(b).unwrap())
            .map(|(_, id)| id)
            .expect("map has no vertiports")
    }

    /// Total hourly arrival rate over all vertiports.
    pub fn total_arrival_rate(&self) -> f64 {
        self.vertiports.iter().map(|v| v.lambda).sum()
    }

    /// Validate the map for use in a simulation.
    pub fn validate(&self) -> Result<(), MapError> {
        if self.vertiports.len() < 2 {
            return Err(MapError::InvalidMap(format!(
                "need at least 2 vertiports, got {}",
                self.vertiports.len()
            )));
        }
        if self.flight_levels < 1 {
            return Err(MapError::InvalidMap("flight_levels must be >= 1".into()));
        }
        for v in &self.vertiports {
            if v.lambda < 0.0 {
                return Err(MapError::InvalidMap(format!(
                    "vertiport {} has negative arrival rate",
                    v.id
                )));
            }
        }
        for (i, a) in self.vertiports.iter().enumerate() {
            for b in &self.vertiports[i + 1..] {
                if a.pos() == b.pos() {
                    return Err(MapError::InvalidMap(format!(
                        "vertiports {} and {} share a position",
                        a.id, b.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generate `m` vertiports by density-weighted sampling with serving disks.
///
/// Each round samples a cell from the remaining density, finds the minimum
/// integer cell radius whose disk holds an equal population share (or all
/// the remaining mass, whichever is smaller), records the vertiport at the
/// cell center, and zeros the served cells.
pub fn generate_vertiports<R: Rng>(
    grid: &PopulationGrid,
    m: usize,
    rng: &mut R,
) -> Result<WorldMap, MapError> {
    if m < 1 {
        return Err(MapError::TooFewVertiports { m });
    }
    let total = grid.total_population();
    if total <= 0.0 {
        return Err(MapError::EmptyGrid);
    }
    let vp_pop = total / m as f64;
    let mut remaining = grid.density.clone();
    let mut vertiports = Vec::with_capacity(m);

    for id in 1..=m {
        let mass: f64 = remaining.iter().sum();
        // Serving disks overshoot their share by up to one ring, so the last
        // draws can face an exhausted grid. Fall back to the original
        // density; such vertiports serve no additional population.
        let exhausted = mass <= 0.0;
        let source: &[f64] = if exhausted { &grid.density } else { &remaining };
        let source_mass = if exhausted { total } else { mass };
        let mut chosen;
        let mut attempts = 0;
        loop {
            let target = rng.random_range(0.0..source_mass);
            let mut acc = 0.0;
            chosen = source.len() - 1;
            for (idx, &d) in source.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = idx;
                    break;
                }
            }
            let pos = grid.cell_center(chosen / grid.width, chosen % grid.width);
            let taken = vertiports.iter().any(|v: &Vertiport| v.pos() == pos);
            attempts += 1;
            if !taken || attempts > 10_000 {
                if taken {
                    return Err(MapError::InvalidMap(
                        "could not sample a distinct vertiport position".into(),
                    ));
                }
                break;
            }
        }
        let (crow, ccol) = (chosen / grid.width, chosen % grid.width);
        if exhausted {
            vertiports.push(Vertiport::new(id as VertiportId, grid.cell_center(crow, ccol)));
            continue;
        }

        // Minimum integer radius (cell units) containing >= vp_pop.
        let mut by_radius: Vec<(u32, usize)> = Vec::new();
        for row in 0..grid.height {
            for col in 0..grid.width {
                let dr = row as f64 - crow as f64;
                let dc = col as f64 - ccol as f64;
                let dist = (dr * dr + dc * dc).sqrt();
                by_radius.push((dist.ceil() as u32, row * grid.width + col));
            }
        }
        by_radius.sort_unstable();
        let mut served = 0.0;
        let mut radius = 0u32;
        let mut cursor = 0;
        while cursor < by_radius.len() && served < vp_pop {
            radius = by_radius[cursor].0;
            // Take every cell at this radius before re-testing the mass.
            while cursor < by_radius.len() && by_radius[cursor].0 == radius {
                served += remaining[by_radius[cursor].1];
                cursor += 1;
            }
        }
        // Zero everything within the final radius.
        for &(r, idx) in &by_radius[..cursor] {
            debug_assert!(r <= radius);
            remaining[idx] = 0.0;
        }

        let pos = grid.cell_center(crow, ccol);
        let mut vp = Vertiport::new(id as VertiportId, pos);
        vp.served_population = served;
        vertiports.push(vp);
    }

    let side = grid.width.max(grid.height) as f64 * grid.cell_size;
    let mut map = WorldMap::new(side, 1, vertiports);
    map.origin = grid.origin;
    Ok(map)
}

/// Assign per-vertiport hourly arrival rates.
///
/// The network-wide rate assumes an average trip covering two thirds of the
/// map side length at cruise speed; that rate is split between vertiports in
/// proportion to their served population.
pub fn calibrate_arrival_rates(
    map: &mut WorldMap,
    n_agents: usize,
    params: &KinematicParams,
) -> Result<(), MapError> {
    let total_served: f64 = map.vertiports.iter().map(|v| v.served_population).sum();
    if total_served <= 0.0 {
        return Err(MapError::ZeroServedPopulation);
    }
    let avg_trip_time_s = (2.0 / 3.0) * map.side_length / params.v;
    let trips_per_hr_agent = 3600.0 / avg_trip_time_s;
    let network_rate = n_agents as f64 * trips_per_hr_agent;
    for v in &mut map.vertiports {
        v.lambda = network_rate * v.served_population / total_served;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn uniform_grid(width: usize, height: usize, value: f64) -> PopulationGrid {
        PopulationGrid::new(
            width,
            height,
            1.0,
            Point::new(0.0, 0.0),
            vec![value; width * height],
        )
    }

    #[test]
    fn csv_grid_totals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        fs::write(&path, "1,1\n1,1\n").unwrap();
        let grid = load_population_grid(&path, GridFormat::Csv).unwrap();
        assert_eq!((grid.width, grid.height), (2, 2));
        assert_relative_eq!(grid.cell_size, 1.0);
        assert_relative_eq!(grid.total_population(), 4.0);
    }

    #[test]
    fn csv_sidecar_sets_geometry() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        fs::write(&path, "1,2\n3,4\n").unwrap();
        fs::write(
            dir.path().join("grid.csv.json"),
            r#"{"cell_size": 2.5, "origin": [10.0, -5.0]}"#,
        )
        .unwrap();
        let grid = load_population_grid(&path, GridFormat::Csv).unwrap();
        assert_relative_eq!(grid.cell_size, 2.5);
        assert_relative_eq!(grid.origin.x, 10.0);
        assert_relative_eq!(grid.origin.y, -5.0);
        // First file row is the top: "1,2" lands on the upper storage row.
        assert_relative_eq!(grid.density[1 * 2 + 0], 1.0);
        assert_relative_eq!(grid.density[0 * 2 + 0], 3.0);
    }

    #[test]
    fn esri_ascii_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.asc");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "ncols 3").unwrap();
        writeln!(f, "nrows 2").unwrap();
        writeln!(f, "xllcorner 0.0").unwrap();
        writeln!(f, "yllcorner 0.0").unwrap();
        writeln!(f, "cellsize 1.0").unwrap();
        writeln!(f, "NODATA_value -9999").unwrap();
        writeln!(f, "1 2 -9999").unwrap();
        writeln!(f, "4 5 6").unwrap();
        drop(f);
        let grid = load_population_grid(&path, GridFormat::EsriAscii).unwrap();
        assert_eq!((grid.width, grid.height), (3, 2));
        // NODATA maps to zero.
        assert_relative_eq!(grid.total_population(), 18.0);
        // Top file row goes to row 1 (north).
        assert_relative_eq!(grid.density[1 * 3 + 0], 1.0);
        assert_relative_eq!(grid.density[0 * 3 + 2], 6.0);
    }

    #[test]
    fn negative_cell_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        fs::write(&path, "1,1\n1,-3\n").unwrap();
        let err = load_population_grid(&path, GridFormat::Csv).unwrap_err();
        match err {
            MapError::BadCell { row, col, value, .. } => {
                assert_eq!((row, col), (0, 1)); // bottom-up storage row
                assert_relative_eq!(value, -3.0);
            }
            other => panic!("expected BadCell, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.asc");
        fs::write(&path, "ncols 3\nnrows 2\ncellsize 1.0\n1 2 3 4 5\n").unwrap();
        let err = load_population_grid(&path, GridFormat::EsriAscii).unwrap_err();
        assert!(matches!(err, MapError::DimensionMismatch { .. }));
    }

    #[test]
    fn synthetic_gaussian_peaks_at_center() {
        let spec = SyntheticSpec {
            width: 21,
            height: 21,
            cell_size: 1.0,
            origin: (0.0, 0.0),
            gaussians: vec![GaussianBlob {
                cx: 10.5,
                cy: 10.5,
                sx: 3.0,
                sy: 3.0,
                weight: 1000.0,
            }],
            uniform_weight: 0.0,
        };
        let grid = synth_population(&spec).unwrap();
        let argmax = grid
            .density
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!((argmax / 21, argmax % 21), (10, 10));
    }

    #[test]
    fn synthetic_uniform_is_flat() {
        let spec = SyntheticSpec {
            width: 8,
            height: 4,
            cell_size: 2.0,
            origin: (0.0, 0.0),
            gaussians: vec![],
            uniform_weight: 64.0,
        };
        let grid = synth_population(&spec).unwrap();
        for &d in &grid.density {
            assert_relative_eq!(d, 2.0); // 64 people over 32 cells
        }
    }

    #[test]
    fn synthetic_twin_blobs_are_mirror_symmetric() {
        let spec = SyntheticSpec {
            width: 20,
            height: 10,
            cell_size: 1.0,
            origin: (0.0, 0.0),
            gaussians: vec![
                GaussianBlob {
                    cx: 5.0,
                    cy: 5.0,
                    sx: 2.0,
                    sy: 2.0,
                    weight: 500.0,
                },
                GaussianBlob {
                    cx: 15.0,
                    cy: 5.0,
                    sx: 2.0,
                    sy: 2.0,
                    weight: 500.0,
                },
            ],
            uniform_weight: 0.0,
        };
        let grid = synth_population(&spec).unwrap();
        for row in 0..10 {
            for col in 0..20 {
                let mirror = 19 - col;
                assert_relative_eq!(
                    grid.density[row * 20 + col],
                    grid.density[row * 20 + mirror],
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn empty_mixture_rejected() {
        let spec = SyntheticSpec {
            width: 4,
            height: 4,
            cell_size: 1.0,
            origin: (0.0, 0.0),
            gaussians: vec![],
            uniform_weight: 0.0,
        };
        assert!(matches!(
            synth_population(&spec),
            Err(MapError::EmptyMixture)
        ));
    }

    #[test]
    fn single_vertiport_serves_everything() {
        let grid = uniform_grid(10, 10, 2.0);
        let mut rng = crate::rng::stream(3, "mapgen-test");
        let map = generate_vertiports(&grid, 1, &mut rng).unwrap();
        assert_eq!(map.vertiports.len(), 1);
        assert_relative_eq!(map.vertiports[0].served_population, 200.0);
    }

    #[test]
    fn two_point_masses_get_one_vertiport_each() {
        let mut density = vec![0.0; 64];
        density[0] = 100.0; // (row 0, col 0)
        density[63] = 100.0; // (row 7, col 7)
        let grid = PopulationGrid::new(8, 8, 1.0, Point::new(0.0, 0.0), density);
        for seed in 0..20 {
            let mut rng = crate::rng::stream(seed, "mapgen-test");
            let map = generate_vertiports(&grid, 2, &mut rng).unwrap();
            let mut cells: Vec<(f64, f64)> =
                map.vertiports.iter().map(|v| (v.x, v.y)).collect();
            cells.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(cells, vec![(0.5, 0.5), (7.5, 7.5)]);
            for v in &map.vertiports {
                assert_relative_eq!(v.served_population, 100.0);
            }
        }
    }

    #[test]
    fn dense_regions_get_smaller_disks() {
        // Dense north-east quarter at 10x the density of the rest.
        let n = 32;
        let mut density = vec![1.0; n * n];
        for row in n / 2..n {
            for col in n / 2..n {
                density[row * n + col] = 10.0;
            }
        }
        let grid = PopulationGrid::new(n, n, 1.0, Point::new(0.0, 0.0), density);
        let total = grid.total_population();
        let vp_pop = total / 8.0;
        // Direct minimum-disk computation at the two region centers.
        let radius_at = |crow: usize, ccol: usize| -> u32 {
            let mut by_radius: Vec<(u32, f64)> = Vec::new();
            for row in 0..n {
                for col in 0..n {
                    let dr = row as f64 - crow as f64;
                    let dc = col as f64 - ccol as f64;
                    by_radius
                        .push(((dr * dr + dc * dc).sqrt().ceil() as u32, grid.density[row * n + col]));
                }
            }
            by_radius.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut served = 0.0;
            let mut radius = 0;
            for (r, d) in by_radius {
                if served >= vp_pop {
                    break;
                }
                radius = r;
                served += d;
            }
            radius
        };
        assert!(radius_at(24, 24) < radius_at(8, 8));
    }

    #[test]
    fn mass_accounting_bound_holds() {
        let grid = uniform_grid(20, 20, 1.0);
        let total = grid.total_population();
        for seed in 0..10 {
            let m = 5;
            let mut rng = crate::rng::stream(seed, "mapgen-test");
            let map = generate_vertiports(&grid, m, &mut rng).unwrap();
            let zeroed: f64 = map.vertiports.iter().map(|v| v.served_population).sum();
            let vp_pop = total / m as f64;
            assert!(zeroed >= (m - 1) as f64 * vp_pop - 1e-9);
        }
    }

    #[test]
    fn sampling_frequencies_match_density() {
        // Two cells with densities 3 and 1: the first sample should hit the
        // heavy cell with p = 0.75.
        let grid = PopulationGrid::new(2, 1, 1.0, Point::new(0.0, 0.0), vec![3.0, 1.0]);
        let trials = 10_000;
        let mut heavy = 0usize;
        let mut rng = crate::rng::stream(11, "mapgen-sampling");
        for _ in 0..trials {
            let map = generate_vertiports(&grid, 1, &mut rng).unwrap();
            if map.vertiports[0].x < 1.0 {
                heavy += 1;
            }
        }
        let p = 0.75;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        let expected = trials as f64 * p;
        assert!(
            (heavy as f64 - expected).abs() <= 3.0 * sigma,
            "heavy-cell hits {heavy} outside 3 sigma of {expected}"
        );
    }

    #[test]
    fn generation_is_deterministic() {
        let grid = uniform_grid(16, 16, 1.0);
        let a = generate_vertiports(&grid, 6, &mut crate::rng::stream(42, "mapgen")).unwrap();
        let b = generate_vertiports(&grid, 6, &mut crate::rng::stream(42, "mapgen")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn urban_quarter_attracts_more_vertiports() {
        let n = 32;
        let mut density = vec![1.0; n * n];
        for row in n / 2..n {
            for col in n / 2..n {
                density[row * n + col] = 10.0;
            }
        }
        let grid = PopulationGrid::new(n, n, 1.0, Point::new(0.0, 0.0), density);
        let mut dense_total = 0usize;
        let mut sparse_total = 0usize;
        for seed in 0..30 {
            let mut rng = crate::rng::stream(seed, "mapgen-urban");
            let map = generate_vertiports(&grid, 8, &mut rng).unwrap();
            for v in &map.vertiports {
                if v.x > n as f64 / 2.0 && v.y > n as f64 / 2.0 {
                    dense_total += 1;
                } else {
                    sparse_total += 1;
                }
            }
        }
        assert!(
            dense_total > sparse_total,
            "dense quarter got {dense_total} vs sparse {sparse_total}"
        );
    }

    #[test]
    fn arrival_calibration_matches_hand_arithmetic() {
        let mut map = WorldMap::new(
            40.0,
            1,
            vec![
                {
                    let mut v = Vertiport::new(1, Point::new(5.0, 5.0));
                    v.served_population = 100.0;
                    v
                },
                {
                    let mut v = Vertiport::new(2, Point::new(30.0, 30.0));
                    v.served_population = 100.0;
                    v
                },
            ],
        );
        let params = KinematicParams::default();
        calibrate_arrival_rates(&mut map, 10, &params).unwrap();
        // avg trip time = (80/3)/0.09 s, about 296.3 s -> 12.15 trips/hr/agent.
        let network = map.total_arrival_rate();
        assert_relative_eq!(network, 121.5, max_relative = 1e-9);
        assert_relative_eq!(map.vertiports[0].lambda, network / 2.0);
        assert_relative_eq!(map.vertiports[1].lambda, network / 2.0);
    }

    #[test]
    fn rates_sum_to_network_rate() {
        let grid = uniform_grid(16, 16, 3.0);
        let mut rng = crate::rng::stream(9, "mapgen");
        let mut map = generate_vertiports(&grid, 5, &mut rng).unwrap();
        let params = KinematicParams::default();
        calibrate_arrival_rates(&mut map, 7, &params).unwrap();
        let expected = 7.0 * 3600.0 / ((2.0 / 3.0) * map.side_length / params.v);
        assert_relative_eq!(map.total_arrival_rate(), expected, max_relative = 1e-12);
    }

    #[test]
    fn map_validation_rejects_degenerate_maps() {
        let one = WorldMap::new(10.0, 1, vec![Vertiport::new(1, Point::new(1.0, 1.0))]);
        assert!(one.validate().is_err());
        let dup = WorldMap::new(
            10.0,
            1,
            vec![
                Vertiport::new(1, Point::new(1.0, 1.0)),
                Vertiport::new(2, Point::new(1.0, 1.0)),
            ],
        );
        assert!(dup.validate().is_err());
    }
}
