use std::str::FromStr;
use std::time::Duration;

use citytb_core::{GeoPoint, SimTime};
use serde::Serialize;

use crate::error::AsiError;
use crate::store::ObservationStore;

pub const IDW_POWER: f64 = 2.0;
pub const IDW_CUTOFF_M: f64 = 250.0;
pub const STALENESS: Duration = Duration::from_secs(600);

/// A `rows` x `cols` grid over a bounding box. Values are sampled at cell
/// centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub south: f64,
    pub west: f64,
    pub north: f64,
    pub east: f64,
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    /// `bbox` is `south,west,north,east`; `cells` is `N` or `RxC`.
    pub fn parse(bbox: &str, cells: &str) -> Result<Grid, AsiError> {
        let bad = |what: &str| AsiError::BadFilter(format!("bad {what}"));
        let b: Vec<f64> = bbox
            .split(',')
            .map(f64::from_str)
            .collect::<Result<_, _>>()
            .map_err(|_| bad("bbox"))?;
        let [south, west, north, east] = b[..] else {
            return Err(bad("bbox"));
        };
        let (rows, cols) = match cells.split_once('x') {
            Some((r, c)) => (r.parse(), c.parse()),
            None => (cells.parse(), cells.parse()),
        };
        let (rows, cols) = (rows.map_err(|_| bad("cells"))?, cols.map_err(|_| bad("cells"))?);
        let g = Grid {
            south,
            west,
            north,
            east,
            rows,
            cols,
        };
        if rows == 0 || cols == 0 || rows * cols > 1_000_000 || south >= north || west >= east {
            return Err(bad("grid"));
        }
        Ok(g)
    }

    pub fn center(&self, row: usize, col: usize) -> GeoPoint {
        let dlat = (self.north - self.south) / self.rows as f64;
        let dlon = (self.east - self.west) / self.cols as f64;
        GeoPoint::new(
            self.south + (row as f64 + 0.5) * dlat,
            self.west + (col as f64 + 0.5) * dlon,
        )
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        p.lat >= self.south && p.lat <= self.north && p.lon >= self.west && p.lon <= self.east
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub phenomenon: String,
    pub at: SimTime,
    pub grid: Grid,
    /// Row-major from the south-west corner; `None` marks no-data cells.
    pub cells: Vec<Option<f64>>,
    pub sources: usize,
}

impl Heatmap {
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row * self.grid.cols + col]
    }
}

/// Inverse-distance weighting over sources within the cutoff.
pub fn idw(sources: &[(GeoPoint, f64)], at: &GeoPoint) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (p, v) in sources {
        let d = p.distance_m(at);
        if d > IDW_CUTOFF_M {
            continue;
        }
        if d < 1e-9 {
            return Some(*v);
        }
        let w = d.powf(-IDW_POWER);
        num += w * v;
        den += w;
    }
    (den > 0.0).then(|| num / den)
}

impl ObservationStore {
    pub fn heatmap(&self, phenomenon: &str, grid: Grid, at: SimTime) -> Result<Heatmap, AsiError> {
        let sources: Vec<(GeoPoint, f64)> = self
            .latest_per_source(phenomenon, at, STALENESS)
            .into_iter()
            .map(|o| (o.position, o.value))
            .collect();
        if !sources.iter().any(|(p, _)| grid.contains(p)) {
            return Err(AsiError::NoData(format!(
                "no fresh {phenomenon} observation inside the region"
            )));
        }
        let mut cells = Vec::with_capacity(grid.rows * grid.cols);
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                cells.push(idw(&sources, &grid.center(r, c)));
            }
        }
        Ok(Heatmap {
            phenomenon: phenomenon.to_string(),
            at,
            grid,
            cells,
            sources: sources.len(),
        })
    }
}
