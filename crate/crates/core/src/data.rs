//! Gridded time series, land masks, train/test splits and regions.
//!
//! # GSF container
//!
//! ```text
//! offset 0   8 bytes   magic "GSF1" followed by u32 LE format version (= 1)
//! offset 8   u32 LE    header length H in bytes
//! offset 12  H bytes   UTF-8 JSON header (see GsfHeader)
//! then       ceil(n_lat*n_lon/8) bytes   mask, packed bits, LSB first,
//!                                        cell index = lat*n_lon + lon, 1 = kept
//! then       n_time*n_lat*n_lon f32 LE  values, time-major, then lat, then lon
//! ```
//!
//! Masked (land) cells may hold any value, conventionally NaN. Kept cells must
//! be finite.

use std::fs;
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::binio::Reader;
use crate::error::{domain, parse_err, Result};
use crate::rng::{tag, Stream};

pub const GSF_MAGIC: &[u8; 4] = b"GSF1";
pub const GSF_VERSION: u32 = 1;

/// Regular latitude/longitude grid; coordinates are cell centers in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n_lat: usize,
    pub n_lon: usize,
    pub lat0: f64,
    pub lon0: f64,
    pub dlat: f64,
    pub dlon: f64,
}

impl Grid {
    /// One-degree global grid with centers at half degrees.
    pub fn global_one_degree() -> Self {
        Self {
            n_lat: 180,
            n_lon: 360,
            lat0: -89.5,
            lon0: 0.5,
            dlat: 1.0,
            dlon: 1.0,
        }
    }

    /// Global grid with `n_lat × n_lon` equal cells.
    pub fn global(n_lat: usize, n_lon: usize) -> Self {
        let dlat = 180.0 / n_lat as f64;
        let dlon = 360.0 / n_lon as f64;
        Self {
            n_lat,
            n_lon,
            lat0: -90.0 + dlat / 2.0,
            lon0: dlon / 2.0,
            dlat,
            dlon,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn lat(&self, i: usize) -> f64 {
        self.lat0 + i as f64 * self.dlat
    }

    /// Longitude of column `j`, wrapped to `[0, 360)`.
    pub fn lon(&self, j: usize) -> f64 {
        (self.lon0 + j as f64 * self.dlon).rem_euclid(360.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GriddedSeries {
    pub grid: Grid,
    pub n_time: usize,
    pub cadence: String,
    /// Optional per-snapshot labels (ISO dates for real data).
    pub time_labels: Vec<String>,
    /// `n_time × n_lat × n_lon`, time-major.
    pub values: Vec<f64>,
}

impl GriddedSeries {
    pub fn snapshot(&self, t: usize) -> &[f64] {
        let n = self.grid.n_cells();
        &self.values[t * n..(t + 1) * n]
    }
}

/// `true` marks a kept (ocean) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LandMask {
    pub grid: Grid,
    pub kept: Vec<bool>,
}

impl LandMask {
    pub fn all_ocean(grid: Grid) -> Self {
        Self {
            grid,
            kept: vec![true; grid.n_cells()],
        }
    }

    pub fn n_kept(&self) -> usize {
        self.kept.iter().filter(|k| **k).count()
    }

    /// Grid cell index of every kept cell, in flattening order.
    pub fn kept_cells(&self) -> Vec<usize> {
        self.kept
            .iter()
            .enumerate()
            .filter_map(|(i, k)| k.then_some(i))
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GsfHeader {
    n_time: usize,
    n_lat: usize,
    n_lon: usize,
    lat0: f64,
    lon0: f64,
    dlat: f64,
    dlon: f64,
    cadence: String,
    mask_encoding: String,
    value_encoding: String,
    #[serde(default)]
    time_labels: Vec<String>,
}

const MASK_ENCODING: &str = "packed-bits-lsb";
const VALUE_ENCODING: &str = "f32-le";

pub fn encode_series(series: &GriddedSeries, mask: &LandMask) -> Result<Vec<u8>> {
    let g = series.grid;
    if mask.grid != g || mask.kept.len() != g.n_cells() {
        return Err(domain("mask grid does not match the series grid"));
    }
    if series.values.len() != series.n_time * g.n_cells() {
        return Err(domain("series value count does not match its dimensions"));
    }
    if !series.time_labels.is_empty() && series.time_labels.len() != series.n_time {
        return Err(domain("time labels must be empty or one per snapshot"));
    }
    let header = GsfHeader {
        n_time: series.n_time,
        n_lat: g.n_lat,
        n_lon: g.n_lon,
        lat0: g.lat0,
        lon0: g.lon0,
        dlat: g.dlat,
        dlon: g.dlon,
        cadence: series.cadence.clone(),
        mask_encoding: MASK_ENCODING.into(),
        value_encoding: VALUE_ENCODING.into(),
        time_labels: series.time_labels.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out =
        Vec::with_capacity(12 + json.len() + g.n_cells() / 8 + 1 + 4 * series.values.len());
    out.extend_from_slice(GSF_MAGIC);
    out.extend_from_slice(&GSF_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let mut bits = vec![0u8; g.n_cells().div_ceil(8)];
    for (i, k) in mask.kept.iter().enumerate() {
        if *k {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bits);
    for v in &series.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_series(bytes: &[u8]) -> Result<(GriddedSeries, LandMask)> {
    let mut r = Reader::new(bytes);
    r.expect_magic(GSF_MAGIC, "GSF")?;
    let at = r.pos;
    let version = r.u32("format version")?;
    if version != GSF_VERSION {
        return Err(parse_err(at, format!("unsupported GSF version {version}")));
    }
    let at = r.pos;
    let header_len = r.u32("header length")? as usize;
    if header_len > r.remaining() {
        return Err(parse_err(
            at,
            format!(
                "header length {header_len} exceeds the {} bytes that follow",
                r.remaining()
            ),
        ));
    }
    let header_at = r.pos;
    let raw = r.take(header_len, "header")?;
    let header: GsfHeader = serde_json::from_slice(raw).map_err(|e| {
        parse_err(
            header_at,
            format!("header length or JSON header invalid: {e}"),
        )
    })?;
    if header.mask_encoding != MASK_ENCODING || header.value_encoding != VALUE_ENCODING {
        return Err(parse_err(header_at, "unsupported mask or value encoding"));
    }
    if !header.time_labels.is_empty() && header.time_labels.len() != header.n_time {
        return Err(parse_err(
            header_at,
            "time_labels count does not match n_time",
        ));
    }
    let grid = Grid {
        n_lat: header.n_lat,
        n_lon: header.n_lon,
        lat0: header.lat0,
        lon0: header.lon0,
        dlat: header.dlat,
        dlon: header.dlon,
    };
    let cells = grid
        .n_lat
        .checked_mul(grid.n_lon)
        .ok_or_else(|| parse_err(header_at, "grid size overflows"))?;
    let mask_len = cells.div_ceil(8);
    let values_len = cells
        .checked_mul(header.n_time)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| parse_err(header_at, "payload size overflows"))?;
    if r.remaining() != mask_len + values_len {
        return Err(parse_err(
            r.pos,
            format!(
                "payload is {} bytes but header dims (n_time={}, n_lat={}, n_lon={}) require {}",
                r.remaining(),
                header.n_time,
                header.n_lat,
                header.n_lon,
                mask_len + values_len
            ),
        ));
    }
    let bits = r.take(mask_len, "mask")?;
    let kept: Vec<bool> = (0..cells)
        .map(|i| bits[i / 8] >> (i % 8) & 1 == 1)
        .collect();
    let values_at = r.pos;
    let raw = r.take(values_len, "values")?;
    let mut values = Vec::with_capacity(cells * header.n_time);
    for (k, c) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(c.try_into().unwrap());
        if kept[k % cells] && !v.is_finite() {
            return Err(parse_err(
                values_at + 4 * k,
                format!(
                    "non-finite value at kept cell {} of snapshot {}",
                    k % cells,
                    k / cells
                ),
            ));
        }
        values.push(v as f64);
    }
    let series = GriddedSeries {
        grid,
        n_time: header.n_time,
        cadence: header.cadence,
        time_labels: header.time_labels,
        values,
    };
    Ok((series, LandMask { grid, kept }))
}

pub fn load_series(path: impl AsRef<Path>) -> Result<(GriddedSeries, LandMask)> {
    decode_series(&fs::read(path)?)
}

pub fn write_series(path: impl AsRef<Path>, series: &GriddedSeries, mask: &LandMask) -> Result<()> {
    let bytes = encode_series(series, mask)?;
    write_atomic(path.as_ref(), &bytes)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Kept cells of every snapshot as the columns of an `N_kept × T` matrix.
pub fn flatten(series: &GriddedSeries, mask: &LandMask) -> Result<DMatrix<f64>> {
    if series.grid != mask.grid || series.values.len() != series.n_time * mask.grid.n_cells() {
        return Err(domain("series and mask dimensions differ"));
    }
    let cells = mask.kept_cells();
    if cells.is_empty() {
        return Err(domain(
            "mask keeps no cells; the flattened state would be empty",
        ));
    }
    Ok(DMatrix::from_fn(cells.len(), series.n_time, |i, t| {
        series.snapshot(t)[cells[i]]
    }))
}

/// Inverse of [`flatten`] for one snapshot; masked cells get `sentinel`.
pub fn unflatten_snapshot(mask: &LandMask, column: &[f64], sentinel: f64) -> Result<Vec<f64>> {
    let cells = mask.kept_cells();
    if column.len() != cells.len() {
        return Err(domain(format!(
            "flattened snapshot has {} values, mask keeps {}",
            column.len(),
            cells.len()
        )));
    }
    let mut out = vec![sentinel; mask.grid.n_cells()];
    for (c, v) in cells.iter().zip(column) {
        out[*c] = *v;
    }
    Ok(out)
}

/// Inverse of [`flatten`]: an `N_kept × T` matrix back to a gridded series.
pub fn unflatten(
    mask: &LandMask,
    snapshots: &DMatrix<f64>,
    sentinel: f64,
    cadence: &str,
) -> Result<GriddedSeries> {
    let mut values = Vec::with_capacity(snapshots.ncols() * mask.grid.n_cells());
    for col in snapshots.column_iter() {
        let c: Vec<f64> = col.iter().copied().collect();
        values.extend(unflatten_snapshot(mask, &c, sentinel)?);
    }
    Ok(GriddedSeries {
        grid: mask.grid,
        n_time: snapshots.ncols(),
        cadence: cadence.to_string(),
        time_labels: Vec::new(),
        values,
    })
}

/// Contiguous training span followed by a contiguous test span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

impl SplitSpec {
    pub fn new(train: Range<usize>, test: Range<usize>) -> Result<Self> {
        if train.is_empty() || test.is_empty() {
            return Err(domain("train and test spans must be non-empty"));
        }
        if train.end != test.start {
            return Err(domain("test span must start where the training span ends"));
        }
        Ok(Self { train, test })
    }

    /// First `n_train` snapshots train, the rest of `n_time` test.
    pub fn at(n_train: usize, n_time: usize) -> Result<Self> {
        Self::new(0..n_train, n_train..n_time)
    }

    /// Trains on every snapshot whose label sorts at or before `last_train`
    /// (ISO dates sort chronologically), tests on the remainder.
    pub fn from_labels(labels: &[String], last_train: &str) -> Result<Self> {
        if labels.is_empty() {
            return Err(domain("series has no time labels to split on"));
        }
        if labels.windows(2).any(|w| w[0] > w[1]) {
            return Err(domain("time labels are not in chronological order"));
        }
        let n_train = labels
            .iter()
            .take_while(|l| l.as_str() <= last_train)
            .count();
        Self::at(n_train, labels.len())
    }
}

/// Latitude/longitude box, bounds inclusive, longitudes in `[0, 360)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl RegionSpec {
    pub fn east_pacific() -> Self {
        Self {
            lat_min: -10.0,
            lat_max: 10.0,
            lon_min: 200.0,
            lon_max: 250.0,
        }
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.lat_min..=self.lat_max).contains(&lat) && (self.lon_min..=self.lon_max).contains(&lon)
    }
}

impl Default for RegionSpec {
    fn default() -> Self {
        Self::east_pacific()
    }
}

/// Positions in the flattened state of the kept cells whose centers lie in
/// `region`.
pub fn region_indices(mask: &LandMask, region: &RegionSpec) -> Result<Vec<usize>> {
    if !(region.lat_min < region.lat_max) || !(region.lon_min < region.lon_max) {
        return Err(domain("region bounds must satisfy min < max"));
    }
    let g = mask.grid;
    let out: Vec<usize> = mask
        .kept_cells()
        .into_iter()
        .enumerate()
        .filter(|(_, cell)| region.contains(g.lat(cell / g.n_lon), g.lon(cell % g.n_lon)))
        .map(|(pos, _)| pos)
        .collect();
    if out.is_empty() {
        return Err(domain("region selects no kept cells"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Time-independent base field plus `rank` sinusoids on orthogonal patterns.
    SinusoidMix,
    /// Annual cycle plus spatially independent AR(1) noise (full rank).
    NoisySeasonal,
}

impl std::str::FromStr for SynthKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoid-mix" => Ok(Self::SinusoidMix),
            "noisy-seasonal" => Ok(Self::NoisySeasonal),
            other => Err(domain(format!("unknown synthetic kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n_lat: usize,
    pub n_lon: usize,
    pub n_time: usize,
    /// Number of sinusoidal components (`sinusoid-mix`).
    pub rank: usize,
    /// Amplitude of the leading component in °C; later ones decay by 0.7×.
    pub amplitude: f64,
    /// Masks out a rectangular block of land.
    pub land: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            kind: SynthKind::SinusoidMix,
            n_lat: 18,
            n_lon: 36,
            n_time: 900,
            rank: 5,
            amplitude: 2.0,
            land: true,
            seed: 7,
        }
    }
}

/// Periods, in steps, cycled through by the sinusoid components.
const PERIODS: [f64; 10] = [52.0, 26.0, 34.7, 17.3, 78.0, 13.0, 41.6, 23.1, 62.4, 11.6];

/// Deterministic synthetic field; see [`SynthKind`].
pub fn synth_series(spec: &SynthSpec) -> Result<(GriddedSeries, LandMask)> {
    if spec.n_lat == 0 || spec.n_lon == 0 || spec.n_time == 0 {
        return Err(domain("synthetic grid and length must be non-zero"));
    }
    let grid = Grid::global(spec.n_lat, spec.n_lon);
    let mut mask = LandMask::all_ocean(grid);
    if spec.land && spec.n_lat >= 4 && spec.n_lon >= 8 {
        for i in spec.n_lat / 4..spec.n_lat / 2 {
            for j in spec.n_lon / 8..spec.n_lon / 4 {
                mask.kept[i * spec.n_lon + j] = false;
            }
        }
    }
    let cells = mask.kept_cells();
    let n = cells.len();
    if spec.kind == SynthKind::SinusoidMix && spec.rank > n {
        return Err(domain("rank exceeds the number of kept cells"));
    }
    let mut rng = Stream::derived(spec.seed, tag::SYNTH);
    let base: Vec<f64> = cells
        .iter()
        .map(|c| 15.0 + 12.0 * grid.lat(c / grid.n_lon).to_radians().cos())
        .collect();

    let mut field = DMatrix::<f64>::zeros(n, spec.n_time);
    for mut col in field.column_iter_mut() {
        for (v, b) in col.iter_mut().zip(&base) {
            *v = *b;
        }
    }
    match spec.kind {
        SynthKind::SinusoidMix => {
            let patterns = orthonormal_patterns(n, spec.rank, &mut rng);
            let scale = (n as f64).sqrt();
            for m in 0..spec.rank {
                let amp = spec.amplitude * 0.7f64.powi(m as i32) * scale;
                let period = PERIODS[m % PERIODS.len()];
                let phase = rng.uniform(0.0, std::f64::consts::TAU);
                for t in 0..spec.n_time {
                    let c = amp * (std::f64::consts::TAU * t as f64 / period + phase).sin();
                    for i in 0..n {
                        field[(i, t)] += c * patterns[(i, m)];
                    }
                }
            }
        }
        SynthKind::NoisySeasonal => {
            let phases: Vec<f64> = cells
                .iter()
                .map(|c| grid.lat(c / grid.n_lon).to_radians().sin() * std::f64::consts::PI)
                .collect();
            let mut noise = vec![0.0; n];
            for t in 0..spec.n_time {
                for i in 0..n {
                    noise[i] = 0.9 * noise[i] + 0.3 * rng.normal();
                    let seasonal = spec.amplitude
                        * (std::f64::consts::TAU * t as f64 / 52.0 + phases[i]).sin();
                    field[(i, t)] += seasonal + noise[i];
                }
            }
        }
    }
    let series = unflatten(&mask, &field, f64::NAN, "weekly")?;
    Ok((series, mask))
}

fn orthonormal_patterns(n: usize, m: usize, rng: &mut Stream) -> DMatrix<f64> {
    let mut p = DMatrix::from_fn(n, m, |_, _| rng.normal());
    for j in 0..m {
        for _ in 0..2 {
            for k in 0..j {
                let proj = p.column(k).dot(&p.column(j));
                let qk = p.column(k).into_owned();
                p.column_mut(j).axpy(-proj, &qk, 1.0);
            }
        }
        let norm = p.column(j).norm();
        p.column_mut(j).unscale_mut(norm);
    }
    p
}
