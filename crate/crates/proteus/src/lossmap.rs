//! Insertion loss between gateway interfaces.
//!
//! The geometry is a single serpentine waveguide folded across the chip. Each
//! GI owns one writer tap in the first half and one reader tap in the second
//! half, so every sender reaches every receiver downstream of it. Loss
//! matrices can also be loaded from CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossMapError {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("no path from GI {0} to itself")]
    SelfPath(usize),
    #[error("GI index {index} out of range for {n_gis} GIs")]
    OutOfRange { index: usize, n_gis: usize },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{path}: row {row}, column {col}: {msg}")]
    Entry { path: String, row: usize, col: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossParams {
    pub waveguide_db_per_cm: f64,
    pub bend_db_per_90deg: f64,
    pub splitter_db: f64,
    pub coupler_db: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams { waveguide_db_per_cm: 0.54, bend_db_per_90deg: 0.005, splitter_db: 0.5, coupler_db: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    PropagationOnly,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PathProfile {
    pub length_cm: f64,
    pub n_bends: u32,
    pub n_splitters: u32,
    pub n_couplers: u32,
}

impl std::ops::Add for PathProfile {
    type Output = PathProfile;

    fn add(self, o: PathProfile) -> PathProfile {
        PathProfile {
            length_cm: self.length_cm + o.length_cm,
            n_bends: self.n_bends + o.n_bends,
            n_splitters: self.n_splitters + o.n_splitters,
            n_couplers: self.n_couplers + o.n_couplers,
        }
    }
}

pub fn path_insertion_loss(profile: &PathProfile, params: &LossParams, composition: Composition) -> f64 {
    let propagation =
        profile.length_cm * params.waveguide_db_per_cm + f64::from(profile.n_bends) * params.bend_db_per_90deg;
    match composition {
        Composition::PropagationOnly => propagation,
        Composition::Full => {
            propagation
                + f64::from(profile.n_splitters) * params.splitter_db
                + f64::from(profile.n_couplers) * params.coupler_db
        }
    }
}

/// Serpentine floorplan.
///
/// Writer tap of slot `k` sits at `k · gi_pitch_cm` along the waveguide, and
/// the reader tap of slot `k` at `(n−1) · gi_pitch_cm + turnaround_cm + k ·
/// gi_pitch_cm`. Rows are `chip_width_cm` long and every change of row is a
/// U-turn made of two 90° bends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChipLayout {
    pub chip_width_cm: f64,
    pub chip_height_cm: f64,
    pub n_gis: usize,
    pub serpentine_pitch_cm: f64,
    pub gi_pitch_cm: f64,
    pub turnaround_cm: f64,
    /// `gi_order[slot]` is the GI placed at that slot.
    pub gi_order: Vec<usize>,
    #[serde(default = "one")]
    pub splitters_per_path: u32,
    #[serde(default)]
    pub couplers_per_path: u32,
}

fn one() -> u32 {
    1
}

impl Default for ChipLayout {
    fn default() -> Self {
        ChipLayout::calibrated(32)
    }
}

impl ChipLayout {
    /// Shortest path whose propagation loss is 0.47 dB at 0.54 dB/cm.
    pub const MIN_PATH_CM: f64 = 0.87;
    /// Longest path whose propagation loss is 10 dB at 0.54 dB/cm.
    pub const MAX_PATH_CM: f64 = 18.5;

    /// A 2 cm × 2 cm layout whose shortest and longest paths are
    /// `MIN_PATH_CM` and `MAX_PATH_CM`.
    pub fn calibrated(n_gis: usize) -> Self {
        let n = n_gis.max(2);
        let gi_pitch_cm = (Self::MAX_PATH_CM - Self::MIN_PATH_CM) / (2.0 * (n - 1) as f64);
        ChipLayout {
            chip_width_cm: 2.0,
            chip_height_cm: 2.0,
            n_gis,
            serpentine_pitch_cm: 0.2,
            gi_pitch_cm,
            turnaround_cm: Self::MIN_PATH_CM,
            gi_order: (0..n_gis).collect(),
            splitters_per_path: 1,
            couplers_per_path: 0,
        }
    }

    pub fn serpentine_capacity_cm(&self) -> f64 {
        (self.chip_height_cm / self.serpentine_pitch_cm).floor() * self.chip_width_cm
    }

    pub fn used_length_cm(&self) -> f64 {
        2.0 * (self.n_gis.saturating_sub(1)) as f64 * self.gi_pitch_cm + self.turnaround_cm
    }

    pub fn validate(&self) -> Result<(), LossMapError> {
        let bad = |m: String| Err(LossMapError::InvalidLayout(m));
        if self.n_gis < 2 {
            return bad(format!("need at least 2 GIs, got {}", self.n_gis));
        }
        if !(self.chip_width_cm > 0.0 && self.chip_height_cm > 0.0 && self.serpentine_pitch_cm > 0.0) {
            return bad("chip dimensions and pitch must be positive".into());
        }
        if !(self.gi_pitch_cm > 0.0 && self.turnaround_cm >= 0.0) {
            return bad("gi_pitch_cm must be positive and turnaround_cm non-negative".into());
        }
        if self.used_length_cm() > self.serpentine_capacity_cm() + 1e-9 {
            return bad(format!(
                "serpentine needs {:.3} cm but the chip holds {:.3} cm",
                self.used_length_cm(),
                self.serpentine_capacity_cm()
            ));
        }
        let mut seen = vec![false; self.n_gis];
        if self.gi_order.len() != self.n_gis {
            return bad("gi_order must list every GI once".into());
        }
        for &g in &self.gi_order {
            if g >= self.n_gis || seen[g] {
                return bad("gi_order must be a permutation of 0..n_gis".into());
            }
            seen[g] = true;
        }
        Ok(())
    }

    fn slot_of(&self, gi: usize) -> usize {
        self.gi_order.iter().position(|&g| g == gi).expect("validated permutation")
    }

    fn writer_position(&self, slot: usize) -> f64 {
        slot as f64 * self.gi_pitch_cm
    }

    fn reader_position(&self, slot: usize) -> f64 {
        (self.n_gis - 1) as f64 * self.gi_pitch_cm + self.turnaround_cm + slot as f64 * self.gi_pitch_cm
    }

    fn row_of(&self, position_cm: f64) -> u32 {
        (position_cm / self.chip_width_cm).floor() as u32
    }
}

pub fn path_profile(layout: &ChipLayout, src_gi: usize, dst_gi: usize) -> Result<PathProfile, LossMapError> {
    for index in [src_gi, dst_gi] {
        if index >= layout.n_gis {
            return Err(LossMapError::OutOfRange { index, n_gis: layout.n_gis });
        }
    }
    if src_gi == dst_gi {
        return Err(LossMapError::SelfPath(src_gi));
    }
    let start = layout.writer_position(layout.slot_of(src_gi));
    let end = layout.reader_position(layout.slot_of(dst_gi));
    Ok(PathProfile {
        length_cm: end - start,
        n_bends: 2 * (layout.row_of(end) - layout.row_of(start)),
        n_splitters: layout.splitters_per_path,
        n_couplers: layout.couplers_per_path,
    })
}

/// Dense loss matrix indexed `[src][dst]`. Diagonal entries are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlMatrix {
    pub losses_db: Vec<Vec<f64>>,
    pub composition: Composition,
}

impl IlMatrix {
    pub fn n_gis(&self) -> usize {
        self.losses_db.len()
    }

    pub fn get(&self, src: usize, dst: usize) -> f64 {
        self.losses_db[src][dst]
    }

    /// Off-diagonal entries in row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.losses_db
            .iter()
            .enumerate()
            .flat_map(|(s, row)| row.iter().enumerate().filter(move |(d, _)| *d != s).map(move |(d, &v)| (s, d, v)))
    }

    pub fn max_entry(&self) -> f64 {
        self.pairs().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.pairs().map(|p| p.2).fold(f64::INFINITY, f64::min)
    }

    /// First pair (row-major) holding the largest loss.
    pub fn worst_pair(&self) -> (usize, usize) {
        let max = self.max_entry();
        self.pairs().find(|p| p.2 == max).map(|p| (p.0, p.1)).expect("at least two GIs")
    }

    pub fn to_csv_string(&self) -> String {
        let n = self.n_gis();
        let mut out = format!("n_gis,{n}\n");
        for row in &self.losses_db {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn store(&self, path: &Path) -> Result<(), LossMapError> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

pub fn build_il_matrix(layout: &ChipLayout, params: &LossParams, composition: Composition) -> Result<IlMatrix, LossMapError> {
    layout.validate()?;
    let n = layout.n_gis;
    let mut losses_db = vec![vec![0.0; n]; n];
    for (s, row) in losses_db.iter_mut().enumerate() {
        for (d, cell) in row.iter_mut().enumerate() {
            if s != d {
                *cell = path_insertion_loss(&path_profile(layout, s, d)?, params, composition);
            }
        }
    }
    Ok(IlMatrix { losses_db, composition })
}

pub fn load_il_matrix(path: &Path) -> Result<IlMatrix, LossMapError> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path)?;
    parse_il_matrix(&text, &name)
}

pub fn parse_il_matrix(text: &str, name: &str) -> Result<IlMatrix, LossMapError> {
    let parse_err = |msg: String| LossMapError::Parse { path: name.to_string(), msg };
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| parse_err("empty file".into()))?
        .map_err(|e| parse_err(e.to_string()))?;
    if header.len() != 2 || header.get(0).map(str::trim) != Some("n_gis") {
        return Err(parse_err("first line must be `n_gis,<N>`".into()));
    }
    let n: usize = header[1].trim().parse().map_err(|_| parse_err(format!("bad GI count `{}`", &header[1])))?;
    if n < 2 {
        return Err(parse_err(format!("n_gis must be at least 2, got {n}")));
    }
    let mut losses_db = Vec::with_capacity(n);
    for (row, rec) in records.enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        if row >= n {
            return Err(parse_err(format!("more than {n} rows")));
        }
        if rec.len() != n {
            return Err(parse_err(format!("row {row} has {} columns, expected {n}", rec.len())));
        }
        let mut values = Vec::with_capacity(n);
        for (col, cell) in rec.iter().enumerate() {
            let entry_err = |msg: String| LossMapError::Entry { path: name.to_string(), row, col, msg };
            let v: f64 = cell.trim().parse().map_err(|_| entry_err(format!("not a number: `{cell}`")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(entry_err(format!("loss must be a non-negative number, got {v}")));
            }
            values.push(v);
        }
        losses_db.push(values);
    }
    if losses_db.len() != n {
        return Err(parse_err(format!("expected {n} rows, found {}", losses_db.len())));
    }
    Ok(IlMatrix { losses_db, composition: Composition::PropagationOnly })
}

/// Loss rounded up to the next 0.01 dB, as an integer number of centi-dB.
/// Rounding up keeps a design point made for the key valid for every loss
/// that maps onto it.
pub fn quantize_il(il_db: f64) -> i64 {
    (il_db * 100.0 - 1e-6).ceil() as i64
}

pub fn dequantize_il(key: i64) -> f64 {
    key as f64 / 100.0
}
