//! Cartesian grids, cell-centered scalar fields and the transfer operators
//! between a fine grid and its coarsened counterparts.
//!
//! Cells are stored row-major: index `j * nx + i` addresses column `i`
//! (x direction) of row `j` (y direction). Row 0 touches the upper edge of
//! the domain and `y` grows downward, so a cell center sits at
//! `((i + 0.5) dx, (j + 0.5) dy)` measured from the upper-left corner.
//!
//! Restriction partitions an `m x n` fine grid into `floor(beta m) x
//! floor(beta n)` contiguous blocks. Along an axis of fine length `m` with
//! coarse length `c`, fine index `i` belongs to block `floor(i c / m)`, so
//! block sizes never differ by more than one cell. Prolongation is
//! piecewise-constant injection.
//!
//! # Binary field layout
//!
//! All integers and floats are little-endian:
//!
//! | offset | size | content                       |
//! |--------|------|-------------------------------|
//! | 0      | 4    | `nx` as `u32`                 |
//! | 4      | 4    | `ny` as `u32`                 |
//! | 8      | 8    | `lx` as `f64`                 |
//! | 16     | 8    | `ly` as `f64`                 |
//! | 24     | 8·nx·ny | values as `f64`, row-major |

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Size of the binary field header in bytes.
pub const BINARY_HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianGrid {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
}

impl CartesianGrid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Contract(format!(
                "grid needs at least one cell per axis, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::Contract(format!(
                "domain extents must be positive, got {lx}x{ly}"
            )));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    /// `(column, row)` of a flat cell index.
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    pub fn cell_center(&self, idx: usize) -> (f64, f64) {
        let (i, j) = self.coords(idx);
        ((i as f64 + 0.5) * self.dx(), (j as f64 + 0.5) * self.dy())
    }
}

impl fmt::Display for CartesianGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.nx, self.ny)
    }
}

/// Physical meaning of a field, which fixes how it is coarsened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldRole {
    Saturation,
    Pressure,
    Porosity,
    LogPermeability,
    Permeability,
    /// Per-cell well rates (ft²/day); positive injects, negative produces.
    FlowControl,
}

impl FieldRole {
    /// Coarsening rule for this role. Log-permeability is averaged
    /// harmonically in linear space.
    pub fn aggregation(self) -> Aggregation {
        match self {
            FieldRole::Saturation | FieldRole::Pressure | FieldRole::Porosity => Aggregation::Mean,
            FieldRole::Permeability | FieldRole::LogPermeability => Aggregation::HarmonicMean,
            FieldRole::FlowControl => Aggregation::Sum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    Mean,
    HarmonicMean,
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: CartesianGrid,
    values: Vec<f64>,
    role: FieldRole,
}

impl ScalarField {
    pub fn new(grid: CartesianGrid, values: Vec<f64>, role: FieldRole) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::Contract(format!(
                "{role:?} field on {grid} grid needs {} values, got {}",
                grid.cell_count(),
                values.len()
            )));
        }
        match role {
            FieldRole::Saturation => {
                if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::Domain(format!("saturation {v} outside [0, 1]")));
                }
            }
            FieldRole::Permeability => {
                if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
                    return Err(Error::Domain(format!("permeability {v} is not positive")));
                }
            }
            _ => {}
        }
        Ok(Self { grid, values, role })
    }

    pub fn constant(grid: CartesianGrid, value: f64, role: FieldRole) -> Result<Self> {
        Self::new(grid, vec![value; grid.cell_count()], role)
    }

    pub fn grid(&self) -> &CartesianGrid {
        &self.grid
    }

    pub fn role(&self) -> FieldRole {
        self.role
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Elementwise `exp`, turning log-permeability into permeability.
    pub fn exp_permeability(&self) -> Result<ScalarField> {
        if self.role != FieldRole::LogPermeability {
            return Err(Error::Contract(format!(
                "expected a log-permeability field, got {:?}",
                self.role
            )));
        }
        ScalarField::new(
            self.grid,
            self.values.iter().map(|v| v.exp()).collect(),
            FieldRole::Permeability,
        )
    }

    /// Rows top to bottom, `nx` comma-separated values per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 12);
        for row in self.values.chunks(self.grid.nx) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, lx: f64, ly: f64, role: FieldRole) -> Result<ScalarField> {
        let mut values = Vec::new();
        let mut nx = None;
        let mut ny = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let row = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format("<csv>", format!("row {ny}: {e}")))?;
            match nx {
                None => nx = Some(row.len()),
                Some(n) if n != row.len() => {
                    return Err(Error::format(
                        "<csv>",
                        format!("row {ny} has {} columns, expected {n}", row.len()),
                    ))
                }
                _ => {}
            }
            values.extend(row);
            ny += 1;
        }
        let grid = CartesianGrid::new(nx.unwrap_or(0), ny, lx, ly)?;
        ScalarField::new(grid, values, role)
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let mut buf = Vec::with_capacity(BINARY_HEADER_LEN + 8 * self.values.len());
        buf.extend_from_slice(&(self.grid.nx as u32).to_le_bytes());
        buf.extend_from_slice(&(self.grid.ny as u32).to_le_bytes());
        buf.extend_from_slice(&self.grid.lx.to_le_bytes());
        buf.extend_from_slice(&self.grid.ly.to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R, role: FieldRole) -> Result<ScalarField> {
        let mut header = [0u8; BINARY_HEADER_LEN];
        input.read_exact(&mut header)?;
        let nx = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
        let ny = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let lx = f64::from_le_bytes(header[8..16].try_into().unwrap());
        let ly = f64::from_le_bytes(header[16..24].try_into().unwrap());
        let grid = CartesianGrid::new(nx, ny, lx, ly)?;
        let mut raw = vec![0u8; 8 * grid.cell_count()];
        input.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ScalarField::new(grid, values, role)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path, role: FieldRole) -> Result<ScalarField> {
        let file = std::fs::File::open(path)?;
        ScalarField::read_binary(std::io::BufReader::new(file), role)
            .map_err(|e| match e {
                Error::Io(io) => Error::format(path, io.to_string()),
                other => other,
            })
    }
}

/// Ownership of fine cells by coarse cells for one fidelity factor.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionMap {
    fine: (usize, usize),
    coarse: (usize, usize),
    owner: Vec<usize>,
}

/// Coarse length of an axis. The small slack keeps products such as
/// `0.29 * 100` from flooring one cell short.
fn coarse_len(fine: usize, beta: f64) -> usize {
    (beta * fine as f64 + 1e-9).floor() as usize
}

fn axis_owner(fine: usize, coarse: usize) -> impl Iterator<Item = usize> {
    (0..fine).map(move |i| i * coarse / fine)
}

/// Partition an `m x n` (columns x rows) fine grid for fidelity `beta`.
pub fn build_partition(m: usize, n: usize, beta: f64) -> Result<PartitionMap> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidFidelity(format!(
            "beta must lie in (0, 1], got {beta}"
        )));
    }
    let (cm, cn) = (coarse_len(m, beta), coarse_len(n, beta));
    if cm == 0 || cn == 0 {
        return Err(Error::InvalidFidelity(format!(
            "beta {beta} coarsens {m}x{n} to an empty {cm}x{cn} grid"
        )));
    }
    let col_owner: Vec<usize> = axis_owner(m, cm).collect();
    let mut owner = Vec::with_capacity(m * n);
    for row in axis_owner(n, cn) {
        owner.extend(col_owner.iter().map(|&col| row * cm + col));
    }
    Ok(PartitionMap {
        fine: (m, n),
        coarse: (cm, cn),
        owner,
    })
}

impl PartitionMap {
    pub fn fine_dims(&self) -> (usize, usize) {
        self.fine
    }

    pub fn coarse_dims(&self) -> (usize, usize) {
        self.coarse
    }

    pub fn is_identity(&self) -> bool {
        self.fine == self.coarse
    }

    /// Coarse cell owning fine cell `fine_idx`.
    pub fn owner(&self, fine_idx: usize) -> usize {
        self.owner[fine_idx]
    }

    pub fn owners(&self) -> &[usize] {
        &self.owner
    }

    /// Number of fine cells in each coarse cell.
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.coarse.0 * self.coarse.1];
        for &o in &self.owner {
            sizes[o] += 1;
        }
        sizes
    }

    pub fn coarse_grid(&self, fine: &CartesianGrid) -> Result<CartesianGrid> {
        self.check_fine(fine)?;
        CartesianGrid::new(self.coarse.0, self.coarse.1, fine.lx(), fine.ly())
    }

    fn check_fine(&self, grid: &CartesianGrid) -> Result<()> {
        if (grid.nx(), grid.ny()) != self.fine {
            return Err(Error::Contract(format!(
                "field grid {grid} does not match partition fine dims {}x{}",
                self.fine.0, self.fine.1
            )));
        }
        Ok(())
    }

    fn check_coarse(&self, grid: &CartesianGrid) -> Result<()> {
        if (grid.nx(), grid.ny()) != self.coarse {
            return Err(Error::Contract(format!(
                "field grid {grid} does not match partition coarse dims {}x{}",
                self.coarse.0, self.coarse.1
            )));
        }
        Ok(())
    }
}

/// Coarsen `field` with the given aggregation, which must agree with the
/// field's role.
pub fn restrict(field: &ScalarField, map: &PartitionMap, f: Aggregation) -> Result<ScalarField> {
    if field.role.aggregation() != f {
        return Err(Error::Contract(format!(
            "{:?} fields coarsen with {:?}, not {f:?}",
            field.role,
            field.role.aggregation()
        )));
    }
    map.check_fine(&field.grid)?;
    let coarse_grid = map.coarse_grid(&field.grid)?;
    if map.is_identity() {
        return Ok(ScalarField {
            grid: coarse_grid,
            values: field.values.clone(),
            role: field.role,
        });
    }

    let n_coarse = coarse_grid.cell_count();
    let counts = map.block_sizes();
    let values = match f {
        Aggregation::Sum => {
            let mut acc = vec![0.0; n_coarse];
            for (v, &o) in field.values.iter().zip(&map.owner) {
                acc[o] += v;
            }
            acc
        }
        Aggregation::Mean => {
            // Offsets from the block's first value keep constant blocks exact.
            let mut first = vec![f64::NAN; n_coarse];
            let mut acc = vec![0.0; n_coarse];
            for (&v, &o) in field.values.iter().zip(&map.owner) {
                if first[o].is_nan() {
                    first[o] = v;
                }
                acc[o] += v - first[o];
            }
            first
                .iter()
                .zip(&acc)
                .zip(&counts)
                .map(|((&r, &a), &c)| r + a / c as f64)
                .collect()
        }
        Aggregation::HarmonicMean => {
            let log_space = field.role == FieldRole::LogPermeability;
            let mut acc = vec![0.0; n_coarse];
            for (&v, &o) in field.values.iter().zip(&map.owner) {
                let k = if log_space { v.exp() } else { v };
                if !(k > 0.0) || !k.is_finite() {
                    return Err(Error::Domain(format!(
                        "harmonic mean needs positive values, got {k}"
                    )));
                }
                acc[o] += 1.0 / k;
            }
            acc.iter()
                .zip(&counts)
                .map(|(&inv, &c)| {
                    let h = c as f64 / inv;
                    if log_space {
                        h.ln()
                    } else {
                        h
                    }
                })
                .collect()
        }
    };
    Ok(ScalarField {
        grid: coarse_grid,
        values,
        role: field.role,
    })
}

/// Coarsen with the aggregation implied by the field's role.
pub fn restrict_by_role(field: &ScalarField, map: &PartitionMap) -> Result<ScalarField> {
    restrict(field, map, field.role.aggregation())
}

/// Piecewise-constant injection of a coarse field onto `fine`.
pub fn prolong(field: &ScalarField, map: &PartitionMap, fine: &CartesianGrid) -> Result<ScalarField> {
    map.check_coarse(&field.grid)?;
    map.check_fine(fine)?;
    Ok(ScalarField {
        grid: *fine,
        values: map.owner.iter().map(|&o| field.values[o]).collect(),
        role: field.role,
    })
}
