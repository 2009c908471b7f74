//! Single-phase incompressible Darcy flow with tracer transport.
//!
//! Pressure follows `-div((k/mu) grad p) = a` with no-flow boundaries,
//! discretized by two-point flux approximation: the flux across the face
//! shared by cells `L` and `R` is `T (p_L - p_R)` with
//! `T = harm(k_L/mu, k_R/mu) * face_length / center_distance`. Wells are
//! point sources; a flow-control field stores the rate of each cell in
//! ft²/day, which equals the source density times the cell area.
//!
//! Permeability enters in mD and viscosity in cP without a unit
//! conversion constant, so pressures are in consistent but arbitrary
//! units. Fluxes and velocities do not depend on that scale.
//!
//! Saturation advances with an explicit first-order upwind scheme in
//! conservative form, sub-stepped so that no cell discharges more than 90%
//! of its pore volume per sub-step.

use crate::error::{Error, Result};
use crate::grid::{CartesianGrid, FieldRole, ScalarField};
use crate::linalg;

/// Maximum CFL number used when sub-stepping transport.
pub const CFL: f64 = 0.9;

/// Relative residual CG aims for.
pub const CG_TARGET: f64 = 1e-10;
/// Largest relative residual accepted from the pressure solve.
pub const CG_ACCEPT: f64 = 1e-8;
/// Overshoot of a transported saturation past 0 or 1 that is clipped
/// rather than reported. Pressure residuals leave fluxes slightly out of
/// balance, which the upwind update turns into overshoots of that order.
pub const SATURATION_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct WellSet {
    injectors: Vec<usize>,
    producers: Vec<usize>,
    total_rate: f64,
}

impl WellSet {
    pub fn new(injectors: Vec<usize>, producers: Vec<usize>, total_rate: f64, grid: &CartesianGrid) -> Result<Self> {
        if injectors.is_empty() || producers.is_empty() {
            return Err(Error::Contract("a well set needs at least one injector and one producer".into()));
        }
        if !(total_rate > 0.0 && total_rate.is_finite()) {
            return Err(Error::Contract(format!("total rate must be positive, got {total_rate}")));
        }
        let mut all: Vec<usize> = injectors.iter().chain(&producers).copied().collect();
        if let Some(c) = all.iter().find(|&&c| c >= grid.cell_count()) {
            return Err(Error::Contract(format!("well cell {c} outside {grid} grid")));
        }
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Contract("well cells must be distinct".into()));
        }
        Ok(Self {
            injectors,
            producers,
            total_rate,
        })
    }

    pub fn injectors(&self) -> &[usize] {
        &self.injectors
    }

    pub fn producers(&self) -> &[usize] {
        &self.producers
    }

    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    /// Number of wells; also the length of a per-well rate vector.
    pub fn len(&self) -> usize {
        self.injectors.len() + self.producers.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cells in rate-vector order: injectors, then producers.
    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.injectors.iter().chain(&self.producers).copied()
    }

    /// All wells equally open.
    pub fn equal_flows(&self) -> Vec<f64> {
        let inj = self.total_rate / self.injectors.len() as f64;
        let prod = -self.total_rate / self.producers.len() as f64;
        self.injectors
            .iter()
            .map(|_| inj)
            .chain(self.producers.iter().map(|_| prod))
            .collect()
    }

    /// Flow-control field carrying each well's rate in its cell.
    pub fn source_field(&self, grid: &CartesianGrid, flows: &[f64]) -> Result<ScalarField> {
        if flows.len() != self.len() {
            return Err(Error::Contract(format!(
                "expected {} well rates, got {}",
                self.len(),
                flows.len()
            )));
        }
        let mut values = vec![0.0; grid.cell_count()];
        for (cell, q) in self.cells().zip(flows) {
            values[cell] += q;
        }
        ScalarField::new(*grid, values, FieldRole::FlowControl)
    }
}

#[derive(Debug, Clone)]
pub struct ReservoirModel {
    grid: CartesianGrid,
    permeability: ScalarField,
    porosity: ScalarField,
    viscosity: f64,
    wells: WellSet,
    /// Transmissibility of vertical faces, `(nx + 1) * ny`, boundaries zero.
    tx: Vec<f64>,
    /// Transmissibility of horizontal faces, `nx * (ny + 1)`, boundaries zero.
    ty: Vec<f64>,
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

impl ReservoirModel {
    pub fn new(permeability: ScalarField, porosity: ScalarField, viscosity: f64, wells: WellSet) -> Result<Self> {
        if permeability.role() != FieldRole::Permeability {
            return Err(Error::Contract(format!(
                "model permeability has role {:?}",
                permeability.role()
            )));
        }
        let grid = *permeability.grid();
        if porosity.grid() != &grid {
            return Err(Error::Contract("porosity and permeability grids differ".into()));
        }
        if let Some(p) = porosity.values().iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::Domain(format!("porosity {p} outside (0, 1]")));
        }
        if !(viscosity > 0.0) {
            return Err(Error::Domain(format!("viscosity {viscosity} is not positive")));
        }
        if let Some(c) = wells.cells().find(|&c| c >= grid.cell_count()) {
            return Err(Error::Contract(format!("well cell {c} outside {grid} grid")));
        }

        let (nx, ny) = (grid.nx(), grid.ny());
        let mobility: Vec<f64> = permeability.values().iter().map(|k| k / viscosity).collect();
        let (gx, gy) = (grid.dy() / grid.dx(), grid.dx() / grid.dy());
        let mut tx = vec![0.0; (nx + 1) * ny];
        for j in 0..ny {
            for i in 1..nx {
                tx[j * (nx + 1) + i] = gx * harmonic(mobility[j * nx + i - 1], mobility[j * nx + i]);
            }
        }
        let mut ty = vec![0.0; nx * (ny + 1)];
        for j in 1..ny {
            for i in 0..nx {
                ty[j * nx + i] = gy * harmonic(mobility[(j - 1) * nx + i], mobility[j * nx + i]);
            }
        }
        Ok(Self {
            grid,
            permeability,
            porosity,
            viscosity,
            wells,
            tx,
            ty,
        })
    }

    pub fn grid(&self) -> &CartesianGrid {
        &self.grid
    }

    pub fn permeability(&self) -> &ScalarField {
        &self.permeability
    }

    pub fn porosity(&self) -> &ScalarField {
        &self.porosity
    }

    pub fn viscosity(&self) -> f64 {
        self.viscosity
    }

    pub fn wells(&self) -> &WellSet {
        &self.wells
    }

    pub fn pore_volume(&self) -> f64 {
        self.porosity.sum() * self.grid.cell_area()
    }

    /// Writes the net TPFA outflux `sum_faces T (p_c - p_n)` of every cell.
    fn apply(&self, p: &[f64], out: &mut [f64]) {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..ny {
            for i in 1..nx {
                let t = self.tx[j * (nx + 1) + i];
                let (l, r) = (j * nx + i - 1, j * nx + i);
                let f = t * (p[l] - p[r]);
                out[l] += f;
                out[r] -= f;
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                let t = self.ty[j * nx + i];
                let (u, d) = ((j - 1) * nx + i, j * nx + i);
                let f = t * (p[u] - p[d]);
                out[u] += f;
                out[d] -= f;
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let mut d = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let c = j * nx + i;
                d[c] = self.tx[j * (nx + 1) + i]
                    + self.tx[j * (nx + 1) + i + 1]
                    + self.ty[j * nx + i]
                    + self.ty[(j + 1) * nx + i];
            }
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirState {
    pub saturation: ScalarField,
    pub pressure: ScalarField,
    /// Elapsed time in days.
    pub time: f64,
}

impl ReservoirState {
    /// Uniform saturation `s0`, zero pressure, time zero.
    pub fn initial(grid: &CartesianGrid, s0: f64) -> Result<Self> {
        Ok(Self {
            saturation: ScalarField::constant(*grid, s0, FieldRole::Saturation)?,
            pressure: ScalarField::constant(*grid, 0.0, FieldRole::Pressure)?,
            time: 0.0,
        })
    }
}

/// Darcy velocities (ft/day) on cell faces.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceVelocities {
    grid: CartesianGrid,
    /// Vertical faces, `(nx + 1) * ny`; face `j * (nx + 1) + i` lies left of cell `(i, j)`.
    pub vx: Vec<f64>,
    /// Horizontal faces, `nx * (ny + 1)`; face `j * nx + i` lies above cell `(i, j)`.
    pub vy: Vec<f64>,
}

impl FaceVelocities {
    pub fn grid(&self) -> &CartesianGrid {
        &self.grid
    }

    /// Volumetric flux (ft²/day) through vertical face `(i, j)`, positive in +x.
    pub fn flux_x(&self, i: usize, j: usize) -> f64 {
        self.vx[j * (self.grid.nx() + 1) + i] * self.grid.dy()
    }

    /// Volumetric flux through horizontal face `(i, j)`, positive in +y (downward).
    pub fn flux_y(&self, i: usize, j: usize) -> f64 {
        self.vy[j * self.grid.nx() + i] * self.grid.dx()
    }

    /// Net outflux of every cell, which should equal the source rate.
    pub fn divergence(&self) -> Vec<f64> {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let mut div = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                div[j * nx + i] = self.flux_x(i + 1, j) - self.flux_x(i, j) + self.flux_y(i, j + 1) - self.flux_y(i, j);
            }
        }
        div
    }
}

fn check_same_grid(a: &CartesianGrid, b: &CartesianGrid, what: &str) -> Result<()> {
    if a.nx() != b.nx() || a.ny() != b.ny() {
        return Err(Error::Contract(format!("{what}: grid {b} does not match model grid {a}")));
    }
    Ok(())
}

fn check_balance(source: &ScalarField, scale: f64) -> Result<()> {
    let net = source.sum();
    if net.abs() > 1e-8 * scale.max(1.0) {
        return Err(Error::ConstraintViolation(format!(
            "sources sum to {net:e}; injection must equal production"
        )));
    }
    Ok(())
}

/// Pressure for the given per-cell source rates, shifted to zero mean.
pub fn solve_pressure(model: &ReservoirModel, source: &ScalarField) -> Result<ScalarField> {
    if source.role() != FieldRole::FlowControl {
        return Err(Error::Contract(format!("source has role {:?}", source.role())));
    }
    check_same_grid(&model.grid, source.grid(), "source")?;
    let injected: f64 = source.values().iter().filter(|q| **q > 0.0).sum();
    check_balance(source, injected)?;

    let n = model.grid.cell_count();
    let mean = source.sum() / n as f64;
    let b: Vec<f64> = source.values().iter().map(|q| q - mean).collect();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut p = vec![0.0; n];
    if b_norm > 0.0 {
        let inv_diag: Vec<f64> = model
            .diagonal()
            .into_iter()
            .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        let scale = b_norm.max(1.0);
        let out = linalg::pcg(|v, o| model.apply(v, o), &inv_diag, &b, &mut p, CG_TARGET * scale, 20 * n + 200);
        // High permeability contrast can stall CG just short of the target;
        // anything within the acceptance bound is still a valid solve.
        if !out.converged && out.residual > CG_ACCEPT * scale {
            return Err(Error::numerical(
                format!("pressure solve stalled after {} CG iterations", out.iterations),
                out.residual,
            ));
        }
        let shift = p.iter().sum::<f64>() / n as f64;
        p.iter_mut().for_each(|v| *v -= shift);
    }
    ScalarField::new(model.grid, p, FieldRole::Pressure)
}

/// Face velocities `-T (p_R - p_L) / face_length`; boundary faces carry none.
pub fn darcy_velocity(model: &ReservoirModel, pressure: &ScalarField) -> Result<FaceVelocities> {
    check_same_grid(&model.grid, pressure.grid(), "pressure")?;
    let (nx, ny) = (model.grid.nx(), model.grid.ny());
    let p = pressure.values();
    let (dx, dy) = (model.grid.dx(), model.grid.dy());
    let mut vx = vec![0.0; (nx + 1) * ny];
    for j in 0..ny {
        for i in 1..nx {
            let f = j * (nx + 1) + i;
            vx[f] = model.tx[f] * (p[j * nx + i - 1] - p[j * nx + i]) / dy;
        }
    }
    let mut vy = vec![0.0; nx * (ny + 1)];
    for j in 1..ny {
        for i in 0..nx {
            let f = j * nx + i;
            vy[f] = model.ty[f] * (p[(j - 1) * nx + i] - p[j * nx + i]) / dx;
        }
    }
    Ok(FaceVelocities { grid: model.grid, vx, vy })
}

/// Upwind transport operator for one fixed velocity field and source.
#[derive(Debug, Clone)]
pub struct Transport {
    grid: CartesianGrid,
    pore: Vec<f64>,
    fx: Vec<f64>,
    fy: Vec<f64>,
    inflow: Vec<f64>,
    outflow: Vec<f64>,
    max_dt: f64,
}

impl Transport {
    pub fn new(model: &ReservoirModel, v: &FaceVelocities, source: &ScalarField) -> Result<Self> {
        check_same_grid(&model.grid, v.grid(), "velocity")?;
        check_same_grid(&model.grid, source.grid(), "source")?;
        let grid = model.grid;
        let (nx, ny) = (grid.nx(), grid.ny());
        let area = grid.cell_area();
        let pore: Vec<f64> = model.porosity.values().iter().map(|p| p * area).collect();
        let fx: Vec<f64> = v.vx.iter().map(|u| u * grid.dy()).collect();
        let fy: Vec<f64> = v.vy.iter().map(|u| u * grid.dx()).collect();
        let inflow: Vec<f64> = source.values().iter().map(|q| q.max(0.0)).collect();
        let outflow: Vec<f64> = source.values().iter().map(|q| q.min(0.0)).collect();

        let mut discharge: Vec<f64> = outflow.iter().map(|q| -q).collect();
        for j in 0..ny {
            for i in 0..=nx {
                let f = fx[j * (nx + 1) + i];
                if f > 0.0 && i > 0 {
                    discharge[j * nx + i - 1] += f;
                } else if f < 0.0 && i < nx {
                    discharge[j * nx + i] -= f;
                }
            }
        }
        for j in 0..=ny {
            for i in 0..nx {
                let f = fy[j * nx + i];
                if f > 0.0 && j > 0 {
                    discharge[(j - 1) * nx + i] += f;
                } else if f < 0.0 && j < ny {
                    discharge[j * nx + i] -= f;
                }
            }
        }
        let max_dt = pore
            .iter()
            .zip(&discharge)
            .filter(|(_, d)| **d > 0.0)
            .map(|(pv, d)| CFL * pv / d)
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            grid,
            pore,
            fx,
            fy,
            inflow,
            outflow,
            max_dt,
        })
    }

    /// Largest sub-step satisfying the CFL bound; infinite when nothing moves.
    pub fn max_stable_dt(&self) -> f64 {
        self.max_dt
    }

    /// Equal sub-steps covering `duration`: `(count, length)`.
    pub fn substeps(&self, duration: f64) -> (usize, f64) {
        if duration <= 0.0 {
            return (0, 0.0);
        }
        let n = if self.max_dt.is_finite() {
            ((duration / self.max_dt).ceil() as usize).max(1)
        } else {
            1
        };
        (n, duration / n as f64)
    }

    /// Tracer volume `sum(phi V s)`.
    pub fn tracer_mass(&self, s: &[f64]) -> f64 {
        self.pore.iter().zip(s).map(|(pv, s)| pv * s).sum()
    }

    /// Injected minus produced tracer per day at saturation `s`.
    pub fn tracer_net_rate(&self, s: &[f64]) -> f64 {
        self.inflow
            .iter()
            .zip(&self.outflow)
            .zip(s)
            .map(|((qi, qo), s)| qi + qo * s)
            .sum()
    }

    /// Contaminant produced per day: `sum |a-| (1 - s)` over sink cells.
    pub fn contaminant_rate(&self, s: &[f64]) -> f64 {
        self.outflow.iter().zip(s).map(|(qo, s)| -qo * (1.0 - s)).sum()
    }

    /// One explicit upwind step of length `dt`, which must respect the CFL bound.
    pub fn substep(&self, s: &mut [f64], dt: f64) -> Result<()> {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let mut delta: Vec<f64> = (0..s.len()).map(|c| self.inflow[c] + self.outflow[c] * s[c]).collect();
        for j in 0..ny {
            for i in 1..nx {
                let f = self.fx[j * (nx + 1) + i];
                let (l, r) = (j * nx + i - 1, j * nx + i);
                let carried = f * if f > 0.0 { s[l] } else { s[r] };
                delta[l] -= carried;
                delta[r] += carried;
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                let f = self.fy[j * nx + i];
                let (u, d) = ((j - 1) * nx + i, j * nx + i);
                let carried = f * if f > 0.0 { s[u] } else { s[d] };
                delta[u] -= carried;
                delta[d] += carried;
            }
        }
        for (c, sc) in s.iter_mut().enumerate() {
            let next = *sc + dt / self.pore[c] * delta[c];
            if !(-SATURATION_SLACK..=1.0 + SATURATION_SLACK).contains(&next) {
                return Err(Error::numerical(
                    format!("saturation left [0, 1] in cell {c} during transport"),
                    next,
                ));
            }
            *sc = next.clamp(0.0, 1.0);
        }
        Ok(())
    }
}

/// Advance saturation by `dt` days under fixed velocities and sources.
pub fn advance_saturation(
    state: &ReservoirState,
    model: &ReservoirModel,
    v: &FaceVelocities,
    source: &ScalarField,
    dt: f64,
) -> Result<ReservoirState> {
    if !(dt > 0.0) {
        return Err(Error::Contract(format!("time step must be positive, got {dt}")));
    }
    check_same_grid(&model.grid, state.saturation.grid(), "saturation")?;
    let transport = Transport::new(model, v, source)?;
    let (n, h) = transport.substeps(dt);
    let mut s = state.saturation.values().to_vec();
    for _ in 0..n {
        transport.substep(&mut s, h)?;
    }
    Ok(ReservoirState {
        saturation: ScalarField::new(model.grid, s, FieldRole::Saturation)?,
        pressure: state.pressure.clone(),
        time: state.time + dt,
    })
}

/// One control step with per-well rates (injectors then producers).
/// Returns the new state and `integral sum |a-| (1 - s) dt` over the step.
pub fn run_control_step(
    state: &ReservoirState,
    model: &ReservoirModel,
    flows: &[f64],
    duration: f64,
) -> Result<(ReservoirState, f64)> {
    let source = model.wells.source_field(&model.grid, flows)?;
    check_balance(&source, model.wells.total_rate())?;
    run_control_step_with_source(state, model, &source, duration)
}

/// Same as [`run_control_step`] with the per-cell source field given directly.
pub fn run_control_step_with_source(
    state: &ReservoirState,
    model: &ReservoirModel,
    source: &ScalarField,
    duration: f64,
) -> Result<(ReservoirState, f64)> {
    if duration < 0.0 || !duration.is_finite() {
        return Err(Error::Contract(format!("step duration must be nonnegative, got {duration}")));
    }
    check_same_grid(&model.grid, state.saturation.grid(), "saturation")?;
    if duration == 0.0 {
        return Ok((state.clone(), 0.0));
    }
    let pressure = solve_pressure(model, source)?;
    let v = darcy_velocity(model, &pressure)?;
    let transport = Transport::new(model, &v, source)?;
    let (n, h) = transport.substeps(duration);
    let mut s = state.saturation.values().to_vec();
    let mut integral = 0.0;
    for _ in 0..n {
        integral += h * transport.contaminant_rate(&s);
        transport.substep(&mut s, h)?;
    }
    Ok((
        ReservoirState {
            saturation: ScalarField::new(model.grid, s, FieldRole::Saturation)?,
            pressure,
            time: state.time + duration,
        },
        integral,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn homogeneous(nx: usize, ny: usize, injectors: Vec<usize>, producers: Vec<usize>, rate: f64) -> ReservoirModel {
        let grid = CartesianGrid::new(nx, ny, nx as f64, ny as f64).unwrap();
        ReservoirModel::new(
            ScalarField::constant(grid, 1.0, FieldRole::Permeability).unwrap(),
            ScalarField::constant(grid, 1.0, FieldRole::Porosity).unwrap(),
            1.0,
            WellSet::new(injectors, producers, rate, &grid).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn two_cell_pressure_and_flux() {
        let model = homogeneous(2, 1, vec![0], vec![1], 1.0);
        let src = model.wells().source_field(model.grid(), &[1.0, -1.0]).unwrap();
        let p = solve_pressure(&model, &src).unwrap();
        assert!((p.values()[0] - 0.5).abs() < 1e-12);
        assert!((p.values()[1] + 0.5).abs() < 1e-12);
        let v = darcy_velocity(&model, &p).unwrap();
        assert!((v.flux_x(1, 0) - 1.0).abs() < 1e-12);
        assert_eq!(v.flux_x(0, 0), 0.0);
        assert_eq!(v.flux_x(2, 0), 0.0);
    }

    #[test]
    fn zero_source_gives_zero_pressure() {
        let model = homogeneous(3, 3, vec![0], vec![8], 1.0);
        let src = ScalarField::constant(*model.grid(), 0.0, FieldRole::FlowControl).unwrap();
        let p = solve_pressure(&model, &src).unwrap();
        assert!(p.values().iter().all(|v| *v == 0.0));
        let v = darcy_velocity(&model, &p).unwrap();
        assert!(v.vx.iter().chain(&v.vy).all(|u| *u == 0.0));
    }

    #[test]
    fn unbalanced_source_rejected() {
        let model = homogeneous(2, 1, vec![0], vec![1], 1.0);
        let src = model.wells().source_field(model.grid(), &[1.0, -0.5]).unwrap();
        assert!(matches!(
            solve_pressure(&model, &src),
            Err(Error::ConstraintViolation(_))
        ));
    }

    #[test]
    fn antisymmetric_sources_give_mirrored_velocity() {
        // Injector and producer mirrored across the vertical midline.
        let nx = 6;
        let model = homogeneous(nx, 5, vec![2 * nx + 1], vec![2 * nx + 4], 1.0);
        let src = model.wells().source_field(model.grid(), &[1.0, -1.0]).unwrap();
        let p = solve_pressure(&model, &src).unwrap();
        let v = darcy_velocity(&model, &p).unwrap();
        for j in 0..5 {
            for i in 0..=nx {
                let a = v.flux_x(i, j);
                let b = v.flux_x(nx - i, j);
                assert!((a - b).abs() < 1e-9, "x face ({i},{j})");
            }
            for i in 0..nx {
                let a = v.flux_y(i, j);
                let b = v.flux_y(nx - 1 - i, j);
                assert!((a + b).abs() < 1e-9, "y face ({i},{j})");
            }
        }
        for (pa, pb) in (0..nx).map(|i| (p.get(i, 2), p.get(nx - 1 - i, 2))) {
            assert!((pa + pb).abs() < 1e-9);
        }
    }

    #[test]
    fn static_saturation_without_flow() {
        let model = homogeneous(3, 2, vec![0], vec![5], 1.0);
        let mut state = ReservoirState::initial(model.grid(), 0.0).unwrap();
        state.saturation = ScalarField::new(*model.grid(), vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], FieldRole::Saturation).unwrap();
        let p = ScalarField::constant(*model.grid(), 0.0, FieldRole::Pressure).unwrap();
        let v = darcy_velocity(&model, &p).unwrap();
        let src = ScalarField::constant(*model.grid(), 0.0, FieldRole::FlowControl).unwrap();
        let next = advance_saturation(&state, &model, &v, &src, 3.0).unwrap();
        assert_eq!(next.saturation, state.saturation);
        assert!(advance_saturation(&state, &model, &v, &src, 0.0).is_err());
    }

    #[test]
    fn upwind_stencil_one_substep() {
        // 1D channel, uniform flux q from the injector at cell 0 to the producer at cell 3.
        let model = homogeneous(4, 1, vec![0], vec![3], 1.0);
        let src = model.wells().source_field(model.grid(), &[1.0, -1.0]).unwrap();
        let p = solve_pressure(&model, &src).unwrap();
        let v = darcy_velocity(&model, &p).unwrap();
        let t = Transport::new(&model, &v, &src).unwrap();
        let s0 = vec![1.0, 1.0, 0.0, 0.0];
        let mut s = s0.clone();
        let dt = t.max_stable_dt();
        assert!((dt - 0.9).abs() < 1e-9);
        t.substep(&mut s, dt).unwrap();
        let courant = 1.0 * dt / (1.0 * 1.0);
        assert!((s[2] - (s0[2] + courant * (s0[1] - s0[2]))).abs() < 1e-9);
        assert!((s[1] - 1.0).abs() < 1e-12);
        assert!((s[3] - s0[3]).abs() < 1e-12);
    }

    #[test]
    fn saturated_injector_stays_full() {
        let model = homogeneous(3, 3, vec![0], vec![8], 2.0);
        let mut state = ReservoirState::initial(model.grid(), 0.0).unwrap();
        let mut s = vec![0.0; 9];
        s[0] = 1.0;
        state.saturation = ScalarField::new(*model.grid(), s, FieldRole::Saturation).unwrap();
        let (next, _) = run_control_step(&state, &model, &[2.0, -2.0], 0.5).unwrap();
        assert!((next.saturation.values()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn swept_producer_contributes_nothing() {
        let model = homogeneous(3, 1, vec![0], vec![2], 1.0);
        let state = ReservoirState::initial(model.grid(), 1.0).unwrap();
        let (_, integral) = run_control_step(&state, &model, &[1.0, -1.0], 4.0).unwrap();
        assert!(integral.abs() < 1e-12);
    }

    #[test]
    fn zero_duration_is_noop() {
        let model = homogeneous(3, 1, vec![0], vec![2], 1.0);
        let state = ReservoirState::initial(model.grid(), 0.0).unwrap();
        let (next, integral) = run_control_step(&state, &model, &[1.0, -1.0], 0.0).unwrap();
        assert_eq!(integral, 0.0);
        assert_eq!(next, state);
    }

    #[test]
    fn constant_contaminant_integral() {
        // Pore volume so large that the front never reaches the producer.
        let grid = CartesianGrid::new(10, 1, 10.0, 1.0).unwrap();
        let wells = WellSet::new(vec![0], vec![9], 0.25, &grid).unwrap();
        let model = ReservoirModel::new(
            ScalarField::constant(grid, 3.0, FieldRole::Permeability).unwrap(),
            ScalarField::constant(grid, 1.0, FieldRole::Porosity).unwrap(),
            1.0,
            wells,
        )
        .unwrap();
        let state = ReservoirState::initial(&grid, 0.0).unwrap();
        let (next, integral) = run_control_step(&state, &model, &[0.25, -0.25], 2.0).unwrap();
        assert_eq!(next.saturation.values()[9], 0.0);
        assert!((integral - 0.25 * 2.0).abs() < 1e-12);
        assert!((next.time - 2.0).abs() < 1e-15);
    }
}
