//! Permeability uncertainty and sample-library construction.
//!
//! Two distributions are provided: a straight high-permeability channel
//! crossing the domain ([`sample_g1`]) and a Gaussian field conditioned
//! on well observations by ordinary kriging ([`KrigingModel`],
//! [`KrigingSampler`]). A [`SampleLibrary`] draws many fields, measures
//! how differently they behave under the base policy, embeds those
//! distances in the plane and clusters them. The sample nearest each
//! cluster center is used for training; one other member per cluster is
//! held out for evaluation.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{base_policy, EnvironmentConfig, MultiGridEnv, TestCase};
use crate::error::{Error, Result};
use crate::grid::{CartesianGrid, FieldRole, ScalarField};
use crate::seeding;

pub const CHANNEL_PERMEABILITY: f64 = 245.0;
pub const MATRIX_PERMEABILITY: f64 = 0.14;
pub const WELL_LOG_PERMEABILITY: f64 = 2.41;
pub const DIAGONAL_JITTER: f64 = 1e-10;
/// Fidelity at which connectivity trajectories are simulated.
pub const CONNECTIVITY_BETA: f64 = 0.5;
const KMEANS_MAX_ITER: usize = 300;

/// A straight channel from the left to the right edge. Offsets are
/// measured down from the top edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub width: f64,
    pub left_offset: f64,
    pub right_offset: f64,
}

impl ChannelParams {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, length: f64) -> Self {
        let width = rng.random_range(120.0..=360.0);
        let span = (length - width).max(0.0);
        Self {
            width,
            left_offset: rng.random::<f64>() * span,
            right_offset: rng.random::<f64>() * span,
        }
    }

    /// Whether the point `(x, y)` (y downward) lies inside the channel.
    pub fn contains(&self, x: f64, y: f64, length: f64) -> bool {
        let top = (self.right_offset - self.left_offset) * x / length + self.left_offset;
        top <= y && y <= top + self.width
    }

    /// Log-permeability field, evaluated at cell centers.
    pub fn field(&self, grid: CartesianGrid) -> Result<ScalarField> {
        let inside = CHANNEL_PERMEABILITY.ln();
        let outside = MATRIX_PERMEABILITY.ln();
        let values = (0..grid.cell_count())
            .map(|c| {
                let (x, y) = grid.cell_center(c);
                if self.contains(x, y, grid.lx()) {
                    inside
                } else {
                    outside
                }
            })
            .collect();
        ScalarField::new(grid, values, FieldRole::LogPermeability)
    }
}

/// Draw a channelized log-permeability field on `grid`.
pub fn sample_g1<R: Rng + ?Sized>(grid: CartesianGrid, rng: &mut R) -> Result<ScalarField> {
    ChannelParams::sample(rng, grid.lx()).field(grid)
}

/// Ordinary kriging with an anisotropic exponential kernel on rotated coordinates.
#[derive(Debug, Clone)]
pub struct KrigingModel {
    locations: Vec<(f64, f64)>,
    observed: Vec<f64>,
    variance: f64,
    lengths: (f64, f64),
    angle: f64,
    kernel_inv: DMatrix<f64>,
    kinv_ones: DVector<f64>,
    ones_kinv_ones: f64,
    mean: f64,
    residual_weights: DVector<f64>,
}

impl KrigingModel {
    /// `angle` rotates the anisotropy axes clockwise, with `y` measured downward.
    pub fn new(
        locations: Vec<(f64, f64)>,
        observed: Vec<f64>,
        variance: f64,
        lengths: (f64, f64),
        angle: f64,
    ) -> Result<Self> {
        if locations.is_empty() || locations.len() != observed.len() {
            return Err(Error::Contract(format!(
                "{} locations but {} observations",
                locations.len(),
                observed.len()
            )));
        }
        if !(variance > 0.0 && lengths.0 > 0.0 && lengths.1 > 0.0) {
            return Err(Error::Domain("kernel variance and lengths must be positive".into()));
        }
        let n = locations.len();
        let mut model = Self {
            locations,
            observed,
            variance,
            lengths,
            angle,
            kernel_inv: DMatrix::zeros(0, 0),
            kinv_ones: DVector::zeros(0),
            ones_kinv_ones: 0.0,
            mean: 0.0,
            residual_weights: DVector::zeros(0),
        };
        let kernel = DMatrix::from_fn(n, n, |i, j| {
            model.correlation(model.locations[i], model.locations[j]) + if i == j { DIAGONAL_JITTER } else { 0.0 }
        });
        let chol = kernel
            .cholesky()
            .ok_or_else(|| Error::numerical("kriging kernel matrix is not positive definite", 0.0))?;
        let kernel_inv = chol.inverse();
        let ones = DVector::from_element(n, 1.0);
        let g = DVector::from_vec(model.observed.clone());
        let kinv_ones = &kernel_inv * &ones;
        let ones_kinv_ones = ones.dot(&kinv_ones);
        let mean = kinv_ones.dot(&g) / ones_kinv_ones;
        if !mean.is_finite() {
            return Err(Error::numerical("kriging mean estimate is not finite", ones_kinv_ones));
        }
        model.residual_weights = &kernel_inv * (g - ones * mean);
        model.kernel_inv = kernel_inv;
        model.kinv_ones = kinv_ones;
        model.ones_kinv_ones = ones_kinv_ones;
        model.mean = mean;
        Ok(model)
    }

    /// Model for test case 2: every well observed at the same log-permeability.
    pub fn for_wells(config: &EnvironmentConfig) -> Result<Self> {
        let grid = config.fine_grid()?;
        let locations = config
            .injectors
            .iter()
            .chain(&config.producers)
            .map(|&c| grid.cell_center(c))
            .collect::<Vec<_>>();
        let n = locations.len();
        Self::new(
            locations,
            vec![WELL_LOG_PERMEABILITY; n],
            25.0,
            (config.lx, config.lx / 10.0),
            PI / 8.0,
        )
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[(f64, f64)] {
        &self.locations
    }

    /// Maximum-likelihood estimate of the global mean.
    pub fn global_mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Kernel value between two points, without the variance factor.
    pub fn correlation(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        let dx = a.0 - b.0;
        // Flip to y-up so that a negative mathematical angle turns clockwise.
        let dy = -(a.1 - b.1);
        let (s, c) = (-self.angle).sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (-((u / self.lengths.0).powi(2) + (v / self.lengths.1).powi(2)).sqrt()).exp()
    }

    fn cross(&self, x: (f64, f64)) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.locations.iter().map(|&p| self.correlation(p, x)))
    }

    /// Posterior mean and variance at `x`.
    pub fn posterior(&self, x: (f64, f64)) -> (f64, f64) {
        let k = self.cross(x);
        let mean = self.mean + k.dot(&self.residual_weights);
        let kinv_k = &self.kernel_inv * &k;
        let lagrange = 1.0 - self.kinv_ones.dot(&k);
        let var = self.variance * (1.0 - k.dot(&kinv_k) + lagrange * lagrange / self.ones_kinv_ones);
        (mean, var.max(0.0))
    }

    /// Posterior covariance between two points.
    pub fn posterior_covariance(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        let ka = self.cross(a);
        let kb = self.cross(b);
        let la = 1.0 - self.kinv_ones.dot(&ka);
        let lb = 1.0 - self.kinv_ones.dot(&kb);
        self.variance * (self.correlation(a, b) - ka.dot(&(&self.kernel_inv * &kb)) + la * lb / self.ones_kinv_ones)
    }
}

/// Draws conditioned Gaussian fields on a fixed grid.
///
/// Holds the posterior mean and a symmetric square root of the full
/// posterior covariance, so construction is cubic in the cell count but
/// each draw is a single matrix-vector product.
#[derive(Debug, Clone)]
pub struct KrigingSampler {
    grid: CartesianGrid,
    mean: DVector<f64>,
    sqrt_cov: DMatrix<f64>,
    pinned: Vec<(usize, f64)>,
}

impl KrigingSampler {
    /// `pinned` cells are set exactly to the given value in every draw.
    pub fn new(model: &KrigingModel, grid: CartesianGrid, pinned: Vec<(usize, f64)>) -> Result<Self> {
        let n = grid.cell_count();
        let centers: Vec<(f64, f64)> = (0..n).map(|c| grid.cell_center(c)).collect();
        // Columns of K^-1 k(x) and the Lagrange terms, one per cell.
        let cross = DMatrix::from_fn(model.len(), n, |i, c| model.correlation(model.locations[i], centers[c]));
        let kinv_cross = &model.kernel_inv * &cross;
        let lagrange: Vec<f64> = (0..n).map(|c| 1.0 - model.kinv_ones.dot(&cross.column(c))).collect();
        let explained = cross.transpose() * &kinv_cross;
        let mut cov = DMatrix::from_fn(n, n, |a, b| {
            model.variance
                * (model.correlation(centers[a], centers[b]) - explained[(a, b)]
                    + lagrange[a] * lagrange[b] / model.ones_kinv_ones)
        });
        for i in 0..n {
            cov[(i, i)] += DIAGONAL_JITTER;
        }
        let cov = cov.symmetric_part();
        let eig = cov.symmetric_eigen();
        let floor = -1e-6 * model.variance;
        if let Some(worst) = eig.eigenvalues.iter().copied().find(|&l| l < floor) {
            return Err(Error::numerical("posterior covariance is not positive semi-definite", worst));
        }
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        let sqrt_cov = scaled * eig.eigenvectors.transpose();
        let mean = DVector::from_iterator(n, centers.iter().map(|&x| model.posterior(x).0));
        Ok(Self {
            grid,
            mean,
            sqrt_cov,
            pinned,
        })
    }

    /// Sampler on the fine grid of test case 2, pinned at all well cells.
    pub fn for_case(config: &EnvironmentConfig) -> Result<Self> {
        let model = KrigingModel::for_wells(config)?;
        let pinned = config
            .injectors
            .iter()
            .chain(&config.producers)
            .map(|&c| (c, WELL_LOG_PERMEABILITY))
            .collect();
        Self::new(&model, config.fine_grid()?, pinned)
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ScalarField> {
        let n = self.grid.cell_count();
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let mut values: Vec<f64> = (&self.mean + &self.sqrt_cov * z).iter().copied().collect();
        for &(c, v) in &self.pinned {
            values[c] = v;
        }
        ScalarField::new(self.grid, values, FieldRole::LogPermeability)
    }
}

/// Producer-cell saturations after each control step under the base policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationTrajectory {
    pub step_duration: f64,
    pub snapshots: Vec<Vec<f64>>,
}

pub fn saturation_trajectory(env: &mut MultiGridEnv, permeability: &ScalarField) -> Result<SaturationTrajectory> {
    let config = env.config().clone();
    let policy = base_policy(&config);
    let n_prod = config.n_producers();
    let mut obs = env.reset(permeability)?;
    let mut snapshots = Vec::with_capacity(config.control_steps);
    loop {
        let out = env.step(&policy(&obs))?;
        snapshots.push(out.observation.as_slice()[..n_prod].to_vec());
        if out.done {
            break;
        }
        obs = out.observation;
    }
    Ok(SaturationTrajectory {
        step_duration: config.step_duration(),
        snapshots,
    })
}

/// Time-integrated squared saturation difference at the probe cells,
/// using the value at the end of each step over that step.
pub fn connectivity_distance(a: &SaturationTrajectory, b: &SaturationTrajectory) -> Result<f64> {
    if a.snapshots.len() != b.snapshots.len() {
        return Err(Error::Contract("trajectories have different lengths".into()));
    }
    let mut total = 0.0;
    for (sa, sb) in a.snapshots.iter().zip(&b.snapshots) {
        if sa.len() != sb.len() {
            return Err(Error::Contract("trajectories probe different cells".into()));
        }
        total += a.step_duration * sa.iter().zip(sb).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    Ok(total)
}

pub fn distance_matrix(trajectories: &[SaturationTrajectory]) -> Result<DMatrix<f64>> {
    let n = trajectories.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if j <= i {
                        Ok(0.0)
                    } else {
                        connectivity_distance(&trajectories[i], &trajectories[j])
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(n, n, |i, j| if i <= j { rows[i][j] } else { rows[j][i] }))
}

/// Classical multidimensional scaling into the plane.
pub fn mds_embed(distances: &DMatrix<f64>) -> Result<Vec<[f64; 2]>> {
    let n = distances.nrows();
    if distances.ncols() != n {
        return Err(Error::Contract("distance matrix must be square".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let sq = distances.map(|d| -0.5 * d * d);
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).mean()).collect();
    let total = sq.mean();
    let b = DMatrix::from_fn(n, n, |i, j| sq[(i, j)] - row_means[i] - row_means[j] + total);
    let eig = b.symmetric_part().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut points = vec![[0.0; 2]; n];
    for (axis, &k) in order.iter().take(2).enumerate() {
        let scale = eig.eigenvalues[k].max(0.0).sqrt();
        for (i, p) in points.iter_mut().enumerate() {
            p[axis] = eig.eigenvectors[(i, k)] * scale;
        }
    }
    Ok(points)
}

fn sq_dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: &[f64; 2], centers: &[[f64; 2]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centers: Vec<[f64; 2]>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centers, after each assignment pass.
    pub objective: Vec<f64>,
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn kmeans_cluster<R: Rng + ?Sized>(points: &[[f64; 2]], l: usize, rng: &mut R) -> Result<Clustering> {
    let n = points.len();
    if l == 0 || l > n {
        return Err(Error::Contract(format!("cannot form {l} clusters from {n} points")));
    }
    let mut centers = vec![points[rng.random_range(0..n)]];
    while centers.len() < l {
        let weights: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 && u < *w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick]);
    }

    let mut assignments = vec![usize::MAX; n];
    let mut objective = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        let mut cost = 0.0;
        for (p, a) in points.iter().zip(assignments.iter_mut()) {
            let (k, d) = nearest(p, &centers);
            cost += d;
            if *a != k {
                *a = k;
                changed = true;
            }
        }
        objective.push(cost);
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; 2]; l];
        let mut counts = vec![0usize; l];
        for (p, &a) in points.iter().zip(&assignments) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            counts[a] += 1;
        }
        for k in 0..l {
            if counts[k] > 0 {
                centers[k] = [sums[k][0] / counts[k] as f64, sums[k][1] / counts[k] as f64];
            }
        }
    }
    Ok(Clustering {
        centers,
        assignments,
        objective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleRole {
    Train,
    Eval,
    Pool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub id: usize,
    pub file: String,
    pub cluster: usize,
    pub role: SampleRole,
    pub embedding: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryManifest {
    pub case: TestCase,
    pub seed: u64,
    pub clusters: usize,
    pub fine_nx: usize,
    pub fine_ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub samples: Vec<LibraryEntry>,
}

/// Sampled permeability fields with their clustering and train/eval split.
#[derive(Debug, Clone)]
pub struct SampleLibrary {
    manifest: LibraryManifest,
    fields: Vec<ScalarField>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Draw `n` fields of the configured case. Each field has its own RNG stream.
pub fn sample_fields(config: &EnvironmentConfig, n: usize, seed: u64) -> Result<Vec<ScalarField>> {
    let grid = config.fine_grid()?;
    let sampler = match config.case {
        TestCase::One => None,
        TestCase::Two => Some(KrigingSampler::for_case(config)?),
    };
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeding::stream(seed, &[0x11b, i as u64]);
            match &sampler {
                None => sample_g1(grid, &mut rng),
                Some(s) => s.sample(&mut rng),
            }
        })
        .collect()
}

/// Sample, cluster and split a library of `n` fields into `l` clusters.
pub fn build_sample_library(config: &EnvironmentConfig, n: usize, l: usize, seed: u64) -> Result<SampleLibrary> {
    if l == 0 || l > n {
        return Err(Error::Contract(format!("cannot pick {l} clusters from {n} samples")));
    }
    let fields = sample_fields(config, n, seed)?;
    let probe = config.with_beta(CONNECTIVITY_BETA);
    let trajectories = fields
        .par_iter()
        .map(|f| saturation_trajectory(&mut MultiGridEnv::new(probe.clone())?, f))
        .collect::<Result<Vec<_>>>()?;
    let distances = distance_matrix(&trajectories)?;
    let embedding = mds_embed(&distances)?;
    let clustering = kmeans_cluster(&embedding, l, &mut seeding::stream(seed, &[0xc1]))?;

    let mut roles = vec![SampleRole::Pool; n];
    let mut pick = seeding::stream(seed, &[0xe7]);
    for k in 0..l {
        let members: Vec<usize> = (0..n).filter(|&i| clustering.assignments[i] == k).collect();
        let Some(&first) = members.first() else { continue };
        let center = clustering.centers[k];
        let train = members.iter().copied().fold(first, |best, i| {
            if sq_dist(&embedding[i], &center) < sq_dist(&embedding[best], &center) {
                i
            } else {
                best
            }
        });
        roles[train] = SampleRole::Train;
        let others: Vec<usize> = members.into_iter().filter(|&i| i != train).collect();
        if !others.is_empty() {
            roles[others[pick.random_range(0..others.len())]] = SampleRole::Eval;
        }
    }

    let samples = (0..n)
        .map(|id| LibraryEntry {
            id,
            file: format!("sample_{id:04}.bin"),
            cluster: clustering.assignments[id],
            role: roles[id],
            embedding: embedding[id],
        })
        .collect();
    Ok(SampleLibrary {
        manifest: LibraryManifest {
            case: config.case,
            seed,
            clusters: l,
            fine_nx: config.fine_nx,
            fine_ny: config.fine_ny,
            lx: config.lx,
            ly: config.ly,
            samples,
        },
        fields,
    })
}

impl SampleLibrary {
    pub fn manifest(&self) -> &LibraryManifest {
        &self.manifest
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    fn ids_with(&self, role: SampleRole) -> Vec<usize> {
        let mut entries: Vec<&LibraryEntry> = self.manifest.samples.iter().filter(|e| e.role == role).collect();
        entries.sort_by_key(|e| e.cluster);
        entries.into_iter().map(|e| e.id).collect()
    }

    /// Training sample ids, ordered by cluster.
    pub fn training_ids(&self) -> Vec<usize> {
        self.ids_with(SampleRole::Train)
    }

    /// Held-out evaluation sample ids, ordered by cluster.
    pub fn evaluation_ids(&self) -> Vec<usize> {
        self.ids_with(SampleRole::Eval)
    }

    pub fn training_fields(&self) -> Vec<ScalarField> {
        self.training_ids().into_iter().map(|i| self.fields[i].clone()).collect()
    }

    pub fn evaluation_fields(&self) -> Vec<ScalarField> {
        self.evaluation_ids().into_iter().map(|i| self.fields[i].clone()).collect()
    }

    /// Write every field plus `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (entry, field) in self.manifest.samples.iter().zip(&self.fields) {
            field.save(&dir.join(&entry.file))?;
        }
        let json = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| Error::format(dir.join(MANIFEST_FILE), e.to_string()))?;
        std::fs::write(dir.join(MANIFEST_FILE), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path: PathBuf = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)?;
        let manifest: LibraryManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let fields = manifest
            .samples
            .iter()
            .map(|e| {
                let f = ScalarField::load(&dir.join(&e.file), FieldRole::LogPermeability)?;
                if (f.grid().nx(), f.grid().ny()) != (manifest.fine_nx, manifest.fine_ny) {
                    return Err(Error::format(dir.join(&e.file), "grid differs from manifest"));
                }
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, fields })
    }

    /// Whether fields fit the fine grid of `config`.
    pub fn matches(&self, config: &EnvironmentConfig) -> bool {
        self.manifest.case == config.case
            && self.manifest.fine_nx == config.fine_nx
            && self.manifest.fine_ny == config.fine_ny
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::stream;

    #[test]
    fn flat_channel_is_a_band_of_rows() {
        let grid = CartesianGrid::new(10, 10, 1000.0, 1000.0).unwrap();
        let f = ChannelParams {
            width: 200.0,
            left_offset: 300.0,
            right_offset: 300.0,
        }
        .field(grid)
        .unwrap();
        for j in 0..10 {
            let y = (j as f64 + 0.5) * 100.0;
            let expect = if (300.0..=500.0).contains(&y) { 245f64.ln() } else { 0.14f64.ln() };
            for i in 0..10 {
                assert_eq!(f.get(i, j), expect);
            }
        }
    }

    #[test]
    fn channel_fields_are_two_valued_and_contiguous() {
        let grid = CartesianGrid::new(61, 61, 1200.0, 1200.0).unwrap();
        let mut rng = stream(3, &[]);
        for _ in 0..50 {
            let f = sample_g1(grid, &mut rng).unwrap();
            for i in 0..61 {
                let col: Vec<bool> = (0..61).map(|j| f.get(i, j) == 245f64.ln()).collect();
                let starts = col.windows(2).filter(|w| !w[0] && w[1]).count() + col[0] as usize;
                assert!(starts <= 1);
                assert!((0..61).all(|j| f.get(i, j) == 245f64.ln() || f.get(i, j) == 0.14f64.ln()));
            }
        }
    }

    #[test]
    fn channel_area_fraction() {
        let grid = CartesianGrid::new(61, 61, 1200.0, 1200.0).unwrap();
        let mut rng = stream(11, &[]);
        let n = 10_000;
        let inside = 245f64.ln();
        let mut total = 0.0;
        for _ in 0..n {
            let f = sample_g1(grid, &mut rng).unwrap();
            total += f.values().iter().filter(|v| **v == inside).count() as f64 / 3721.0;
        }
        assert!((total / n as f64 - 0.2).abs() < 0.01);
    }

    #[test]
    fn kriging_interpolates_wells() {
        let cfg = EnvironmentConfig::case2();
        let model = KrigingModel::for_wells(&cfg).unwrap();
        assert_eq!(model.len(), 21);
        for &x in model.locations() {
            let (m, v) = model.posterior(x);
            assert!((m - 2.41).abs() <= 1e-8);
            assert!(v <= 1e-8);
        }
    }

    #[test]
    fn single_observation_is_constant_mean() {
        let model = KrigingModel::new(vec![(10.0, 20.0)], vec![1.7], 25.0, (620.0, 62.0), PI / 8.0).unwrap();
        assert!((model.global_mean() - 1.7).abs() < 1e-12);
        for x in [(0.0, 0.0), (300.0, 900.0), (10.0, 20.0)] {
            assert!((model.posterior(x).0 - 1.7).abs() < 1e-12);
        }
    }

    #[test]
    fn far_field_limit() {
        let model = KrigingModel::new(
            vec![(0.0, 0.0), (50.0, 0.0), (0.0, 30.0)],
            vec![1.0, 2.0, 3.0],
            25.0,
            (620.0, 62.0),
            PI / 8.0,
        )
        .unwrap();
        let (m, v) = model.posterior((1e7, 1e7));
        assert!((m - model.global_mean()).abs() < 1e-9);
        assert!((v - 25.0 * (1.0 + 1.0 / model.ones_kinv_ones)).abs() < 1e-9);
    }

    #[test]
    fn rotation_is_clockwise() {
        let model = KrigingModel::new(vec![(0.0, 0.0)], vec![0.0], 1.0, (100.0, 10.0), PI / 4.0).unwrap();
        // Long axis turned 45 degrees clockwise points right and down in a y-down frame.
        let along = model.correlation((0.0, 0.0), (50.0, 50.0));
        let across = model.correlation((0.0, 0.0), (50.0, -50.0));
        assert!(along > across);
    }

    fn small_case2() -> EnvironmentConfig {
        EnvironmentConfig::case2_on(9, 28)
    }

    #[test]
    fn kriging_draws_match_posterior() {
        let cfg = small_case2();
        let model = KrigingModel::for_wells(&cfg).unwrap();
        let sampler = KrigingSampler::for_case(&cfg).unwrap();
        let grid = cfg.fine_grid().unwrap();
        let mut rng = stream(5, &[]);
        let draws: Vec<ScalarField> = (0..1000).map(|_| sampler.sample(&mut rng).unwrap()).collect();
        for c in 0..grid.cell_count() {
            let (m, v) = model.posterior(grid.cell_center(c));
            let mean = draws.iter().map(|d| d.values()[c]).sum::<f64>() / 1000.0;
            assert!((mean - m).abs() <= 3.0 * v.sqrt() / 1000f64.sqrt() + 1e-9, "cell {c}");
        }
        for &w in cfg.injectors.iter().chain(&cfg.producers) {
            assert!(draws.iter().all(|d| d.values()[w] == 2.41));
        }
    }

    #[test]
    fn kriging_draws_are_seeded() {
        let sampler = KrigingSampler::for_case(&small_case2()).unwrap();
        let a = sampler.sample(&mut stream(9, &[1])).unwrap();
        let b = sampler.sample(&mut stream(9, &[1])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn toy_distance() {
        let a = SaturationTrajectory {
            step_duration: 1.0,
            snapshots: vec![vec![1.0]],
        };
        let b = SaturationTrajectory {
            step_duration: 1.0,
            snapshots: vec![vec![0.0]],
        };
        assert_eq!(connectivity_distance(&a, &b).unwrap(), 1.0);
        assert_eq!(connectivity_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn equilateral_triangle_embeds_exactly() {
        let d = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        let p = mds_embed(&d).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((sq_dist(&p[i], &p[j]).sqrt() - d[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_distances_embed_at_origin() {
        let p = mds_embed(&DMatrix::zeros(4, 4)).unwrap();
        assert!(p.iter().all(|q| q[0].abs() < 1e-12 && q[1].abs() < 1e-12));
    }

    #[test]
    fn one_cluster_per_point() {
        let pts: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, (i * i) as f64]).collect();
        let c = kmeans_cluster(&pts, 6, &mut stream(1, &[])).unwrap();
        assert_eq!(*c.objective.last().unwrap(), 0.0);
        let mut a = c.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 6);
    }

    #[test]
    fn separates_two_blobs() {
        let mut rng = stream(2, &[]);
        let mut pts = Vec::new();
        for b in 0..2 {
            for _ in 0..20 {
                let off = 10.0 * b as f64;
                pts.push([off + rng.random::<f64>(), rng.random::<f64>()]);
            }
        }
        let c = kmeans_cluster(&pts, 2, &mut rng).unwrap();
        for i in 0..40 {
            assert_eq!(c.assignments[i] == c.assignments[0], i < 20);
        }
        for w in c.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn desk_library_roles() {
        let cfg = EnvironmentConfig::case1_on(15);
        let lib = build_sample_library(&cfg, 40, 8, 7).unwrap();
        let train = lib.training_ids();
        assert_eq!(train.len(), 8);
        let fields = lib.training_fields();
        for i in 0..fields.len() {
            for j in i + 1..fields.len() {
                assert_ne!(fields[i], fields[j]);
            }
        }
        let eval = lib.evaluation_ids();
        assert!(eval.iter().all(|e| !train.contains(e)));

        let dir = tempfile::tempdir().unwrap();
        lib.save(dir.path()).unwrap();
        let back = SampleLibrary::load(dir.path()).unwrap();
        assert_eq!(back.manifest(), lib.manifest());
        assert_eq!(back.fields(), lib.fields());
    }
}
