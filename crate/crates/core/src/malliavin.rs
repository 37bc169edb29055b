//! Malliavin Gram matrices on a Galerkin subspace and their constrained
//! smallest eigenvalues.
//!
//! The quadratic form is assembled from the identity
//! `<M_{s,t} xi, xi> = sum_j int_s^t q_j^2(w_r) <J_{r,t} e_j, xi>^2 dr`
//! with a left-endpoint rule on equally spaced nodes: each node `r` launches
//! one forward linearized solve per noise direction along the same stored
//! path (the adjoint route is avoided on purpose: for multiplicative noise it
//! carries a non-adapted integral, while forward solves do not).
//!
//! `constrained_min` evaluates `X = inf { <M xi, xi> : ||xi|| = 1,
//! ||P_N xi|| >= alpha }` by checking the unconstrained eigenvector first and
//! otherwise bisecting the active-constraint KKT system, cross-checked by
//! projected gradient descent from random feasible restarts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

use crate::dynamics::{simulate, DynamicsError, IntegratorSpec, PathRecord, Stepper};
use crate::noise::NoiseModel;
use crate::rng::stream;
use crate::spectral::{Lattice, ModeIndex, SpectralField, SpectralOps};
use crate::stats::{wilson_95, WilsonInterval};

#[derive(Debug, Error)]
pub enum MalliavinError {
    #[error("dimension mismatch: expected {0}, got {1}")]
    DimensionMismatch(usize, usize),
    #[error("interval [{0}, {1}] not a positive multiple of node stride {2}")]
    QuadratureMisaligned(usize, usize, usize),
    #[error("Galerkin radius {0} does not fit inside lattice truncation {1}")]
    BasisOutsideLattice(u32, u32),
    #[error("assembled matrix is not symmetric: asymmetry {0:.3e}")]
    NotSymmetric(f64),
    #[error(
        "constrained minimizer did not converge: bisection {bisect:.6e} vs restarts {pgd:.6e}"
    )]
    NonConvergence { bisect: f64, pgd: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Spectral(#[from] crate::spectral::SpectralError),
}

/// Which truncation shape the Galerkin subspace uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TruncationNorm {
    /// `|k| <= radius` (matches the projections `P_N`)
    Euclidean,
    /// `max(|k1|,|k2|) <= radius` (matches the FFT layout; D = (2r+1)^2 - 1)
    Box,
}

/// Ordered mode subset of a field lattice carrying the matrix coordinates.
#[derive(Debug, Clone)]
pub struct GalerkinBasis {
    lattice: Arc<Lattice>,
    indices: Vec<usize>,
    modes: Vec<ModeIndex>,
    pub radius: u32,
    pub norm: TruncationNorm,
}

impl GalerkinBasis {
    pub fn new(
        lattice: &Arc<Lattice>,
        radius: u32,
        norm: TruncationNorm,
    ) -> Result<GalerkinBasis, MalliavinError> {
        let kmax = lattice.kmax();
        let fits = match norm {
            TruncationNorm::Euclidean => radius <= kmax,
            TruncationNorm::Box => 2 * (radius as u64) * (radius as u64) <= (kmax as u64) * (kmax as u64),
        };
        if !fits {
            return Err(MalliavinError::BasisOutsideLattice(radius, kmax));
        }
        let mut indices = Vec::new();
        let mut modes = Vec::new();
        for (i, m) in lattice.modes().iter().enumerate() {
            let inside = match norm {
                TruncationNorm::Euclidean => m.norm_sq() <= (radius as i64) * (radius as i64),
                TruncationNorm::Box => m.k1.abs() <= radius as i32 && m.k2.abs() <= radius as i32,
            };
            if inside {
                indices.push(i);
                modes.push(*m);
            }
        }
        Ok(GalerkinBasis { lattice: Arc::clone(lattice), indices, modes, radius, norm })
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn modes(&self) -> &[ModeIndex] {
        &self.modes
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    /// Galerkin coordinates of a field (orthogonal projection).
    pub fn project(&self, f: &SpectralField) -> DVector<f64> {
        DVector::from_iterator(self.indices.len(), self.indices.iter().map(|&i| f.coeffs()[i]))
    }

    pub fn lift(&self, v: &DVector<f64>) -> SpectralField {
        let mut f = SpectralField::zero(&self.lattice);
        for (slot, &i) in self.indices.iter().enumerate() {
            f.coeffs_mut()[i] = v[slot];
        }
        f
    }

    /// Mask of coordinates with Euclidean `|k| <= n` (the `P_N` block).
    pub fn low_mode_mask(&self, n: u32) -> Vec<bool> {
        let n_sq = (n as i64) * (n as i64);
        self.modes.iter().map(|m| m.norm_sq() <= n_sq).collect()
    }
}

/// Symmetric PSD representation of `M_{s,t}` plus quadrature metadata.
#[derive(Debug, Clone)]
pub struct MalliavinGram {
    pub matrix: DMatrix<f64>,
    pub node_steps: Vec<usize>,
    pub weights: Vec<f64>,
    pub interval: (usize, usize),
    pub path_seed: u64,
    /// Raw rank-one factors `(node, noise index, q^2 weight, coordinates)`;
    /// kept only on request, for quadrature oracles.
    pub factors: Option<Vec<GramFactor>>,
}

#[derive(Debug, Clone)]
pub struct GramFactor {
    pub node: usize,
    pub noise_index: usize,
    pub q_sq: f64,
    pub coords: DVector<f64>,
}

impl MalliavinGram {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn operator_norm_bound(&self) -> f64 {
        // Frobenius norm upper-bounds the spectral norm; cheap and adequate
        // for tolerance scaling.
        self.matrix.norm()
    }
}

/// `xi^T M xi`.
pub fn quadratic_form(gram: &MalliavinGram, xi: &DVector<f64>) -> Result<f64, MalliavinError> {
    if xi.len() != gram.dim() {
        return Err(MalliavinError::DimensionMismatch(gram.dim(), xi.len()));
    }
    Ok((xi.transpose() * &gram.matrix * xi)[(0, 0)])
}

/// Assemble `M_{s,t}` along a stored path.
///
/// All tangents alive at a given step advance together so the per-step state
/// cache is shared; the walk costs `d * nodes` linearized solves in total.
pub fn assemble_gram(
    ops: &mut SpectralOps,
    stepper: &Stepper,
    path: &PathRecord,
    s_step: usize,
    t_step: usize,
    node_stride: usize,
    basis: &GalerkinBasis,
    keep_factors: bool,
) -> Result<MalliavinGram, MalliavinError> {
    if s_step >= t_step || t_step > path.steps {
        return Err(MalliavinError::QuadratureMisaligned(s_step, t_step, node_stride));
    }
    if node_stride == 0 || (t_step - s_step) % node_stride != 0 {
        return Err(MalliavinError::QuadratureMisaligned(s_step, t_step, node_stride));
    }
    let dim = basis.dim();
    let weight = node_stride as f64 * path.dt;
    let mut node_steps = Vec::new();
    let mut live: Vec<(usize, usize, SpectralField)> = Vec::new();
    let mut w = path.state_at(ops, stepper, s_step)?;
    for m in s_step..t_step {
        if (m - s_step) % node_stride == 0 {
            node_steps.push(m);
            let node_id = node_steps.len() - 1;
            for (j, mode) in stepper.model.modes().iter().enumerate() {
                let ej = SpectralField::basis(basis.lattice(), *mode)
                    .expect("noise mode inside lattice");
                live.push((node_id, j, ej));
            }
        }
        let cache = ops.flow_cache(&w)?;
        let dw = path.increments_row(m);
        for (_, _, xi) in live.iter_mut() {
            *xi = stepper.linearized_step(ops, &w, Some(&cache), xi, dw)?;
        }
        if m + 1 < t_step {
            w = match path.stored_state(m + 1) {
                Some(s) => s.clone(),
                None => stepper.step_with_q(ops, &w, path.q_row(m), dw, m)?,
            };
        }
    }

    let mut matrix = DMatrix::zeros(dim, dim);
    let mut factors = if keep_factors { Some(Vec::with_capacity(live.len())) } else { None };
    for (node_id, j, xi) in live {
        let q = path.q_row(node_steps[node_id])[j];
        let scale = weight * q * q;
        let g = basis.project(&xi);
        matrix.syger(scale, &g, &g, 1.0);
        if let Some(f) = factors.as_mut() {
            f.push(GramFactor { node: node_steps[node_id], noise_index: j, q_sq: q * q, coords: g });
        }
    }

    // syger fills one triangle; mirror it.
    for r in 0..dim {
        for c in (r + 1)..dim {
            let v = matrix[(c, r)];
            matrix[(r, c)] = v;
        }
    }
    let weights = vec![weight; node_steps.len()];
    Ok(MalliavinGram {
        matrix,
        node_steps,
        weights,
        interval: (s_step, t_step),
        path_seed: path.seed,
        factors,
    })
}

/// Smallest eigenvalue and eigenvector of a symmetric matrix.
pub fn smallest_eigenpair(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] < eig.eigenvalues[best] {
            best = i;
        }
    }
    (eig.eigenvalues[best], eig.eigenvectors.column(best).into_owned())
}

pub fn largest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
}

/// The region `S_{alpha,N} = { xi : ||P_N xi|| >= alpha, ||xi|| = 1 }`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SalphaN {
    pub alpha: f64,
    pub n: u32,
}

#[derive(Debug, Clone)]
pub struct ConstrainedMin {
    pub value: f64,
    pub minimizer: DVector<f64>,
    pub constraint_active: bool,
    /// Relative gap between the KKT bisection and the restart search when the
    /// constraint was active.
    pub method_gap: f64,
    pub low_mode_mass: f64,
}

fn project_feasible(xi: &mut DVector<f64>, mask: &[bool], alpha: f64, rng: &mut ChaCha8Rng) {
    let nrm = xi.norm();
    if nrm == 0.0 {
        for (i, inside) in mask.iter().enumerate() {
            if *inside {
                xi[i] = 1.0;
                break;
            }
        }
    } else {
        *xi /= nrm;
    }
    let mut low_sq = 0.0;
    for (i, inside) in mask.iter().enumerate() {
        if *inside {
            low_sq += xi[i] * xi[i];
        }
    }
    let low = low_sq.sqrt();
    if low >= alpha {
        return;
    }
    // Rescale the low block onto the constraint boundary.
    let high_sq = (1.0 - low_sq).max(0.0);
    let target_high = (1.0 - alpha * alpha).sqrt();
    let (ls, hs) = if low > 1e-14 {
        (alpha / low, if high_sq > 0.0 { target_high / high_sq.sqrt() } else { 0.0 })
    } else {
        // No low-mode mass to rescale: seed a random low direction.
        let mut low_dir = DVector::<f64>::zeros(xi.len());
        let mut any = false;
        for (i, inside) in mask.iter().enumerate() {
            if *inside {
                low_dir[i] = rng.gen_range(-1.0..1.0);
                any = true;
            }
        }
        if any {
            low_dir /= low_dir.norm().max(1e-300);
            for (i, inside) in mask.iter().enumerate() {
                if *inside {
                    xi[i] = alpha * low_dir[i];
                } else {
                    xi[i] *= if high_sq > 0.0 { target_high / high_sq.sqrt() } else { 0.0 };
                }
            }
            let n = xi.norm();
            if n > 0.0 {
                *xi /= n;
            }
        }
        return;
    };
    for (i, inside) in mask.iter().enumerate() {
        xi[i] *= if *inside { ls } else { hs };
    }
    let n = xi.norm();
    if n > 0.0 {
        *xi /= n;
    }
}

fn low_mass(xi: &DVector<f64>, mask: &[bool]) -> f64 {
    let mut s = 0.0;
    for (i, inside) in mask.iter().enumerate() {
        if *inside {
            s += xi[i] * xi[i];
        }
    }
    s.sqrt()
}

fn pgd_search(
    m: &DMatrix<f64>,
    mask: &[bool],
    alpha: f64,
    restarts: usize,
    iters: usize,
    seeds: &[DVector<f64>],
    rng: &mut ChaCha8Rng,
) -> (f64, DVector<f64>) {
    let dim = m.nrows();
    let lmax = largest_eigenvalue(m).max(1e-300);
    let mut best_val = f64::INFINITY;
    let mut best_xi = DVector::zeros(dim);
    let total = restarts + seeds.len();
    for r in 0..total {
        let mut xi = if r < seeds.len() {
            seeds[r].clone()
        } else {
            DVector::from_fn(dim, |_, _| rng.gen_range(-1.0f64..1.0))
        };
        project_feasible(&mut xi, mask, alpha, rng);
        let mut step = 1.0 / lmax;
        let mut val = (xi.transpose() * m * &xi)[(0, 0)];
        for _ in 0..iters {
            let grad = m * &xi * 2.0;
            let mut cand = &xi - &grad * step;
            project_feasible(&mut cand, mask, alpha, rng);
            let cval = (cand.transpose() * m * &cand)[(0, 0)];
            if cval < val {
                xi = cand;
                val = cval;
                step *= 1.2;
            } else {
                step *= 0.5;
                if step * lmax < 1e-14 {
                    break;
                }
            }
        }
        if val < best_val {
            best_val = val;
            best_xi = xi;
        }
    }
    (best_val, best_xi)
}

/// Minimize `xi^T M xi` over `S_{alpha,N}` realized on a Galerkin basis.
///
/// Returns the smaller of the KKT-bisection and restart-search values; a
/// relative disagreement beyond `1e-6` is reported as `NonConvergence` with
/// both values attached (callers may still use the smaller one).
pub fn constrained_min(
    gram: &MalliavinGram,
    basis: &GalerkinBasis,
    region: SalphaN,
    rng: &mut ChaCha8Rng,
) -> Result<ConstrainedMin, MalliavinError> {
    let mask = basis.low_mode_mask(region.n);
    constrained_min_masked(&gram.matrix, &mask, region.alpha, rng)
}

/// Same as [`constrained_min`] with an explicit constraint mask; used directly
/// in tests on toy matrices.
pub fn constrained_min_masked(
    m: &DMatrix<f64>,
    mask: &[bool],
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ConstrainedMin, MalliavinError> {
    assert!(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0,1]");
    assert_eq!(m.nrows(), mask.len());
    let (lmin, vmin) = smallest_eigenpair(m);
    if low_mass(&vmin, mask) >= alpha {
        return Ok(ConstrainedMin {
            value: lmin,
            low_mode_mass: low_mass(&vmin, mask),
            minimizer: vmin,
            constraint_active: false,
            method_gap: 0.0,
        });
    }

    // Active constraint: bisect mu in M - mu P over the low-mode mass of the
    // smallest eigenvector, targeting ||P xi|| = alpha.
    let dim = m.nrows();
    let diag_p =
        DMatrix::from_fn(dim, dim, |r, c| if r == c && mask[r] { 1.0 } else { 0.0 });
    let lmax = largest_eigenvalue(m);
    let eval = |mu: f64| -> (f64, DVector<f64>, f64) {
        let shifted = m - &diag_p * mu;
        let (_, v) = smallest_eigenpair(&shifted);
        let mass = low_mass(&v, mask);
        let val = (v.transpose() * m * &v)[(0, 0)];
        (val, v, mass)
    };

    let mut lo = 0.0f64;
    let mut hi = (lmax - lmin).max(1.0);
    let mut hi_state = eval(hi);
    let mut grow = 0;
    while hi_state.2 < alpha && grow < 60 {
        hi *= 2.0;
        hi_state = eval(hi);
        grow += 1;
    }
    let mut best_feasible: Option<(f64, DVector<f64>)> = if hi_state.2 >= alpha {
        Some((hi_state.0, hi_state.1))
    } else {
        None
    };
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (val, v, mass) = eval(mid);
        if mass >= alpha {
            hi = mid;
            let better = best_feasible.as_ref().map_or(true, |(bv, _)| val < *bv);
            if better {
                best_feasible = Some((val, v));
            }
            if (mass - alpha).abs() < 1e-9 {
                break;
            }
        } else {
            lo = mid;
        }
        if hi - lo < 1e-12 * hi.max(1.0) {
            break;
        }
    }

    let mut seeds = Vec::new();
    if let Some((_, v)) = &best_feasible {
        seeds.push(v.clone());
    }
    let (pgd_val, pgd_xi) = pgd_search(m, mask, alpha, 16, 400, &seeds, rng);

    let (bisect_val, bisect_xi) = match best_feasible {
        Some((v, x)) => (v, x),
        None => (pgd_val, pgd_xi.clone()),
    };
    let scale = bisect_val.abs().max(pgd_val.abs()).max(1e-300);
    let gap = (bisect_val - pgd_val).abs() / scale;
    let (value, minimizer) =
        if pgd_val < bisect_val { (pgd_val, pgd_xi) } else { (bisect_val, bisect_xi) };
    let result = ConstrainedMin {
        value,
        low_mode_mass: low_mass(&minimizer, mask),
        minimizer,
        constraint_active: true,
        method_gap: gap,
    };
    if gap > 1e-6 && gap * scale > 1e-12 {
        return Err(MalliavinError::NonConvergence { bisect: bisect_val, pgd: pgd_val });
    }
    Ok(result)
}

/// Parameters for the non-degeneracy probability estimate.
#[derive(Debug, Clone, Serialize)]
pub struct REstimateParams {
    /// Strictly decreasing threshold grid.
    pub epsilons: Vec<f64>,
    pub alpha: f64,
    pub n_low: u32,
    /// Radius of the initial-condition ball.
    pub r_ball: f64,
    pub n_initials: usize,
    pub n_paths: usize,
    pub node_stride: usize,
    pub horizon: f64,
    pub galerkin_radius: u32,
    pub euclidean_truncation: bool,
}

/// Empirical `P(X < eps)` per threshold, pooled and per-worst-initial.
#[derive(Debug, Clone, Serialize)]
pub struct NondegeneracyEstimate {
    pub epsilons: Vec<f64>,
    pub pooled: Vec<WilsonInterval>,
    /// For each epsilon, the largest per-initial fraction (the sampled proxy
    /// for the sup over the initial-condition ball; a sample maximum, not a
    /// verified supremum).
    pub worst_initial_fraction: Vec<f64>,
    pub x_samples: usize,
    pub x_min: f64,
    pub x_median: f64,
    pub x_max: f64,
    pub nonconvergent: usize,
}

/// Structured + random initial conditions filling `||w0|| <= r`.
pub fn sample_initial(
    lattice: &Arc<Lattice>,
    r: f64,
    index: usize,
    master: u64,
) -> SpectralField {
    match index {
        0 => SpectralField::zero(lattice),
        1 => {
            let m = ModeIndex::new(1, 0).unwrap();
            SpectralField::basis(lattice, m).unwrap().scaled(r)
        }
        2 => {
            // Mixed low-mode initial on the boundary of the ball.
            let mut f = SpectralField::zero(lattice);
            for (k1, k2, a) in [(1, 0, 1.0), (0, 1, -0.5), (1, 1, 0.25), (-2, 1, 0.4)] {
                let m = ModeIndex::new(k1, k2).unwrap();
                if let Some(i) = lattice.index_of(m) {
                    f.coeffs_mut()[i] = a;
                }
            }
            let n = f.norm();
            f.scaled(r / n)
        }
        _ => {
            let mut rng = stream(master, "r-estimate/initial", index as u64);
            let mut f = SpectralField::zero(lattice);
            for c in f.coeffs_mut() {
                *c = rng.gen_range(-1.0..1.0);
            }
            let n = f.norm();
            f.scaled(r / n)
        }
    }
}

/// Monte-Carlo estimate of `r(eps, alpha, R, N) = sup P(X < eps)` with the
/// sup approximated by the max over sampled initials.
pub fn estimate_r(
    spec: &IntegratorSpec,
    model: &NoiseModel,
    params: &REstimateParams,
    master_seed: u64,
) -> Result<NondegeneracyEstimate, MalliavinError> {
    for w in params.epsilons.windows(2) {
        assert!(w[0] > w[1] && w[1] > 0.0, "epsilon grid must be strictly decreasing");
    }
    let mut ops = spec.make_ops();
    let norm = if params.euclidean_truncation {
        TruncationNorm::Euclidean
    } else {
        TruncationNorm::Box
    };
    let basis = GalerkinBasis::new(ops.lattice(), params.galerkin_radius, norm)?;
    let stepper = Stepper::new(&ops, spec, model);

    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(params.n_initials);
    let mut nonconvergent = 0usize;
    for init_idx in 0..params.n_initials {
        let w0 = sample_initial(ops.lattice(), params.r_ball, init_idx, master_seed);
        let mut per_initial = Vec::with_capacity(params.n_paths);
        for path_idx in 0..params.n_paths {
            let stream_idx = (init_idx * params.n_paths + path_idx) as u64;
            let mut path_rng = stream(master_seed, "r-estimate/path", stream_idx);
            let path = simulate(
                &mut ops,
                spec,
                model,
                &w0,
                params.horizon,
                master_seed,
                &mut path_rng,
            )?;
            let gram = assemble_gram(
                &mut ops,
                &stepper,
                &path,
                0,
                path.steps,
                params.node_stride,
                &basis,
                false,
            )?;
            let mut cm_rng = stream(master_seed, "r-estimate/minimizer", stream_idx);
            let region = SalphaN { alpha: params.alpha, n: params.n_low };
            let x = match constrained_min(&gram, &basis, region, &mut cm_rng) {
                Ok(cm) => cm.value,
                Err(MalliavinError::NonConvergence { bisect, pgd }) => {
                    nonconvergent += 1;
                    bisect.min(pgd)
                }
                Err(e) => return Err(e),
            };
            per_initial.push(x.max(0.0));
        }
        xs.push(per_initial);
    }

    let flat: Vec<f64> = xs.iter().flatten().copied().collect();
    let mut sorted = flat.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pooled = params
        .epsilons
        .iter()
        .map(|&eps| {
            let hits = flat.iter().filter(|&&x| x < eps).count() as u64;
            wilson_95(hits, flat.len() as u64)
        })
        .collect();
    let worst = params
        .epsilons
        .iter()
        .map(|&eps| {
            xs.iter()
                .map(|row| row.iter().filter(|&&x| x < eps).count() as f64 / row.len() as f64)
                .fold(0.0f64, f64::max)
        })
        .collect();
    Ok(NondegeneracyEstimate {
        epsilons: params.epsilons.clone(),
        pooled,
        worst_initial_fraction: worst,
        x_samples: flat.len(),
        x_min: sorted.first().copied().unwrap_or(f64::NAN),
        x_median: sorted.get(sorted.len() / 2).copied().unwrap_or(f64::NAN),
        x_max: sorted.last().copied().unwrap_or(f64::NAN),
        nonconvergent,
    })
}

/// `lambda_min(M)` with the PSD tolerance used across the diagnostics.
pub fn psd_check(gram: &MalliavinGram) -> (f64, bool) {
    let (lmin, _) = smallest_eigenpair(&gram.matrix);
    let ok = lmin >= -1e-10 * gram.operator_norm_bound();
    (lmin, ok)
}

/// Max row asymmetry `|M - M^T|_inf`, for symmetry assertions.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..m.nrows() {
        for c in (r + 1)..m.ncols() {
            worst = worst.max((m[(r, c)] - m[(c, r)]).abs());
        }
    }
    worst
}
