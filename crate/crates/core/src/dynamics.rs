//! Time integration of the vorticity equation
//! `dw = (nu Laplace w + B(Kw, w)) dt + sum_j q_j(w) e_j dW_j`
//! and of its linearization along the same realized noise path.
//!
//! Scheme: integrating-factor (exponential) Euler-Maruyama,
//! `w+_k = exp(-nu |k|^2 dt) (w_k + dt B(Kw,w)_k + [k = j] q_j(w) dW_j)`.
//! The linearized step applies the exact derivative of this discrete map, so
//! finite-difference Jacobian checks converge at first order in the
//! perturbation size with no scheme mismatch.
//!
//! Reproducibility contract: a path is fully determined by its stored
//! increments; re-simulation from step 0 reproduces every snapshot bit for
//! bit, and the same increments drive the state, the linearized flow, and any
//! perturbed trajectories used by difference quotients.

use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::{NoiseError, NoiseModel};
use crate::rng;
use crate::spectral::{FieldIoError, FlowCache, Lattice, SpectralError, SpectralField, SpectralOps};
use crate::stats::loglog_slope;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("state norm {norm:.3e} exceeded blow-up guard {guard:.3e} at step {step} (dt too large?)")]
    BlowUp { step: usize, norm: f64, guard: f64 },
    #[error("step range [{0}, {1}] outside path of {2} steps")]
    IndexOutOfRange(usize, usize, usize),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("checkpoint io: {0}")]
    Checkpoint(String),
}

/// Integration parameters. `kmax = None` keeps the full dealiased band.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegratorSpec {
    pub dt: f64,
    pub nu: f64,
    pub grid: usize,
    pub kmax: Option<u32>,
    /// Disable to integrate the pure (linear + noise) system.
    pub nonlinearity: bool,
    pub blowup_guard: f64,
    pub snapshot_stride: usize,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        IntegratorSpec {
            dt: 1e-3,
            nu: 0.1,
            grid: 64,
            kmax: None,
            nonlinearity: true,
            blowup_guard: 1e6,
            snapshot_stride: 1,
        }
    }
}

impl IntegratorSpec {
    pub fn make_ops(&self) -> SpectralOps {
        SpectralOps::new(self.grid, self.kmax)
    }

    pub fn steps_for(&self, t: f64) -> usize {
        (t / self.dt).round() as usize
    }
}

/// Spec plus lattice-derived tables, bound to one truncation.
pub struct Stepper<'a> {
    pub spec: &'a IntegratorSpec,
    pub model: &'a NoiseModel,
    decay: Vec<f64>,
    noise_slots: Vec<usize>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        ops: &SpectralOps,
        spec: &'a IntegratorSpec,
        model: &'a NoiseModel,
    ) -> Stepper<'a> {
        let lattice = ops.lattice();
        let decay = lattice
            .modes()
            .iter()
            .map(|m| (-spec.nu * m.norm_sq() as f64 * spec.dt).exp())
            .collect();
        let noise_slots = model
            .modes()
            .iter()
            .map(|m| {
                lattice
                    .index_of(*m)
                    .unwrap_or_else(|| panic!("noise mode {m} outside truncation"))
            })
            .collect();
        Stepper { spec, model, decay, noise_slots }
    }

    /// One step given precomputed coefficients `q` (used when replaying a
    /// stored path, so replay never re-enters the noise model).
    pub fn step_with_q(
        &self,
        ops: &mut SpectralOps,
        w: &SpectralField,
        q: &[f64],
        dw: &[f64],
        step_index: usize,
    ) -> Result<SpectralField, DynamicsError> {
        debug_assert_eq!(dw.len(), self.noise_slots.len());
        let mut next = if self.spec.nonlinearity {
            let cache = ops.flow_cache(w)?;
            let mut rhs = ops.advection_rhs(&cache);
            for (r, wc) in rhs.coeffs_mut().iter_mut().zip(w.coeffs()) {
                *r = wc + self.spec.dt * *r;
            }
            rhs
        } else {
            w.clone()
        };
        for (j, &slot) in self.noise_slots.iter().enumerate() {
            next.coeffs_mut()[slot] += q[j] * dw[j];
        }
        for (c, &f) in next.coeffs_mut().iter_mut().zip(&self.decay) {
            *c *= f;
        }
        let norm = next.norm();
        if !norm.is_finite() || norm > self.spec.blowup_guard {
            return Err(DynamicsError::BlowUp {
                step: step_index,
                norm,
                guard: self.spec.blowup_guard,
            });
        }
        Ok(next)
    }

    /// One step of the state, evaluating the coefficients at `w`.
    pub fn step(
        &self,
        ops: &mut SpectralOps,
        w: &SpectralField,
        dw: &[f64],
        step_index: usize,
    ) -> Result<(SpectralField, Vec<f64>), DynamicsError> {
        let q = self.model.q_eval(w)?;
        let next = self.step_with_q(ops, w, &q, dw, step_index)?;
        Ok((next, q))
    }

    /// One step of the linearized flow along the state `w` with shared cache:
    /// `xi+_k = exp(-nu |k|^2 dt) (xi_k + dt Btilde(w, xi)_k + [k=j] (Dq_j(w) xi) dW_j)`.
    pub fn linearized_step(
        &self,
        ops: &mut SpectralOps,
        w: &SpectralField,
        cache: Option<&FlowCache>,
        xi: &SpectralField,
        dw: &[f64],
    ) -> Result<SpectralField, DynamicsError> {
        let mut next = if self.spec.nonlinearity {
            let mut bt = match cache {
                Some(c) => ops.b_tilde_cached(c, xi)?,
                None => ops.b_tilde(w, xi)?,
            };
            for (r, xc) in bt.coeffs_mut().iter_mut().zip(xi.coeffs()) {
                *r = xc + self.spec.dt * *r;
            }
            bt
        } else {
            xi.clone()
        };
        if !self.model.is_additive() {
            let dq = self.model.dq_apply(w, xi);
            for (j, &slot) in self.noise_slots.iter().enumerate() {
                next.coeffs_mut()[slot] += dq[j] * dw[j];
            }
        }
        for (c, &f) in next.coeffs_mut().iter_mut().zip(&self.decay) {
            *c *= f;
        }
        Ok(next)
    }
}

/// Single step with throwaway tables; loops should build a [`Stepper`].
pub fn step(
    ops: &mut SpectralOps,
    spec: &IntegratorSpec,
    model: &NoiseModel,
    w: &SpectralField,
    dw: &[f64],
) -> Result<SpectralField, DynamicsError> {
    let stepper = Stepper::new(ops, spec, model);
    Ok(stepper.step(ops, w, dw, 0)?.0)
}

/// A realized trajectory: time grid, per-step Brownian increments, per-step
/// coefficient values, and state snapshots at a configured stride.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub dt: f64,
    pub steps: usize,
    pub d: usize,
    pub seed: u64,
    /// `steps x d`, row-major.
    pub increments: Vec<f64>,
    /// `steps x d`; `q` evaluated at the state opening each step.
    pub q_values: Vec<f64>,
    pub snapshot_stride: usize,
    /// Snapshot `i` is the state at step `i * snapshot_stride`;
    /// the final state is always appended last.
    pub snapshots: Vec<SpectralField>,
}

impl PathRecord {
    pub fn increments_row(&self, step: usize) -> &[f64] {
        &self.increments[step * self.d..(step + 1) * self.d]
    }

    pub fn q_row(&self, step: usize) -> &[f64] {
        &self.q_values[step * self.d..(step + 1) * self.d]
    }

    pub fn final_state(&self) -> &SpectralField {
        self.snapshots.last().expect("non-empty record")
    }

    pub fn initial_state(&self) -> &SpectralField {
        &self.snapshots[0]
    }

    /// Stored state at a step, if one is available without re-stepping.
    pub fn stored_state(&self, step: usize) -> Option<&SpectralField> {
        self.snapshot_at(step)
    }

    fn snapshot_at(&self, step: usize) -> Option<&SpectralField> {
        if step == self.steps {
            return Some(self.final_state());
        }
        if step % self.snapshot_stride == 0 {
            let idx = step / self.snapshot_stride;
            // The tail snapshot only matches when the step count is aligned.
            if idx < self.snapshots.len() - 1 || self.steps % self.snapshot_stride == 0 {
                return self.snapshots.get(idx);
            }
        }
        None
    }

    /// State at an arbitrary step, re-stepping from the nearest earlier
    /// snapshot when needed (bit-identical to the original simulation).
    pub fn state_at(
        &self,
        ops: &mut SpectralOps,
        stepper: &Stepper,
        step: usize,
    ) -> Result<SpectralField, DynamicsError> {
        if step > self.steps {
            return Err(DynamicsError::IndexOutOfRange(step, step, self.steps));
        }
        if let Some(s) = self.snapshot_at(step) {
            return Ok(s.clone());
        }
        let base = step - step % self.snapshot_stride;
        let mut w = self
            .snapshot_at(base)
            .ok_or(DynamicsError::IndexOutOfRange(base, step, self.steps))?
            .clone();
        for m in base..step {
            w = stepper.step_with_q(ops, &w, self.q_row(m), self.increments_row(m), m)?;
        }
        Ok(w)
    }
}

/// Integrate from `w0` over `steps_for(t)` steps, drawing increments from the
/// given stream. `t = 0` yields a single-snapshot record.
pub fn simulate(
    ops: &mut SpectralOps,
    spec: &IntegratorSpec,
    model: &NoiseModel,
    w0: &SpectralField,
    t: f64,
    seed: u64,
    stream: &mut ChaCha8Rng,
) -> Result<PathRecord, DynamicsError> {
    let steps = spec.steps_for(t);
    let d = model.dim();
    let increments = rng::brownian_increments(stream, steps, d, spec.dt);
    simulate_with_increments(ops, spec, model, w0, &increments, steps, seed)
}

/// Integrate with externally supplied increments (difference quotients,
/// Brownian refinement studies, checkpoint replay).
pub fn simulate_with_increments(
    ops: &mut SpectralOps,
    spec: &IntegratorSpec,
    model: &NoiseModel,
    w0: &SpectralField,
    increments: &[f64],
    steps: usize,
    seed: u64,
) -> Result<PathRecord, DynamicsError> {
    let d = model.dim();
    assert_eq!(increments.len(), steps * d);
    let stride = spec.snapshot_stride.max(1);
    let stepper = Stepper::new(ops, spec, model);
    let mut q_values = Vec::with_capacity(steps * d);
    let mut snapshots = Vec::with_capacity(steps / stride + 2);
    let mut w = w0.clone();
    snapshots.push(w.clone());
    for m in 0..steps {
        let (next, q) = stepper.step(ops, &w, &increments[m * d..(m + 1) * d], m)?;
        q_values.extend_from_slice(&q);
        w = next;
        if (m + 1) % stride == 0 && m + 1 < steps {
            snapshots.push(w.clone());
        }
    }
    if steps > 0 {
        snapshots.push(w);
    }
    Ok(PathRecord {
        dt: spec.dt,
        steps,
        d,
        seed,
        increments: increments.to_vec(),
        q_values,
        snapshot_stride: stride,
        snapshots,
    })
}

/// Propagate the linearized flow `J_{s,t} xi` along a stored path, using the
/// same scheme, states, and increments.
pub fn linearized_flow(
    ops: &mut SpectralOps,
    stepper: &Stepper,
    path: &PathRecord,
    s_step: usize,
    t_step: usize,
    xi: &SpectralField,
) -> Result<SpectralField, DynamicsError> {
    if s_step > t_step || t_step > path.steps {
        return Err(DynamicsError::IndexOutOfRange(s_step, t_step, path.steps));
    }
    let mut w = path.state_at(ops, stepper, s_step)?;
    let mut xi = xi.clone();
    for m in s_step..t_step {
        let cache = ops.flow_cache(&w)?;
        let dw = path.increments_row(m);
        xi = stepper.linearized_step(ops, &w, Some(&cache), &xi, dw)?;
        if m + 1 < t_step {
            w = match path.snapshot_at(m + 1) {
                Some(s) => s.clone(),
                None => stepper.step_with_q(ops, &w, path.q_row(m), dw, m)?,
            };
        }
    }
    Ok(xi)
}

/// One row of a finite-difference Jacobian validation.
#[derive(Debug, Clone, Serialize)]
pub struct FdSample {
    pub epsilon: f64,
    pub error: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub samples: Vec<FdSample>,
    /// Log-log slope of error vs epsilon; first order when close to 1.
    pub observed_order: f64,
    pub jacobian_norm: f64,
}

/// Compare `(Phi_T(w0 + eps xi) - Phi_T(w0)) / eps` against `J_{0,T} xi` on
/// the same noise path, for each `eps` in a decreasing list.
pub fn jacobian_fd_check(
    ops: &mut SpectralOps,
    spec: &IntegratorSpec,
    model: &NoiseModel,
    w0: &SpectralField,
    xi: &SpectralField,
    eps_list: &[f64],
    t: f64,
    seed: u64,
    stream: &mut ChaCha8Rng,
) -> Result<FdReport, DynamicsError> {
    let base = simulate(ops, spec, model, w0, t, seed, stream)?;
    let stepper = Stepper::new(ops, spec, model);
    let j_xi = linearized_flow(ops, &stepper, &base, 0, base.steps, xi)?;
    let end = base.final_state();
    let mut samples = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let mut w0p = w0.clone();
        w0p.axpy(eps, xi);
        let pert = simulate_with_increments(
            ops,
            spec,
            model,
            &w0p,
            &base.increments,
            base.steps,
            seed,
        )?;
        let mut diff = pert.final_state().sub(end).scaled(1.0 / eps);
        diff.axpy(-1.0, &j_xi);
        let err = diff.norm();
        samples.push(FdSample {
            epsilon: eps,
            error: err,
            relative_error: err / j_xi.norm().max(f64::MIN_POSITIVE),
        });
    }
    let eps: Vec<f64> = samples.iter().map(|s| s.epsilon).collect();
    let err: Vec<f64> = samples.iter().map(|s| s.error).collect();
    Ok(FdReport {
        observed_order: loglog_slope(&eps, &err),
        jacobian_norm: j_xi.norm(),
        samples,
    })
}

// --- checkpoint files ---------------------------------------------------

const MAGIC: &[u8; 4] = b"NSMG";
const VERSION: u32 = 1;

/// Write a path checkpoint: magic, version, dims (d, K_max, mode table), dt,
/// seed, step count, increments, snapshot stride, snapshots. Little-endian.
pub fn write_path(mut out: impl Write, path: &PathRecord) -> Result<(), DynamicsError> {
    let io = |e: std::io::Error| DynamicsError::Checkpoint(e.to_string());
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    let lattice = path.initial_state().lattice();
    out.write_all(&(path.d as u32).to_le_bytes()).map_err(io)?;
    out.write_all(&lattice.kmax().to_le_bytes()).map_err(io)?;
    out.write_all(&(lattice.len() as u32).to_le_bytes()).map_err(io)?;
    out.write_all(&path.dt.to_le_bytes()).map_err(io)?;
    out.write_all(&path.seed.to_le_bytes()).map_err(io)?;
    out.write_all(&(path.steps as u64).to_le_bytes()).map_err(io)?;
    for v in &path.increments {
        out.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    out.write_all(&(path.snapshot_stride as u64).to_le_bytes()).map_err(io)?;
    out.write_all(&(path.snapshots.len() as u64).to_le_bytes()).map_err(io)?;
    for snap in &path.snapshots {
        for c in snap.coeffs() {
            out.write_all(&c.to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

/// Read a checkpoint. Coefficient values `q` are not part of the format; call
/// [`PathRecord::state_at`] only after [`rebuild_q`] refills them.
pub fn read_path(mut inp: impl Read) -> Result<PathRecord, DynamicsError> {
    let bad = |m: &str| DynamicsError::Checkpoint(m.to_string());
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic).map_err(|e| bad(&e.to_string()))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(&mut inp)?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let d = read_u32(&mut inp)? as usize;
    let kmax = read_u32(&mut inp)?;
    let mode_count = read_u32(&mut inp)? as usize;
    let lattice = Lattice::new(kmax);
    if lattice.len() != mode_count {
        return Err(bad("mode count does not match K_max"));
    }
    let mut b8 = [0u8; 8];
    inp.read_exact(&mut b8).map_err(|e| bad(&e.to_string()))?;
    let dt = f64::from_le_bytes(b8);
    inp.read_exact(&mut b8).map_err(|e| bad(&e.to_string()))?;
    let seed = u64::from_le_bytes(b8);
    inp.read_exact(&mut b8).map_err(|e| bad(&e.to_string()))?;
    let steps = u64::from_le_bytes(b8) as usize;
    let mut increments = vec![0.0; steps * d];
    for v in &mut increments {
        inp.read_exact(&mut b8).map_err(|e| bad(&e.to_string()))?;
        *v = f64::from_le_bytes(b8);
    }
    inp.read_exact(&mut b8).map_err(|e| bad(&e.to_string()))?;
    let stride = u64::from_le_bytes(b8) as usize;
    inp.read_exact(&mut b8).map_err(|e| bad(&e.to_string()))?;
    let n_snaps = u64::from_le_bytes(b8) as usize;
    let mut snapshots = Vec::with_capacity(n_snaps);
    for _ in 0..n_snaps {
        let mut f = SpectralField::zero(&lattice);
        for c in f.coeffs_mut() {
            inp.read_exact(&mut b8).map_err(|e| bad(&e.to_string()))?;
            *c = f64::from_le_bytes(b8);
        }
        snapshots.push(f);
    }
    Ok(PathRecord {
        dt,
        steps,
        d,
        seed,
        increments,
        q_values: Vec::new(),
        snapshot_stride: stride.max(1),
        snapshots,
    })
}

/// Re-simulate a loaded record to refill `q_values`, verifying that stored
/// snapshots are reproduced exactly.
pub fn rebuild_q(
    ops: &mut SpectralOps,
    spec: &IntegratorSpec,
    model: &NoiseModel,
    path: &mut PathRecord,
) -> Result<(), DynamicsError> {
    let rebuilt = simulate_with_increments(
        ops,
        spec,
        model,
        path.initial_state(),
        &path.increments,
        path.steps,
        path.seed,
    )?;
    for (a, b) in rebuilt.snapshots.iter().zip(&path.snapshots) {
        if a.coeffs() != b.coeffs() {
            return Err(DynamicsError::Checkpoint(
                "stored snapshots do not match re-simulation".into(),
            ));
        }
    }
    path.q_values = rebuilt.q_values;
    Ok(())
}

fn read_u32(inp: &mut impl Read) -> Result<u32, DynamicsError> {
    let mut b = [0u8; 4];
    inp.read_exact(&mut b)
        .map_err(|e| DynamicsError::Checkpoint(e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}

impl From<FieldIoError> for DynamicsError {
    fn from(e: FieldIoError) -> Self {
        DynamicsError::Checkpoint(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::QFamily;
    use crate::rng::stream;
    use crate::spanning::example_mode_set;
    use crate::spectral::ModeIndex;
    use approx::assert_relative_eq;

    fn small_spec() -> IntegratorSpec {
        IntegratorSpec { dt: 1e-3, nu: 0.1, grid: 32, kmax: None, ..Default::default() }
    }

    fn constant_model(c: f64) -> NoiseModel {
        NoiseModel::new(example_mode_set(), QFamily::Constant { value: c }, c).unwrap()
    }

    fn bump_model() -> NoiseModel {
        NoiseModel::new(
            example_mode_set(),
            QFamily::NormBased {
                profile: crate::noise::ScalarProfile::Bump { c0: 0.1, c1: 0.3 },
            },
            0.7,
        )
        .unwrap()
    }

    fn random_w0(ops: &SpectralOps, seed: u64, scale: f64) -> SpectralField {
        let mut r = stream(seed, "test-w0", 0);
        let mut w = ops.zero_field();
        for c in w.coeffs_mut() {
            use rand::Rng;
            *c = r.gen_range(-1.0..1.0);
        }
        let n = w.norm();
        w.scaled(scale / n)
    }

    #[test]
    fn heat_decay_of_single_mode() {
        // No noise, nonlinearity inert for a single mode: pure heat decay.
        let spec = small_spec();
        let mut ops = spec.make_ops();
        let model = constant_model(0.2);
        let stepper = Stepper::new(&ops, &spec, &model);
        let k = ModeIndex::new(2, 1).unwrap();
        let w = SpectralField::basis(ops.lattice(), k).unwrap();
        let (next, _) = stepper.step(&mut ops, &w, &[0.0; 4], 0).unwrap();
        let expect = (-spec.nu * 5.0 * spec.dt).exp();
        assert_relative_eq!(next.coeff(k), expect, max_relative = 1e-12);
        // Self-advection of a single mode vanishes.
        assert_relative_eq!(next.norm(), expect, max_relative = 1e-10);
    }

    #[test]
    fn deterministic_step_contracts() {
        let spec = IntegratorSpec { nonlinearity: false, ..small_spec() };
        let mut ops = spec.make_ops();
        let model = constant_model(0.2);
        let stepper = Stepper::new(&ops, &spec, &model);
        let w = random_w0(&ops, 3, 2.0);
        let (next, _) = stepper.step(&mut ops, &w, &[0.0; 4], 0).unwrap();
        assert!(next.norm() < w.norm());
    }

    #[test]
    fn zero_horizon_single_snapshot() {
        let spec = small_spec();
        let mut ops = spec.make_ops();
        let model = constant_model(0.2);
        let w0 = random_w0(&ops, 5, 1.0);
        let mut s = stream(1, "sim", 0);
        let path = simulate(&mut ops, &spec, &model, &w0, 0.0, 1, &mut s).unwrap();
        assert_eq!(path.steps, 0);
        assert_eq!(path.snapshots.len(), 1);
        assert_eq!(path.final_state().coeffs(), w0.coeffs());
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let spec = small_spec();
        let mut ops = spec.make_ops();
        let model = bump_model();
        let w0 = random_w0(&ops, 7, 1.0);
        let run = |ops: &mut SpectralOps| {
            let mut s = stream(42, "determinism", 3);
            simulate(ops, &spec, &model, &w0, 0.05, 42, &mut s).unwrap()
        };
        let a = run(&mut ops);
        let b = run(&mut ops);
        assert_eq!(a.increments, b.increments);
        for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
            assert_eq!(x.coeffs(), y.coeffs());
        }
    }

    #[test]
    fn state_reconstruction_matches_snapshots() {
        let spec = IntegratorSpec { snapshot_stride: 7, ..small_spec() };
        let mut ops = spec.make_ops();
        let model = bump_model();
        let w0 = random_w0(&ops, 11, 1.0);
        let mut s = stream(42, "recon", 0);
        let path = simulate(&mut ops, &spec, &model, &w0, 0.05, 42, &mut s).unwrap();
        let stepper = Stepper::new(&ops, &spec, &model);
        // Rebuild a couple of off-stride states and the final one.
        let dense_spec = IntegratorSpec { snapshot_stride: 1, ..spec.clone() };
        let mut dense_ops = dense_spec.make_ops();
        let dense = simulate_with_increments(
            &mut dense_ops,
            &dense_spec,
            &model,
            &w0,
            &path.increments,
            path.steps,
            42,
        )
        .unwrap();
        for step in [3usize, 13, 29, path.steps] {
            let got = path.state_at(&mut ops, &stepper, step).unwrap();
            assert_eq!(got.coeffs(), dense.snapshots[step].coeffs());
        }
    }

    #[test]
    fn linearized_identity_and_linearity() {
        let spec = small_spec();
        let mut ops = spec.make_ops();
        let model = bump_model();
        let w0 = random_w0(&ops, 13, 1.0);
        let mut s = stream(9, "lin", 0);
        let path = simulate(&mut ops, &spec, &model, &w0, 0.03, 9, &mut s).unwrap();
        let stepper = Stepper::new(&ops, &spec, &model);
        let xi = random_w0(&ops, 14, 1.0);
        let zeta = random_w0(&ops, 15, 1.0);

        // J_{s,s} = identity.
        let same = linearized_flow(&mut ops, &stepper, &path, 5, 5, &xi).unwrap();
        assert_eq!(same.coeffs(), xi.coeffs());

        // Linearity to near roundoff.
        let (a, b) = (0.7, -1.3);
        let mut combo = xi.scaled(a);
        combo.axpy(b, &zeta);
        let j_combo = linearized_flow(&mut ops, &stepper, &path, 0, path.steps, &combo).unwrap();
        let j_xi = linearized_flow(&mut ops, &stepper, &path, 0, path.steps, &xi).unwrap();
        let j_zeta = linearized_flow(&mut ops, &stepper, &path, 0, path.steps, &zeta).unwrap();
        let mut lin = j_xi.scaled(a);
        lin.axpy(b, &j_zeta);
        assert!(j_combo.sub(&lin).norm() <= 1e-10 * lin.norm().max(1e-12));
    }

    #[test]
    fn cocycle_property() {
        let spec = small_spec();
        let mut ops = spec.make_ops();
        let model = bump_model();
        let w0 = random_w0(&ops, 17, 1.0);
        let mut s = stream(10, "cocycle", 0);
        let path = simulate(&mut ops, &spec, &model, &w0, 0.04, 10, &mut s).unwrap();
        let stepper = Stepper::new(&ops, &spec, &model);
        let xi = random_w0(&ops, 18, 1.0);
        let t = path.steps;
        let r = t / 2;
        let direct = linearized_flow(&mut ops, &stepper, &path, 0, t, &xi).unwrap();
        let first = linearized_flow(&mut ops, &stepper, &path, 0, r, &xi).unwrap();
        let staged = linearized_flow(&mut ops, &stepper, &path, r, t, &first).unwrap();
        let rel = direct.sub(&staged).norm() / direct.norm().max(1e-300);
        assert!(rel <= 1e-6, "cocycle relative error {rel}");
    }

    #[test]
    fn fd_check_zero_direction() {
        let spec = small_spec();
        let mut ops = spec.make_ops();
        let model = constant_model(0.2);
        let w0 = random_w0(&ops, 19, 1.0);
        let xi = ops.zero_field();
        let mut s = stream(11, "fd0", 0);
        let rep = jacobian_fd_check(
            &mut ops,
            &spec,
            &model,
            &w0,
            &xi,
            &[1e-2, 1e-3],
            0.02,
            11,
            &mut s,
        )
        .unwrap();
        for smp in rep.samples {
            assert_eq!(smp.error, 0.0);
        }
    }

    #[test]
    fn fd_check_first_order_multiplicative() {
        let spec = small_spec();
        let mut ops = spec.make_ops();
        let model = bump_model();
        let w0 = random_w0(&ops, 23, 1.0);
        let xi = random_w0(&ops, 24, 1.0);
        let mut s = stream(12, "fd1", 0);
        let rep = jacobian_fd_check(
            &mut ops,
            &spec,
            &model,
            &w0,
            &xi,
            &[1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
            0.1,
            12,
            &mut s,
        )
        .unwrap();
        assert!(
            (rep.observed_order - 1.0).abs() <= 0.2,
            "observed order {} out of band",
            rep.observed_order
        );
    }

    #[test]
    fn blow_up_detected() {
        let spec = IntegratorSpec { blowup_guard: 1e-3, ..small_spec() };
        let mut ops = spec.make_ops();
        let model = constant_model(0.2);
        let w0 = random_w0(&ops, 29, 1.0);
        let mut s = stream(13, "blowup", 0);
        let err = simulate(&mut ops, &spec, &model, &w0, 0.01, 13, &mut s);
        assert!(matches!(err, Err(DynamicsError::BlowUp { step: 0, .. })));
    }

    #[test]
    fn checkpoint_roundtrip_and_rebuild() {
        let spec = IntegratorSpec { snapshot_stride: 5, ..small_spec() };
        let mut ops = spec.make_ops();
        let model = bump_model();
        let w0 = random_w0(&ops, 31, 1.0);
        let mut s = stream(14, "ckpt", 0);
        let path = simulate(&mut ops, &spec, &model, &w0, 0.03, 14, &mut s).unwrap();
        let mut buf = Vec::new();
        write_path(&mut buf, &path).unwrap();
        let mut loaded = read_path(buf.as_slice()).unwrap();
        assert_eq!(loaded.steps, path.steps);
        assert_eq!(loaded.increments, path.increments);
        rebuild_q(&mut ops, &spec, &model, &mut loaded).unwrap();
        assert_eq!(loaded.q_values, path.q_values);
    }

    #[test]
    fn strong_self_convergence_under_refinement() {
        // Halving dt along a consistent Brownian path: endpoint differences
        // shrink with positive observed order.
        let model = bump_model();
        let base_spec = IntegratorSpec { dt: 4e-3, grid: 24, ..small_spec() };
        let mut ops = base_spec.make_ops();
        let w0 = random_w0(&ops, 37, 1.0);
        let t = 0.25;
        let steps0 = base_spec.steps_for(t);
        let mut coarse_rng = stream(15, "refine-base", 0);
        let mut incs =
            rng::brownian_increments(&mut coarse_rng, steps0, model.dim(), base_spec.dt);
        let mut endpoints = Vec::new();
        let mut dt = base_spec.dt;
        let mut steps = steps0;
        for level in 0..4 {
            let spec = IntegratorSpec { dt, snapshot_stride: steps.max(1), ..base_spec.clone() };
            let path =
                simulate_with_increments(&mut ops, &spec, &model, &w0, &incs, steps, 15).unwrap();
            endpoints.push(path.final_state().clone());
            let mut refine_rng = stream(15, "refine-mid", level);
            incs = rng::refine_increments(&incs, steps, model.dim(), dt, &mut refine_rng);
            dt /= 2.0;
            steps *= 2;
        }
        let diffs: Vec<f64> = endpoints
            .windows(2)
            .map(|p| p[1].sub(&p[0]).norm())
            .collect();
        let dts = [4e-3, 2e-3, 1e-3];
        let order = -loglog_slope(&dts.map(|d| 1.0 / d), &diffs);
        assert!(
            order > 0.4,
            "self-convergence order {order} too small: {diffs:?}"
        );
    }
}
