//! State-dependent noise coefficients.
//!
//! The forcing acts on a finite mode set `Z0` with amplitudes `q_k(w)` that may
//! depend on the current state through a single spectral coordinate or through
//! the `L^2` norm. The model carries a declared global bound `aleph` with
//! `|q_k(w)| in (0, aleph]` and first/second directional derivatives bounded by
//! `aleph`; [`NoiseModel::validate`] probes those bounds numerically.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{ModeIndex, SpectralField};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("mode set must be nonempty and free of duplicates")]
    BadModeSet,
    #[error("probe mode list must match the mode set length")]
    ProbeMismatch,
    #[error("declared bound aleph must be positive")]
    BadAleph,
    #[error(
        "coefficient bound violated for mode {mode}: |q| = {value:.6e} outside (0, {aleph:.6e}]"
    )]
    BoundViolation { mode: ModeIndex, value: f64, aleph: f64 },
    #[error("profile violates declared bounds: {0}")]
    ProfileOutOfBounds(String),
}

/// Scalar profile `f` used by a coefficient family, with analytic bound
/// constants shipped alongside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ScalarProfile {
    /// `f(x) = c`
    Constant { c: f64 },
    /// `f(x) = c0 + c1 / (1 + x^2)`
    Lorentz { c0: f64, c1: f64 },
    /// `f(x) = c0 + c1 x^2 exp(-x^2)`; `f'(0) = 0`, so it obeys the
    /// norm-based growth condition `|f'(x)| <= C min(|x|, 1)`.
    Bump { c0: f64, c1: f64 },
    /// `f(x) = c0 + c1 / (1 + (x - x0)^2)`; legal for spectral-coordinate
    /// families but violates the norm-based growth condition when `x0 != 0`.
    ShiftedLorentz { c0: f64, c1: f64, x0: f64 },
}

impl ScalarProfile {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            ScalarProfile::Constant { c } => c,
            ScalarProfile::Lorentz { c0, c1 } => c0 + c1 / (1.0 + x * x),
            ScalarProfile::Bump { c0, c1 } => c0 + c1 * x * x * (-x * x).exp(),
            ScalarProfile::ShiftedLorentz { c0, c1, x0 } => {
                let y = x - x0;
                c0 + c1 / (1.0 + y * y)
            }
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match *self {
            ScalarProfile::Constant { .. } => 0.0,
            ScalarProfile::Lorentz { c0: _, c1 } => {
                let d = 1.0 + x * x;
                -2.0 * c1 * x / (d * d)
            }
            ScalarProfile::Bump { c0: _, c1 } => 2.0 * c1 * x * (1.0 - x * x) * (-x * x).exp(),
            ScalarProfile::ShiftedLorentz { c0: _, c1, x0 } => {
                let y = x - x0;
                let d = 1.0 + y * y;
                -2.0 * c1 * y / (d * d)
            }
        }
    }

    pub fn second_deriv(&self, x: f64) -> f64 {
        match *self {
            ScalarProfile::Constant { .. } => 0.0,
            ScalarProfile::Lorentz { c0: _, c1 } => {
                let d = 1.0 + x * x;
                2.0 * c1 * (3.0 * x * x - 1.0) / (d * d * d)
            }
            ScalarProfile::Bump { c0: _, c1 } => {
                2.0 * c1 * (1.0 - 5.0 * x * x + 2.0 * x * x * x * x) * (-x * x).exp()
            }
            ScalarProfile::ShiftedLorentz { c0: _, c1, x0 } => {
                let y = x - x0;
                let d = 1.0 + y * y;
                2.0 * c1 * (3.0 * y * y - 1.0) / (d * d * d)
            }
        }
    }

    /// Analytic `sup |f|` over the profile's domain.
    pub fn sup_abs(&self) -> f64 {
        match *self {
            ScalarProfile::Constant { c } => c.abs(),
            ScalarProfile::Lorentz { c0, c1 } | ScalarProfile::ShiftedLorentz { c0, c1, .. } => {
                // f ranges over the interval between c0 and c0 + c1.
                c0.abs().max((c0 + c1).abs())
            }
            ScalarProfile::Bump { c0, c1 } => {
                // max of x^2 exp(-x^2) is 1/e at |x| = 1.
                c0.abs().max((c0 + c1 / std::f64::consts::E).abs())
            }
        }
    }

    /// Analytic `sup |f'|`.
    pub fn sup_deriv(&self) -> f64 {
        match *self {
            ScalarProfile::Constant { .. } => 0.0,
            ScalarProfile::Lorentz { c1, .. } | ScalarProfile::ShiftedLorentz { c1, .. } => {
                // |f'| peaks at |x - x0| = 1/sqrt(3): 9 c1 / (8 sqrt(3)).
                9.0 * c1.abs() / (8.0 * 3f64.sqrt())
            }
            ScalarProfile::Bump { c1, .. } => 2.0 * c1.abs(),
        }
    }

    /// Analytic `sup |f''|`.
    pub fn sup_second_deriv(&self) -> f64 {
        match *self {
            ScalarProfile::Constant { .. } => 0.0,
            ScalarProfile::Lorentz { c1, .. } | ScalarProfile::ShiftedLorentz { c1, .. } => {
                2.0 * c1.abs()
            }
            ScalarProfile::Bump { c1, .. } => 2.0 * c1.abs(),
        }
    }

    /// Smallest value of `|f|` guaranteed over the domain, used to check the
    /// strict positivity in Condition (i). Zero means "positivity not
    /// guaranteed analytically".
    pub fn inf_abs(&self) -> f64 {
        match *self {
            ScalarProfile::Constant { c } => c.abs(),
            ScalarProfile::Lorentz { c0, c1 } | ScalarProfile::ShiftedLorentz { c0, c1, .. } => {
                if c0 >= 0.0 && c0 + c1 >= 0.0 {
                    c0.min(c0 + c1)
                } else if c0 <= 0.0 && c0 + c1 <= 0.0 {
                    (-c0).min(-(c0 + c1))
                } else {
                    0.0
                }
            }
            ScalarProfile::Bump { c0, c1 } => {
                let hi = c0 + c1 / std::f64::consts::E;
                if c0 >= 0.0 && hi >= 0.0 {
                    c0.min(hi)
                } else if c0 <= 0.0 && hi <= 0.0 {
                    (-c0).min(-hi)
                } else {
                    0.0
                }
            }
        }
    }
}

/// How the scalar profile reads the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QFamily {
    /// `q_k(w) = c`, run through the same multiplicative code path.
    Constant { value: f64 },
    /// `q_k(w) = f(<w, e_{i(k)}>)` with a probe mode per noise mode.
    SpectralCoordinate { profile: ScalarProfile, probes: Vec<ModeIndex> },
    /// `q_k(w) = f(||w||)`; the derivative at `w = 0` is defined as `0`,
    /// forced by the growth condition `|f'(x)| <= aleph |x|`.
    NormBased { profile: ScalarProfile },
}

/// The mode set `Z0`, a state-dependent coefficient family, and the declared
/// bound `aleph`. Immutable once validated; all operations are pure.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    modes: Vec<ModeIndex>,
    family: QFamily,
    aleph: f64,
}

impl NoiseModel {
    pub fn new(modes: Vec<ModeIndex>, family: QFamily, aleph: f64) -> Result<NoiseModel, NoiseError> {
        if modes.is_empty() {
            return Err(NoiseError::BadModeSet);
        }
        let mut sorted: Vec<_> = modes.iter().map(|m| (m.k1, m.k2)).collect();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != modes.len() {
            return Err(NoiseError::BadModeSet);
        }
        if !(aleph > 0.0) {
            return Err(NoiseError::BadAleph);
        }
        if let QFamily::SpectralCoordinate { probes, .. } = &family {
            if probes.len() != modes.len() {
                return Err(NoiseError::ProbeMismatch);
            }
        }
        let model = NoiseModel { modes, family, aleph };
        model.check_declared_bounds()?;
        Ok(model)
    }

    fn check_declared_bounds(&self) -> Result<(), NoiseError> {
        let p = self.profile();
        if p.inf_abs() <= 0.0 {
            return Err(NoiseError::ProfileOutOfBounds(
                "profile is not bounded away from zero".into(),
            ));
        }
        if p.sup_abs() > self.aleph * (1.0 + 1e-12) {
            return Err(NoiseError::ProfileOutOfBounds(format!(
                "sup |q| = {:.6e} exceeds declared aleph = {:.6e}",
                p.sup_abs(),
                self.aleph
            )));
        }
        Ok(())
    }

    fn profile(&self) -> ScalarProfile {
        match &self.family {
            QFamily::Constant { value } => ScalarProfile::Constant { c: *value },
            QFamily::SpectralCoordinate { profile, .. } | QFamily::NormBased { profile } => *profile,
        }
    }

    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[ModeIndex] {
        &self.modes
    }

    pub fn family(&self) -> &QFamily {
        &self.family
    }

    pub fn aleph(&self) -> f64 {
        self.aleph
    }

    /// Whether `D q` vanishes identically (constant coefficients).
    pub fn is_additive(&self) -> bool {
        match &self.family {
            QFamily::Constant { .. } => true,
            QFamily::SpectralCoordinate { profile, .. } | QFamily::NormBased { profile } => {
                matches!(profile, ScalarProfile::Constant { .. })
            }
        }
    }

    /// Coefficient vector `(q_j(w))_j`, checked against the declared bound.
    pub fn q_eval(&self, w: &SpectralField) -> Result<Vec<f64>, NoiseError> {
        let mut out = Vec::with_capacity(self.modes.len());
        for (j, mode) in self.modes.iter().enumerate() {
            let v = match &self.family {
                QFamily::Constant { value } => *value,
                QFamily::SpectralCoordinate { profile, probes } => {
                    profile.eval(w.coeff(probes[j]))
                }
                QFamily::NormBased { profile } => profile.eval(w.norm()),
            };
            if !(v.abs() > 0.0) || v.abs() > self.aleph * (1.0 + 1e-12) {
                return Err(NoiseError::BoundViolation { mode: *mode, value: v.abs(), aleph: self.aleph });
            }
            out.push(v);
        }
        Ok(out)
    }

    /// Directional derivative `(D q_j(w) v)_j`.
    pub fn dq_apply(&self, w: &SpectralField, v: &SpectralField) -> Vec<f64> {
        match &self.family {
            QFamily::Constant { .. } => vec![0.0; self.modes.len()],
            QFamily::SpectralCoordinate { profile, probes } => probes
                .iter()
                .map(|i| profile.deriv(w.coeff(*i)) * v.coeff(*i))
                .collect(),
            QFamily::NormBased { profile } => {
                let nw = w.norm();
                if nw == 0.0 {
                    // |f'(x)| <= aleph |x| forces Dq(0) = 0.
                    return vec![0.0; self.modes.len()];
                }
                let d = profile.deriv(nw) * w.inner(v) / nw;
                vec![d; self.modes.len()]
            }
        }
    }

    /// `Q(w) z = sum_j q_j(w) z_j e_j`, supported on `Z0` only.
    pub fn apply_q(&self, w: &SpectralField, z: &[f64]) -> Result<SpectralField, NoiseError> {
        assert_eq!(z.len(), self.modes.len(), "noise vector dimension mismatch");
        let q = self.q_eval(w)?;
        let mut out = SpectralField::zero(w.lattice());
        for (j, mode) in self.modes.iter().enumerate() {
            let idx = w
                .lattice()
                .index_of(*mode)
                .unwrap_or_else(|| panic!("noise mode {mode} outside lattice"));
            out.coeffs_mut()[idx] += q[j] * z[j];
        }
        Ok(out)
    }

    /// Adjoint `Q*(w) xi = (q_j(w) <xi, e_j>)_j`.
    pub fn apply_qstar(&self, w: &SpectralField, xi: &SpectralField) -> Result<Vec<f64>, NoiseError> {
        let q = self.q_eval(w)?;
        Ok(self
            .modes
            .iter()
            .zip(q)
            .map(|(mode, qj)| qj * xi.coeff(*mode))
            .collect())
    }

    /// Numerically probe Condition (i)/(ii) over a set of sample fields.
    pub fn validate(&self, samples: &[SpectralField], directions: &[SpectralField]) -> ValidationReport {
        let mut report = ValidationReport {
            aleph: self.aleph,
            max_abs_q: 0.0,
            min_abs_q: f64::INFINITY,
            max_dq_ratio: 0.0,
            max_d2q_ratio: 0.0,
            growth_violation: None,
            bound_violation: None,
            passed: true,
        };
        let eps = 1e-4;
        for w in samples {
            match self.q_eval(w) {
                Ok(q) => {
                    for v in &q {
                        report.max_abs_q = report.max_abs_q.max(v.abs());
                        report.min_abs_q = report.min_abs_q.min(v.abs());
                    }
                }
                Err(e) => {
                    report.bound_violation = Some(e.to_string());
                    report.passed = false;
                }
            }
            for v in directions {
                let nv = v.norm();
                if nv == 0.0 {
                    continue;
                }
                for d in self.dq_apply(w, v) {
                    report.max_dq_ratio = report.max_dq_ratio.max(d.abs() / nv);
                }
                // Second difference along v probes |D^2 q(v, v)|.
                let wp = {
                    let mut t = w.clone();
                    t.axpy(eps, v);
                    t
                };
                let wm = {
                    let mut t = w.clone();
                    t.axpy(-eps, v);
                    t
                };
                if let (Ok(qp), Ok(q0), Ok(qm)) = (self.q_eval(&wp), self.q_eval(w), self.q_eval(&wm)) {
                    for j in 0..q0.len() {
                        let d2 = (qp[j] - 2.0 * q0[j] + qm[j]) / (eps * eps);
                        report.max_d2q_ratio = report.max_d2q_ratio.max(d2.abs() / (nv * nv));
                    }
                }
            }
        }
        // Norm-based families must also satisfy |f'(x)| <= aleph min(|x|, 1).
        if let QFamily::NormBased { profile } = &self.family {
            let mut x: f64 = 1e-6;
            while x <= 64.0 {
                let lim = self.aleph * x.min(1.0);
                let d = profile.deriv(x).abs();
                if d > lim * (1.0 + 1e-9) + 1e-300 {
                    report.growth_violation = Some((x, d));
                    report.passed = false;
                    break;
                }
                x *= 1.1;
            }
        }
        if report.max_abs_q > self.aleph * (1.0 + 1e-9)
            || report.max_dq_ratio > self.aleph * (1.0 + 1e-6)
            || report.max_d2q_ratio > self.aleph * (1.0 + 1e-4)
            || !(report.min_abs_q > 0.0)
        {
            report.passed = false;
        }
        report
    }
}

/// Outcome of probing Condition (i)/(ii); failures are carried, not thrown.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub aleph: f64,
    pub max_abs_q: f64,
    pub min_abs_q: f64,
    /// max over probes of |Dq(w)v| / ||v||
    pub max_dq_ratio: f64,
    /// max over probes of |D^2 q(w)(v,v)| / ||v||^2 (second differences)
    pub max_d2q_ratio: f64,
    /// witness (x, |f'(x)|) violating the norm-based growth condition
    pub growth_violation: Option<(f64, f64)>,
    pub bound_violation: Option<String>,
    pub passed: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Lattice;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;

    fn mode(k1: i32, k2: i32) -> ModeIndex {
        ModeIndex::new(k1, k2).unwrap()
    }

    fn paper_modes() -> Vec<ModeIndex> {
        vec![mode(1, 0), mode(-1, 0), mode(1, 1), mode(-1, -1)]
    }

    fn random_field(seed: u64, kmax: u32) -> SpectralField {
        let lattice = Lattice::new(kmax);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut w = SpectralField::zero(&lattice);
        for c in w.coeffs_mut() {
            *c = rng.gen_range(-0.5..0.5);
        }
        w
    }

    #[test]
    fn constant_family_basics() {
        let model =
            NoiseModel::new(paper_modes(), QFamily::Constant { value: 0.25 }, 0.25).unwrap();
        let w = random_field(1, 6);
        let q = model.q_eval(&w).unwrap();
        assert_eq!(q, vec![0.25; 4]);
        let v = random_field(2, 6);
        assert_eq!(model.dq_apply(&w, &v), vec![0.0; 4]);
        assert!(model.is_additive());
    }

    #[test]
    fn spectral_coordinate_at_zero_field() {
        let probes = vec![mode(2, 0); 4];
        let model = NoiseModel::new(
            paper_modes(),
            QFamily::SpectralCoordinate {
                profile: ScalarProfile::Lorentz { c0: 0.1, c1: 0.2 },
                probes,
            },
            0.5,
        )
        .unwrap();
        let lattice = Lattice::new(6);
        let w = SpectralField::zero(&lattice);
        let q = model.q_eval(&w).unwrap();
        for v in q {
            assert_relative_eq!(v, 0.3, max_relative = 1e-15);
        }
    }

    #[test]
    fn norm_based_matches_scalar_eval() {
        let model = NoiseModel::new(
            paper_modes(),
            QFamily::NormBased { profile: ScalarProfile::Bump { c0: 0.1, c1: 0.3 } },
            0.7,
        )
        .unwrap();
        for seed in 0..5 {
            let w = random_field(seed, 6);
            let q = model.q_eval(&w).unwrap();
            let f = ScalarProfile::Bump { c0: 0.1, c1: 0.3 }.eval(w.norm());
            for v in q {
                assert_relative_eq!(v, f, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn dq_finite_difference_consistency() {
        let model = NoiseModel::new(
            paper_modes(),
            QFamily::NormBased { profile: ScalarProfile::Bump { c0: 0.1, c1: 0.3 } },
            0.7,
        )
        .unwrap();
        let w = random_field(11, 6);
        let v = random_field(12, 6);
        let exact = model.dq_apply(&w, &v);
        for &eps in &[1e-3, 1e-4] {
            let wp = {
                let mut t = w.clone();
                t.axpy(eps, &v);
                t
            };
            let wm = {
                let mut t = w.clone();
                t.axpy(-eps, &v);
                t
            };
            let qp = model.q_eval(&wp).unwrap();
            let qm = model.q_eval(&wm).unwrap();
            for j in 0..4 {
                let fd = (qp[j] - qm[j]) / (2.0 * eps);
                assert!((fd - exact[j]).abs() < 10.0 * eps * eps + 1e-12);
            }
        }
    }

    #[test]
    fn dq_bounded_by_aleph() {
        let model = NoiseModel::new(
            paper_modes(),
            QFamily::NormBased { profile: ScalarProfile::Bump { c0: 0.05, c1: 0.2 } },
            0.6,
        )
        .unwrap();
        for seed in 0..10 {
            let w = random_field(seed, 6);
            let v = random_field(seed + 100, 6);
            for d in model.dq_apply(&w, &v) {
                assert!(d.abs() <= model.aleph() * v.norm() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn norm_based_derivative_at_zero() {
        let model = NoiseModel::new(
            paper_modes(),
            QFamily::NormBased { profile: ScalarProfile::Bump { c0: 0.1, c1: 0.3 } },
            0.7,
        )
        .unwrap();
        let lattice = Lattice::new(6);
        let w = SpectralField::zero(&lattice);
        let v = random_field(3, 6);
        assert_eq!(model.dq_apply(&w, &v), vec![0.0; 4]);
    }

    #[test]
    fn q_and_qstar_are_adjoint() {
        let model = NoiseModel::new(
            paper_modes(),
            QFamily::NormBased { profile: ScalarProfile::Bump { c0: 0.1, c1: 0.3 } },
            0.7,
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let w = random_field(rng.gen(), 6);
            let xi = random_field(rng.gen(), 6);
            let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let qz = model.apply_q(&w, &z).unwrap();
            let qs = model.apply_qstar(&w, &xi).unwrap();
            let lhs = qz.inner(&xi);
            let rhs: f64 = z.iter().zip(&qs).map(|(a, b)| a * b).sum();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn qstar_composition_identity() {
        // Q* (Q z) = (q_j^2 z_j)_j.
        let model =
            NoiseModel::new(paper_modes(), QFamily::Constant { value: 0.3 }, 0.3).unwrap();
        let w = random_field(9, 6);
        let z = vec![1.0, -2.0, 0.5, 0.0];
        let qz = model.apply_q(&w, &z).unwrap();
        let back = model.apply_qstar(&w, &qz).unwrap();
        let q = model.q_eval(&w).unwrap();
        for j in 0..4 {
            assert_relative_eq!(back[j], q[j] * q[j] * z[j], max_relative = 1e-14);
        }
    }

    #[test]
    fn qstar_kills_orthogonal_directions() {
        let model =
            NoiseModel::new(paper_modes(), QFamily::Constant { value: 0.3 }, 0.3).unwrap();
        let lattice = Lattice::new(6);
        let w = SpectralField::zero(&lattice);
        let xi = SpectralField::basis(&lattice, mode(3, 2)).unwrap();
        assert_eq!(model.apply_qstar(&w, &xi).unwrap(), vec![0.0; 4]);
        let e = SpectralField::basis(&lattice, mode(1, 1)).unwrap();
        let qs = model.apply_qstar(&w, &e).unwrap();
        assert_eq!(qs, vec![0.0, 0.0, 0.3, 0.0]);
    }

    #[test]
    fn q_bound_violation_detected() {
        // Declared aleph below the actual sup is rejected at construction.
        let err = NoiseModel::new(paper_modes(), QFamily::Constant { value: 0.5 }, 0.25);
        assert!(matches!(err, Err(NoiseError::ProfileOutOfBounds(_))));
    }

    #[test]
    fn validation_passes_for_legal_families() {
        let samples: Vec<_> = (0..6).map(|s| random_field(s, 6)).collect();
        let dirs: Vec<_> = (10..14).map(|s| random_field(s, 6)).collect();
        let model =
            NoiseModel::new(paper_modes(), QFamily::Constant { value: 0.2 }, 0.25).unwrap();
        assert!(model.validate(&samples, &dirs).passed);

        let model = NoiseModel::new(
            paper_modes(),
            QFamily::SpectralCoordinate {
                profile: ScalarProfile::Lorentz { c0: 0.05, c1: 0.15 },
                probes: vec![mode(2, 0); 4],
            },
            0.3,
        )
        .unwrap();
        assert!(model.validate(&samples, &dirs).passed);
    }

    #[test]
    fn validation_catches_growth_violation() {
        // Shifted profile: f'(x) does not vanish at x = 0, so it cannot be a
        // norm-based family. The declared-bounds check at construction passes
        // (|f|, |f'|, |f''| are all bounded); the probe must find the witness.
        let model = NoiseModel::new(
            paper_modes(),
            QFamily::NormBased {
                profile: ScalarProfile::ShiftedLorentz { c0: 0.05, c1: 0.15, x0: 1.0 },
            },
            0.3,
        )
        .unwrap();
        let report = model.validate(&[], &[]);
        assert!(!report.passed);
        let (x, d) = report.growth_violation.expect("witness expected");
        assert!(d > model.aleph() * x.min(1.0));
    }
}
