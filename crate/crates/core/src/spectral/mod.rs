//! Fourier-space representation of mean-zero vorticity fields on the torus
//! `[-pi, pi]^2`.
//!
//! The continuous basis is the classical sin/cos family indexed by nonzero
//! integer pairs `k = (k1, k2)`:
//!
//! * sin-type: `sin<k,x>` when `k1 > 0`, or `k1 = 0 && k2 > 0`
//! * cos-type: `cos<k,x>` when `k1 < 0`, or `k1 = 0 && k2 < 0`
//!
//! Coefficients are stored against the unit-normalized elements
//! `e_k / (sqrt(2) * pi)` so that the basis is literally orthonormal in `L^2`
//! and inner products reduce to dot products of coefficient vectors.
//! Converting to the raw sin/cos convention is a single global scale.
//!
//! A [`Lattice`] fixes a finite truncation `|k| <= K_max` (Euclidean) and the
//! canonical mode ordering; [`SpectralField`] is a dense coefficient vector on
//! a shared lattice. Fields are immutable values in spirit: all operations
//! return fresh fields and never mutate their inputs.

mod grid;
mod io;

pub use grid::{dealias_cut, divergence_norm, FlowCache, SpectralOps};
pub use io::{read_field, write_field, FieldIoError};

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("lattice mismatch: fields live on different truncations ({0} vs {1} modes)")]
    LatticeMismatch(usize, usize),
    #[error("mode ({0},{1}) outside lattice truncation")]
    ModeOutsideLattice(i32, i32),
    #[error("invalid mode: the zero pair is excluded from the basis")]
    ZeroMode,
}

/// Nonzero integer wavevector indexing one real basis element.
///
/// Serialized as a plain `[k1, k2]` pair; the zero pair is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "(i32, i32)", into = "(i32, i32)")]
pub struct ModeIndex {
    pub k1: i32,
    pub k2: i32,
}

impl TryFrom<(i32, i32)> for ModeIndex {
    type Error = SpectralError;
    fn try_from(v: (i32, i32)) -> Result<Self, SpectralError> {
        ModeIndex::new(v.0, v.1)
    }
}

impl From<ModeIndex> for (i32, i32) {
    fn from(m: ModeIndex) -> (i32, i32) {
        (m.k1, m.k2)
    }
}

/// Which trigonometric function the basis element at a mode uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignClass {
    Sin,
    Cos,
}

impl ModeIndex {
    pub fn new(k1: i32, k2: i32) -> Result<Self, SpectralError> {
        if k1 == 0 && k2 == 0 {
            return Err(SpectralError::ZeroMode);
        }
        Ok(ModeIndex { k1, k2 })
    }

    /// Squared Euclidean length `|k|^2` as an exact integer.
    pub fn norm_sq(&self) -> i64 {
        self.k1 as i64 * self.k1 as i64 + self.k2 as i64 * self.k2 as i64
    }

    pub fn norm(&self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    /// `k_perp = (-k2, k1)`, the rotation used by the Biot-Savart operator.
    pub fn perp(&self) -> (i32, i32) {
        (-self.k2, self.k1)
    }

    pub fn negated(&self) -> ModeIndex {
        ModeIndex { k1: -self.k1, k2: -self.k2 }
    }

    /// Sin-type iff `k1 > 0` or (`k1 = 0` and `k2 > 0`).
    pub fn class(&self) -> SignClass {
        if self.k1 > 0 || (self.k1 == 0 && self.k2 > 0) {
            SignClass::Sin
        } else {
            SignClass::Cos
        }
    }
}

impl fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.k1, self.k2)
    }
}

/// Finite truncation of the mode set: all nonzero `k` with `|k| <= kmax`,
/// in lexicographic order. Shared (via `Arc`) by every field on it.
#[derive(Debug)]
pub struct Lattice {
    kmax: u32,
    modes: Vec<ModeIndex>,
    lookup: HashMap<(i32, i32), usize>,
}

impl Lattice {
    pub fn new(kmax: u32) -> Arc<Lattice> {
        assert!(kmax >= 1, "truncation radius must be at least 1");
        let r = kmax as i32;
        let r_sq = (kmax as i64) * (kmax as i64);
        let mut modes = Vec::new();
        for k1 in -r..=r {
            for k2 in -r..=r {
                if (k1 == 0 && k2 == 0) || (k1 as i64 * k1 as i64 + k2 as i64 * k2 as i64) > r_sq
                {
                    continue;
                }
                modes.push(ModeIndex { k1, k2 });
            }
        }
        modes.sort();
        let lookup = modes
            .iter()
            .enumerate()
            .map(|(i, m)| ((m.k1, m.k2), i))
            .collect();
        Arc::new(Lattice { kmax, modes, lookup })
    }

    pub fn kmax(&self) -> u32 {
        self.kmax
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[ModeIndex] {
        &self.modes
    }

    pub fn index_of(&self, m: ModeIndex) -> Option<usize> {
        self.lookup.get(&(m.k1, m.k2)).copied()
    }

    pub fn contains(&self, m: ModeIndex) -> bool {
        self.lookup.contains_key(&(m.k1, m.k2))
    }
}

/// Mean-zero scalar field given by real coefficients in the normalized basis.
///
/// Zero mean is structural: the zero mode simply does not exist on the
/// lattice, so membership in `H` cannot be violated.
#[derive(Debug, Clone)]
pub struct SpectralField {
    lattice: Arc<Lattice>,
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zero(lattice: &Arc<Lattice>) -> SpectralField {
        SpectralField { lattice: Arc::clone(lattice), coeffs: vec![0.0; lattice.len()] }
    }

    /// Single normalized basis element `e_k / (sqrt(2) pi)`.
    pub fn basis(lattice: &Arc<Lattice>, mode: ModeIndex) -> Result<SpectralField, SpectralError> {
        let mut f = SpectralField::zero(lattice);
        let idx = lattice
            .index_of(mode)
            .ok_or(SpectralError::ModeOutsideLattice(mode.k1, mode.k2))?;
        f.coeffs[idx] = 1.0;
        Ok(f)
    }

    pub fn from_coeffs(lattice: &Arc<Lattice>, coeffs: Vec<f64>) -> SpectralField {
        assert_eq!(coeffs.len(), lattice.len());
        SpectralField { lattice: Arc::clone(lattice), coeffs }
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn coeff(&self, mode: ModeIndex) -> f64 {
        self.lattice.index_of(mode).map_or(0.0, |i| self.coeffs[i])
    }

    pub fn set_coeff(&mut self, mode: ModeIndex, value: f64) -> Result<(), SpectralError> {
        let idx = self
            .lattice
            .index_of(mode)
            .ok_or(SpectralError::ModeOutsideLattice(mode.k1, mode.k2))?;
        self.coeffs[idx] = value;
        Ok(())
    }

    fn check_same_lattice(&self, other: &SpectralField) -> Result<(), SpectralError> {
        if !Arc::ptr_eq(&self.lattice, &other.lattice)
            && (self.lattice.kmax != other.lattice.kmax || self.lattice.len() != other.lattice.len())
        {
            return Err(SpectralError::LatticeMismatch(self.lattice.len(), other.lattice.len()));
        }
        Ok(())
    }

    /// `L^2` inner product; exact dot product thanks to orthonormality.
    pub fn inner(&self, other: &SpectralField) -> f64 {
        debug_assert!(self.check_same_lattice(other).is_ok());
        neumaier_sum(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b))
    }

    pub fn norm(&self) -> f64 {
        self.sobolev_norm(0.0)
    }

    /// Sobolev norm `||w||_alpha = (sum |k|^(2 alpha) w_k^2)^(1/2)` for any real
    /// `alpha`, accumulated with compensated summation.
    pub fn sobolev_norm(&self, alpha: f64) -> f64 {
        let modes = self.lattice.modes();
        let total = neumaier_sum(self.coeffs.iter().enumerate().map(|(i, &a)| {
            if a == 0.0 {
                return 0.0;
            }
            let w = if alpha == 0.0 {
                1.0
            } else {
                (modes[i].norm_sq() as f64).powf(alpha)
            };
            w * a * a
        }));
        total.max(0.0).sqrt()
    }

    /// Low-mode projection `P_N` (keep `|j| <= N`) or its complement `Q_N`.
    pub fn project(&self, n: u32, part: ProjectionPart) -> SpectralField {
        assert!(n >= 1, "projection level must be at least 1");
        let n_sq = (n as i64) * (n as i64);
        let mut out = self.clone();
        for (i, m) in self.lattice.modes().iter().enumerate() {
            let low = m.norm_sq() <= n_sq;
            let keep = match part {
                ProjectionPart::Low => low,
                ProjectionPart::High => !low,
            };
            if !keep {
                out.coeffs[i] = 0.0;
            }
        }
        out
    }

    pub fn scaled(&self, a: f64) -> SpectralField {
        let mut out = self.clone();
        for c in &mut out.coeffs {
            *c *= a;
        }
        out
    }

    pub fn axpy(&mut self, a: f64, other: &SpectralField) {
        debug_assert!(self.check_same_lattice(other).is_ok());
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += a * o;
        }
    }

    pub fn add(&self, other: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionPart {
    Low,
    High,
}

/// Divergence-free velocity field: two scalar component fields on a shared
/// lattice, produced by the Biot-Savart operator.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub u1: SpectralField,
    pub u2: SpectralField,
}

impl VelocityField {
    /// `||u||_alpha^2 = ||u1||_alpha^2 + ||u2||_alpha^2`.
    pub fn sobolev_norm(&self, alpha: f64) -> f64 {
        let a = self.u1.sobolev_norm(alpha);
        let b = self.u2.sobolev_norm(alpha);
        (a * a + b * b).sqrt()
    }
}

/// Neumaier variant of Kahan summation.
pub(crate) fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Biot-Savart inversion `u = K w`, mode-wise `(K w)_k = -i w_k k_perp / |k|^2`.
///
/// In the real sin/cos coefficients this is a pure index shuffle: for the
/// conjugate pair at canonical sin-mode `k` with amplitudes `(s, c)` (sin part
/// at `k`, cos part at `-k`), component `m` of the velocity picks up sin
/// amplitude `c * k_perp_m / |k|^2` at `k` and cos amplitude
/// `-s * k_perp_m / |k|^2` at `-k`.
pub fn biot_savart(w: &SpectralField) -> VelocityField {
    let lattice = w.lattice();
    let mut u1 = SpectralField::zero(lattice);
    let mut u2 = SpectralField::zero(lattice);
    for (i, m) in lattice.modes().iter().enumerate() {
        let a = w.coeffs()[i];
        if a == 0.0 {
            continue;
        }
        let (p1, p2) = m.perp();
        let inv = 1.0 / (m.norm_sq() as f64);
        match m.class() {
            SignClass::Sin => {
                // sin amplitude a at k feeds cos amplitudes at -k.
                let j = lattice.index_of(m.negated()).expect("lattice is symmetric");
                u1.coeffs_mut()[j] += -a * p1 as f64 * inv;
                u2.coeffs_mut()[j] += -a * p2 as f64 * inv;
            }
            SignClass::Cos => {
                // cos amplitude a at -k feeds sin amplitudes at k; here m is the
                // cos-type index, so the sin partner is -m with perp flipped.
                let j = lattice.index_of(m.negated()).expect("lattice is symmetric");
                // perp of the sin partner -m is -(perp of m)
                u1.coeffs_mut()[j] += a * (-p1) as f64 * inv;
                u2.coeffs_mut()[j] += a * (-p2) as f64 * inv;
            }
        }
    }
    VelocityField { u1, u2 }
}
