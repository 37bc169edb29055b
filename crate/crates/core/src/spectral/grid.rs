//! Pseudo-spectral kernels: complex FFT grid, the advection bilinear form with
//! 2/3 dealiasing, and its symmetrized derivative.
//!
//! Real<->complex bijection. Writing `phi_k = exp(i<k,x>)/(2 pi)` for the
//! orthonormal complex exponentials, the normalized real pair at a sin-type
//! representative `k` (amplitudes `s` at `k`, `c` at `-k`) corresponds to
//! `what(k) = (c - i s)/sqrt(2)` and `what(-k) = conj(what(k))`. Reading back:
//! sin-type mode `m` has amplitude `-sqrt(2) Im what(m)`, cos-type mode `m`
//! has amplitude `sqrt(2) Re what(m)`.
//!
//! Dealiasing: retained modes satisfy `3 * cut < grid`, so quadratic products
//! of retained modes are alias-free on the retained band and the antisymmetry
//! identity `<B(Ku,v),v> = 0` holds to roundoff.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Lattice, SignClass, SpectralError, SpectralField, VelocityField};

const SQRT2: f64 = std::f64::consts::SQRT_2;
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Largest max-norm radius kept by the 2/3 rule on a `size`-point grid,
/// adjusted so products of retained modes never alias back into the band.
pub fn dealias_cut(size: usize) -> u32 {
    ((size as u32).saturating_sub(1)) / 3
}

fn bin(size: usize, k1: i32, k2: i32) -> usize {
    let g = size as i32;
    let r = k1.rem_euclid(g) as usize;
    let c = k2.rem_euclid(g) as usize;
    r * size + c
}

/// Complex phi-coordinates `(at +m, at -m)` of one real basis amplitude.
fn pair_coords(class: SignClass, a: f64) -> (Complex64, Complex64) {
    match class {
        SignClass::Sin => (
            Complex64::new(0.0, -a / SQRT2),
            Complex64::new(0.0, a / SQRT2),
        ),
        SignClass::Cos => (
            Complex64::new(a / SQRT2, 0.0),
            Complex64::new(a / SQRT2, 0.0),
        ),
    }
}

/// FFT working state for one worker: plans plus scratch buffers.
///
/// All field operations go through `&mut self` so a single `SpectralOps` is
/// never shared between threads; build one per worker instead.
pub struct SpectralOps {
    size: usize,
    cut: u32,
    lattice: Arc<Lattice>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    fft_scratch: Vec<Complex64>,
    grid_a: Vec<Complex64>,
    real_a: Vec<f64>,
    real_b: Vec<f64>,
}

/// Physical-space quantities of a state `w` reused by every linearized
/// propagation within a time step: velocity `K w` and gradient of `w`.
pub struct FlowCache {
    u1: Vec<f64>,
    u2: Vec<f64>,
    wx: Vec<f64>,
    wy: Vec<f64>,
}

impl SpectralOps {
    /// `kmax` defaults to the dealias cut; it may be chosen smaller to run the
    /// dynamics on a reduced Galerkin truncation.
    pub fn new(size: usize, kmax: Option<u32>) -> SpectralOps {
        assert!(size >= 8, "grid too small");
        let cut = dealias_cut(size);
        let kmax = kmax.unwrap_or(cut);
        assert!(
            kmax >= 1 && kmax <= cut,
            "kmax {kmax} must lie in [1, {cut}] for a {size}x{size} grid"
        );
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(size);
        let inv = planner.plan_fft_inverse(size);
        let scratch = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        SpectralOps {
            size,
            cut,
            lattice: Lattice::new(kmax),
            fwd,
            inv,
            fft_scratch: vec![Complex64::default(); scratch],
            grid_a: vec![Complex64::default(); size * size],
            real_a: vec![0.0; size * size],
            real_b: vec![0.0; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dealias_radius(&self) -> u32 {
        self.cut
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn zero_field(&self) -> SpectralField {
        SpectralField::zero(&self.lattice)
    }

    /// In-place 2D FFT over `buf` (rows, then columns via transpose).
    fn fft2(&mut self, forward: bool, buf: &mut [Complex64]) {
        let n = self.size;
        let plan = if forward { &self.fwd } else { &self.inv };
        for row in buf.chunks_exact_mut(n) {
            plan.process_with_scratch(row, &mut self.fft_scratch);
        }
        transpose(buf, n);
        for row in buf.chunks_exact_mut(n) {
            plan.process_with_scratch(row, &mut self.fft_scratch);
        }
        transpose(buf, n);
    }

    /// Fill a complex grid with `f(k, what(k)) / (2 pi)` over the field's
    /// support and zeros elsewhere.
    fn fill(
        size: usize,
        buf: &mut [Complex64],
        field: &SpectralField,
        f: impl Fn(i32, i32, Complex64) -> Complex64,
    ) {
        buf.fill(Complex64::default());
        let inv_two_pi = 1.0 / TWO_PI;
        for (i, m) in field.lattice().modes().iter().enumerate() {
            let a = field.coeffs()[i];
            if a == 0.0 {
                continue;
            }
            let (at_m, at_neg) = pair_coords(m.class(), a);
            buf[bin(size, m.k1, m.k2)] += f(m.k1, m.k2, at_m) * inv_two_pi;
            buf[bin(size, -m.k1, -m.k2)] += f(-m.k1, -m.k2, at_neg) * inv_two_pi;
        }
    }

    /// Fill `buf` with a transformed field and run the inverse FFT, leaving
    /// physical samples in `out`.
    fn to_physical_with(
        &mut self,
        field: &SpectralField,
        out: &mut Vec<f64>,
        f: impl Fn(i32, i32, Complex64) -> Complex64,
    ) {
        let mut buf = std::mem::take(&mut self.grid_a);
        Self::fill(self.size, &mut buf, field, f);
        self.fft2(false, &mut buf);
        out.resize(self.size * self.size, 0.0);
        for (d, s) in out.iter_mut().zip(&buf) {
            *d = s.re;
        }
        self.grid_a = buf;
    }

    /// Transform a real physical-space product back to lattice coefficients,
    /// truncating to the ball (which also realizes the dealiasing).
    fn physical_to_field(&mut self, values: &[f64]) -> SpectralField {
        debug_assert_eq!(values.len(), self.size * self.size);
        let mut buf = std::mem::take(&mut self.grid_a);
        for (b, v) in buf.iter_mut().zip(values) {
            *b = Complex64::new(*v, 0.0);
        }
        self.fft2(true, &mut buf);
        let scale = TWO_PI / (self.size * self.size) as f64;
        let mut out = SpectralField::zero(&self.lattice);
        let lattice = Arc::clone(&self.lattice);
        for (i, m) in lattice.modes().iter().enumerate() {
            let c = buf[bin(self.size, m.k1, m.k2)] * scale;
            out.coeffs_mut()[i] = match m.class() {
                SignClass::Sin => -SQRT2 * c.im,
                SignClass::Cos => SQRT2 * c.re,
            };
        }
        self.grid_a = buf;
        out
    }

    /// Physical-space samples of a field on the grid (row-major, `x = 2 pi j / n`).
    pub fn to_physical(&mut self, field: &SpectralField) -> Vec<f64> {
        let mut out = Vec::new();
        self.to_physical_with(field, &mut out, |_, _, c| c);
        out
    }

    fn check_lattice(&self, w: &SpectralField) -> Result<(), SpectralError> {
        if w.lattice().kmax() != self.lattice.kmax() || w.lattice().len() != self.lattice.len() {
            return Err(SpectralError::LatticeMismatch(self.lattice.len(), w.lattice().len()));
        }
        Ok(())
    }

    /// Physical-space cache for a state: `K w` and `grad w` on the grid.
    pub fn flow_cache(&mut self, w: &SpectralField) -> Result<FlowCache, SpectralError> {
        self.check_lattice(w)?;
        let mut cache = FlowCache {
            u1: Vec::new(),
            u2: Vec::new(),
            wx: Vec::new(),
            wy: Vec::new(),
        };
        let mut u1 = std::mem::take(&mut cache.u1);
        self.to_physical_with(w, &mut u1, velocity_coeff(0));
        cache.u1 = u1;
        let mut u2 = std::mem::take(&mut cache.u2);
        self.to_physical_with(w, &mut u2, velocity_coeff(1));
        cache.u2 = u2;
        let mut wx = std::mem::take(&mut cache.wx);
        self.to_physical_with(w, &mut wx, deriv_coeff(0));
        cache.wx = wx;
        let mut wy = std::mem::take(&mut cache.wy);
        self.to_physical_with(w, &mut wy, deriv_coeff(1));
        cache.wy = wy;
        Ok(cache)
    }

    /// `B(K w, w)` from a prepared cache (used by the time stepper).
    pub fn advection_rhs(&mut self, cache: &FlowCache) -> SpectralField {
        let mut prod = std::mem::take(&mut self.real_a);
        prod.resize(self.size * self.size, 0.0);
        for (i, p) in prod.iter_mut().enumerate() {
            *p = -(cache.u1[i] * cache.wx[i] + cache.u2[i] * cache.wy[i]);
        }
        let out = self.physical_to_field(&prod);
        self.real_a = prod;
        out
    }

    /// `B_tilde(w, xi) = B(K w, xi) + B(K xi, w)` against a cache for `w`.
    ///
    /// This is exactly the derivative of `w -> B(K w, w)` through the same
    /// discrete pipeline, which is what the linearized flow requires.
    pub fn b_tilde_cached(
        &mut self,
        cache: &FlowCache,
        xi: &SpectralField,
    ) -> Result<SpectralField, SpectralError> {
        self.check_lattice(xi)?;
        let mut ga = std::mem::take(&mut self.real_a);
        let mut gb = std::mem::take(&mut self.real_b);

        // grad xi, dotted with cached K w.
        self.to_physical_with(xi, &mut ga, deriv_coeff(0));
        self.to_physical_with(xi, &mut gb, deriv_coeff(1));
        let mut prod = vec![0.0; self.size * self.size];
        for (i, p) in prod.iter_mut().enumerate() {
            *p = -(cache.u1[i] * ga[i] + cache.u2[i] * gb[i]);
        }

        // K xi, dotted with cached grad w.
        self.to_physical_with(xi, &mut ga, velocity_coeff(0));
        self.to_physical_with(xi, &mut gb, velocity_coeff(1));
        for (i, p) in prod.iter_mut().enumerate() {
            *p += -(ga[i] * cache.wx[i] + gb[i] * cache.wy[i]);
        }
        self.real_a = ga;
        self.real_b = gb;
        Ok(self.physical_to_field(&prod))
    }

    /// Advection bilinear form `B(u, w) = -(u . grad) w`, dealiased and
    /// truncated to the lattice.
    pub fn bilinear_b(
        &mut self,
        u: &VelocityField,
        w: &SpectralField,
    ) -> Result<SpectralField, SpectralError> {
        self.check_lattice(&u.u1)?;
        self.check_lattice(&u.u2)?;
        self.check_lattice(w)?;

        let mut u1p = std::mem::take(&mut self.real_a);
        let mut u2p = std::mem::take(&mut self.real_b);
        self.to_physical_with(&u.u1, &mut u1p, |_, _, c| c);
        self.to_physical_with(&u.u2, &mut u2p, |_, _, c| c);
        let mut gx = Vec::new();
        let mut gy = Vec::new();
        self.to_physical_with(w, &mut gx, deriv_coeff(0));
        self.to_physical_with(w, &mut gy, deriv_coeff(1));
        let mut prod = vec![0.0; self.size * self.size];
        for (i, p) in prod.iter_mut().enumerate() {
            *p = -(u1p[i] * gx[i] + u2p[i] * gy[i]);
        }
        self.real_a = u1p;
        self.real_b = u2p;
        Ok(self.physical_to_field(&prod))
    }

    /// `B_tilde(w, v) = B(K w, v) + B(K v, w)`.
    pub fn b_tilde(
        &mut self,
        w: &SpectralField,
        v: &SpectralField,
    ) -> Result<SpectralField, SpectralError> {
        let cache = self.flow_cache(w)?;
        self.b_tilde_cached(&cache, v)
    }
}

/// Velocity coefficient rule `uhat_m = -i what k_perp_m / |k|^2`.
fn velocity_coeff(component: usize) -> impl Fn(i32, i32, Complex64) -> Complex64 {
    move |k1, k2, c| {
        let inv = 1.0 / (k1 as f64 * k1 as f64 + k2 as f64 * k2 as f64);
        let perp = if component == 0 { -(k2 as f64) } else { k1 as f64 };
        Complex64::new(0.0, -1.0) * c * (perp * inv)
    }
}

/// Derivative coefficient rule `(d_m w)hat = i k_m what`.
fn deriv_coeff(component: usize) -> impl Fn(i32, i32, Complex64) -> Complex64 {
    move |k1, k2, c| {
        let km = if component == 0 { k1 as f64 } else { k2 as f64 };
        Complex64::new(0.0, km) * c
    }
}

fn transpose(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Spectral divergence `|| div u ||` computed directly on coefficients;
/// no grid transform involved.
pub fn divergence_norm(u: &VelocityField) -> f64 {
    use std::collections::HashMap;
    let mut div: HashMap<(i32, i32), Complex64> = HashMap::new();
    for (field, comp) in [(&u.u1, 0usize), (&u.u2, 1usize)] {
        for (i, m) in field.lattice().modes().iter().enumerate() {
            let a = field.coeffs()[i];
            if a == 0.0 {
                continue;
            }
            let (at_m, at_neg) = pair_coords(m.class(), a);
            let kc = if comp == 0 { m.k1 } else { m.k2 };
            *div.entry((m.k1, m.k2)).or_default() += Complex64::new(0.0, kc as f64) * at_m;
            *div.entry((-m.k1, -m.k2)).or_default() += Complex64::new(0.0, -kc as f64) * at_neg;
        }
    }
    div.values().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}
