use nsmalliavin::dynamics::{simulate, IntegratorSpec, Stepper};
use nsmalliavin::malliavin::{assemble_gram, constrained_min, GalerkinBasis, SalphaN, TruncationNorm};
use nsmalliavin::noise::{NoiseModel, QFamily};
use nsmalliavin::rng::stream;
use nsmalliavin::spanning::example_mode_set;
use std::time::Instant;

fn main() {
    let spec = IntegratorSpec { dt: 2e-3, nu: 0.1, grid: 32, kmax: Some(8), ..Default::default() };
    let model = NoiseModel::new(example_mode_set(), QFamily::Constant { value: 0.25 }, 0.25).unwrap();
    let mut ops = spec.make_ops();
    println!("lattice modes: {}", ops.lattice().len());

    // simulate 1 time unit
    let w0 = ops.zero_field();
    let t0 = Instant::now();
    let mut s = stream(1, "bench", 0);
    let path = simulate(&mut ops, &spec, &model, &w0, 1.0, 1, &mut s).unwrap();
    println!("simulate 500 steps: {:?}", t0.elapsed());

    let stepper = Stepper::new(&ops, &spec, &model);
    let basis = GalerkinBasis::new(ops.lattice(), 8, TruncationNorm::Euclidean).unwrap();
    println!("basis dim {}", basis.dim());
    let t0 = Instant::now();
    let gram = assemble_gram(&mut ops, &stepper, &path, 0, path.steps, 5, &basis, false).unwrap();
    println!("gram (stride 5, 100 nodes): {:?}", t0.elapsed());

    let t0 = Instant::now();
    let mut rng = stream(1, "bench-cm", 0);
    let cm = constrained_min(&gram, &basis, SalphaN { alpha: 0.1, n: 4 }, &mut rng).unwrap();
    println!("constrained_min: {:?}  X={:.3e} active={}", t0.elapsed(), cm.value, cm.constraint_active);

    // eigens cost
    let t0 = Instant::now();
    let _ = nsmalliavin::malliavin::smallest_eigenpair(&gram.matrix);
    println!("one symmetric eigen {}x{}: {:?}", basis.dim(), basis.dim(), t0.elapsed());

    // grid 64 step cost
    let spec64 = IntegratorSpec { dt: 1e-3, grid: 64, ..Default::default() };
    let mut ops64 = spec64.make_ops();
    let mut w = ops64.zero_field();
    for (i, c) in w.coeffs_mut().iter_mut().enumerate() { *c = ((i % 7) as f64 - 3.0) * 0.05; }
    let model64 = NoiseModel::new(example_mode_set(), QFamily::Constant { value: 0.25 }, 0.25).unwrap();
    let stepper64 = Stepper::new(&ops64, &spec64, &model64);
    let t0 = Instant::now();
    let n = 500;
    for i in 0..n {
        let (next, _) = stepper64.step(&mut ops64, &w, &[0.0;4], i).unwrap();
        w = next;
    }
    println!("grid64 step: {:?} / {} = {:?} per step", t0.elapsed(), n, t0.elapsed() / n as u32);
}
