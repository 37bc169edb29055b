use nsmalliavin::dynamics::{simulate, IntegratorSpec, Stepper};
use nsmalliavin::malliavin::{assemble_gram, constrained_min, sample_initial, smallest_eigenpair, GalerkinBasis, SalphaN, TruncationNorm};
use nsmalliavin::noise::{NoiseModel, QFamily};
use nsmalliavin::rng::stream;
use nsmalliavin::spanning::example_mode_set;
use nsmalliavin::spectral::ModeIndex;

fn run(modes: Vec<ModeIndex>, label: &str, kmax: u32, nu: f64, q: f64, dt: f64, stride: usize, n: u64) {
    let spec = IntegratorSpec { dt, nu, grid: 32, kmax: Some(kmax), blowup_guard: 1e8, ..Default::default() };
    let model = NoiseModel::new(modes, QFamily::Constant { value: q }, q).unwrap();
    let mut ops = spec.make_ops();
    let basis = GalerkinBasis::new(ops.lattice(), kmax, TruncationNorm::Euclidean).unwrap();
    let stepper = Stepper::new(&ops, &spec, &model);
    let mut xs = Vec::new();
    let mut lmins = Vec::new();
    for i in 0..n {
        let w0 = sample_initial(ops.lattice(), 1.0, 3 + i as usize, 999);
        let mut s = stream(50 + i, "xmap", i);
        let path = match simulate(&mut ops, &spec, &model, &w0, 1.0, 2, &mut s) {
            Ok(p) => p, Err(e) => { println!("{label}: sim err {e}"); return; }
        };
        let gram = assemble_gram(&mut ops, &stepper, &path, 0, path.steps, stride, &basis, false).unwrap();
        let (lmin, _) = smallest_eigenpair(&gram.matrix);
        lmins.push(lmin);
        let mut rng = stream(8, "xmap-cm", i);
        match constrained_min(&gram, &basis, SalphaN { alpha: 0.1, n: 4 }, &mut rng) {
            Ok(c) => xs.push(c.value),
            Err(e) => { println!("   {label} cm: {e}"); xs.push(f64::NAN); }
        }
    }
    let fx: Vec<String> = xs.iter().map(|x| format!("{x:.1e}")).collect();
    let fl: Vec<String> = lmins.iter().map(|x| format!("{x:.0e}")).collect();
    println!("{label} kmax={kmax} nu={nu} q={q} dt={dt}: X=[{}] lmin=[{}]", fx.join(","), fl.join(","));
}

fn main() {
    let g = example_mode_set;
    run(g(), "good", 4, 0.1, 4.0, 1e-3, 10, 3);
    run(g(), "good", 4, 0.1, 8.0, 1e-3, 10, 3);
    run(g(), "good", 4, 0.02, 4.0, 1e-3, 10, 3);
    run(g(), "good", 4, 0.02, 8.0, 5e-4, 10, 3);
    run(g(), "good", 5, 0.02, 8.0, 5e-4, 10, 3);
    let bad = || vec![ModeIndex::new(1,0).unwrap(), ModeIndex::new(-1,0).unwrap()];
    run(bad(), "bad ", 4, 0.02, 8.0, 5e-4, 10, 3);
    run(bad(), "bad ", 4, 0.1, 8.0, 1e-3, 10, 3);
}
