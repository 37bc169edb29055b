use nsmalliavin::dynamics::{simulate, IntegratorSpec, Stepper};
use nsmalliavin::malliavin::{assemble_gram, constrained_min, sample_initial, GalerkinBasis, SalphaN, TruncationNorm};
use nsmalliavin::noise::{NoiseModel, QFamily};
use nsmalliavin::rng::stream;
use nsmalliavin::spanning::example_mode_set;
use nsmalliavin::spectral::ModeIndex;

fn run(label: &str, modes: Vec<ModeIndex>, kmax: u32, nu: f64, q: f64, dt: f64, stride: usize, seeds: u64) {
    let spec = IntegratorSpec { dt, nu, grid: 32, kmax: Some(kmax), ..Default::default() };
    let model = NoiseModel::new(modes, QFamily::Constant { value: q }, q).unwrap();
    let mut ops = spec.make_ops();
    let basis = GalerkinBasis::new(ops.lattice(), kmax, TruncationNorm::Euclidean).unwrap();
    let mut xs = Vec::new();
    for i in 0..seeds {
        let w0 = sample_initial(ops.lattice(), 1.0, 3 + i as usize, 177);
        let mut s = stream(100 + i, "scan", i);
        let path = simulate(&mut ops, &spec, &model, &w0, 1.0, 2, &mut s).unwrap();
        let stepper = Stepper::new(&ops, &spec, &model);
        let gram = assemble_gram(&mut ops, &stepper, &path, 0, path.steps, stride, &basis, false).unwrap();
        let mut rng = stream(3, "scan-cm", i);
        let cm = constrained_min(&gram, &basis, SalphaN { alpha: 0.1, n: 4 }, &mut rng);
        match cm {
            Ok(c) => xs.push(c.value.max(0.0)),
            Err(e) => { println!("   cm err: {e}"); xs.push(0.0); }
        }
    }
    let fmt: Vec<String> = xs.iter().map(|x| format!("{x:.1e}")).collect();
    println!("{label} kmax={kmax} nu={nu} q={q}: X = [{}]", fmt.join(", "));
}

fn main() {
    let good = example_mode_set;
    let bad = || vec![ModeIndex::new(1,0).unwrap(), ModeIndex::new(-1,0).unwrap()];
    run("good", good(), 8, 0.05, 1.0, 1e-3, 10, 3);
    run("good", good(), 8, 0.05, 1.5, 1e-3, 10, 3);
    run("good", good(), 6, 0.05, 1.5, 1e-3, 10, 3);
    run("good", good(), 6, 0.02, 2.0, 5e-4, 20, 3);
    run("bad ", bad(),  6, 0.02, 2.0, 5e-4, 20, 3);
    run("good", good(), 5, 0.02, 2.0, 5e-4, 20, 3);
    run("bad ", bad(),  5, 0.02, 2.0, 5e-4, 20, 3);
}
