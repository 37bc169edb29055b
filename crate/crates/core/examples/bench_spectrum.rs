use nsmalliavin::dynamics::{simulate, IntegratorSpec, Stepper};
use nsmalliavin::malliavin::{assemble_gram, constrained_min, sample_initial, GalerkinBasis, SalphaN, TruncationNorm};
use nsmalliavin::noise::{NoiseModel, QFamily};
use nsmalliavin::rng::stream;
use nsmalliavin::spanning::example_mode_set;
use nsmalliavin::spectral::ModeIndex;

fn run(label: &str, modes: Vec<ModeIndex>, w0_norm: f64, nu: f64, q: f64) {
    let spec = IntegratorSpec { dt: 2e-3, nu, grid: 32, kmax: Some(8), ..Default::default() };
    let model = NoiseModel::new(modes, QFamily::Constant { value: q }, q).unwrap();
    let mut ops = spec.make_ops();
    let basis = GalerkinBasis::new(ops.lattice(), 8, TruncationNorm::Euclidean).unwrap();
    let w0 = if w0_norm == 0.0 { ops.zero_field() } else { sample_initial(ops.lattice(), w0_norm, 3, 77) };
    let mut s = stream(2, "spectrum", 0);
    let path = simulate(&mut ops, &spec, &model, &w0, 1.0, 2, &mut s).unwrap();
    let stepper = Stepper::new(&ops, &spec, &model);
    let gram = assemble_gram(&mut ops, &stepper, &path, 0, path.steps, 5, &basis, false).unwrap();

    // eigen spectrum of M and of low block
    let eig = nalgebra::SymmetricEigen::new(gram.matrix.clone());
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mask = basis.low_mode_mask(4);
    let low_idx: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    let mut low = nalgebra::DMatrix::zeros(low_idx.len(), low_idx.len());
    for (a, &i) in low_idx.iter().enumerate() {
        for (b, &j) in low_idx.iter().enumerate() {
            low[(a, b)] = gram.matrix[(i, j)];
        }
    }
    let eig_low = nalgebra::SymmetricEigen::new(low.clone());
    let mut evl: Vec<f64> = eig_low.eigenvalues.iter().copied().collect();
    evl.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let mut rng = stream(2, "spectrum-cm", 0);
    let cm = constrained_min(&gram, &basis, SalphaN { alpha: 0.1, n: 4 }, &mut rng).unwrap();
    println!("== {label}: ||w0||={:.2} nu={} q={}", w0.norm(), nu, q);
    println!("   full spec: max={:.2e} #>1e-6: {}, #>1e-10: {}, #>1e-14: {} (D={})",
        ev[0], ev.iter().filter(|&&x| x > 1e-6).count(),
        ev.iter().filter(|&&x| x > 1e-10).count(),
        ev.iter().filter(|&&x| x > 1e-14).count(), ev.len());
    println!("   low block (dim {}): min={:.2e} median={:.2e} max={:.2e}", evl.len(), evl[evl.len()-1], evl[evl.len()/2], evl[0]);
    println!("   X(alpha=0.1,N=4) = {:.3e}  active={} mass={:.3}", cm.value, cm.constraint_active, cm.low_mode_mass);
}

fn main() {
    let good = example_mode_set;
    let bad = || vec![ModeIndex::new(1,0).unwrap(), ModeIndex::new(-1,0).unwrap()];
    run("good w0=0", good(), 0.0, 0.1, 0.25);
    run("good w0=1", good(), 1.0, 0.1, 0.25);
    run("bad  w0=1", bad(), 1.0, 0.1, 0.25);
    run("good w0=1 nu=.05 q=.5", good(), 1.0, 0.05, 0.5);
    run("bad  w0=1 nu=.05 q=.5", bad(), 1.0, 0.05, 0.5);
}
