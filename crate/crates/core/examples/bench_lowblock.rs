use nsmalliavin::dynamics::{simulate, IntegratorSpec, Stepper};
use nsmalliavin::malliavin::{assemble_gram, sample_initial, GalerkinBasis, TruncationNorm};
use nsmalliavin::noise::{NoiseModel, QFamily};
use nsmalliavin::rng::stream;
use nsmalliavin::spanning::example_mode_set;
use nsmalliavin::spectral::ModeIndex;

fn low_block_min(gram: &nalgebra::DMatrix<f64>, mask: &[bool]) -> (f64, usize) {
    let idx: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    let mut low = nalgebra::DMatrix::zeros(idx.len(), idx.len());
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            low[(a, b)] = gram[(i, j)];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(low);
    let mn = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    (mn, idx.len())
}

fn run(modes: Vec<ModeIndex>, label: &str, kmax: u32, nu: f64, q: f64, dt: f64, stride: usize) {
    let spec = IntegratorSpec { dt, nu, grid: 32, kmax: Some(kmax), blowup_guard: 1e8, ..Default::default() };
    let model = NoiseModel::new(modes, QFamily::Constant { value: q }, q).unwrap();
    let mut ops = spec.make_ops();
    let basis = GalerkinBasis::new(ops.lattice(), kmax, TruncationNorm::Euclidean).unwrap();
    let w0 = sample_initial(ops.lattice(), 1.0, 3, 177);
    let mut s = stream(7, "lb", 0);
    let path = match simulate(&mut ops, &spec, &model, &w0, 1.0, 2, &mut s) {
        Ok(p) => p, Err(e) => { println!("{label}: sim err {e}"); return; }
    };
    let wmid = path.snapshots[path.snapshots.len()/2].norm();
    let stepper = Stepper::new(&ops, &spec, &model);
    let gram = assemble_gram(&mut ops, &stepper, &path, 0, path.steps, stride, &basis, false).unwrap();
    let mask = basis.low_mode_mask(4);
    let (mn, dim) = low_block_min(&gram.matrix, &mask);
    let eig = nalgebra::SymmetricEigen::new(gram.matrix.clone());
    let rank14 = eig.eigenvalues.iter().filter(|&&x| x > 1e-14).count();
    println!("{label} kmax={kmax} nu={nu} q={q} dt={dt}: ||w(0.5)||={wmid:.1} lowblock({dim}) min={mn:.2e} rank14={rank14}/{}", basis.dim());
}

fn main() {
    let g = example_mode_set;
    run(g(), "good", 5, 0.1, 1.0, 1e-3, 5);
    run(g(), "good", 5, 0.1, 2.0, 1e-3, 5);
    run(g(), "good", 5, 0.1, 4.0, 5e-4, 10);
    run(g(), "good", 5, 0.1, 8.0, 2.5e-4, 20);
    run(g(), "good", 8, 0.1, 4.0, 5e-4, 10);
    run(g(), "good", 8, 0.1, 8.0, 2.5e-4, 20);
    let bad = vec![ModeIndex::new(1,0).unwrap(), ModeIndex::new(-1,0).unwrap()];
    run(bad.clone(), "bad ", 5, 0.1, 4.0, 5e-4, 10);
    run(bad, "bad ", 8, 0.1, 8.0, 2.5e-4, 20);
}
