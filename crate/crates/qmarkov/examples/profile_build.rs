//! Throwaway profiling helper, not part of the crate surface.

use std::time::Instant;

use qmarkov::algebra::{AlgebraKind, LatticeSpec, LocalStructure};
use qmarkov::linalg::{vec_of, ToleranceConfig};

fn main() {
    let tol = ToleranceConfig::default();
    let s = LocalStructure::build(
        LatticeSpec {
            kind: AlgebraKind::Fermi,
            site_dims: vec![1, 1, 1, 1],
        },
        &tol,
    )
    .unwrap();
    let d = s.ambient_dim();
    let (mut t_formula, mut t_numeric, mut t_ortho, mut t_resid) = (0.0, 0.0, 0.0, 0.0);
    for mask in 0u32..16 {
        let j: Vec<usize> = (0..4).filter(|i| mask & (1 << i) != 0).collect();
        let t0 = Instant::now();
        let formula = s.commutant_formula(&j).unwrap();
        t_formula += t0.elapsed().as_secs_f64();
        let gens = s.generators_of(&j).unwrap();
        let t0 = Instant::now();
        let numeric = qmarkov::linalg::commutant_of(&gens, d, &tol).unwrap();
        t_numeric += t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let qf = formula.orthonormal_columns(&tol);
        let qn = numeric.orthonormal_columns(&tol);
        t_ortho += t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let mut worst = 0.0f64;
        for e in formula.elements() {
            let v = vec_of(e);
            let r = (&v - &qn * (qn.adjoint() * &v)).norm();
            worst = worst.max(r / e.norm().max(1.0));
        }
        for e in numeric.elements() {
            let v = vec_of(e);
            let r = (&v - &qf * (qf.adjoint() * &v)).norm();
            worst = worst.max(r / e.norm().max(1.0));
        }
        t_resid += t0.elapsed().as_secs_f64();
    }
    println!("formula {t_formula:.2}s  numeric {t_numeric:.2}s  ortho {t_ortho:.2}s  resid {t_resid:.2}s");
}
