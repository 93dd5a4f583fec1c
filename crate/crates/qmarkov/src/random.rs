//! Seeded random constructions used by verification samplers, tests, and
//! benchmarks. All randomness flows through ChaCha8 seeded explicitly, and
//! batch work derives one RNG per item from `(seed, index)` so results do
//! not depend on thread scheduling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{cr, zeros, CMatrix, CVector, SpanBasis, C64};

/// RNG for item `index` of a batch run under `seed`.
pub fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Complex Ginibre matrix: i.i.d. standard complex Gaussian entries.
pub fn complex_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        C64::new(normal(rng), normal(rng)) * cr(std::f64::consts::FRAC_1_SQRT_2)
    })
}

/// Random Hermitian matrix with O(1) entries.
pub fn hermitian(rng: &mut ChaCha8Rng, dim: usize) -> CMatrix {
    let g = complex_matrix(rng, dim, dim);
    (&g + g.adjoint()).scale(0.5)
}

/// Random PSD matrix `G† G`, normalized to unit operator scale.
pub fn psd(rng: &mut ChaCha8Rng, dim: usize) -> CMatrix {
    let g = complex_matrix(rng, dim, dim);
    let p = g.adjoint() * &g;
    let n = p.norm();
    if n > 0.0 {
        p.unscale(n)
    } else {
        p
    }
}

/// Random density matrix: PSD with unit trace.
pub fn density(rng: &mut ChaCha8Rng, dim: usize) -> CMatrix {
    let g = complex_matrix(rng, dim, dim);
    let p = g.adjoint() * &g;
    let t = p.trace();
    p.unscale(t.re.max(f64::MIN_POSITIVE))
}

/// Random complex vector with unit norm.
pub fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> CVector {
    let mut v = CVector::from_fn(dim, |_, _| C64::new(normal(rng), normal(rng)));
    let n = v.norm();
    if n > 0.0 {
        v.unscale_mut(n);
    } else {
        v[0] = crate::linalg::ONE;
    }
    v
}

/// Random Kraus family of `count` operators mapping dimension `from` to `to`.
/// Unnormalized; callers rescale when they need a unital map.
pub fn kraus_family(rng: &mut ChaCha8Rng, count: usize, to: usize, from: usize) -> Vec<CMatrix> {
    (0..count).map(|_| complex_matrix(rng, to, from)).collect()
}

/// Random element of the span of `basis` with Gaussian coefficients.
pub fn span_element(rng: &mut ChaCha8Rng, basis: &SpanBasis) -> CMatrix {
    let coeffs = CVector::from_fn(basis.len(), |_, _| C64::new(normal(rng), normal(rng)));
    basis
        .synthesize(&coeffs)
        .expect("coefficient count matches basis")
}

/// Random Hermitian element of the span of `basis` (assumes the span is
/// adjoint-closed, which holds for every algebra basis in this crate).
pub fn hermitian_span_element(rng: &mut ChaCha8Rng, basis: &SpanBasis) -> CMatrix {
    let x = span_element(rng, basis);
    (&x + x.adjoint()).scale(0.5)
}

/// Row-stochastic matrix with strictly positive entries.
pub fn stochastic_matrix(rng: &mut ChaCha8Rng, dim: usize) -> CMatrix {
    let mut m = zeros(dim, dim);
    for i in 0..dim {
        let mut row: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = row.iter().sum();
        for r in row.iter_mut() {
            *r /= s;
        }
        for (j, r) in row.into_iter().enumerate() {
            m[(i, j)] = cr(r);
        }
    }
    m
}

/// Probability vector with strictly positive entries.
pub fn probability_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() + 0.05).collect();
    let s: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= s;
    }
    v
}
