#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use volterra_lift::kernel::{make_atomic, BernsteinMeasure};
use volterra_lift::lift::{CoefficientSet, LiftState};
use volterra_lift::LevyModel;

/// Two-atom benchmark `k(t) = 2e^{-t} + 3e^{-2t}`, `f(u) = -u/2`,
/// `σ(ξ, u) = ξ/10`, marks ±1 at unit rates, started from `u0 = 1`.
pub struct Benchmark {
    pub measure: Arc<BernsteinMeasure>,
    pub model: LevyModel,
    pub coeffs: CoefficientSet,
    pub start: LiftState,
}

pub fn two_atom_benchmark() -> Benchmark {
    let measure = Arc::new(make_atomic(&[(1.0, 2.0), (2.0, 3.0)]).unwrap());
    Benchmark {
        model: LevyModel::scalar(&[1.0, -1.0], &[1.0, 1.0]).unwrap(),
        coeffs: CoefficientSet::linear(1, -0.5).with_scaled_marks(0.1),
        start: LiftState::immerse(&[1.0], measure.clone()),
        measure,
    }
}

/// Random atomic measure with 1 to 6 atoms, rates log-uniform on
/// `[x_lo, x_hi]`, weights uniform on `[0.1, 3]`.
pub fn random_measure<R: Rng>(rng: &mut R, x_lo: f64, x_hi: f64) -> BernsteinMeasure {
    loop {
        let n = rng.random_range(1..=6);
        let atoms: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let x = (x_lo.ln() + rng.random::<f64>() * (x_hi / x_lo).ln()).exp();
                (x, rng.random_range(0.1..3.0))
            })
            .collect();
        if let Ok(m) = make_atomic(&atoms) {
            return m;
        }
    }
}

/// Adaptive Simpson quadrature on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + rec(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, m, fm, whole, tol, 50)
}
