mod common;

use common::{adaptive_simpson, random_measure};
use statrs::function::gamma::gamma;
use volterra_lift::kernel::{
    discretize_density, fractional_kernel, make_atomic, weight, DensityFamily, DensitySpec, GammaComponent,
};
use volterra_lift::rng::path_rng;

#[test]
fn kernels_are_completely_monotone_under_finite_differences() {
    let mut rng = path_rng(11, 0);
    for _ in 0..200 {
        let m = random_measure(&mut rng, 0.5, 50.0);
        for i in 0..40 {
            // log-spaced on [0.1, 20]
            let t = 0.1 * 200f64.powf(i as f64 / 39.0);
            let h = 1e-6 * t;
            let (km, k0, kp) = (
                m.kernel_eval(t - h).unwrap(),
                m.kernel_eval(t).unwrap(),
                m.kernel_eval(t + h).unwrap(),
            );
            let d1 = -(kp - km) / (2.0 * h);
            let d2 = (kp - 2.0 * k0 + km) / (h * h);
            assert!(k0 >= -1e-8 && d1 >= -1e-8 && d2 >= -1e-8, "t={t}: {k0} {d1} {d2}");
        }
    }
}

#[test]
fn laplace_transform_matches_adaptive_quadrature() {
    let mut rng = path_rng(12, 0);
    for _ in 0..50 {
        let m = random_measure(&mut rng, 0.05, 200.0);
        for s in [1.0, 2.0, 10.0] {
            let f = |t: f64| (-s * t).exp() * m.kernel(t);
            // tail beyond t = 60 is below e^{-60} k(0)
            let num = adaptive_simpson(&f, 0.0, 60.0, 1e-13);
            let exact: f64 = m.atoms().iter().map(|a| a.w / (s + a.x)).sum();
            assert!(((num - exact) / exact).abs() < 1e-6, "s={s}: {num} vs {exact}");
            assert!((m.laplace(s) - exact).abs() <= 1e-14 * exact);
        }
    }
}

fn max_relative_error(nodes: usize) -> f64 {
    let m = discretize_density(&DensitySpec::fractional(0.75, 1e-2, 1e4, nodes)).unwrap();
    (0..200)
        .map(|i| {
            let t = 0.05 * 100f64.powf(i as f64 / 199.0);
            let target = t.powf(-0.25) / gamma(0.75);
            ((m.kernel_eval(t).unwrap() - target) / target).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn fractional_quadrature_converges_under_node_doubling() {
    let errs: Vec<f64> = [8, 16, 32, 64].into_iter().map(max_relative_error).collect();
    for w in errs.windows(2) {
        assert!(w[1] < w[0], "{errs:?}");
    }
    assert!(max_relative_error(60) < 1e-2);
}

#[test]
fn fractional_target_is_the_riemann_liouville_kernel() {
    // oracle independent of the library: t^{α-1}/Γ(α)
    for t in [0.05f64, 0.3, 1.0, 4.0] {
        let direct = t.powf(-0.25) / gamma(0.75);
        assert!((fractional_kernel(0.75, t) - direct).abs() < 1e-14 * direct);
    }
}

fn recomputed_constant(m: &volterra_lift::BernsteinMeasure) -> f64 {
    m.atoms()
        .iter()
        .map(|a| {
            let om = if a.x <= 1.0 { 1.0 } else { 1.0 / a.x.sqrt() };
            a.w * (om + 1.0 / ((1.0 + a.x) * om))
        })
        .sum()
}

#[test]
fn admissibility_constant_is_finite_and_reproducible() {
    let mut measures = Vec::new();
    let mut rng = path_rng(13, 0);
    for _ in 0..100 {
        measures.push(random_measure(&mut rng, 1e-3, 1e5));
    }
    measures.push(make_atomic(&[(0.0, 1.0), (4.0, 2.0)]).unwrap());
    for alpha in [0.55, 0.75, 0.95] {
        measures.push(discretize_density(&DensitySpec::fractional(alpha, 1e-2, 1e4, 60)).unwrap());
    }
    measures.push(
        discretize_density(&DensitySpec {
            family: DensityFamily::GammaMix {
                components: vec![GammaComponent {
                    weight: 1.0,
                    shape: 2.0,
                    rate: 1.0,
                }],
            },
            x_min: 1e-2,
            x_max: 1e2,
            nodes: 40,
        })
        .unwrap(),
    );
    for m in &measures {
        let c = m.diagnostics().admissibility_constant;
        let direct = recomputed_constant(m);
        assert!(c.is_finite());
        assert!((c - direct).abs() <= 1e-12 * direct.max(1.0), "{c} vs {direct}");
        for a in m.atoms() {
            let om = if a.x <= 1.0 { 1.0 } else { a.x.powf(-0.5) };
            assert!((weight(a.x).unwrap() - om).abs() <= 1e-15 * om);
        }
    }
}
