//! Randomised invariants of the linear-algebra substrate, the model, the
//! closed forms and the chain mapping.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use qotto::analysis;
use qotto::config::EngineConfig;
use qotto::linalg::{self, DensityMatrix, HilbertLayout, Mat, Operator};
use qotto::model::{self, DephasingBathParams, StrokeDurations};
use qotto::tedopa;

fn mat(d: usize, v: &[(f64, f64)]) -> Mat {
    Array2::from_shape_fn((d, d), |(i, j)| {
        let (re, im) = v[(i * d + j) % v.len()];
        C64::new(re, im)
    })
}

/// (A A^dag + 1e-3) / Tr, so an all-zero draw still gives a state.
fn density(d: usize, v: &[(f64, f64)]) -> Mat {
    let a = mat(d, v);
    let r = a.dot(&linalg::dagger(&a)) + &linalg::identity(d).mapv(|z| z * 1e-3);
    let tr = r.diag().sum();
    r.mapv(|z| z / tr)
}

fn hermitian(d: usize, v: &[(f64, f64)]) -> Mat {
    linalg::hermitian_part(&mat(d, v))
}

fn entries(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n)
}

fn max_abs(a: &Mat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_is_associative(d1 in 1..4usize, d2 in 1..4usize, d3 in 1..4usize, v in entries(9)) {
        let op = |d: usize, shift: usize| Operator::local(mat(d, &v[shift..])).unwrap();
        let (a, b, c) = (op(d1, 0), op(d2, 1), op(d3, 2));
        let left = linalg::tensor(&linalg::tensor(&a, &b).unwrap(), &c).unwrap();
        let right = linalg::tensor(&a, &linalg::tensor(&b, &c).unwrap()).unwrap();
        // complex products are not associative in floating point
        let scale = max_abs(&left.data).max(1.0);
        prop_assert!(max_abs(&(&left.data - &right.data)) <= 1e-15 * scale);
        prop_assert_eq!(left.layout.factors(), &[d1, d2, d3][..]);
    }

    #[test]
    fn trace_distance_is_a_metric(d in 1..5usize, v in entries(16), w in entries(16)) {
        let (a, b) = (density(d, &v), density(d, &w));
        let ab = linalg::trace_distance_mat(&a, &b);
        prop_assert!((ab - linalg::trace_distance_mat(&b, &a)).abs() < 1e-12);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&ab));
        prop_assert!(linalg::trace_distance_mat(&a, &a) < 1e-12);
    }

    #[test]
    fn partial_trace_matches_index_sum(v in entries(36)) {
        let layout = HilbertLayout::new(vec![2, 3]).unwrap();
        let rho = DensityMatrix::new(layout, density(6, &v)).unwrap();
        let a = linalg::partial_trace(&rho, &[0]).unwrap();
        let b = linalg::partial_trace(&rho, &[1]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let s: C64 = (0..3).map(|k| rho.data[[3 * i + k, 3 * j + k]]).sum();
                prop_assert!((a.data[[i, j]] - s).norm() < 1e-14);
            }
        }
        for k in 0..3 {
            for l in 0..3 {
                let s: C64 = (0..2).map(|i| rho.data[[3 * i + k, 3 * i + l]]).sum();
                prop_assert!((b.data[[k, l]] - s).norm() < 1e-14);
            }
        }
        prop_assert!((a.trace() - rho.trace()).norm() < 1e-12);
    }

    #[test]
    fn partial_trace_of_product(v in entries(4), w in entries(9)) {
        let ra = DensityMatrix::new(HilbertLayout::new(vec![2]).unwrap(), density(2, &v)).unwrap();
        let rb = DensityMatrix::new(HilbertLayout::new(vec![3]).unwrap(), density(3, &w)).unwrap();
        let prod = linalg::tensor_states(&ra, &rb).unwrap();
        let back = linalg::partial_trace(&prod, &[0]).unwrap();
        prop_assert!(max_abs(&(&back.data - &ra.data)) < 1e-13);
    }

    #[test]
    fn unitary_steps_compose(d in 2..5usize, v in entries(16), w in entries(16), dt in 0.01..0.5f64, n in 1..6usize) {
        let layout = HilbertLayout::new(vec![d]).unwrap();
        let h = Operator::new(layout.clone(), hermitian(d, &v)).unwrap();
        let rho = DensityMatrix::new(layout, density(d, &w)).unwrap();
        let mut stepped = rho.clone();
        for _ in 0..n {
            stepped = linalg::herm_expm_action(&h, dt, &stepped).unwrap();
        }
        let once = linalg::herm_expm_action(&h, n as f64 * dt, &rho).unwrap();
        prop_assert!(max_abs(&(&stepped.data - &once.data)) < 1e-9);
        let (s0, s1) = (linalg::eigvalsh(&rho.data), linalg::eigvalsh(&once.data));
        for (x, y) in s0.iter().zip(s1.iter()) {
            prop_assert!((x - y).abs() < 1e-10, "{} vs {}", x, y);
        }
        let e0 = h.expect(&rho).unwrap().re;
        let e1 = h.expect(&once).unwrap().re;
        prop_assert!((e1 - e0).abs() < 1e-10, "{} vs {}", e1, e0);
    }

    #[test]
    fn coherent_number_expectation(re in -1.0..1.0f64, im in -1.0..1.0f64) {
        let alpha = C64::new(re, im);
        let rho = linalg::coherent_state(alpha, 30).unwrap();
        let n = linalg::trace_product(&linalg::number(30), &rho.data).re;
        prop_assert!((n - alpha.norm_sqr()).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn eigensystem_matches_dense_solver(omega in 0.05..5.0f64, rabi in 0.0..5.0f64) {
        let e = model::instantaneous_eigensystem(omega, rabi).unwrap();
        let h = e.h_s_direct();
        let w = linalg::eigvalsh(&h);
        prop_assert!((w[0] + 0.5 * e.epsilon).abs() < 1e-12);
        prop_assert!((w[1] - 0.5 * e.epsilon).abs() < 1e-12);
        prop_assert!(max_abs(&(&e.h_s() - &h)) < 1e-12);
        let sz = e.sigma_z();
        prop_assert!(max_abs(&(sz.dot(&sz) - linalg::identity(2))) < 1e-12);
        prop_assert!(sz.diag().sum().norm() < 1e-12);
        prop_assert!(e.ground[0] >= 0.0);
        let hv = h.dot(&model::ket(e.excited));
        let ev = model::ket(e.excited).mapv(|z| z * (0.5 * e.epsilon));
        prop_assert!(hv.iter().zip(ev.iter()).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn generators_annihilate_the_trace(n in 0.0..2.0f64, gamma in 0.0..3.0f64, beta in 0.1..10.0f64, v in entries(64)) {
        let cfg = EngineConfig::preset("fig2").unwrap();
        let layout = HilbertLayout::new(vec![2, 4]).unwrap();
        let rho = density(8, &v);
        let bath = model::ThermalBathParams { n, gamma, label: model::BathLabel::Hot };
        let eig = cfg.drive().eigensystem(3.0);
        let th = model::thermal_liouvillian(&bath, &eig, layout.clone(), None);
        let mut p = cfg.dephasing;
        p.beta = beta;
        let osc = model::osc_liouvillian(&p, layout, 1);
        for l in [th, osc] {
            prop_assert!(l.apply(&rho).diag().sum().norm() < 1e-10);
        }
    }

    #[test]
    fn thermalized_density_is_nonnegative(w in -60.0..60.0f64, beta in 0.01..20.0f64, g in 0.0..3.0f64, width in 0.1..10.0f64, w0 in 0.5..30.0f64) {
        let mut p = DephasingBathParams::zero_temperature(g, width, w0);
        let cold = p;
        p.beta = beta;
        let jb = model::thermalized_sd(w, &p);
        prop_assert!(jb >= 0.0);
        let odd_b = jb - model::thermalized_sd(-w, &p);
        let odd = model::lorentzian_sd(w, &cold) - model::lorentzian_sd(-w, &cold);
        prop_assert!((odd_b - odd).abs() <= 1e-12 * (1.0 + jb.abs()));
    }

    #[test]
    fn gap_is_piecewise_monotone(d in prop::array::uniform4(1..96u32), u in 0.0..1.0f64) {
        let dur = StrokeDurations::from_array(d.map(|k| k as f64 / 32.0)).unwrap();
        let mut cfg = EngineConfig::paper_baseline();
        cfg.strokes = dur;
        let drive = cfg.drive();
        let b = dur.boundaries();
        let eps = |t: f64| drive.eigensystem(t).epsilon;
        let (eh, ec) = (drive.epsilon_hot(), drive.epsilon_cold());
        // a point and a later point inside each stroke
        for (i, want) in [(0usize, 1.0), (1, 0.0), (2, -1.0), (3, 0.0)] {
            let (lo, hi) = (b[i], b[i + 1]);
            let t1 = lo + u * (hi - lo) * 0.5;
            let t2 = t1 + 0.5 * (hi - lo);
            let diff = eps(t2) - eps(t1);
            prop_assert!(diff * want >= 0.0 && (want != 0.0 || diff.abs() < 1e-15));
        }
        for &t in &b[1..4] {
            prop_assert!((eps(t - 1e-9) - eps(t)).abs() < 1e-6);
        }
        prop_assert!((eps(0.5 * (b[1] + b[2])) - eh).abs() < 1e-14 && (eps(0.5 * (b[3] + b[4])) - ec).abs() < 1e-14);
    }

    #[test]
    fn config_text_round_trips(g in 0.0..100.0f64, width in 0.5..50.0f64, w0 in 1.0..100.0f64, nh in 0.0..2.0f64, d in prop::array::uniform4(1..64u32)) {
        let mut cfg = EngineConfig::paper_baseline();
        cfg.dephasing = DephasingBathParams::zero_temperature(g, width, w0);
        cfg.hot.n = nh;
        cfg.strokes = StrokeDurations::from_array(d.map(|k| k as f64 / 32.0)).unwrap();
        // the canonical text pins the resolved numerics, so compare at that level
        let text = cfg.canonical_text();
        let back = EngineConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(back.canonical_text(), text);
        prop_assert_eq!(back.hash(), cfg.hash());
        prop_assert_eq!(back.dephasing, cfg.dephasing);
        prop_assert_eq!(back.strokes, cfg.strokes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn constant_power_family_keeps_the_rate(gbar in 1.0..200.0f64, wbar in 1.0..2000.0f64, frac in 0.001..1.0f64) {
        let (_, gamma0) = analysis::scaling_constant_power(gbar, wbar, gbar).unwrap();
        let g = frac * gamma0;
        let (w0, g0) = analysis::scaling_constant_power(gbar, wbar, g).unwrap();
        prop_assert_eq!(g0, gamma0);
        let r = analysis::effective_dephasing_rate(7.0, gbar, wbar, f64::INFINITY);
        let r2 = analysis::effective_dephasing_rate(7.0, g, w0, f64::INFINITY);
        prop_assert!((r2 / r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_efficiency_scaling_multiplies_the_rate(k in 0..4i32, coupling in 1.0..300.0f64) {
        // durations must stay on the integration grid, so lambda is dyadic
        let lambda = 2f64.powi(k);
        let mut base = EngineConfig::preset("appendixD-lite").unwrap();
        base.dephasing.coupling = coupling;
        let c = analysis::scaling_constant_efficiency(&base, lambda).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let r0 = analysis::effective_rate(&base.dephasing);
        let r = analysis::effective_rate(&c.dephasing);
        prop_assert!((r / (lambda * r0) - 1.0).abs() < 1e-9);
        prop_assert!((analysis::gamma0_of(&c.dephasing) / analysis::gamma0_of(&base.dephasing) - 1.0).abs() < 1e-12);
        prop_assert!((c.strokes.cycle() * lambda / base.strokes.cycle() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quasistatic_first_law_and_otto_bound(ec in 0.1..2.0f64, de in 0.0..2.0f64, xc in 0.0..3.0f64, xh in 0.0..3.0f64) {
        let q = analysis::quasistatic(ec, ec + de, xc, xh);
        prop_assert!((q.w_ext - (q.q_h + q.q_c)).abs() < 1e-14);
        if q.w_ext > 0.0 {
            prop_assert!(q.eta <= 1.0 - ec / (ec + de) + 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn symmetric_chain_spectrum(a in 1.0..20.0f64, width in 0.5..5.0f64, w0 in 5.0..50.0f64, n in 2..12usize) {
        let p = DephasingBathParams::zero_temperature(1.0, width, w0);
        let j = |w: f64| model::lorentzian_sd(w, &p);
        let c = tedopa::chain_coefficients(&j, w0, a, n, width).unwrap();
        prop_assert_eq!(c.omega.len(), n);
        prop_assert_eq!(c.t.len(), n - 1);
        prop_assert!(c.t.iter().all(|&t| t > 0.0));
        prop_assert!(c.max_frequency_deviation() <= 1e-8 * w0);
        for e in c.jacobi_spectrum() {
            prop_assert!(e >= w0 - a - 1e-9 && e <= w0 + a + 1e-9);
        }
    }
}
