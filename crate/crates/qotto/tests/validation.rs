//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! per criterion and exits nonzero if any failed.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test validation -- 1 3`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64 as C64;
use qotto::analysis;
use qotto::cycle::{self, CycleOptions};
use qotto::model::{self, DephasingBathParams};
use qotto::optimizer::{self, OptimizationSpec, Target};
use qotto::propagate::{self, Engine};
use qotto::tedopa;
use qotto::EngineConfig;

/// Collects named sub-checks of one criterion.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if !ok {
            self.failed.push(what.clone());
        }
        self.notes.push(what);
    }
}

type Criterion = fn(&mut Checks);

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn coth(x: f64) -> f64 {
    1.0 / x.tanh()
}

/// 8 Gamma^2 gamma / (gamma^2 + 4 omega_0^2) written out independently of the library.
fn rate_oracle(coupling: f64, width: f64, omega0: f64) -> f64 {
    8.0 * coupling.powi(2) * width / (width.powi(2) + 4.0 * omega0.powi(2))
}

fn closed_forms(c: &mut Checks) {
    let (g, w, w0) = (256.0, 128.0, 1024.0);
    let rate = analysis::effective_dephasing_rate(g, w, w0, f64::INFINITY);
    c.check((rate - 15.94).abs() <= 0.01, format!("Gamma_eff = {rate:.5}"));

    let (_, gamma0) = analysis::scaling_constant_power(w, w0, w).expect("family");
    let p = DephasingBathParams::zero_temperature(g, w, w0);
    c.check(gamma0 == 32896.0 && analysis::gamma0_of(&p) == 32896.0, format!("gamma_0 = {gamma0}"));

    let e_dec = analysis::decoupling_energy_lorentzian(g, w, w0);
    let via_rate = w0 / w * rate;
    c.check(rel(e_dec, via_rate) < 1e-9, format!("dE_dec = {e_dec:.6} vs (omega0/gamma) Gamma_eff = {via_rate:.6}"));
    let sd = |x| model::lorentzian_sd(x, &p);
    let quad = analysis::decoupling_energy(&sd, w0, w).expect("quadrature").value;
    c.check(rel(quad, e_dec) < 1e-6, format!("dE_dec by quadrature {quad:.6}"));

    let alpha = analysis::steady_displacement(g, w, w0);
    let formula = C64::new(2.0 * w0, w) * (2.0 * g) / (4.0 * w0 * w0 + w * w);
    c.check((alpha - formula).norm() < 1e-9, format!("alpha = {:.6}{:+.6}i", alpha.re, alpha.im));
    c.check(
        (alpha.re - 0.24903).abs() < 1e-5 && (alpha.im - 0.015564).abs() < 1e-6,
        "alpha matches 0.24903 + 0.015564i",
    );
    let numeric = analysis::steady_displacement_numeric(&p, 20, -1.0).expect("steady state");
    c.check((numeric - alpha).norm() < 1e-6, format!("numeric alpha differs by {:.1e}", (numeric - alpha).norm()));
    let res = analysis::steady_state_residual(&p, 20, -1.0).expect("residual");
    c.check(res < 1e-6, format!("steady-state residual {res:.1e}"));
}

fn decoherence(c: &mut Checks) {
    for (g, w, w0) in [(0.5, 2.0, 10.0), (1.0, 1.0, 10.0), (0.5, 4.0, 40.0)] {
        let p = DephasingBathParams::zero_temperature(g, w, w0);
        let slope = analysis::decoherence_slope(&p).expect("slope");
        let want = -rate_oracle(g, w, w0);
        c.check(rel(slope, want) < 0.02, format!("({g},{w},{w0}): slope {slope:.5} vs {want:.5}"));
    }
    let mut p = DephasingBathParams::zero_temperature(0.5, 2.0, 10.0);
    p.beta = 0.2;
    let slope = analysis::decoherence_slope(&p).expect("slope");
    let want = -rate_oracle(0.5, 2.0, 10.0) * coth(0.5 * p.beta * p.omega0);
    c.check(rel(slope, want) < 0.02, format!("beta=0.2: slope {slope:.5} vs {want:.5}"));
}

fn quasistatic(c: &mut Checks) {
    let cfg = EngineConfig::preset("quasistatic-check").unwrap();
    let mut eng = Engine::new(&cfg).unwrap();
    let sc = cycle::run_to_steady_cycle(&mut eng, None, CycleOptions::default()).expect("steady cycle");
    let r = &sc.record;
    c.check((r.sys.eta - 0.106).abs() <= 0.002, format!("eta_sys = {:.5}", r.sys.eta));
    // work from the two fixed-point populations: (eps_h - eps_c)/2 (tanh x_c - tanh x_h)
    let (eh, ec) = (1.25f64.sqrt(), 1.0);
    let (nh, nc) = (cfg.hot.n, cfg.cold.n);
    let w_oracle = 0.5 * (eh - ec) * (1.0 / (2.0 * nc + 1.0) - 1.0 / (2.0 * nh + 1.0));
    c.check((w_oracle - 0.0235).abs() < 5e-5, format!("oracle W_ext = {w_oracle:.5}"));
    c.check(rel(r.sys.w_ext, w_oracle) < 0.02, format!("W_ext = {:.6}", r.sys.w_ext));
}

fn ledger_and_integrator(c: &mut Checks) {
    let cfg = EngineConfig::preset("fig2").unwrap();
    let mut eng = Engine::new(&cfg).unwrap();
    let sc = cycle::run_to_steady_cycle(&mut eng, None, CycleOptions::default()).expect("steady cycle");
    let scale =
        sc.ledger.samples.iter().map(|s| s.work.abs() + s.hot.abs() + s.cold.abs() + s.osc.abs()).fold(0.0, f64::max);
    let worst = sc.ledger.samples.iter().map(|s| s.residual.abs()).fold(sc.ledger.max_residual, f64::max);
    c.check(worst <= 1e-6 * scale, format!("ledger residual {worst:.1e} (scale {scale:.3})"));
    let tr = (sc.end.rho.trace() - 1.0).abs();
    c.check(tr < 1e-9, format!("trace error after {} cycles {tr:.1e}", sc.cycles));

    let dt0 = cfg.resolved_dt();
    let mut ends = Vec::new();
    let mut worst_trace: f64 = 0.0;
    for k in 0..3 {
        let mut c2 = cfg;
        c2.numerics.dt = Some(dt0 / 2f64.powi(k));
        let mut eng = Engine::new(&c2).unwrap();
        let mut ps = eng.initial_state();
        let mut obs = |_: &propagate::Sample, rho: &propagate::BlockState, _: &model::Eigensystem| {
            worst_trace = worst_trace.max((rho.trace() - 1.0).abs());
        };
        let l = propagate::evolve_horizon(&mut eng, &mut ps, cfg.strokes.cycle(), &mut obs).expect("evolution");
        let s = l.samples.last().copied().expect("samples");
        ends.push([s.h_s, s.h_int, s.e_deph]);
    }
    for (i, name) in ["H_S", "H_int", "E_deph"].iter().enumerate() {
        let r = (ends[0][i] - ends[1][i]) / (ends[1][i] - ends[2][i]);
        c.check((3.5..=4.5).contains(&r), format!("dt-halving ratio {name} {r:.4}"));
    }
    c.check(worst_trace < 1e-9, format!("max trace error over samples {worst_trace:.1e}"));
}

fn dissipated_heat(c: &mut Checks) {
    let cfg = EngineConfig::preset("paper-4.3").unwrap();
    let mut eng = Engine::new(&cfg).unwrap();
    let opts = CycleOptions { diagnostics: true, keep_states: false };
    let sc = cycle::run_to_steady_cycle(&mut eng, None, opts).expect("steady cycle");
    let r = &sc.record;
    let p = cfg.dephasing;
    let (nh, nc) = (cfg.hot.n, cfg.cold.n);
    let pre = 2.0 * p.omega0 * cfg.hot.gamma * cfg.strokes.tau_h / p.width * rate_oracle(p.coupling, p.width, p.omega0);
    let lower = pre * (nh + nc / (2.0 * nc + 1.0));
    let upper = pre * (nh + nh / (2.0 * nh + 1.0));
    let lib = analysis::dissipated_heat_bounds(
        p.coupling,
        p.width,
        p.omega0,
        p.beta,
        cfg.hot.gamma,
        cfg.strokes.tau_h,
        nh,
        nc,
    );
    c.check(rel(lib.lower, lower) < 1e-12 && rel(lib.upper, upper) < 1e-12, format!("bounds [{lower:.2}, {upper:.2}]"));
    let q = r.q_h_diss;
    c.check(lower <= q && q <= upper, format!("dQ_h_diss = {q:.3}"));
    c.check(0.8 * lower <= q && q <= 1.25 * upper, "within the widened band");
    let mut f_min: f64 = 1.0;
    let mut asym: f64 = 0.0;
    for d in &r.diagnostics {
        if let (Some(e), Some(g)) = (d.excited, d.ground) {
            f_min = f_min.min(e.fidelity).min(g.fidelity);
            asym = asym.max((e.alpha + g.alpha).norm() / e.alpha.norm());
        }
    }
    c.check(!r.diagnostics.is_empty() && f_min > 0.95, format!("min fidelity {f_min:.4}"));
    c.check(asym < 0.1, format!("max |a_e + a_g|/|a_e| {asym:.4}"));
}

fn power_boost(c: &mut Checks) {
    let cfg = EngineConfig::preset("paper-4.3-lite").unwrap();
    let spec = OptimizationSpec::new(Target::Tot, cfg.strokes);
    let strong = cfg.dephasing.coupling;
    let moderate = strong / 4.0;
    let rows = optimizer::sweep_dephasing(&cfg, &[0.0, moderate, strong], &spec);
    for r in &rows {
        c.check(
            r.status == "ok",
            format!(
                "Gamma_eff {:.3}: P_tot {:.6} tau {} eta_sys {:.4} eta_tot {:.4} [{}]",
                r.gamma_eff, r.p_tot, r.tau_cycle, r.eta_sys, r.eta_tot, r.status
            ),
        );
    }
    let find = |g: f64| rows.iter().find(|r| r.coupling == g).expect("row");
    let (base, mid, top) = (find(0.0), find(moderate), find(strong));
    c.check(top.p_tot > base.p_tot, "strong dephasing beats the baseline power");
    c.check(top.tau_cycle < mid.tau_cycle, "strong dephasing runs a shorter cycle than moderate");
    c.check(rows.iter().all(|r| (0.09..=0.112).contains(&r.eta_sys)), "eta_sys within [0.09, 0.112]");
    c.check(top.eta_tot < base.eta_tot, "eta_tot drops under strong dephasing");
}

fn efficiency_recovery(c: &mut Checks) {
    let cfg = EngineConfig::preset("appendixD-lite").unwrap();
    let gamma0 = analysis::gamma0_of(&cfg.dephasing);
    let widths = [8.0, 64.0, 512.0, 1536.0, 2048.0, cfg.dephasing.width];
    let rows = optimizer::sweep_gamma_to_gamma0(&cfg, &widths);
    for r in &rows {
        c.check(
            r.status == "ok",
            format!(
                "gamma {:.4}: P_tot {:.6} dQ_h {:.4} eta_tot {:.4} [{}]",
                r.gamma, r.p_tot, r.q_h_diss, r.eta_tot, r.status
            ),
        );
    }
    c.check(
        (widths[5] - (gamma0 - 1.0 / 256.0)).abs() < 1e-9,
        format!("sweep ends at gamma_0 - 2^-8 = {:.6}", widths[5]),
    );
    let p: Vec<f64> = rows.iter().map(|r| r.p_tot).collect();
    let (lo, hi) = p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let spread = (hi - lo) / hi.abs();
    c.check(spread < 0.1, format!("P_tot spread {:.1}%", 100.0 * spread));
    c.check(rows.windows(2).all(|w| w[1].q_h_diss < w[0].q_h_diss), "dQ_h_diss strictly decreasing");
    let last = rows.last().expect("rows").eta_tot;
    c.check(rel(last, 0.1) <= 0.15, format!("final eta_tot {last:.4}"));
}

fn lambda_scaling(c: &mut Checks) {
    let cfg = EngineConfig::preset("appendixD-lite").unwrap();
    let rows = optimizer::lambda_scan(&cfg, &[1.0, 2.0, 4.0]);
    for r in &rows {
        c.check(
            r.status == "ok",
            format!(
                "lambda {}: P_tot {:.6} W_ext {:.6} distance {:.4} [{}]",
                r.lambda, r.p_tot, r.w_ext_tot, r.ansatz_distance, r.status
            ),
        );
    }
    let base = &rows[0];
    for r in &rows[1..] {
        let ratio = r.p_tot / base.p_tot;
        c.check(rel(ratio, r.lambda) < 0.1, format!("P({})/P(1) = {ratio:.3}", r.lambda));
        c.check(
            rel(r.w_ext_tot, base.w_ext_tot) < 0.05,
            format!("W_ext({})/W_ext(1) = {:.4}", r.lambda, r.w_ext_tot / base.w_ext_tot),
        );
    }
    c.check(rows.windows(2).all(|w| w[1].ansatz_distance >= w[0].ansatz_distance), "Ansatz distance non-decreasing");
}

fn tedopa_cross_check(c: &mut Checks) {
    let cfg = EngineConfig::preset("fig2").unwrap();
    let cmp = tedopa::compare_dampf_tedopa(&cfg, &[4.0, 8.0, 16.0]).expect("comparison");
    for r in &cmp.rows {
        c.check(
            r.omega_deviation <= 1e-8 * cfg.dephasing.omega0,
            format!(
                "a={} N={}: dH_int {:.2e} dH_B {:.2e} plateau {:.5} omega dev {:.1e}",
                r.a, r.n_modes, r.max_dh_int, r.max_dh_bath, r.plateau_h_int, r.omega_deviation
            ),
        );
    }
    let rows = &cmp.rows;
    c.check(rows.windows(2).all(|w| w[1].max_dh_int < w[0].max_dh_int), "H_int discrepancy strictly decreasing");
    c.check(
        rows.windows(2).all(|w| w[1].max_dh_bath < w[0].max_dh_bath),
        "bath-energy discrepancy strictly decreasing",
    );
    let p = cfg.dephasing;
    let target = -8.0 * p.coupling.powi(2) * p.omega0 / (4.0 * p.omega0.powi(2) + p.width.powi(2));
    let plateau = rows.last().expect("rows").plateau_h_int;
    c.check(rel(plateau, target) < 0.1, format!("largest-a plateau {plateau:.5} vs {target:.5}"));
}

const CRITERIA: [(&str, Criterion); 9] = [
    ("closed-form oracles", closed_forms),
    ("decoherence-function slopes", decoherence),
    ("quasi-static reproduction", quasistatic),
    ("ledger closure and integrator order", ledger_and_integrator),
    ("dissipated-heat containment", dissipated_heat),
    ("power boost under strong dephasing", power_boost),
    ("constant-power efficiency recovery", efficiency_recovery),
    ("lambda scaling", lambda_scaling),
    ("TEDOPA cross-validation", tedopa_cross_check),
];

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut all_ok = true;
    for (i, (name, run)) in CRITERIA.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let mut checks = Checks::default();
        let panicked = catch_unwind(AssertUnwindSafe(|| run(&mut checks))).err();
        let secs = t0.elapsed().as_secs_f64();
        let ok = panicked.is_none() && checks.failed.is_empty();
        all_ok &= ok;
        for note in &checks.notes {
            eprintln!("    [{n}] {note}");
        }
        let why = match (&panicked, checks.failed.first()) {
            (Some(p), _) => format!(" - aborted: {}", panic_text(p.as_ref())),
            (None, Some(f)) => format!(" - failed: {f}"),
            _ => String::new(),
        };
        println!("criterion {n} ({name}): {} in {secs:.1}s{why}", if ok { "PASS" } else { "FAIL" });
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn panic_text(p: &(dyn std::any::Any + Send)) -> String {
    p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
}
