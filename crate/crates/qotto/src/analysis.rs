//! Closed-form results and the numerical oracles that check them.

use ndarray::Array1;
use ndarray_linalg::Solve;
use serde::Serialize;

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::linalg::{self, coherent_ket, identity, kron, outer, Mat, C64, ZERO};
use crate::model::{self, DephasingBathParams, Eigensystem, Stroke};
use crate::propagate::{self, BlockState, EnergyLedger, Engine, Environment, PropagatorState};
use crate::quadrature::{require, Estimate, Integrator};

/// Gamma_eff = 8 Gamma^2 gamma / (gamma^2 + 4 omega_0^2), times coth(beta omega_0 / 2).
pub fn effective_dephasing_rate(coupling: f64, width: f64, omega0: f64, beta: f64) -> f64 {
    8.0 * coupling * coupling * width / (width * width + 4.0 * omega0 * omega0) * model::coth_half(beta, omega0)
}

pub fn effective_rate(p: &DephasingBathParams) -> f64 {
    effective_dephasing_rate(p.coupling, p.width, p.omega0, p.beta)
}

/// Stationary displacement of the mode conditioned on the ground state.
pub fn steady_displacement(coupling: f64, width: f64, omega0: f64) -> C64 {
    C64::new(4.0 * omega0, 2.0 * width) * coupling / (4.0 * omega0 * omega0 + width * width)
}

/// Decoupling energy of the Lorentzian, 8 Gamma^2 omega_0 / (4 omega_0^2 + gamma^2).
pub fn decoupling_energy_lorentzian(coupling: f64, width: f64, omega0: f64) -> f64 {
    8.0 * coupling * coupling * omega0 / (4.0 * omega0 * omega0 + width * width)
}

/// Spectral-density family used by the quadrature oracles.
pub type SpectralDensity<'a> = &'a dyn Fn(f64) -> f64;

fn cutoff(omega0: f64, width: f64) -> f64 {
    omega0.abs() + 400.0 * width
}

/// Gamma(t) = -(4/pi) int_R J(w) (1 - cos wt) / w^2 dw, folded onto [0, inf).
///
/// The finite part is integrated in panels of half an oscillation period; the
/// tail beyond the cutoff uses the non-oscillatory part exactly and bounds the
/// oscillatory remainder by integration by parts.
pub fn decoherence_function_with(t: f64, sd: SpectralDensity, omega0: f64, width: f64) -> Result<Estimate> {
    if t == 0.0 {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let q = Integrator::new(1e-11, 1e-16);
    let fold = |w: f64| sd(w) + sd(-w);
    let w_max = cutoff(omega0, width);
    let kernel = |w: f64| {
        if w == 0.0 {
            0.5 * t * t * fold(0.0)
        } else {
            let s = (0.5 * w * t).sin();
            fold(w) * 2.0 * s * s / (w * w)
        }
    };
    let panels = ((w_max * t / std::f64::consts::PI).ceil() as usize).clamp(64, 2_000_000);
    let body = q.integrate_panels(&kernel, 0.0, w_max, panels);
    let smooth_tail = q.integrate_tail(&|w| fold(w) / (w * w), w_max);
    let osc_bound = 2.0 * fold(w_max) / (w_max * w_max * t);
    let total = body + smooth_tail + Estimate { value: 0.0, error: osc_bound };
    let scale = -4.0 / std::f64::consts::PI;
    let est = Estimate { value: scale * total.value, error: scale.abs() * total.error };
    require(est, 1e-6 * est.value.abs().max(1e-12))
}

pub fn decoherence_function(t: f64, p: &DephasingBathParams) -> Result<Estimate> {
    let sd = |w| model::thermalized_sd(w, p);
    decoherence_function_with(t, &sd, p.omega0, p.width)
}

/// Large-time slope of the decoherence function from two late times.
pub fn decoherence_slope(p: &DephasingBathParams) -> Result<f64> {
    let t1 = 20.0 / p.width;
    let t2 = 40.0 / p.width;
    let a = decoherence_function(t1, p)?.value;
    let b = decoherence_function(t2, p)?.value;
    Ok((b - a) / (t2 - t1))
}

/// (2/pi) PV int_R J(w)/w dw = (2/pi) int_0^inf (J(w) - J(-w))/w dw.
pub fn decoupling_energy(sd: SpectralDensity, omega0: f64, width: f64) -> Result<Estimate> {
    let q = Integrator::new(1e-12, 1e-16);
    let h = 1e-6 * width;
    let odd = |w: f64| {
        if w < h {
            // derivative of the odd part at zero
            (sd(h) - sd(-h)) / h
        } else {
            (sd(w) - sd(-w)) / w
        }
    };
    let w_max = cutoff(omega0, width);
    let panels = ((w_max / width).ceil() as usize).clamp(16, 100_000);
    let body = q.integrate_panels(&odd, 0.0, w_max, panels);
    let tail = q.integrate_tail(&odd, w_max);
    let s = 2.0 / std::f64::consts::PI;
    let e = body + tail;
    require(Estimate { value: s * e.value, error: s * e.error }, 1e-8 * e.value.abs().max(1e-12))
}

/// |(2/pi) int_0^inf (J(w) - J(-w)) cos(w tau) / w dw|.
pub fn recoupling_bound(sd: SpectralDensity, omega0: f64, width: f64, tau: f64) -> Result<Estimate> {
    let q = Integrator::new(1e-12, 1e-16);
    let h = 1e-6 * width;
    let odd = |w: f64| if w < h { (sd(h) - sd(-h)) / h } else { (sd(w) - sd(-w)) / w };
    let w_max = cutoff(omega0, width);
    let per = if tau > 0.0 { (w_max * tau / std::f64::consts::PI).ceil() as usize } else { 1 };
    let panels = per.max((w_max / width).ceil() as usize).clamp(16, 2_000_000);
    let body = q.integrate_panels(&|w| odd(w) * (w * tau).cos(), 0.0, w_max, panels);
    // |int_W^inf g cos(w tau)| <= 2 |g(W)| / tau for |g| decreasing past the cutoff
    let tail = if tau > 0.0 {
        2.0 * odd(w_max).abs() / tau
    } else {
        let t = q.integrate_tail(&|w| odd(w).abs(), w_max);
        t.value + t.error
    };
    let s = 2.0 / std::f64::consts::PI;
    let scale = s * q
        .integrate_panels(&|w| odd(w).abs(), 0.0, w_max, (w_max / width).ceil().clamp(16.0, 100_000.0) as usize)
        .value;
    let e = Estimate { value: s * body.value.abs(), error: s * (body.error + tail) };
    require(e, 1e-6 * e.value.abs().max(scale).max(1e-300))
}

/// Steady state of the mode with the qubit frozen in the sz eigenstate `s`
/// (+1 excited, -1 ground), from the null vector of the mode generator.
pub fn conditional_mode_steady_state(p: &DephasingBathParams, n_max: usize, s: f64) -> Result<Mat> {
    let env = Environment::oscillator(p, n_max);
    let h = &env.h_env + &env.x.mapv(|z| z * (s * p.coupling));
    let mut gen = hamiltonian_superop(&h);
    if let Some(d) = &env.damping {
        gen = gen + d;
    }
    null_state(&gen, n_max + 1)
}

/// <b> in the conditional steady state, solved numerically.
pub fn steady_displacement_numeric(p: &DephasingBathParams, n_max: usize, s: f64) -> Result<C64> {
    let rho = conditional_mode_steady_state(p, n_max, s)?;
    Ok(linalg::trace_product(&linalg::annihilation(n_max), &rho))
}

/// Norm of the mode generator applied to the coherent Ansatz |alpha_x><alpha_x|,
/// relative to the norm of the conditional Hamiltonian.
pub fn steady_state_residual(p: &DephasingBathParams, n_max: usize, s: f64) -> Result<f64> {
    let alpha = steady_displacement(p.coupling, p.width, p.omega0) * (-s);
    let ket = coherent_ket(alpha, n_max)?;
    let rho = outer(&ket, &ket);
    let env = Environment::oscillator(p, n_max);
    let h = &env.h_env + &env.x.mapv(|z| z * (s * p.coupling));
    let comm = h.dot(&rho) - rho.dot(&h);
    let mut r = comm.mapv(|z| z * C64::new(0.0, -1.0));
    let lv = model::osc_liouvillian(p, linalg::HilbertLayout::new(vec![n_max + 1])?, 0);
    r = r + lv.apply(&rho);
    Ok(fro(&r) / fro(&h))
}

fn fro(a: &Mat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// -i [H, .] in row-major vectorisation.
fn hamiltonian_superop(h: &Mat) -> Mat {
    let d = h.nrows();
    let id = identity(d);
    (kron(h, &id) - kron(&id, &h.t().to_owned())).mapv(|z| z * C64::new(0.0, -1.0))
}

/// Unit-trace null vector of a generator on d x d matrices.
fn null_state(gen: &Mat, d: usize) -> Result<Mat> {
    let n = d * d;
    let mut a = gen.clone();
    let mut rhs = Array1::<C64>::zeros(n);
    // replace the first equation by the trace condition
    for j in 0..n {
        a[[0, j]] = ZERO;
    }
    for i in 0..d {
        a[[0, i * d + i]] = C64::from(1.0);
    }
    rhs[0] = C64::from(1.0);
    let v = a.solve_into(rhs).map_err(|e| Error::Numerics(format!("steady-state solve failed: {e}")))?;
    let rho = Mat::from_shape_vec((d, d), v.to_vec()).expect("shape");
    Ok(linalg::hermitian_part(&rho))
}

/// Steady state of the full qubit-mode generator with H_D frozen at the
/// stroke's Hamiltonian and that stroke's thermal channel on.
pub fn composite_steady_state(cfg: &EngineConfig, stroke: Stroke) -> Result<BlockState> {
    let b = cfg.strokes.boundaries();
    let t = 0.5 * (b[stroke.index()] + b[stroke.index() + 1]);
    let h = model::dampf_hamiltonian(t, cfg)?;
    let m = cfg.resolved_n_max() + 1;
    let mut gen = hamiltonian_superop(&h.data);
    let osc = model::build_liouvillian(model::Channel::Osc, cfg, t)?;
    for (rate, l) in &osc.jumps {
        gen = gen + model::dissipator_superop(&kron(&identity(2), l)).mapv(|z| z * *rate);
    }
    if stroke.is_thermal() {
        let ch = if stroke == Stroke::Hot { model::Channel::Hot } else { model::Channel::Cold };
        let th = model::build_liouvillian(ch, cfg, t)?;
        for (rate, l) in &th.jumps {
            gen = gen + model::dissipator_superop(&kron(l, &identity(m))).mapv(|z| z * *rate);
        }
    }
    Ok(BlockState::from_mat(&null_state(&gen, 2 * m)?))
}

/// Steady-state Ansatz p_e |e><e| (x) |-alpha><-alpha| + p_g |g><g| (x) |alpha><alpha|.
#[derive(Clone, Copy, Debug)]
pub struct AnsatzState {
    pub p_e: f64,
    pub alpha: C64,
    pub basis: Eigensystem,
}

impl AnsatzState {
    pub fn new(p_e: f64, alpha: C64, basis: Eigensystem) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_e) {
            return Err(Error::InvalidState(format!("excited population {p_e} outside [0, 1]")));
        }
        Ok(Self { p_e, alpha, basis })
    }

    pub fn materialize(&self, n_max: usize) -> Result<BlockState> {
        let ke = coherent_ket(-self.alpha, n_max)?;
        let kg = coherent_ket(self.alpha, n_max)?;
        let re = outer(&ke, &ke).mapv(|z| z * self.p_e);
        let rg = outer(&kg, &kg).mapv(|z| z * (1.0 - self.p_e));
        let (e, g) = (self.basis.excited, self.basis.ground);
        let blk = |a: usize, b: usize| re.mapv(|z| z * e[a] * e[b]) + rg.mapv(|z| z * g[a] * g[b]);
        Ok(BlockState { blocks: [[blk(0, 0), blk(0, 1)], [blk(1, 0), blk(1, 1)]] })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Branch {
    pub population: f64,
    pub alpha: C64,
    pub fidelity: f64,
}

/// Conditional mode states in the instantaneous eigenbasis; index 0 is the
/// excited branch, 1 the ground branch. A branch with population below 1e-12
/// is undefined and reported as `None`.
pub fn conditional_oscillator_analysis(rho: &BlockState, basis: &Eigensystem) -> [Option<Branch>; 2] {
    let m = rho.dim_env();
    let b = linalg::annihilation(m - 1);
    let rot = basis.rotation();
    [0, 1].map(|x| {
        let blk = rho.eigenframe_block(&rot, x, x);
        let p = blk.diag().sum().re;
        if p < 1e-12 {
            return None;
        }
        let cond = blk.mapv(|z| z / p);
        let alpha = linalg::trace_product(&b, &cond);
        let (ket, _) = linalg::coherent_amplitudes(alpha, m - 1);
        let norm = ket.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let ket = ket.mapv(|z| z / norm);
        Some(Branch { population: p, alpha, fidelity: linalg::overlap(&ket, &cond) })
    })
}

/// Trace distance between a state and the Ansatz with its own excited
/// population and the configured displacement.
pub fn ansatz_trace_distance(rho: &BlockState, basis: &Eigensystem, alpha: C64) -> Result<f64> {
    let pe = basis.excited_population(&rho.qubit()).clamp(0.0, 1.0);
    let a = AnsatzState::new(pe, alpha, *basis)?;
    let n_max = rho.dim_env() - 1;
    let (_, top) = linalg::coherent_amplitudes(alpha, n_max);
    if top > linalg::COHERENT_TOP_TOL {
        return Err(Error::Cutoff { n_max, pop: top });
    }
    Ok(rho.trace_distance(&a.materialize(n_max)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HeatBounds {
    pub lower: f64,
    pub upper: f64,
    pub coupling: f64,
    pub width: f64,
    pub omega0: f64,
    pub beta: f64,
    pub gamma_th: f64,
    pub tau_th: f64,
}

/// Bounds on the heat a thermal stroke dissipates into the dephasing bath.
///
/// At zero temperature the prefactor (2 omega_0 gamma_th tau_th / gamma) Gamma_eff
/// multiplies n_th + p_e with p_e between the cold and hot fixed points. At
/// finite temperature the bound runs from 0 to the prefactor times (n_th + 1).
pub fn dissipated_heat_bounds(
    coupling: f64,
    width: f64,
    omega0: f64,
    beta: f64,
    gamma_th: f64,
    tau_th: f64,
    n_h: f64,
    n_c: f64,
) -> HeatBounds {
    let pre =
        2.0 * omega0 * gamma_th * tau_th / width * effective_dephasing_rate(coupling, width, omega0, f64::INFINITY);
    let (lower, upper) = if beta.is_infinite() {
        (pre * (n_h + n_c / (2.0 * n_c + 1.0)), pre * (n_h + n_h / (2.0 * n_h + 1.0)))
    } else {
        (0.0, pre * (n_h + 1.0))
    };
    HeatBounds { lower, upper, coupling, width, omega0, beta, gamma_th, tau_th }
}

/// (d<H_S>/dt, d<H_int>/dt) for the Ansatz under the thermal generator.
pub fn differential_flows(p_e: f64, alpha: C64, epsilon: f64, gamma_th: f64, n_th: f64, coupling: f64) -> (f64, f64) {
    let p_g = 1.0 - p_e;
    (epsilon * gamma_th * (p_g * n_th - p_e * (n_th + 1.0)), 4.0 * coupling * gamma_th * alpha.re * (n_th + p_e))
}

/// Decouple at the coupled steady state of the hot stroke, evolve the hot
/// stroke for tau_th without coupling, and return <H_int> with the original
/// coupling restored.
pub fn recoupling_energy_measured(cfg: &EngineConfig, tau_th: f64) -> Result<f64> {
    let start = composite_steady_state(cfg, Stroke::Hot)?;
    let mut free = cfg.dephasing;
    free.coupling = 0.0;
    let env = Environment::oscillator(&free, cfg.resolved_n_max());
    let mut engine = Engine::with_environment(cfg, env, cfg.resolved_dt())?;
    let eig = cfg.drive().eigensystem(cfg.strokes.tau_com);
    let mut ps = PropagatorState { rho: start, t: 0.0 };
    let mut ledger = EnergyLedger::new(0.0, usize::MAX);
    let n = (tau_th / engine.dt).round() as usize;
    for k in 0..n {
        engine.trotter_step(&mut ps, Stroke::Hot, k as f64 * engine.dt, &mut ledger);
    }
    propagate::check_state(&ps.rho, Stroke::Hot)?;
    Ok(engine.interaction_energy(&ps.rho, &eig, cfg.dephasing.coupling))
}

/// Quasi-static Otto cycle with explicit tanh arguments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuasiStatic {
    pub w_com: f64,
    pub w_exp: f64,
    pub q_h: f64,
    pub q_c: f64,
    pub w_ext: f64,
    pub eta: f64,
}

pub fn quasistatic(eps_c: f64, eps_h: f64, x_c: f64, x_h: f64) -> QuasiStatic {
    let (tc, th) = (x_c.tanh(), x_h.tanh());
    let d = eps_h - eps_c;
    let w_com = -0.5 * d * tc;
    let w_exp = 0.5 * d * th;
    let q_h = 0.5 * eps_h * (tc - th);
    let q_c = -0.5 * eps_c * (tc - th);
    let w_ext = -(w_com + w_exp);
    let eta = if w_ext > 0.0 { 1.0 - eps_c / eps_h } else { w_ext / q_h };
    QuasiStatic { w_com, w_exp, q_h, q_c, w_ext, eta }
}

/// tanh argument reproducing the bath fixed point: tanh x = 1 / (2n + 1).
pub fn polarization_argument(n: f64) -> f64 {
    (1.0 / (2.0 * n + 1.0)).atanh()
}

/// T_c / T_h implied by the photon numbers and gaps.
pub fn implied_temperature_ratio(cfg: &EngineConfig) -> f64 {
    let d = cfg.drive();
    cfg.cold.implied_temperature(d.epsilon_cold()) / cfg.hot.implied_temperature(d.epsilon_hot())
}

pub fn carnot_efficiency(tc_over_th: f64) -> f64 {
    1.0 - tc_over_th
}

pub fn curzon_ahlborn_efficiency(tc_over_th: f64) -> f64 {
    1.0 - tc_over_th.sqrt()
}

/// (omega_0(gamma), gamma_0) keeping Gamma_eff fixed along the family through
/// (gamma_bar, omega0_bar).
pub fn scaling_constant_power(gamma_bar: f64, omega0_bar: f64, gamma: f64) -> Result<(f64, f64)> {
    let gamma0 = (4.0 * omega0_bar * omega0_bar + gamma_bar * gamma_bar) / gamma_bar;
    if !(gamma > 0.0 && gamma <= gamma0 * (1.0 + 1e-15)) {
        return Err(Error::config(format!("gamma = {gamma} outside (0, gamma_0 = {gamma0}]")));
    }
    let w2 = (gamma0 * gamma - gamma * gamma).max(0.0);
    Ok((0.5 * w2.sqrt(), gamma0))
}

/// Critical width of the constant-rate family containing `p`.
pub fn gamma0_of(p: &DephasingBathParams) -> f64 {
    p.width + 4.0 * p.omega0 * p.omega0 / p.width
}

/// Durations / lambda, thermal rates * lambda, Gamma * sqrt(lambda) and the
/// offset from gamma_0 divided by lambda^2, which multiplies Gamma_eff by lambda.
pub fn scaling_constant_efficiency(base: &EngineConfig, lambda: f64) -> Result<EngineConfig> {
    if !(lambda >= 1.0) {
        return Err(Error::config(format!("lambda must be >= 1 (got {lambda})")));
    }
    let mut c = *base;
    let p = base.dephasing;
    let gamma0 = gamma0_of(&p);
    let dg = gamma0 - p.width;
    let dg2 = dg / (lambda * lambda);
    let w = gamma0 - dg2;
    c.dephasing.width = w;
    c.dephasing.omega0 = 0.5 * (w * dg2).sqrt();
    c.dephasing.coupling = p.coupling * lambda.sqrt();
    c.hot.gamma *= lambda;
    c.cold.gamma *= lambda;
    c.strokes = base.strokes.scaled(1.0 / lambda);
    c.numerics.dt = None;
    c.numerics.n_max = None;
    c.numerics.sample_stride = None;
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn paper_rate_and_displacement() {
        assert_relative_eq!(effective_dephasing_rate(256.0, 128.0, 1024.0, f64::INFINITY), 15.9377, epsilon = 1e-4);
        let a = steady_displacement(256.0, 128.0, 1024.0);
        assert_relative_eq!(a.re, 0.24903, epsilon = 1e-5);
        assert_relative_eq!(a.im, 0.015564, epsilon = 1e-6);
        assert_eq!(steady_displacement(0.0, 2.0, 10.0), ZERO);
    }

    #[test]
    fn decoherence_starts_at_zero_and_wiggles() {
        let p = DephasingBathParams::zero_temperature(0.5, 2.0, 10.0);
        assert_eq!(decoherence_function(0.0, &p).unwrap().value, 0.0);
        let rate = effective_rate(&p);
        let nonlinear = (1..20).map(|k| 0.02 * k as f64).any(|t| {
            let g = decoherence_function(t, &p).unwrap().value;
            ((g + rate * t) / (rate * t)).abs() > 0.1
        });
        assert!(nonlinear);
    }

    #[test]
    fn decoupling_energy_two_ways() {
        let p = DephasingBathParams::zero_temperature(256.0, 128.0, 1024.0);
        let closed = decoupling_energy_lorentzian(256.0, 128.0, 1024.0);
        let via_rate = 1024.0 / 128.0 * effective_rate(&p);
        assert_relative_eq!(closed, via_rate, max_relative = 1e-12);
        assert_relative_eq!(closed, 127.5, epsilon = 0.05);
        let sd = |w| model::lorentzian_sd(w, &p);
        let num = decoupling_energy(&sd, p.omega0, p.width).unwrap();
        assert_relative_eq!(num.value, closed, max_relative = 1e-9);
    }

    #[test]
    fn quasistatic_values() {
        let (xc, xh) = (polarization_argument(0.0524), polarization_argument(0.4857));
        let q = quasistatic(1.0, 1.25f64.sqrt(), xc, xh);
        assert_relative_eq!(q.w_ext, 0.0235, epsilon = 1e-4);
        assert_relative_eq!(q.eta, 0.1056, epsilon = 1e-4);
        assert_relative_eq!(q.w_ext, q.q_h + q.q_c, epsilon = 1e-15);
        assert_eq!(quasistatic(1.0, 1.1, 0.4, 0.4).w_ext, 0.0);
    }

    #[test]
    fn scaling_endpoints() {
        let (w, g0) = scaling_constant_power(128.0, 1024.0, 128.0).unwrap();
        assert_eq!(g0, 32896.0);
        assert_relative_eq!(w, 1024.0, max_relative = 1e-14);
        assert_eq!(scaling_constant_power(128.0, 1024.0, 32896.0).unwrap().0, 0.0);
        assert!(scaling_constant_power(128.0, 1024.0, 40000.0).is_err());
    }

    #[test]
    fn heat_bounds_paper_values() {
        let b = dissipated_heat_bounds(256.0, 128.0, 1024.0, f64::INFINITY, 0.5, 1.84375, 0.4857, 0.0524);
        assert_relative_eq!(b.lower, 125.3, epsilon = 0.05);
        assert_relative_eq!(b.upper, 172.1, epsilon = 0.05);
        let z = dissipated_heat_bounds(0.0, 128.0, 1024.0, f64::INFINITY, 0.5, 1.84375, 0.4857, 0.0524);
        assert_eq!((z.lower, z.upper), (0.0, 0.0));
    }

    #[test]
    fn flows_vanish_at_fixed_point() {
        let n = 0.4857;
        let (ds, di) = differential_flows(n / (2.0 * n + 1.0), C64::new(0.25, 0.01), 1.118, 0.5, n, 256.0);
        assert!(ds.abs() < 1e-15);
        assert!(di > 0.0);
    }
}
