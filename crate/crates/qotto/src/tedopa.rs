//! Chain mapping of the truncated Lorentzian bath and dense chain evolution,
//! used to cross-check the damped-mode energy ledger.

use std::collections::HashMap;
use std::io::Write;

use gauss_quad::legendre::GaussLegendre;
use serde::Serialize;

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, C64, ZERO};
use crate::model;
use crate::propagate::{self, csv_err, fmt_float, BlockState, Engine, Environment, Sample};

/// Spacing of the sample grid shared by chain and damped-mode runs.
pub const SAMPLE_SPACING: f64 = 1.0 / 32.0;
pub const TRUNCATION_TOL: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct ChainCoefficients {
    pub omega: Vec<f64>,
    pub t: Vec<f64>,
    pub c0: f64,
    pub a: f64,
    pub omega0: f64,
}

impl ChainCoefficients {
    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn mean_hopping(&self) -> f64 {
        if self.t.is_empty() {
            0.0
        } else {
            self.t.iter().sum::<f64>() / self.t.len() as f64
        }
    }

    /// Time after which an excitation launched at the head reaches the end.
    pub fn reflection_time(&self) -> f64 {
        let t = self.mean_hopping();
        if t > 0.0 {
            self.len() as f64 / (2.0 * t)
        } else {
            f64::INFINITY
        }
    }

    pub fn max_frequency_deviation(&self) -> f64 {
        self.omega.iter().map(|w| (w - self.omega0).abs()).fold(0.0, f64::max)
    }

    /// Eigenvalues of the Jacobi matrix.
    pub fn jacobi_spectrum(&self) -> Vec<f64> {
        let n = self.len();
        let j = Mat::from_shape_fn((n, n), |(r, c)| {
            if r == c {
                C64::from(self.omega[r])
            } else if r + 1 == c {
                C64::from(self.t[r])
            } else if c + 1 == r {
                C64::from(self.t[c])
            } else {
                ZERO
            }
        });
        linalg::eigvalsh(&j).to_vec()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# a={} N={} c0={}", fmt_float(self.a), self.len(), fmt_float(self.c0))?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["n", "omega_n", "t_n"]).map_err(csv_err)?;
        for (n, om) in self.omega.iter().enumerate() {
            let t = self.t.get(n).map(|v| fmt_float(*v)).unwrap_or_default();
            wr.write_record([n.to_string(), fmt_float(*om), t]).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Composite Gauss-Legendre discretization of the measure J / pi on
/// [omega0 - a, omega0 + a], with panels no wider than `panel`.
fn discretize(j: &dyn Fn(f64) -> f64, omega0: f64, a: f64, panel: f64) -> (Vec<f64>, Vec<f64>) {
    let rule = GaussLegendre::new(32).expect("degree >= 2");
    let panels = ((2.0 * a / panel).ceil() as usize).max(16);
    let h = 2.0 * a / panels as f64;
    let (mut x, mut w) = (Vec::new(), Vec::new());
    for p in 0..panels {
        // mirror panels so the discrete measure is exactly symmetric for symmetric J
        let lo = omega0 - a + h * p as f64;
        let mid = lo + 0.5 * h;
        for &(node, weight) in rule.as_node_weight_pairs() {
            let xi = mid + 0.5 * h * node;
            x.push(xi);
            w.push(0.5 * h * weight * j(xi) / std::f64::consts::PI);
        }
    }
    (x, w)
}

/// Recurrence coefficients of the orthonormal polynomials of J / pi on the
/// support, by Lanczos with full reorthogonalization on the discretized measure.
pub fn chain_coefficients(
    j: &dyn Fn(f64) -> f64,
    omega0: f64,
    a: f64,
    n: usize,
    width: f64,
) -> Result<ChainCoefficients> {
    if !(a > 0.0 && n >= 1) {
        return Err(Error::config(format!("chain needs a > 0 and N >= 1 (got a = {a}, N = {n})")));
    }
    let panel = (width / 4.0).min(a / 8.0).max(1e-6);
    let (x, w) = discretize(j, omega0, a, panel);
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Numerics("spectral density must be finite and non-negative on the support".into()));
    }
    let mass: f64 = w.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::Numerics("spectral density has no weight on the support".into()));
    }
    let k = x.len();
    if n > k {
        return Err(Error::config(format!("chain length {n} exceeds the {k} discretization nodes")));
    }
    let mut q: Vec<Vec<f64>> = vec![w.iter().map(|v| (v / mass).sqrt()).collect()];
    let (mut omega, mut t) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let qi = &q[i];
        let alpha: f64 = (0..k).map(|s| x[s] * qi[s] * qi[s]).sum();
        omega.push(alpha);
        if i + 1 == n {
            break;
        }
        let mut r: Vec<f64> = (0..k).map(|s| (x[s] - alpha) * qi[s]).collect();
        if i > 0 {
            let b = t[i - 1];
            for s in 0..k {
                r[s] -= b * q[i - 1][s];
            }
        }
        for _ in 0..2 {
            for qj in &q {
                let d: f64 = (0..k).map(|s| r[s] * qj[s]).sum();
                for s in 0..k {
                    r[s] -= d * qj[s];
                }
            }
        }
        let beta = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(beta > 1e-12 * a) {
            return Err(Error::Numerics(format!("orthogonalization broke down at chain index {}", i + 1)));
        }
        t.push(beta);
        q.push(r.into_iter().map(|v| v / beta).collect());
    }
    Ok(ChainCoefficients { omega, t, c0: mass.sqrt(), a, omega0 })
}

/// Chain of the configured Lorentzian bath. The shape is mapped at unit
/// coupling so an uncoupled bath still yields a well-defined chain.
pub fn bath_chain(cfg: &EngineConfig, a: f64, n: usize) -> Result<ChainCoefficients> {
    let mut p = cfg.dephasing;
    let g = p.coupling;
    p.coupling = 1.0;
    let mut c = chain_coefficients(&|w| model::lorentzian_sd(w, &p), p.omega0, a, n, p.width)?;
    c.c0 *= g.abs();
    Ok(c)
}

/// Occupation basis of the chain with per-site cutoff and a cap on the total
/// number of excitations. Index 0 is the vacuum.
#[derive(Clone, Debug)]
pub struct ChainBasis {
    pub sites: usize,
    pub local_dim: usize,
    pub max_excitations: usize,
    pub states: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
}

impl ChainBasis {
    pub fn new(sites: usize, local_dim: usize, max_excitations: usize) -> Result<Self> {
        if local_dim < 2 || sites == 0 {
            return Err(Error::config("chain needs at least one site and local_dim >= 2"));
        }
        let top = (local_dim - 1).min(max_excitations);
        let mut states = Vec::new();
        for total in 0..=max_excitations {
            let mut cur = vec![0u8; sites];
            fill(&mut states, &mut cur, 0, total, top);
        }
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Self { sites, local_dim, max_excitations, states, index })
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn annihilation(&self, site: usize) -> Mat {
        let m = self.dim();
        let mut b = Mat::zeros((m, m));
        for (i, s) in self.states.iter().enumerate() {
            if s[site] > 0 {
                let mut t = s.clone();
                t[site] -= 1;
                let j = self.index[&t];
                b[[j, i]] = C64::from((s[site] as f64).sqrt());
            }
        }
        b
    }

    /// Highest occupation a single site can reach.
    pub fn top_level(&self) -> u8 {
        (self.local_dim - 1).min(self.max_excitations) as u8
    }
}

fn fill(out: &mut Vec<Vec<u8>>, cur: &mut Vec<u8>, site: usize, left: usize, top: usize) {
    if site == cur.len() {
        if left == 0 {
            out.push(cur.clone());
        }
        return;
    }
    for k in (0..=left.min(top)).rev() {
        cur[site] = k as u8;
        fill(out, cur, site + 1, left - k, top);
    }
    cur[site] = 0;
}

/// Chain Hamiltonian, head coupling operator and head mode.
pub fn chain_environment(c: &ChainCoefficients, basis: &ChainBasis) -> Environment {
    let m = basis.dim();
    let bs: Vec<Mat> = (0..c.len()).map(|s| basis.annihilation(s)).collect();
    let mut h = Mat::zeros((m, m));
    for (i, s) in basis.states.iter().enumerate() {
        h[[i, i]] = C64::from(s.iter().zip(&c.omega).map(|(n, w)| *n as f64 * w).sum::<f64>());
    }
    for (s, t) in c.t.iter().enumerate() {
        let hop = linalg::dagger(&bs[s]).dot(&bs[s + 1]);
        h = h + hop.mapv(|z| z * *t) + linalg::dagger(&hop).mapv(|z| z * *t);
    }
    let b0 = bs[0].clone();
    let x = &b0 + &linalg::dagger(&b0);
    Environment::new(h, x, c.c0, None, b0)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ChainSample {
    pub t: f64,
    pub h_s: f64,
    pub h_int: f64,
    pub h_b: f64,
}

#[derive(Clone, Debug)]
pub struct ChainRun {
    pub coefficients: ChainCoefficients,
    pub dim: usize,
    pub samples: Vec<ChainSample>,
    /// Largest top-level population seen per site.
    pub top_population: Vec<f64>,
    /// Largest population of the excitation-cap shell.
    pub cap_population: f64,
    pub max_occupation: Vec<f64>,
    pub reflection_time: f64,
    pub reflected: bool,
}

fn sample_stride(dt: f64) -> usize {
    (SAMPLE_SPACING / dt).round().max(1.0) as usize
}

/// Dense qubit + chain evolution from (cold fixed point) x (vacuum) over
/// [0, duration) of cycle time.
pub fn evolve_chain(cfg: &EngineConfig, a: f64, n: usize, local_dim: usize, duration: f64) -> Result<ChainRun> {
    let coeffs = bath_chain(cfg, a, n)?;
    let basis = ChainBasis::new(n, local_dim, cfg.tedopa.max_excitations)?;
    let env = chain_environment(&coeffs, &basis);
    let dt = cfg.tedopa.dt;
    let mut c = *cfg;
    c.numerics.sample_stride = Some(sample_stride(dt));
    let mut engine = Engine::with_environment(&c, env, dt)?;
    let mut ps = engine.initial_state();
    let top = basis.top_level();
    let cap_states: Vec<usize> = (0..basis.dim())
        .filter(|&i| basis.states[i].iter().map(|&k| k as usize).sum::<usize>() == basis.max_excitations)
        .collect();
    let mut top_pop = vec![0.0f64; n];
    let mut occ = vec![0.0f64; n];
    let mut cap_pop = 0.0f64;
    let mut obs = |_: &Sample, rho: &BlockState, _: &model::Eigensystem| {
        let d: Vec<f64> = rho.environment().diag().iter().map(|z| z.re).collect();
        let mut tp = vec![0.0; n];
        let mut oc = vec![0.0; n];
        for (i, s) in basis.states.iter().enumerate() {
            for site in 0..n {
                if s[site] > 0 {
                    oc[site] += s[site] as f64 * d[i];
                    if s[site] == top {
                        tp[site] += d[i];
                    }
                }
            }
        }
        for site in 0..n {
            top_pop[site] = top_pop[site].max(tp[site]);
            occ[site] = occ[site].max(oc[site]);
        }
        cap_pop = cap_pop.max(cap_states.iter().map(|&i| d[i]).sum());
    };
    let ledger = propagate::evolve_horizon(&mut engine, &mut ps, duration, &mut obs)?;
    if let Some((site, pop)) = top_pop.iter().copied().enumerate().max_by(|a, b| a.1.total_cmp(&b.1)) {
        if pop > TRUNCATION_TOL {
            return Err(Error::Truncation { site, pop });
        }
    }
    if cap_pop > TRUNCATION_TOL {
        // states beyond the cap are reached only at second order in this population
        log::warn!("population at the chain excitation cap {} reached {cap_pop:.3e}", basis.max_excitations);
    }
    let samples =
        ledger.samples.iter().map(|s| ChainSample { t: s.t, h_s: s.h_s, h_int: s.h_int, h_b: s.e_deph }).collect();
    let reflection_time = coeffs.reflection_time();
    let head = occ.first().copied().unwrap_or(0.0);
    let tail = occ.last().copied().unwrap_or(0.0);
    let reflected = duration > reflection_time || (n > 1 && tail > 1e-2 * head);
    Ok(ChainRun {
        coefficients: coeffs,
        dim: basis.dim(),
        samples,
        top_population: top_pop,
        cap_population: cap_pop,
        max_occupation: occ,
        reflection_time,
        reflected,
    })
}

/// Damped-mode run on the same sample grid, with E_deph as the bath energy.
pub fn evolve_dampf(cfg: &EngineConfig, duration: f64) -> Result<Vec<ChainSample>> {
    let mut c = *cfg;
    c.numerics.sample_stride = Some(sample_stride(cfg.resolved_dt()));
    let mut engine = Engine::new(&c)?;
    let mut ps = engine.initial_state();
    let ledger = propagate::evolve_horizon(&mut engine, &mut ps, duration, &mut |_, _, _| {})?;
    Ok(ledger.samples.iter().map(|s| ChainSample { t: s.t, h_s: s.h_s, h_int: s.h_int, h_b: s.e_deph }).collect())
}

/// Chain length long enough that the head does not see reflections within
/// `horizon`, and at least the configured length.
pub fn chain_length_for(cfg: &EngineConfig, a: f64, horizon: f64) -> Result<usize> {
    let probe = bath_chain(cfg, a, 64)?;
    let need = (2.0 * probe.mean_hopping() * horizon).ceil() as usize + 1;
    Ok(need.max(cfg.tedopa.n_modes))
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonRow {
    pub a: f64,
    pub n_modes: usize,
    pub dim: usize,
    pub c0: f64,
    pub max_dh_int: f64,
    pub max_dh_bath: f64,
    /// Mean <H_int> over the second half of the horizon.
    pub plateau_h_int: f64,
    pub omega_deviation: f64,
    pub reflected: bool,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub dampf: Vec<ChainSample>,
    pub chains: Vec<ChainRun>,
    pub dampf_plateau: f64,
}

fn key(t: f64) -> i64 {
    (t / SAMPLE_SPACING * 16.0).round() as i64
}

fn plateau(s: &[ChainSample], horizon: f64) -> f64 {
    let tail: Vec<f64> = s.iter().filter(|x| x.t >= 0.5 * horizon - 1e-12).map(|x| x.h_int).collect();
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

/// Chain runs at each support against one damped-mode run; rows sorted by a.
pub fn compare_dampf_tedopa(cfg: &EngineConfig, supports: &[f64]) -> Result<Comparison> {
    let horizon = cfg.tedopa.horizon;
    let dampf = evolve_dampf(cfg, horizon)?;
    let by_t: HashMap<i64, ChainSample> = dampf.iter().map(|s| (key(s.t), *s)).collect();
    let mut sorted = supports.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    let mut chains = Vec::new();
    for a in sorted {
        let n = chain_length_for(cfg, a, horizon)?;
        let run = evolve_chain(cfg, a, n, cfg.tedopa.local_dim, horizon)?;
        let (mut di, mut db) = (0.0f64, 0.0f64);
        for s in &run.samples {
            if let Some(d) = by_t.get(&key(s.t)) {
                di = di.max((s.h_int - d.h_int).abs());
                db = db.max((s.h_b - d.h_b).abs());
            }
        }
        rows.push(ComparisonRow {
            a,
            n_modes: n,
            dim: run.dim,
            c0: run.coefficients.c0,
            max_dh_int: di,
            max_dh_bath: db,
            plateau_h_int: plateau(&run.samples, horizon),
            omega_deviation: run.coefficients.max_frequency_deviation(),
            reflected: run.reflected,
        });
        chains.push(run);
    }
    let dampf_plateau = plateau(&dampf, horizon);
    Ok(Comparison { rows, dampf, chains, dampf_plateau })
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "a",
        "N",
        "dim",
        "c0",
        "max_dH_int",
        "max_dH_bath",
        "plateau_H_int",
        "omega_deviation",
        "reflected",
    ])
    .map_err(csv_err)?;
    for r in rows {
        wr.write_record([
            fmt_float(r.a),
            r.n_modes.to_string(),
            r.dim.to_string(),
            fmt_float(r.c0),
            fmt_float(r.max_dh_int),
            fmt_float(r.max_dh_bath),
            fmt_float(r.plateau_h_int),
            fmt_float(r.omega_deviation),
            r.reflected.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_trajectory_csv<W: Write>(s: &[ChainSample], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "H_S", "H_int", "H_B"]).map_err(csv_err)?;
    for x in s {
        wr.write_record([fmt_float(x.t), fmt_float(x.h_s), fmt_float(x.h_int), fmt_float(x.h_b)]).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DephasingBathParams;

    fn fig2() -> DephasingBathParams {
        DephasingBathParams::zero_temperature(0.5, 2.0, 10.0)
    }

    #[test]
    fn symmetric_support_keeps_frequencies() {
        let p = fig2();
        let c = chain_coefficients(&|w| model::lorentzian_sd(w, &p), 10.0, 8.0, 20, 2.0).unwrap();
        assert!(c.max_frequency_deviation() < 1e-8 * 10.0);
        assert!(c.t.iter().all(|t| *t > 0.0));
        assert_eq!(c.t.len(), c.omega.len() - 1);
        for e in c.jacobi_spectrum() {
            assert!(e > 2.0 - 1e-9 && e < 18.0 + 1e-9);
        }
    }

    #[test]
    fn head_coupling_and_hopping_growth() {
        let p = fig2();
        let j = |w: f64| model::lorentzian_sd(w, &p);
        let wide = chain_coefficients(&j, 10.0, 64.0, 4, 2.0).unwrap();
        assert!((wide.c0 / 0.5 - 1.0).abs() < 1e-2, "c0 = {}", wide.c0);
        // mass of the truncated Lorentzian: Gamma^2 (2/pi) atan(2a/gamma)
        let c = chain_coefficients(&j, 10.0, 4.0, 4, 2.0).unwrap();
        let exact = 0.25 * 2.0 / std::f64::consts::PI * (4.0f64).atan();
        assert!((c.c0 * c.c0 - exact).abs() < 1e-10);
        let c8 = chain_coefficients(&j, 10.0, 8.0, 6, 2.0).unwrap();
        let c16 = chain_coefficients(&j, 10.0, 16.0, 6, 2.0).unwrap();
        for n in 0..5 {
            assert!(c.t.get(n).map_or(true, |t| *t < c8.t[n]) && c8.t[n] < c16.t[n]);
        }
    }

    #[test]
    fn basis_counts_and_vacuum_first() {
        let b = ChainBasis::new(5, 3, 2).unwrap();
        assert_eq!(b.dim(), 1 + 5 + 15);
        assert!(b.states[0].iter().all(|&k| k == 0));
        let full = ChainBasis::new(3, 2, 3).unwrap();
        assert_eq!(full.dim(), 8);
        // [b_i, b_j^dag] = delta_ij on states below the cap
        let (b0, b1) = (full.annihilation(0), full.annihilation(1));
        let c = b0.dot(&linalg::dagger(&b1)) - linalg::dagger(&b1).dot(&b0);
        assert!(c.iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn uncoupled_chain_stays_in_vacuum() {
        let mut cfg = EngineConfig::preset("fig2").unwrap();
        cfg.dephasing.coupling = 0.0;
        let run = evolve_chain(&cfg, 4.0, 4, 3, 0.5).unwrap();
        assert!(run.max_occupation.iter().all(|o| *o < 1e-12));
        assert!(run.samples.iter().all(|s| s.h_int.abs() < 1e-14 && s.h_b.abs() < 1e-14));
    }
}
