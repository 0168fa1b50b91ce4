//! Power maximization over the stroke durations and the sweep drivers built on it.

use std::collections::HashMap;
use std::io::Write;

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, HeatBounds};
use crate::config::EngineConfig;
use crate::cycle::{self, CycleOptions, CycleRecord};
use crate::error::{Error, Result};
use crate::model::StrokeDurations;
use crate::propagate::{csv_err, fmt_float, Engine, PropagatorState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Sys,
    Tot,
}

impl Target {
    pub fn power(self, r: &CycleRecord) -> f64 {
        match self {
            Target::Sys => r.sys.power,
            Target::Tot => r.tot.power,
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sys" => Ok(Target::Sys),
            "tot" => Ok(Target::Tot),
            _ => Err(Error::config(format!("unknown target '{s}' (expected sys or tot)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct OptimizationSpec {
    pub target: Target,
    pub initial: StrokeDurations,
    pub grid: f64,
    pub lower: [f64; 4],
    pub upper: [f64; 4],
    pub max_evals: usize,
    pub seed: u64,
    /// First pattern step in grid units; halved down to one grid unit.
    pub initial_step: i64,
    /// Continuous simplex refinement after the grid search.
    pub refine: bool,
}

impl OptimizationSpec {
    pub fn new(target: Target, initial: StrokeDurations) -> Self {
        Self {
            target,
            initial,
            grid: 1.0 / 32.0,
            lower: [1.0 / 32.0; 4],
            upper: [64.0; 4],
            max_evals: 400,
            seed: 0,
            initial_step: 8,
            refine: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.grid > 0.0 && self.grid.is_finite()) {
            errs.push(format!("grid granularity must be positive (got {})", self.grid));
        }
        for i in 0..4 {
            if !(self.lower[i] > 0.0 && self.upper[i] >= self.lower[i]) {
                errs.push(format!("bounds for duration {i} must satisfy 0 < lower <= upper"));
            }
        }
        if self.initial_step < 1 {
            errs.push("initial_step must be >= 1".into());
        }
        if self.max_evals == 0 {
            errs.push("max_evals must be >= 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    fn to_grid(&self, d: &StrokeDurations) -> Result<[i64; 4]> {
        let mut k = [0i64; 4];
        for (i, v) in d.as_array().into_iter().enumerate() {
            let x = (v / self.grid).round();
            if (x * self.grid - v).abs() > 1e-12 * v.max(1.0) {
                return Err(Error::config(format!("duration {v} is not a multiple of the grid {}", self.grid)));
            }
            k[i] = x as i64;
        }
        Ok(k)
    }

    fn in_bounds(&self, k: &[i64; 4]) -> bool {
        (0..4).all(|i| {
            let v = k[i] as f64 * self.grid;
            v >= self.lower[i] - 1e-12 && v <= self.upper[i] + 1e-12
        })
    }

    fn durations(&self, k: &[i64; 4]) -> Result<StrokeDurations> {
        StrokeDurations::from_array(k.map(|x| x as f64 * self.grid))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceEntry {
    pub durations: [f64; 4],
    pub p_sys: f64,
    pub p_tot: f64,
    pub cycles: usize,
    pub status: String,
}

#[derive(Clone, Debug)]
pub struct Optimum {
    pub durations: StrokeDurations,
    pub power: f64,
    pub record: CycleRecord,
    pub trace: Vec<TraceEntry>,
    pub budget_exhausted: bool,
    /// Every in-bounds one-step neighbor was evaluated and none is better.
    pub verified_local_max: bool,
    pub neighbor_powers: Vec<f64>,
}

/// Steady-cycle evaluator with warm starts from the best state seen.
struct Evaluator {
    engine: Engine,
    target: Target,
    warm: Option<PropagatorState>,
    trace: Vec<TraceEntry>,
}

impl Evaluator {
    fn new(cfg: &EngineConfig, target: Target) -> Result<Self> {
        Ok(Self { engine: Engine::new(cfg)?, target, warm: None, trace: Vec::new() })
    }

    fn eval(&mut self, d: StrokeDurations) -> Option<(f64, CycleRecord, PropagatorState)> {
        let res = self
            .engine
            .set_durations(d)
            .and_then(|_| cycle::run_to_steady_cycle(&mut self.engine, self.warm.clone(), CycleOptions::default()));
        match res {
            Ok(sc) => {
                let r = sc.record;
                self.trace.push(TraceEntry {
                    durations: d.as_array(),
                    p_sys: r.sys.power,
                    p_tot: r.tot.power,
                    cycles: sc.cycles,
                    status: "ok".into(),
                });
                Some((self.target.power(&r), r, sc.end))
            }
            Err(e) => {
                log::warn!("evaluation at {:?} failed: {e}", d.as_array());
                self.trace.push(TraceEntry {
                    durations: d.as_array(),
                    p_sys: f64::NAN,
                    p_tot: f64::NAN,
                    cycles: 0,
                    status: e.to_string(),
                });
                None
            }
        }
    }
}

/// Grid pattern search: try +-step along each duration, move to the best
/// improving neighbor, halve the step when none improves, stop at a one-step
/// local maximum.
pub fn maximize_power(spec: &OptimizationSpec, cfg: &EngineConfig) -> Result<Optimum> {
    spec.validate()?;
    cfg.validate()?;
    let mut ev = Evaluator::new(cfg, spec.target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cache: HashMap<[i64; 4], Option<f64>> = HashMap::new();

    let mut cur = spec.to_grid(&spec.initial)?;
    if !spec.in_bounds(&cur) {
        return Err(Error::config("initial durations lie outside the bounds"));
    }
    let (mut best_p, mut best_rec, state) = ev
        .eval(spec.durations(&cur)?)
        .ok_or_else(|| Error::Numerics("steady cycle failed at the initial durations".into()))?;
    ev.warm = Some(state);
    cache.insert(cur, Some(best_p));

    let mut step = spec.initial_step;
    let mut exhausted = false;
    loop {
        let mut nbrs: Vec<[i64; 4]> = Vec::with_capacity(8);
        for i in 0..4 {
            for s in [step, -step] {
                let mut k = cur;
                k[i] += s;
                if k[i] > 0 && spec.in_bounds(&k) {
                    nbrs.push(k);
                }
            }
        }
        nbrs.shuffle(&mut rng);
        let mut improved: Option<([i64; 4], f64, CycleRecord, PropagatorState)> = None;
        for k in nbrs {
            if cache.contains_key(&k) {
                continue;
            }
            if ev.trace.len() >= spec.max_evals {
                exhausted = true;
                break;
            }
            let out = ev.eval(spec.durations(&k)?);
            cache.insert(k, out.as_ref().map(|o| o.0));
            if let Some((p, rec, st)) = out {
                let bar = improved.as_ref().map_or(best_p, |b| b.1);
                if p > bar {
                    improved = Some((k, p, rec, st));
                }
            }
        }
        if exhausted {
            if let Some((k, p, rec, st)) = improved {
                cur = k;
                best_p = p;
                best_rec = rec;
                ev.warm = Some(st);
            }
            break;
        }
        match improved {
            Some((k, p, rec, st)) => {
                let dir: [i64; 4] = std::array::from_fn(|i| k[i] - cur[i]);
                cur = k;
                best_p = p;
                best_rec = rec;
                ev.warm = Some(st);
                // keep going along a successful direction with doubling strides
                let mut mult = 2;
                loop {
                    let next: [i64; 4] = std::array::from_fn(|i| cur[i] + mult * dir[i]);
                    if next.iter().any(|&x| x <= 0) || !spec.in_bounds(&next) || cache.contains_key(&next) {
                        break;
                    }
                    if ev.trace.len() >= spec.max_evals {
                        exhausted = true;
                        break;
                    }
                    let out = ev.eval(spec.durations(&next)?);
                    cache.insert(next, out.as_ref().map(|o| o.0));
                    match out {
                        Some((p, rec, st)) if p > best_p => {
                            cur = next;
                            best_p = p;
                            best_rec = rec;
                            ev.warm = Some(st);
                            mult *= 2;
                        }
                        _ => break,
                    }
                }
                if exhausted {
                    break;
                }
            }
            None if step > 1 => step /= 2,
            None => break,
        }
    }

    let mut neighbor_powers = Vec::new();
    let mut verified = !exhausted;
    for i in 0..4 {
        for s in [1, -1] {
            let mut k = cur;
            k[i] += s;
            if k[i] <= 0 || !spec.in_bounds(&k) {
                continue;
            }
            match cache.get(&k) {
                Some(Some(p)) => {
                    neighbor_powers.push(*p);
                    if *p > best_p {
                        verified = false;
                    }
                }
                Some(None) => neighbor_powers.push(f64::NAN),
                None => verified = false,
            }
        }
    }

    let mut opt = Optimum {
        durations: spec.durations(&cur)?,
        power: best_p,
        record: best_rec,
        trace: ev.trace,
        budget_exhausted: exhausted,
        verified_local_max: verified,
        neighbor_powers,
    };
    if spec.refine && !exhausted {
        refine(spec, cfg, &mut opt)?;
    }
    Ok(opt)
}

struct SimplexCost<'a> {
    cfg: &'a EngineConfig,
    spec: &'a OptimizationSpec,
    dt: f64,
}

impl SimplexCost<'_> {
    fn snap(&self, x: &[f64]) -> Option<StrokeDurations> {
        let mut a = [0.0; 4];
        for i in 0..4 {
            let v = ((x[i] / self.dt).round() * self.dt).clamp(self.spec.lower[i], self.spec.upper[i]);
            a[i] = (v / self.dt).round() * self.dt;
        }
        StrokeDurations::from_array(a).ok()
    }
}

impl CostFunction for SimplexCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let Some(d) = self.snap(x) else { return Ok(f64::INFINITY) };
        let mut engine = Engine::new(&self.cfg.with_durations(d))?;
        match cycle::run_to_steady_cycle(&mut engine, None, CycleOptions::default()) {
            Ok(sc) => Ok(-self.spec.target.power(&sc.record)),
            Err(_) => Ok(f64::INFINITY),
        }
    }
}

/// Nelder-Mead on continuous durations snapped to the time step, started from
/// a simplex of one grid unit around the grid optimum.
fn refine(spec: &OptimizationSpec, cfg: &EngineConfig, opt: &mut Optimum) -> Result<()> {
    let dt = cfg.resolved_dt();
    let cost = SimplexCost { cfg, spec, dt };
    let x0 = opt.durations.as_array().to_vec();
    let mut simplex = vec![x0.clone()];
    for i in 0..4 {
        let mut x = x0.clone();
        x[i] += spec.grid;
        simplex.push(x);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-9).map_err(|e| Error::Numerics(e.to_string()))?;
    let res = Executor::new(cost, solver)
        .configure(|s| s.max_iters((spec.max_evals / 4).max(1) as u64))
        .run()
        .map_err(|e| Error::Numerics(e.to_string()))?;
    let Some(x) = res.state.best_param.clone() else { return Ok(()) };
    let cost = SimplexCost { cfg, spec, dt };
    if let Some(d) = cost.snap(&x) {
        let mut engine = Engine::new(&cfg.with_durations(d))?;
        let sc = cycle::run_to_steady_cycle(&mut engine, None, CycleOptions::default())?;
        let p = spec.target.power(&sc.record);
        if p > opt.power {
            opt.durations = d;
            opt.power = p;
            opt.record = sc.record;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub coupling: f64,
    pub gamma_eff: f64,
    pub p_sys: f64,
    pub p_tot: f64,
    pub eta_sys: f64,
    pub eta_tot: f64,
    pub tau_cycle: f64,
    pub w_ext_sys: f64,
    pub w_ext_tot: f64,
    pub durations: [f64; 4],
    pub evaluations: usize,
    pub verified: bool,
    pub status: String,
}

impl SweepRow {
    fn failed(coupling: f64, gamma_eff: f64, status: String) -> Self {
        Self {
            coupling,
            gamma_eff,
            p_sys: f64::NAN,
            p_tot: f64::NAN,
            eta_sys: f64::NAN,
            eta_tot: f64::NAN,
            tau_cycle: f64::NAN,
            w_ext_sys: f64::NAN,
            w_ext_tot: f64::NAN,
            durations: [f64::NAN; 4],
            evaluations: 0,
            verified: false,
            status,
        }
    }
}

/// Optimize independently at each coupling with the width and mode frequency
/// of `cfg`; rows are sorted by effective dephasing rate.
pub fn sweep_dephasing(cfg: &EngineConfig, couplings: &[f64], spec: &OptimizationSpec) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = couplings
        .iter()
        .map(|&g| {
            let c = cfg.with_coupling(g);
            let ge = analysis::effective_rate(&c.dephasing);
            match maximize_power(spec, &c) {
                Ok(o) => {
                    let r = &o.record;
                    SweepRow {
                        coupling: g,
                        gamma_eff: ge,
                        p_sys: r.sys.power,
                        p_tot: r.tot.power,
                        eta_sys: r.sys.eta,
                        eta_tot: r.tot.eta,
                        tau_cycle: o.durations.cycle(),
                        w_ext_sys: r.sys.w_ext,
                        w_ext_tot: r.tot.w_ext,
                        durations: o.durations.as_array(),
                        evaluations: o.trace.len(),
                        verified: o.verified_local_max,
                        status: if o.budget_exhausted { "budget".into() } else { "ok".into() },
                    }
                }
                Err(e) => SweepRow::failed(g, ge, e.to_string()),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.gamma_eff.total_cmp(&b.gamma_eff));
    rows
}

#[derive(Clone, Debug, Serialize)]
pub struct GammaRow {
    pub gamma: f64,
    pub omega0: f64,
    pub gamma_eff: f64,
    pub p_sys: f64,
    pub p_tot: f64,
    pub eta_sys: f64,
    pub eta_tot: f64,
    pub w_ext_tot: f64,
    pub q_h_diss: f64,
    pub q_c_diss: f64,
    pub bounds: Option<HeatBounds>,
    pub status: String,
}

/// Fixed durations, constant effective rate: the mode frequency follows the
/// width along the family through `base`.
pub fn sweep_gamma_to_gamma0(base: &EngineConfig, widths: &[f64]) -> Vec<GammaRow> {
    let p = base.dephasing;
    widths
        .iter()
        .map(|&g| {
            let run = || -> Result<GammaRow> {
                let (w0, _) = analysis::scaling_constant_power(p.width, p.omega0, g)?;
                let mut c = *base;
                c.dephasing.width = g;
                c.dephasing.omega0 = w0;
                c.numerics.dt = None;
                c.numerics.n_max = None;
                c.validate()?;
                let mut engine = Engine::new(&c)?;
                let sc = cycle::run_to_steady_cycle(&mut engine, None, CycleOptions::default())?;
                let r = sc.record;
                let b = analysis::dissipated_heat_bounds(
                    c.dephasing.coupling,
                    g,
                    w0,
                    c.dephasing.beta,
                    c.hot.gamma,
                    c.strokes.tau_h,
                    c.hot.n,
                    c.cold.n,
                );
                Ok(GammaRow {
                    gamma: g,
                    omega0: w0,
                    gamma_eff: analysis::effective_rate(&c.dephasing),
                    p_sys: r.sys.power,
                    p_tot: r.tot.power,
                    eta_sys: r.sys.eta,
                    eta_tot: r.tot.eta,
                    w_ext_tot: r.tot.w_ext,
                    q_h_diss: r.q_h_diss,
                    q_c_diss: r.q_c_diss,
                    bounds: Some(b),
                    status: "ok".into(),
                })
            };
            run().unwrap_or_else(|e| GammaRow {
                gamma: g,
                omega0: f64::NAN,
                gamma_eff: f64::NAN,
                p_sys: f64::NAN,
                p_tot: f64::NAN,
                eta_sys: f64::NAN,
                eta_tot: f64::NAN,
                w_ext_tot: f64::NAN,
                q_h_diss: f64::NAN,
                q_c_diss: f64::NAN,
                bounds: None,
                status: e.to_string(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub p_tot: f64,
    pub w_ext_tot: f64,
    pub eta_tot: f64,
    pub eta_sys: f64,
    /// Largest Ansatz trace distance over the steady cycle's samples.
    pub ansatz_distance: f64,
    pub status: String,
}

/// Constant-efficiency scaling of `base` by each lambda.
pub fn lambda_scan(base: &EngineConfig, lambdas: &[f64]) -> Vec<LambdaRow> {
    lambdas
        .iter()
        .map(|&l| {
            let run = || -> Result<LambdaRow> {
                let c = analysis::scaling_constant_efficiency(base, l)?;
                let mut engine = Engine::new(&c)?;
                let opts = CycleOptions { diagnostics: true, keep_states: false };
                let sc = cycle::run_to_steady_cycle(&mut engine, None, opts)?;
                let r = sc.record;
                let dist = r.diagnostics.iter().map(|d| d.ansatz_distance).fold(f64::NAN, f64::max);
                Ok(LambdaRow {
                    lambda: l,
                    p_tot: r.tot.power,
                    w_ext_tot: r.tot.w_ext,
                    eta_tot: r.tot.eta,
                    eta_sys: r.sys.eta,
                    ansatz_distance: dist,
                    status: "ok".into(),
                })
            };
            run().unwrap_or_else(|e| LambdaRow {
                lambda: l,
                p_tot: f64::NAN,
                w_ext_tot: f64::NAN,
                eta_tot: f64::NAN,
                eta_sys: f64::NAN,
                ansatz_distance: f64::NAN,
                status: e.to_string(),
            })
        })
        .collect()
}

fn write_rows<W: Write>(w: W, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header).map_err(csv_err)?;
    for r in rows {
        wr.write_record(&r).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

fn f(v: f64) -> String {
    fmt_float(v)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let header = [
        "Gamma",
        "gamma_eff",
        "p_sys",
        "p_tot",
        "eta_sys",
        "eta_tot",
        "tau_cycle",
        "w_ext_sys",
        "w_ext_tot",
        "tau_com",
        "tau_h",
        "tau_exp",
        "tau_c",
        "evaluations",
        "verified",
        "status",
    ];
    write_rows(
        w,
        &header,
        rows.iter().map(|r| {
            let mut v: Vec<String> = [
                r.coupling,
                r.gamma_eff,
                r.p_sys,
                r.p_tot,
                r.eta_sys,
                r.eta_tot,
                r.tau_cycle,
                r.w_ext_sys,
                r.w_ext_tot,
            ]
            .into_iter()
            .chain(r.durations)
            .map(f)
            .collect();
            v.extend([r.evaluations.to_string(), r.verified.to_string(), r.status.clone()]);
            v
        }),
    )
}

pub fn write_gamma_csv<W: Write>(rows: &[GammaRow], w: W) -> Result<()> {
    let header = [
        "gamma",
        "omega0",
        "gamma_eff",
        "p_sys",
        "p_tot",
        "eta_sys",
        "eta_tot",
        "w_ext_tot",
        "q_h_diss",
        "q_c_diss",
        "bound_lower",
        "bound_upper",
        "status",
    ];
    write_rows(
        w,
        &header,
        rows.iter().map(|r| {
            let (lo, hi) = r.bounds.map_or((f64::NAN, f64::NAN), |b| (b.lower, b.upper));
            let mut v: Vec<String> = [
                r.gamma,
                r.omega0,
                r.gamma_eff,
                r.p_sys,
                r.p_tot,
                r.eta_sys,
                r.eta_tot,
                r.w_ext_tot,
                r.q_h_diss,
                r.q_c_diss,
                lo,
                hi,
            ]
            .into_iter()
            .map(f)
            .collect();
            v.push(r.status.clone());
            v
        }),
    )
}

pub fn write_lambda_csv<W: Write>(rows: &[LambdaRow], w: W) -> Result<()> {
    let header = ["lambda", "p_tot", "w_ext_tot", "eta_tot", "eta_sys", "ansatz_distance", "status"];
    write_rows(
        w,
        &header,
        rows.iter().map(|r| {
            let mut v: Vec<String> =
                [r.lambda, r.p_tot, r.w_ext_tot, r.eta_tot, r.eta_sys, r.ansatz_distance].into_iter().map(f).collect();
            v.push(r.status.clone());
            v
        }),
    )
}

pub fn write_trace_csv<W: Write>(trace: &[TraceEntry], w: W) -> Result<()> {
    let header = ["tau_com", "tau_h", "tau_exp", "tau_c", "p_sys", "p_tot", "cycles", "status"];
    write_rows(
        w,
        &header,
        trace.iter().map(|t| {
            let mut v: Vec<String> = t.durations.into_iter().chain([t.p_sys, t.p_tot]).map(f).collect();
            v.extend([t.cycles.to_string(), t.status.clone()]);
            v
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg() -> EngineConfig {
        let mut c = EngineConfig::preset("paper-4.1").unwrap();
        c.numerics.cycle_tol = 1e-5;
        c
    }

    #[test]
    fn spec_rejects_off_grid_and_bad_bounds() {
        let mut s = OptimizationSpec::new(Target::Sys, StrokeDurations::new(1.0, 1.0, 1.0, 1.01).unwrap());
        assert!(s.to_grid(&s.initial).is_err());
        s.lower[2] = -1.0;
        assert!(s.validate().is_err());
        assert!("tot".parse::<Target>().is_ok() && "x".parse::<Target>().is_err());
    }

    #[test]
    fn baseline_optimum_is_deterministic_local_max() {
        let cfg = quick_cfg();
        let mut spec = OptimizationSpec::new(Target::Sys, cfg.strokes);
        spec.max_evals = 400;
        let a = maximize_power(&spec, &cfg).unwrap();
        assert!(a.power > 0.0, "P = {}", a.power);
        assert!(a.verified_local_max);
        assert!(a.neighbor_powers.iter().all(|p| *p <= a.power));
        let b = maximize_power(&spec, &cfg).unwrap();
        assert_eq!(a.trace.len(), b.trace.len());
        for (x, y) in a.trace.iter().zip(&b.trace) {
            assert_eq!(x.durations, y.durations);
            assert_eq!(x.p_sys.to_bits(), y.p_sys.to_bits());
        }
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let cfg = quick_cfg();
        let mut spec = OptimizationSpec::new(Target::Sys, cfg.strokes);
        spec.max_evals = 3;
        let o = maximize_power(&spec, &cfg).unwrap();
        assert!(o.budget_exhausted && !o.verified_local_max);
        assert!(o.trace.len() <= 3);
    }
}
