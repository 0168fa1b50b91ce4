//! Second-order split-step propagation of the qubit-environment state with a
//! per-channel energy ledger.
//!
//! The composite state is kept as four environment blocks rho_ab (a, b the
//! computational qubit indices). Because the coupling is proportional to the
//! instantaneous sz(t), the unitary factor is block diagonal in the
//! instantaneous qubit eigenframe: U = sum_x P_x(t) (x) e^{-/+ i eps tau/2} V_x,
//! where V_x = exp(-i tau (H_env +/- g X)) does not depend on t and is cached.

use std::collections::HashMap;
use std::io::Write;

use ndarray::Array1;

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::linalg::{
    self, dagger, eigh, eigvalsh, expm, unitary_from_eigh, DensityMatrix, HilbertLayout, Mat, C64, ZERO,
};
use crate::model::{self, DephasingBathParams, Eigensystem, Stroke, ThermalBathParams};

/// Abort threshold for negative eigenvalues at stroke ends.
pub const POSITIVITY_ABORT: f64 = 1e-6;

/// Nonzero entries of a matrix, for cheap traces Tr(A rho).
#[derive(Clone, Debug)]
struct Sparse(Vec<(usize, usize, C64)>);

impl Sparse {
    fn from_dense(a: &Mat) -> Self {
        let mut v = Vec::new();
        for ((i, j), z) in a.indexed_iter() {
            if *z != ZERO {
                v.push((i, j, *z));
            }
        }
        Sparse(v)
    }

    fn trace_with(&self, rho: &Mat) -> C64 {
        self.0.iter().map(|&(i, j, z)| z * rho[[j, i]]).sum()
    }
}

/// The environment attached to the qubit: a damped mode or a truncated chain.
#[derive(Clone, Debug)]
pub struct Environment {
    pub dim: usize,
    pub h_env: Mat,
    /// Operator multiplying g sz(t), b + b^dag of the coupled mode.
    pub x: Mat,
    pub coupling: f64,
    /// Local Lindblad superoperator acting on each environment block.
    pub damping: Option<Mat>,
    /// Annihilation operator of the coupled mode.
    pub mode: Mat,
    h_sparse: Sparse,
    x_sparse: Sparse,
}

impl Environment {
    pub fn new(h_env: Mat, x: Mat, coupling: f64, damping: Option<Mat>, mode: Mat) -> Self {
        let dim = h_env.nrows();
        let h_sparse = Sparse::from_dense(&h_env);
        let x_sparse = Sparse::from_dense(&x);
        Self { dim, h_env, x, coupling, damping, mode, h_sparse, x_sparse }
    }

    /// The damped mode of the dephasing bath truncated at `n_max`.
    pub fn oscillator(p: &DephasingBathParams, n_max: usize) -> Self {
        let b = linalg::annihilation(n_max);
        let x = &b + &dagger(&b);
        let h = linalg::number(n_max).mapv(|z| z * p.omega0);
        let damping = if n_max > 0 {
            let layout = HilbertLayout::new(vec![n_max + 1]).expect("small layout");
            Some(model::osc_liouvillian(p, layout, 0).local_superop())
        } else {
            None
        };
        Self::new(h, x, p.coupling, damping, b)
    }

    pub fn is_trivial(&self) -> bool {
        self.dim == 1
    }
}

/// Composite state stored as blocks rho_ab = <a| rho |b> over the environment.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockState {
    pub blocks: [[Mat; 2]; 2],
}

impl BlockState {
    pub fn dim_env(&self) -> usize {
        self.blocks[0][0].nrows()
    }

    pub fn product(qubit: &[[C64; 2]; 2], env: &Mat) -> Self {
        let b = |a: usize, c: usize| env.mapv(|z| z * qubit[a][c]);
        Self { blocks: [[b(0, 0), b(0, 1)], [b(1, 0), b(1, 1)]] }
    }

    pub fn from_mat(rho: &Mat) -> Self {
        let m = rho.nrows() / 2;
        let b = |a: usize, c: usize| rho.slice(ndarray::s![a * m..(a + 1) * m, c * m..(c + 1) * m]).to_owned();
        Self { blocks: [[b(0, 0), b(0, 1)], [b(1, 0), b(1, 1)]] }
    }

    pub fn to_mat(&self) -> Mat {
        let m = self.dim_env();
        let mut out = Mat::zeros((2 * m, 2 * m));
        for a in 0..2 {
            for b in 0..2 {
                out.slice_mut(ndarray::s![a * m..(a + 1) * m, b * m..(b + 1) * m]).assign(&self.blocks[a][b]);
            }
        }
        out
    }

    pub fn to_density(&self) -> Result<DensityMatrix> {
        let layout = HilbertLayout::new(vec![2, self.dim_env()])?;
        DensityMatrix::new_unchecked(layout, self.to_mat())
    }

    /// Reduced qubit matrix.
    pub fn qubit(&self) -> [[C64; 2]; 2] {
        let tr = |m: &Mat| m.diag().sum();
        [[tr(&self.blocks[0][0]), tr(&self.blocks[0][1])], [tr(&self.blocks[1][0]), tr(&self.blocks[1][1])]]
    }

    /// Reduced environment matrix.
    pub fn environment(&self) -> Mat {
        &self.blocks[0][0] + &self.blocks[1][1]
    }

    pub fn trace(&self) -> f64 {
        (self.blocks[0][0].diag().sum() + self.blocks[1][1].diag().sum()).re
    }

    /// Block <x| rho |y> in the eigenframe given by rotation rows (excited, ground).
    pub fn eigenframe_block(&self, rot: &[[f64; 2]; 2], x: usize, y: usize) -> Mat {
        let mut out = Mat::zeros(self.blocks[0][0].raw_dim());
        for a in 0..2 {
            for b in 0..2 {
                let c = rot[x][a] * rot[y][b];
                if c != 0.0 {
                    out.scaled_add(C64::from(c), &self.blocks[a][b]);
                }
            }
        }
        out
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let mut m = self.to_mat();
        let h = linalg::hermitian_part(&m);
        m.assign(&h);
        eigvalsh(&m).iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn trace_distance(&self, other: &BlockState) -> f64 {
        linalg::trace_distance_mat(&self.to_mat(), &other.to_mat())
    }
}

/// Expectation values of the state needed for every energy in the ledger.
#[derive(Clone, Copy, Debug)]
pub struct Moments {
    /// Reduced qubit matrix.
    pub q: [[C64; 2]; 2],
    /// Tr(X rho_ab).
    pub xq: [[C64; 2]; 2],
    /// Tr(H_env rho_env).
    pub e_env: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Energies {
    pub h_s: f64,
    pub h_int: f64,
    pub h_env: f64,
}

impl Energies {
    pub fn total(&self) -> f64 {
        self.h_s + self.h_int + self.h_env
    }
}

/// Real 2x2 matrices of H_S and sz in the computational basis.
#[derive(Clone, Copy, Debug)]
struct Frame {
    eig: Eigensystem,
    hs: [[f64; 2]; 2],
    sz: [[f64; 2]; 2],
}

impl Frame {
    fn new(eig: Eigensystem) -> Self {
        let (e, g) = (eig.excited, eig.ground);
        let mut sz = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                sz[a][b] = e[a] * e[b] - g[a] * g[b];
            }
        }
        let hs = sz.map(|r| r.map(|v| 0.5 * eig.epsilon * v));
        Self { eig, hs, sz }
    }

    fn energies(&self, m: &Moments, g: f64) -> Energies {
        let mut h_s = ZERO;
        let mut h_int = ZERO;
        for a in 0..2 {
            for b in 0..2 {
                h_s += m.q[a][b] * self.hs[b][a];
                h_int += m.xq[a][b] * self.sz[b][a];
            }
        }
        Energies { h_s: h_s.re, h_int: g * h_int.re, h_env: m.e_env }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub h_s: f64,
    pub h_int: f64,
    pub h_osc: f64,
    pub e_deph: f64,
    pub hot: f64,
    pub cold: f64,
    pub osc: f64,
    pub work: f64,
    pub p_e: f64,
    /// E_D(t) - E_D(0) - work - sum of channel energies.
    pub residual: f64,
    pub stroke: Stroke,
}

/// Running per-channel energy bookkeeping.
#[derive(Clone, Debug)]
pub struct EnergyLedger {
    pub hot: f64,
    pub cold: f64,
    pub osc: f64,
    pub work: f64,
    /// E_D at ledger creation.
    pub e_start: f64,
    pub stride: usize,
    pub samples: Vec<Sample>,
    /// Largest |residual| seen at any step, not only at samples.
    pub max_residual: f64,
    steps: usize,
}

impl EnergyLedger {
    pub fn new(e_start: f64, stride: usize) -> Self {
        Self {
            hot: 0.0,
            cold: 0.0,
            osc: 0.0,
            work: 0.0,
            e_start,
            stride: stride.max(1),
            samples: Vec::new(),
            max_residual: 0.0,
            steps: 0,
        }
    }

    pub fn channels(&self) -> f64 {
        self.hot + self.cold + self.osc
    }

    /// Energy stored in the dephasing environment: <H_osc> minus the energy
    /// the damping channel has exchanged (osc is negative when energy leaves).
    pub fn e_deph(&self, h_osc: f64) -> f64 {
        h_osc - self.osc
    }

    fn residual(&self, e: f64) -> f64 {
        e - self.e_start - self.work - self.channels()
    }

    /// Sample nearest to time t.
    pub fn e_deph_at(&self, t: f64) -> Option<f64> {
        self.samples.iter().min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs())).map(|s| s.e_deph)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let header = ["t", "H_S", "H_int", "H_osc", "E_deph", "dE_hot_cum", "dE_cold_cum", "dE_osc_cum", "p_e_inst"];
        wr.write_record(header).map_err(csv_err)?;
        for s in &self.samples {
            let row = [s.t, s.h_s, s.h_int, s.h_osc, s.e_deph, s.hot, s.cold, s.osc, s.p_e];
            wr.write_record(row.iter().map(|v| fmt_float(*v))).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Fixed float format for all tabular output.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.11e}")
}

/// Observer invoked at every ledger sample.
pub type Observer<'a> = dyn FnMut(&Sample, &BlockState, &Eigensystem) + 'a;

/// State being propagated, with absolute time.
#[derive(Clone, Debug)]
pub struct PropagatorState {
    pub rho: BlockState,
    pub t: f64,
}

/// Step size and cached propagator factors for one configuration.
pub struct Engine {
    pub cfg: EngineConfig,
    pub env: Environment,
    pub dt: f64,
    unitaries: HashMap<u64, [Mat; 2]>,
    env_groups: Vec<(Vec<usize>, Mat)>,
    thermal: HashMap<Stroke, [[C64; 4]; 4]>,
    /// Moments of the current state, valid while `cached_for` matches.
    cached: Option<(u64, Moments)>,
    state_version: u64,
}

impl Engine {
    pub fn new(cfg: &EngineConfig) -> Result<Self> {
        cfg.validate()?;
        let env = Environment::oscillator(&cfg.dephasing, cfg.resolved_n_max());
        Self::with_environment(cfg, env, cfg.resolved_dt())
    }

    pub fn with_environment(cfg: &EngineConfig, env: Environment, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config(format!("time step must be positive (got {dt})")));
        }
        let dim = 2 * env.dim;
        if dim > cfg.numerics.dim_cap {
            return Err(Error::DimensionCap { dim, cap: cfg.numerics.dim_cap });
        }
        let env_groups = match &env.damping {
            Some(s) => grouped_expm(s, dt),
            None => Vec::new(),
        };
        Ok(Self {
            cfg: *cfg,
            env,
            dt,
            unitaries: HashMap::new(),
            env_groups,
            thermal: HashMap::new(),
            cached: None,
            state_version: 0,
        })
    }

    pub fn drive(&self) -> model::DriveProfile {
        self.cfg.drive()
    }

    /// Switch to new stroke durations; all caches stay valid.
    pub fn set_durations(&mut self, d: model::StrokeDurations) -> Result<()> {
        let c = self.cfg.with_durations(d);
        check_divides(&c, self.dt)?;
        self.cfg = c;
        Ok(())
    }

    /// Qubit in the cold fixed point (in the cold-stroke eigenbasis) times the
    /// environment ground state of H_env.
    pub fn initial_state(&self) -> PropagatorState {
        let eig = self.drive().eigensystem(0.0);
        let pe = self.cfg.cold.fixed_point_excited();
        let q = qubit_diagonal(&eig, pe);
        let mut env = Mat::zeros((self.env.dim, self.env.dim));
        env[[0, 0]] = C64::from(1.0);
        PropagatorState { rho: BlockState::product(&q, &env), t: 0.0 }
    }

    pub fn moments(&self, rho: &BlockState) -> Moments {
        let mut q = [[ZERO; 2]; 2];
        let mut xq = [[ZERO; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                q[a][b] = rho.blocks[a][b].diag().sum();
                xq[a][b] = self.env.x_sparse.trace_with(&rho.blocks[a][b]);
            }
        }
        let e_env =
            (self.env.h_sparse.trace_with(&rho.blocks[0][0]) + self.env.h_sparse.trace_with(&rho.blocks[1][1])).re;
        Moments { q, xq, e_env }
    }

    pub fn energies(&self, rho: &BlockState, eig: &Eigensystem) -> Energies {
        Frame::new(*eig).energies(&self.moments(rho), self.env.coupling)
    }

    /// g Tr(sz (x) X rho) for an arbitrary coupling g.
    pub fn interaction_energy(&self, rho: &BlockState, eig: &Eigensystem, g: f64) -> f64 {
        Frame::new(*eig).energies(&self.moments(rho), g).h_int
    }

    /// Expectation of H_D at cycle time t.
    pub fn energy_at(&self, rho: &BlockState, t: f64) -> f64 {
        self.energies(rho, &self.drive().eigensystem(t)).total()
    }

    fn conditional_unitaries(&mut self, tau: f64) -> &[Mat; 2] {
        let env = &self.env;
        self.unitaries.entry(tau.to_bits()).or_insert_with(|| {
            let gx = env.x.mapv(|z| z * env.coupling);
            let build = |h: Mat| {
                let h = linalg::hermitian_part(&h);
                let (w, v) = eigh(&h);
                unitary_from_eigh(&w, &v, tau)
            };
            [build(&env.h_env + &gx), build(&env.h_env - &gx)]
        })
    }

    /// rho -> U rho U^dag for the Hamiltonian with instantaneous basis `eig` over time tau.
    pub fn apply_unitary(&mut self, rho: &mut BlockState, eig: &Eigensystem, tau: f64) {
        let rot = eig.rotation();
        let diagonal = eig.rabi == 0.0;
        let half = 0.5 * eig.epsilon * tau;
        let ph = [C64::from_polar(1.0, -half), C64::from_polar(1.0, half)];
        let v = self.conditional_unitaries(tau).clone();
        let vd = [dagger(&v[0]), dagger(&v[1])];
        let mut tilde: [[Mat; 2]; 2] = if diagonal {
            // rotation is diag(1, -1): the sign flips cancel between the two sides
            rho.blocks.clone()
        } else {
            [
                [rho.eigenframe_block(&rot, 0, 0), rho.eigenframe_block(&rot, 0, 1)],
                [rho.eigenframe_block(&rot, 1, 0), rho.eigenframe_block(&rot, 1, 1)],
            ]
        };
        for x in 0..2 {
            for y in 0..2 {
                let p = ph[x] * ph[y].conj();
                let mut t = v[x].dot(&tilde[x][y]).dot(&vd[y]);
                t.mapv_inplace(|z| z * p);
                tilde[x][y] = t;
            }
        }
        if diagonal {
            rho.blocks = tilde;
        } else {
            for a in 0..2 {
                for b in 0..2 {
                    let out = &mut rho.blocks[a][b];
                    out.fill(ZERO);
                    for x in 0..2 {
                        for y in 0..2 {
                            out.scaled_add(C64::from(rot[x][a] * rot[y][b]), &tilde[x][y]);
                        }
                    }
                }
            }
        }
        self.state_version += 1;
    }

    /// Exact damping channel of the environment over one step.
    pub fn apply_env_channel(&mut self, rho: &mut BlockState) {
        if self.env_groups.is_empty() {
            return;
        }
        for a in 0..2 {
            for b in 0..2 {
                let blk = &mut rho.blocks[a][b];
                let data = blk.as_slice_mut().expect("standard layout");
                for (idx, g) in &self.env_groups {
                    let v = Array1::from_iter(idx.iter().map(|&i| data[i]));
                    let w = g.dot(&v);
                    for (k, &i) in idx.iter().enumerate() {
                        data[i] = w[k];
                    }
                }
            }
        }
        self.state_version += 1;
    }

    fn thermal_propagator(&mut self, stroke: Stroke) -> [[C64; 4]; 4] {
        let drive = self.drive();
        let (hot, cold) = (self.cfg.hot, self.cfg.cold);
        let dt = self.dt;
        *self.thermal.entry(stroke).or_insert_with(|| {
            let (bath, rabi): (ThermalBathParams, f64) = match stroke {
                Stroke::Hot => (hot, drive.omega_rabi_max),
                _ => (cold, 0.0),
            };
            let eig = model::instantaneous_eigensystem(drive.omega, rabi).expect("non-degenerate drive");
            let mut s = Mat::zeros((4, 4));
            for (rate, l) in [(bath.gamma * bath.n, eig.sigma_plus()), (bath.gamma * (bath.n + 1.0), eig.sigma_minus())]
            {
                s = s + model::dissipator_superop(&l).mapv(|z| z * rate);
            }
            let g = expm(&s.mapv(|z| z * dt));
            let mut out = [[ZERO; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    out[i][j] = g[[i, j]];
                }
            }
            out
        })
    }

    /// Exact thermal channel of the stroke's bath over one step.
    pub fn apply_thermal(&mut self, rho: &mut BlockState, stroke: Stroke) {
        let g = self.thermal_propagator(stroke);
        let old = rho.blocks.clone();
        for a in 0..2 {
            for b in 0..2 {
                let out = &mut rho.blocks[a][b];
                out.fill(ZERO);
                for c in 0..2 {
                    for d in 0..2 {
                        let k = g[a * 2 + b][c * 2 + d];
                        if k != ZERO {
                            out.scaled_add(k, &old[c][d]);
                        }
                    }
                }
            }
        }
        self.state_version += 1;
    }

    fn thermal_active(&self, stroke: Stroke) -> bool {
        match stroke {
            Stroke::Hot => self.cfg.hot.gamma > 0.0,
            Stroke::Cold => self.cfg.cold.gamma > 0.0,
            _ => false,
        }
    }

    /// Apply one dissipative channel over dt and return the energy it
    /// exchanged, Tr{H (rho' - rho)} with H at basis `eig`.
    pub fn dissipative_step(&mut self, rho: &mut BlockState, channel: model::Channel, eig: &Eigensystem) -> f64 {
        let frame = Frame::new(*eig);
        let before = frame.energies(&self.moments(rho), self.env.coupling).total();
        match channel {
            model::Channel::Osc => self.apply_env_channel(rho),
            model::Channel::Hot => self.apply_thermal(rho, Stroke::Hot),
            model::Channel::Cold => self.apply_thermal(rho, Stroke::Cold),
        }
        frame.energies(&self.moments(rho), self.env.coupling).total() - before
    }

    /// One step U_{dt/2} G_th G_osc U_{dt/2} from offset s within `stroke`,
    /// updating the ledger. The two dissipative maps act on different factors
    /// and commute, so the splitting is symmetric.
    pub fn trotter_step(
        &mut self,
        ps: &mut PropagatorState,
        stroke: Stroke,
        s: f64,
        ledger: &mut EnergyLedger,
    ) -> Eigensystem {
        let drive = self.drive();
        let dt = self.dt;
        let g = self.env.coupling;
        let eig_of = |s: f64| {
            model::instantaneous_eigensystem(drive.omega, drive.rabi_in_stroke(stroke, s))
                .expect("non-degenerate drive")
        };
        let (f0, fm, f1) = (Frame::new(eig_of(s)), Frame::new(eig_of(s + 0.5 * dt)), Frame::new(eig_of(s + dt)));
        let m0 = match self.cached {
            Some((v, m)) if v == self.state_version => m,
            _ => self.moments(&ps.rho),
        };
        let e0 = f0.energies(&m0, g).total();
        let em0 = fm.energies(&m0, g).total();
        let thermal = self.thermal_active(stroke);
        let damping = !self.env_groups.is_empty();
        if !thermal && !damping {
            self.apply_unitary(&mut ps.rho, &fm.eig, dt);
        } else {
            self.apply_unitary(&mut ps.rho, &fm.eig, 0.5 * dt);
            let e = fm.energies(&self.moments(&ps.rho), g).total();
            let (d_osc, d_th) = match (damping, thermal) {
                (true, false) => {
                    self.apply_env_channel(&mut ps.rho);
                    (fm.energies(&self.moments(&ps.rho), g).total() - e, 0.0)
                }
                (false, _) => {
                    self.apply_thermal(&mut ps.rho, stroke);
                    (0.0, fm.energies(&self.moments(&ps.rho), g).total() - e)
                }
                (true, true) => {
                    // the two maps commute but the energy each one moves
                    // depends on the order; averaging both orders keeps the
                    // attribution second order in dt
                    let mut th_first = ps.rho.clone();
                    self.apply_thermal(&mut th_first, stroke);
                    let e_t = fm.energies(&self.moments(&th_first), g).total();
                    self.apply_env_channel(&mut ps.rho);
                    let e_o = fm.energies(&self.moments(&ps.rho), g).total();
                    self.apply_thermal(&mut ps.rho, stroke);
                    let e_ot = fm.energies(&self.moments(&ps.rho), g).total();
                    (0.5 * ((e_o - e) + (e_ot - e_t)), 0.5 * ((e_t - e) + (e_ot - e_o)))
                }
            };
            ledger.osc += d_osc;
            if stroke == Stroke::Hot {
                ledger.hot += d_th;
            } else {
                ledger.cold += d_th;
            }
            self.apply_unitary(&mut ps.rho, &fm.eig, 0.5 * dt);
        }
        let m1 = self.moments(&ps.rho);
        self.cached = Some((self.state_version, m1));
        let e1 = f1.energies(&m1, g).total();
        let em1 = fm.energies(&m1, g).total();
        ledger.work += (e1 - em1) + (em0 - e0);
        ps.t += dt;
        ledger.steps += 1;
        let r = ledger.residual(e1).abs();
        if r > ledger.max_residual {
            ledger.max_residual = r;
        }
        f1.eig
    }

    fn sample(
        &self,
        ps: &PropagatorState,
        eig: &Eigensystem,
        stroke: Stroke,
        ledger: &mut EnergyLedger,
        obs: &mut Observer,
    ) {
        let m = self.moments(&ps.rho);
        let en = Frame::new(*eig).energies(&m, self.env.coupling);
        let s = Sample {
            t: ps.t,
            h_s: en.h_s,
            h_int: en.h_int,
            h_osc: en.h_env,
            e_deph: ledger.e_deph(en.h_env),
            hot: ledger.hot,
            cold: ledger.cold,
            osc: ledger.osc,
            work: ledger.work,
            p_e: eig.excited_population(&m.q),
            residual: ledger.residual(en.total()),
            stroke,
        };
        obs(&s, &ps.rho, eig);
        ledger.samples.push(s);
    }

    /// Record a sample of the current state (used at run start).
    pub fn record(&self, ps: &PropagatorState, stroke: Stroke, s: f64, ledger: &mut EnergyLedger, obs: &mut Observer) {
        let d = self.drive();
        let eig = model::instantaneous_eigensystem(d.omega, d.rabi_in_stroke(stroke, s)).expect("non-degenerate drive");
        self.sample(ps, &eig, stroke, ledger, obs);
    }

    /// Integrate `stroke` from offset `from` to offset `to` (both multiples of dt).
    pub fn evolve_span(
        &mut self,
        ps: &mut PropagatorState,
        stroke: Stroke,
        from: f64,
        to: f64,
        ledger: &mut EnergyLedger,
        obs: &mut Observer,
    ) -> Result<()> {
        let n = ((to - from) / self.dt).round() as usize;
        for k in 0..n {
            let s = from + k as f64 * self.dt;
            let eig = self.trotter_step(ps, stroke, s, ledger);
            if ledger.steps % ledger.stride == 0 || k + 1 == n {
                self.sample(ps, &eig, stroke, ledger, obs);
            }
        }
        Ok(())
    }

    /// Integrate one full stroke and check the state at its end.
    pub fn evolve_stroke(
        &mut self,
        ps: &mut PropagatorState,
        stroke: Stroke,
        ledger: &mut EnergyLedger,
        obs: &mut Observer,
    ) -> Result<()> {
        let tau = self.cfg.strokes.get(stroke);
        self.evolve_span(ps, stroke, 0.0, tau, ledger, obs)?;
        check_state(&ps.rho, stroke)
    }

    /// New ledger anchored at the energy of `ps` at cycle time `t`.
    pub fn new_ledger(&self, ps: &PropagatorState, t: f64) -> EnergyLedger {
        EnergyLedger::new(self.energy_at(&ps.rho, t), self.cfg.sample_stride())
    }
}

/// Trace and positivity checks applied at stroke ends.
pub fn check_state(rho: &BlockState, stroke: Stroke) -> Result<()> {
    let tr = rho.trace();
    if (tr - 1.0).abs() > 1e-6 {
        return Err(Error::Numerics(format!("trace drifted to {tr} by the end of the {} stroke", stroke.name())));
    }
    if rho.dim_env() <= 512 {
        let min = rho.min_eigenvalue();
        if min < -POSITIVITY_ABORT {
            return Err(Error::Numerics(format!(
                "positivity breach at the end of the {} stroke: smallest eigenvalue {min:.3e}",
                stroke.name()
            )));
        }
    }
    Ok(())
}

fn check_divides(cfg: &EngineConfig, dt: f64) -> Result<()> {
    let mut errs = Vec::new();
    for (k, v) in ["tau_com", "tau_h", "tau_exp", "tau_c"].iter().zip(cfg.strokes.as_array()) {
        if !(v > 0.0) {
            errs.push(format!("strokes.{k} must be > 0 (got {v})"));
            continue;
        }
        let steps = v / dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            errs.push(format!("time step {dt} does not divide strokes.{k} = {v}"));
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errs))
    }
}

/// Qubit matrix diagonal in `eig` with excited population pe.
pub fn qubit_diagonal(eig: &Eigensystem, pe: f64) -> [[C64; 2]; 2] {
    let (e, g) = (eig.excited, eig.ground);
    let mut q = [[ZERO; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            q[a][b] = C64::from(pe * e[a] * e[b] + (1.0 - pe) * g[a] * g[b]);
        }
    }
    q
}

/// exp(S dt) restricted to the connected components of S's sparsity graph.
fn grouped_expm(s: &Mat, dt: f64) -> Vec<(Vec<usize>, Mat)> {
    let n = s.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut i = i;
        while p[i] != r {
            let nx = p[i];
            p[i] = r;
            i = nx;
        }
        r
    }
    for ((i, j), z) in s.indexed_iter() {
        if *z != ZERO {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a] = b;
            }
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<(Vec<usize>, Mat)> = groups
        .into_values()
        .filter_map(|idx| {
            let sub = Mat::from_shape_fn((idx.len(), idx.len()), |(a, b)| s[[idx[a], idx[b]]] * dt);
            if sub.iter().all(|z| *z == ZERO) {
                return None;
            }
            Some((idx, expm(&sub)))
        })
        .collect();
    out.sort_by_key(|(idx, _)| idx[0]);
    out
}

/// Run from the initial state over [0, horizon) of cycle time, recording a ledger.
pub fn evolve_horizon(
    engine: &mut Engine,
    ps: &mut PropagatorState,
    horizon: f64,
    obs: &mut Observer,
) -> Result<EnergyLedger> {
    let mut ledger = engine.new_ledger(ps, 0.0);
    engine.record(ps, Stroke::Compression, 0.0, &mut ledger, obs);
    let b = engine.cfg.strokes.boundaries();
    for st in Stroke::ALL {
        let (lo, hi) = (b[st.index()], b[st.index() + 1]);
        if horizon <= lo {
            break;
        }
        let end = horizon.min(hi) - lo;
        engine.evolve_span(ps, st, 0.0, end, &mut ledger, obs)?;
        check_state(&ps.rho, st)?;
    }
    Ok(ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{coherent_ket, outer};

    fn fig2() -> EngineConfig {
        EngineConfig::preset("fig2").unwrap()
    }

    #[test]
    fn unitary_matches_dense_exponential() {
        let cfg = fig2();
        let mut eng = Engine::new(&cfg).unwrap();
        let ps = eng.initial_state();
        let mut rho = ps.rho.clone();
        // put some coherence in
        let eig = cfg.drive().eigensystem(0.3);
        eng.apply_unitary(&mut rho, &eig, 0.05);
        let h = model::dampf_hamiltonian(0.3, &cfg).unwrap();
        let (w, v) = eigh(&h.data);
        let u = unitary_from_eigh(&w, &v, 0.05);
        let dense = u.dot(&ps.rho.to_mat()).dot(&dagger(&u));
        let diff = (&rho.to_mat() - &dense).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn env_channel_matches_dense_superoperator() {
        let cfg = fig2();
        let mut eng = Engine::new(&cfg).unwrap();
        let n = cfg.resolved_n_max();
        let ket = coherent_ket(C64::new(0.3, -0.2), n).unwrap();
        let env = outer(&ket, &ket);
        let q = [[C64::from(0.7), C64::new(0.1, 0.2)], [C64::new(0.1, -0.2), C64::from(0.3)]];
        let mut rho = BlockState::product(&q, &env);
        eng.apply_env_channel(&mut rho);
        let lv = model::build_liouvillian(model::Channel::Osc, &cfg, 0.0).unwrap();
        // dense reference: expm of the full generator on the composite space
        let d = 2 * (n + 1);
        let mut sup = Mat::zeros((d * d, d * d));
        for k in 0..d * d {
            let mut e = Mat::zeros((d, d));
            e[[k / d, k % d]] = C64::from(1.0);
            let col = lv.apply(&e);
            for (i, z) in col.iter().enumerate() {
                sup[[i, k]] = *z;
            }
        }
        let g = expm(&sup.mapv(|z| z * eng.dt));
        let v0 = Array1::from_iter(BlockState::product(&q, &env).to_mat().iter().cloned());
        let v1 = g.dot(&v0);
        let got = rho.to_mat();
        let diff = got.iter().zip(v1.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn coherent_amplitude_decays_at_half_width() {
        let cfg = fig2();
        let mut eng = Engine::new(&cfg).unwrap();
        let n = cfg.resolved_n_max();
        let alpha = C64::new(0.05, 0.02);
        let ket = coherent_ket(alpha, n).unwrap();
        let q = [[C64::from(0.4), ZERO], [ZERO, C64::from(0.6)]];
        let mut rho = BlockState::product(&q, &outer(&ket, &ket));
        let b = linalg::annihilation(n);
        let mean = |r: &BlockState| linalg::trace_product(&b, &r.environment());
        let before = mean(&rho);
        eng.apply_env_channel(&mut rho);
        let ratio = mean(&rho) / before;
        let want = (-cfg.dephasing.width * eng.dt / 2.0).exp();
        assert!((ratio - want).norm() < 1e-8);
    }

    #[test]
    fn hot_channel_leaves_fixed_point_alone() {
        let cfg = EngineConfig::preset("paper-4.1").unwrap();
        let mut eng = Engine::new(&cfg).unwrap();
        let eig = cfg.drive().eigensystem(cfg.strokes.tau_com + 0.1);
        let q = qubit_diagonal(&eig, cfg.hot.fixed_point_excited());
        let mut rho = BlockState::product(&q, &Mat::eye(1).mapv(C64::from));
        let de = eng.dissipative_step(&mut rho, model::Channel::Hot, &eig);
        assert!(de.abs() < 1e-10);
    }

    #[test]
    fn constant_hamiltonian_conserves_energy_and_purity() {
        let mut cfg = fig2();
        cfg.hot.gamma = 0.0;
        let mut eng = Engine::new(&cfg).unwrap();
        eng.env.damping = None;
        eng.env_groups.clear();
        let eig = cfg.drive().eigensystem(3.0);
        let plus = [[C64::from(0.5); 2]; 2];
        let mut env = Mat::zeros((eng.env.dim, eng.env.dim));
        env[[0, 0]] = C64::from(1.0);
        let mut ps = PropagatorState { rho: BlockState::product(&plus, &env), t: 0.0 };
        let e0 = eng.energies(&ps.rho, &eig).total();
        let mut ledger = EnergyLedger::new(e0, 1_000_000);
        for k in 0..200 {
            let before = eng.energies(&ps.rho, &eig).total();
            eng.trotter_step(&mut ps, Stroke::Hot, k as f64 * eng.dt, &mut ledger);
            let after = eng.energies(&ps.rho, &eig).total();
            assert!((after - before).abs() < 1e-12);
        }
        let purity = linalg::trace_product(&ps.rho.to_mat(), &ps.rho.to_mat()).re;
        assert!((purity - 1.0).abs() < 1e-10);
        assert_eq!(ledger.work, 0.0);
    }

    #[test]
    fn e_deph_zero_when_decoupled() {
        let cfg = EngineConfig::preset("paper-4.1").unwrap();
        let mut eng = Engine::new(&cfg).unwrap();
        let mut ps = eng.initial_state();
        let ledger = evolve_horizon(&mut eng, &mut ps, cfg.strokes.cycle(), &mut |_, _, _| {}).unwrap();
        assert!(ledger.samples.iter().all(|s| s.e_deph == 0.0 && s.h_int == 0.0));
        assert_eq!(ledger.samples[0].e_deph, 0.0);
    }
}
