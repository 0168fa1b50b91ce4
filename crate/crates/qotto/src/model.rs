//! Work-medium drive, bath parameters, spectral densities and Lindblad generators.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::linalg::{self, dagger, identity, kron, HilbertLayout, Mat, Operator, C64, ZERO};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stroke {
    Compression,
    Hot,
    Expansion,
    Cold,
}

impl Stroke {
    pub const ALL: [Stroke; 4] = [Stroke::Compression, Stroke::Hot, Stroke::Expansion, Stroke::Cold];

    pub fn index(self) -> usize {
        match self {
            Stroke::Compression => 0,
            Stroke::Hot => 1,
            Stroke::Expansion => 2,
            Stroke::Cold => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stroke::Compression => "compression",
            Stroke::Hot => "hot",
            Stroke::Expansion => "expansion",
            Stroke::Cold => "cold",
        }
    }

    pub fn is_thermal(self) -> bool {
        matches!(self, Stroke::Hot | Stroke::Cold)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeDurations {
    pub tau_com: f64,
    pub tau_h: f64,
    pub tau_exp: f64,
    pub tau_c: f64,
}

impl StrokeDurations {
    pub fn new(tau_com: f64, tau_h: f64, tau_exp: f64, tau_c: f64) -> Result<Self> {
        let d = Self { tau_com, tau_h, tau_exp, tau_c };
        d.validate()?;
        Ok(d)
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn validate(&self) -> Result<()> {
        let bad: Vec<String> = ["tau_com", "tau_h", "tau_exp", "tau_c"]
            .iter()
            .zip(self.as_array())
            .filter(|(_, v)| !(v.is_finite() && *v > 0.0))
            .map(|(k, v)| format!("strokes.{k} must be positive and finite (got {v})"))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.tau_com, self.tau_h, self.tau_exp, self.tau_c]
    }

    pub fn get(&self, s: Stroke) -> f64 {
        self.as_array()[s.index()]
    }

    pub fn cycle(&self) -> f64 {
        self.as_array().iter().sum()
    }

    /// Stroke boundary times tau_0 .. tau_4 within one cycle.
    pub fn boundaries(&self) -> [f64; 5] {
        let a = self.as_array();
        [0.0, a[0], a[0] + a[1], a[0] + a[1] + a[2], a[0] + a[1] + a[2] + a[3]]
    }

    pub fn scaled(&self, f: f64) -> Self {
        Self { tau_com: self.tau_com * f, tau_h: self.tau_h * f, tau_exp: self.tau_exp * f, tau_c: self.tau_c * f }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriveProfile {
    pub omega: f64,
    pub omega_rabi_max: f64,
    pub durations: StrokeDurations,
}

impl DriveProfile {
    pub fn stroke_at(&self, t: f64) -> Stroke {
        let b = self.durations.boundaries();
        if t < b[1] {
            Stroke::Compression
        } else if t < b[2] {
            Stroke::Hot
        } else if t < b[3] {
            Stroke::Expansion
        } else {
            Stroke::Cold
        }
    }

    /// Rabi frequency at time `s` measured from the start of `stroke`.
    pub fn rabi_in_stroke(&self, stroke: Stroke, s: f64) -> f64 {
        let w = self.omega_rabi_max;
        match stroke {
            Stroke::Compression => w * (s / self.durations.tau_com).clamp(0.0, 1.0),
            Stroke::Hot => w,
            Stroke::Expansion => w * (1.0 - (s / self.durations.tau_exp).clamp(0.0, 1.0)),
            Stroke::Cold => 0.0,
        }
    }

    /// Rabi frequency at cycle time t in [0, tau_cycle].
    pub fn rabi(&self, t: f64) -> f64 {
        let st = self.stroke_at(t);
        let b = self.durations.boundaries();
        self.rabi_in_stroke(st, t - b[st.index()])
    }

    pub fn eigensystem(&self, t: f64) -> Eigensystem {
        instantaneous_eigensystem(self.omega, self.rabi(t)).expect("drive with omega = Omega = 0")
    }

    pub fn epsilon_cold(&self) -> f64 {
        self.omega.abs()
    }

    pub fn epsilon_hot(&self) -> f64 {
        self.omega.hypot(self.omega_rabi_max)
    }
}

/// Instantaneous spectrum of H_S = (omega/2) sz + (Omega/2) sx.
///
/// Eigenkets are real. The ground ket has a non-negative amplitude on |0>,
/// which at Omega = 0 gives ground = -|1> and excited = |0>.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eigensystem {
    pub omega: f64,
    pub rabi: f64,
    pub epsilon: f64,
    pub excited: [f64; 2],
    pub ground: [f64; 2],
}

pub fn instantaneous_eigensystem(omega: f64, rabi: f64) -> Result<Eigensystem> {
    if omega == 0.0 && rabi == 0.0 {
        return Err(Error::Numerics("degenerate drive: omega = Omega = 0".into()));
    }
    let epsilon = omega.hypot(rabi);
    let half = 0.5 * rabi.atan2(omega);
    let (s, c) = half.sin_cos();
    Ok(Eigensystem { omega, rabi, epsilon, excited: [c, s], ground: [s, -c] })
}

impl Eigensystem {
    /// Rows are the excited and ground kets: R[x][a] = <a|x>.
    pub fn rotation(&self) -> [[f64; 2]; 2] {
        [self.excited, self.ground]
    }

    fn proj(a: [f64; 2], b: [f64; 2]) -> Mat {
        Mat::from_shape_fn((2, 2), |(i, j)| C64::from(a[i] * b[j]))
    }

    pub fn sigma_z(&self) -> Mat {
        Self::proj(self.excited, self.excited) - Self::proj(self.ground, self.ground)
    }

    pub fn sigma_plus(&self) -> Mat {
        Self::proj(self.excited, self.ground)
    }

    pub fn sigma_minus(&self) -> Mat {
        Self::proj(self.ground, self.excited)
    }

    pub fn h_s(&self) -> Mat {
        self.sigma_z().mapv(|z| z * (0.5 * self.epsilon))
    }

    /// Direct construction (omega/2) sz + (Omega/2) sx.
    pub fn h_s_direct(&self) -> Mat {
        linalg::pauli_z().mapv(|z| z * (0.5 * self.omega)) + linalg::pauli_x().mapv(|z| z * (0.5 * self.rabi))
    }

    /// Population of the excited ket in a 2x2 qubit matrix.
    pub fn excited_population(&self, q: &[[C64; 2]; 2]) -> f64 {
        let e = self.excited;
        let mut p = ZERO;
        for a in 0..2 {
            for b in 0..2 {
                p += q[a][b] * (e[a] * e[b]);
            }
        }
        p.re
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BathLabel {
    Hot,
    Cold,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalBathParams {
    pub n: f64,
    pub gamma: f64,
    pub label: BathLabel,
}

impl ThermalBathParams {
    /// Excited population of the bath's qubit fixed point.
    pub fn fixed_point_excited(&self) -> f64 {
        self.n / (2.0 * self.n + 1.0)
    }

    /// epsilon / T implied by the photon number (metadata only).
    pub fn implied_gap_over_temperature(&self) -> f64 {
        (1.0 + 1.0 / self.n).ln()
    }

    pub fn implied_temperature(&self, epsilon: f64) -> f64 {
        epsilon / self.implied_gap_over_temperature()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DephasingBathParams {
    /// Coupling Gamma.
    pub coupling: f64,
    /// Lorentzian width gamma.
    pub width: f64,
    /// Peak position omega_0.
    pub omega0: f64,
    /// Inverse temperature; `f64::INFINITY` for zero temperature.
    pub beta: f64,
}

impl DephasingBathParams {
    pub fn zero_temperature(coupling: f64, width: f64, omega0: f64) -> Self {
        Self { coupling, width, omega0, beta: f64::INFINITY }
    }

    pub fn coth(&self) -> f64 {
        coth_half(self.beta, self.omega0)
    }

    /// Thermal occupation of the damped mode.
    pub fn n_osc(&self) -> f64 {
        if self.beta.is_infinite() {
            0.0
        } else {
            1.0 / (self.beta * self.omega0).exp_m1()
        }
    }

    pub fn is_coupled(&self) -> bool {
        self.coupling != 0.0
    }
}

/// coth(beta w / 2), equal to 1 at beta = infinity.
pub fn coth_half(beta: f64, w: f64) -> f64 {
    if beta.is_infinite() {
        1.0
    } else {
        1.0 / (0.5 * beta * w).tanh()
    }
}

pub fn lorentzian_sd(w: f64, p: &DephasingBathParams) -> f64 {
    let g = p.width;
    2.0 * p.coupling * p.coupling * g / (g * g + 4.0 * (w - p.omega0).powi(2))
}

pub fn thermalized_sd(w: f64, p: &DephasingBathParams) -> f64 {
    let c = p.coth();
    0.5 * lorentzian_sd(w, p) * (c + 1.0) + 0.5 * lorentzian_sd(-w, p) * (c - 1.0)
}

/// Alternative convention J'(w), odd in w.
pub fn alt_sd(w: f64, p: &DephasingBathParams) -> f64 {
    let (g, w0) = (p.width, p.omega0);
    2.0 * p.coupling * p.coupling * g * w0 * w / (g * g * w * w + (w * w - w0 * w0).powi(2))
}

/// Alternative thermal convention J'_beta(w) = sgn(w) J'(|w|) (coth(beta w/2) + 1) / 2.
pub fn alt_thermal_sd(w: f64, p: &DephasingBathParams) -> f64 {
    if w == 0.0 {
        // limit w -> 0 of J'(w) coth(beta w / 2) / 2
        let (g, w0) = (p.width, p.omega0);
        if p.beta.is_infinite() {
            return 0.0;
        }
        return 2.0 * p.coupling * p.coupling * g * w0 / (w0.powi(4)) / p.beta;
    }
    let f = if p.beta.is_infinite() {
        if w > 0.0 {
            2.0
        } else {
            0.0
        }
    } else {
        1.0 / (0.5 * p.beta * w).tanh() + 1.0
    };
    w.signum() * alt_sd(w.abs(), p) * 0.5 * f
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Hot,
    Cold,
    Osc,
}

/// Lindblad generator acting on one factor of a composite layout.
#[derive(Clone, Debug)]
pub struct Liouvillian {
    pub channel: Channel,
    pub layout: HilbertLayout,
    pub factor: usize,
    /// (rate, jump operator) pairs on the local factor.
    pub jumps: Vec<(f64, Mat)>,
    /// Active window in cycle time; `None` means always on.
    pub window: Option<(f64, f64)>,
}

/// Row-major vectorisation: vec(A rho B) = (A kron B^T) vec(rho).
pub fn dissipator_superop(l: &Mat) -> Mat {
    let d = l.nrows();
    let ld = dagger(l);
    let ldl = ld.dot(l);
    let id = identity(d);
    let lconj = l.mapv(|z| z.conj());
    kron(l, &lconj) - kron(&ldl, &id).mapv(|z| z * 0.5) - kron(&id, &ldl.t().to_owned()).mapv(|z| z * 0.5)
}

impl Liouvillian {
    pub fn local_dim(&self) -> usize {
        self.layout.factors()[self.factor]
    }

    pub fn local_superop(&self) -> Mat {
        let d = self.local_dim();
        let mut s = Mat::zeros((d * d, d * d));
        for (rate, l) in &self.jumps {
            if *rate != 0.0 {
                s = s + dissipator_superop(l).mapv(|z| z * *rate);
            }
        }
        s
    }

    fn embed(&self, op: &Mat) -> Mat {
        let f = self.layout.factors();
        let left: usize = f[..self.factor].iter().product();
        let right: usize = f[self.factor + 1..].iter().product();
        kron(&kron(&identity(left), op), &identity(right))
    }

    /// Generator action on a composite matrix (reference implementation).
    pub fn apply(&self, rho: &Mat) -> Mat {
        let mut out = Mat::zeros(rho.dim());
        for (rate, l) in &self.jumps {
            let lf = self.embed(l);
            let ld = dagger(&lf);
            let ldl = ld.dot(&lf);
            let term = lf.dot(rho).dot(&ld) - (ldl.dot(rho) + rho.dot(&ldl)).mapv(|z| z * 0.5);
            out = out + term.mapv(|z| z * *rate);
        }
        out
    }

    pub fn active_at(&self, t: f64) -> bool {
        match self.window {
            None => true,
            Some((a, b)) => t >= a && t < b,
        }
    }
}

/// Thermal generator gamma n D[s+] + gamma (n+1) D[s-] in the given eigenbasis.
pub fn thermal_liouvillian(
    bath: &ThermalBathParams,
    basis: &Eigensystem,
    layout: HilbertLayout,
    window: Option<(f64, f64)>,
) -> Liouvillian {
    let channel = match bath.label {
        BathLabel::Hot => Channel::Hot,
        BathLabel::Cold => Channel::Cold,
    };
    Liouvillian {
        channel,
        layout,
        factor: 0,
        jumps: vec![(bath.gamma * bath.n, basis.sigma_plus()), (bath.gamma * (bath.n + 1.0), basis.sigma_minus())],
        window,
    }
}

/// Damping of the mode: gamma (1 + n) D[b] + gamma n D[b^dag].
pub fn osc_liouvillian(p: &DephasingBathParams, layout: HilbertLayout, factor: usize) -> Liouvillian {
    let d = layout.factors()[factor];
    let b = linalg::annihilation(d - 1);
    let n = p.n_osc();
    let mut jumps = vec![(p.width * (1.0 + n), b.clone())];
    if n > 0.0 {
        jumps.push((p.width * n, dagger(&b)));
    }
    Liouvillian { channel: Channel::Osc, layout, factor, jumps, window: None }
}

/// Generator for `channel` at cycle time `t` on the qubit-oscillator space of `cfg`.
pub fn build_liouvillian(channel: Channel, cfg: &EngineConfig, t: f64) -> Result<Liouvillian> {
    let layout = HilbertLayout::new(vec![2, cfg.resolved_n_max() + 1])?;
    let drive = cfg.drive();
    let b = cfg.strokes.boundaries();
    match channel {
        Channel::Osc => Ok(osc_liouvillian(&cfg.dephasing, layout, 1)),
        Channel::Hot | Channel::Cold => {
            let (stroke, bath) =
                if channel == Channel::Hot { (Stroke::Hot, &cfg.hot) } else { (Stroke::Cold, &cfg.cold) };
            let here = drive.stroke_at(t);
            if here != stroke {
                return Err(Error::Numerics(format!(
                    "{} bath requested at t = {t} during the {} stroke",
                    stroke.name(),
                    here.name()
                )));
            }
            let i = stroke.index();
            Ok(thermal_liouvillian(bath, &drive.eigensystem(t), layout, Some((b[i], b[i + 1]))))
        }
    }
}

/// H_D(t) = H_S(t) + Gamma sz(t) (b + b^dag) + omega_0 b^dag b on qubit (x) mode.
pub fn dampf_hamiltonian(t: f64, cfg: &EngineConfig) -> Result<Operator> {
    let n_max = cfg.resolved_n_max();
    let layout = HilbertLayout::new(vec![2, n_max + 1])?;
    let eig = cfg.drive().eigensystem(t);
    let b = linalg::annihilation(n_max);
    let x = &b + &dagger(&b);
    let p = &cfg.dephasing;
    let h = kron(&eig.h_s(), &identity(n_max + 1))
        + kron(&eig.sigma_z(), &x).mapv(|z| z * p.coupling)
        + kron(&identity(2), &linalg::number(n_max)).mapv(|z| z * p.omega0);
    Operator::new(layout, h)
}

/// Real ket as a complex vector.
pub fn ket(a: [f64; 2]) -> Array1<C64> {
    Array1::from(vec![C64::from(a[0]), C64::from(a[1])])
}
