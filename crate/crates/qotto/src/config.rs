//! Engine configuration, built-in presets and the flat `section.key = value` format.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis;
use crate::error::{Error, Result};
use crate::linalg::{coherent_amplitudes, DIM_CAP};
use crate::model::{BathLabel, DephasingBathParams, DriveProfile, StrokeDurations, ThermalBathParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineParams {
    pub omega: f64,
    pub omega_rabi_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Numerics {
    /// Fixed time step; `None` selects the default rule.
    pub dt: Option<f64>,
    /// Oscillator cutoff; `None` selects the default rule.
    pub n_max: Option<usize>,
    pub cycle_tol: f64,
    pub max_cycles: usize,
    /// Ledger sampling stride in steps; `None` gives about 256 samples per cycle.
    pub sample_stride: Option<usize>,
    pub stability_bound: f64,
    pub dim_cap: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            dt: None,
            n_max: None,
            cycle_tol: 1e-6,
            max_cycles: 20,
            sample_stride: None,
            stability_bound: 0.05,
            dim_cap: DIM_CAP,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TedopaParams {
    /// Half-width of the support [omega_0 - a, omega_0 + a].
    pub a: f64,
    /// Chain length.
    pub n_modes: usize,
    /// Per-site Fock dimension.
    pub local_dim: usize,
    /// Cap on the total number of chain excitations.
    pub max_excitations: usize,
    /// Simulated time from the cycle start.
    pub horizon: f64,
    /// Chain time step.
    pub dt: f64,
}

impl Default for TedopaParams {
    fn default() -> Self {
        Self { a: 16.0, n_modes: 24, local_dim: 3, max_excitations: 2, horizon: 2.0, dt: 1.0 / 128.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub engine: EngineParams,
    pub hot: ThermalBathParams,
    pub cold: ThermalBathParams,
    pub dephasing: DephasingBathParams,
    pub strokes: StrokeDurations,
    pub numerics: Numerics,
    pub tedopa: TedopaParams,
}

pub const PAPER_DURATIONS: [f64; 4] = [0.78125, 1.84375, 0.6875, 2.625];

/// Offset of the appendix presets from the critical width.
pub const DELTA_GAMMA: f64 = 1.0 / 256.0;

pub const PRESETS: &[&str] = &[
    "paper-4.1",
    "paper-4.1-lite",
    "paper-4.3",
    "paper-4.3-lite",
    "fig2",
    "fig2-lite",
    "appendixD",
    "appendixD-lite",
    "quasistatic-check",
    "quasistatic-check-lite",
];

const REQUIRED_KEYS: &[&str] = &[
    "engine.omega",
    "engine.omega_rabi_max",
    "bath.hot.n",
    "bath.hot.gamma",
    "bath.cold.n",
    "bath.cold.gamma",
    "dephasing.Gamma",
    "dephasing.gamma",
    "dephasing.omega0",
    "strokes.tau_com",
    "strokes.tau_h",
    "strokes.tau_exp",
    "strokes.tau_c",
];

const OPTIONAL_KEYS: &[&str] = &[
    "dephasing.beta",
    "numerics.dt",
    "numerics.n_max",
    "numerics.cycle_tol",
    "numerics.max_cycles",
    "numerics.sample_stride",
    "numerics.stability_bound",
    "numerics.dim_cap",
    "tedopa.a",
    "tedopa.N",
    "tedopa.local_dim",
    "tedopa.max_excitations",
    "tedopa.horizon",
    "tedopa.dt",
];

impl EngineConfig {
    /// The paper's work medium and thermal baths with the dephasing bath switched off.
    pub fn paper_baseline() -> Self {
        Self {
            engine: EngineParams { omega: 1.0, omega_rabi_max: 0.5 },
            hot: ThermalBathParams { n: 0.4857, gamma: 0.5, label: BathLabel::Hot },
            cold: ThermalBathParams { n: 0.0524, gamma: 0.5, label: BathLabel::Cold },
            dephasing: DephasingBathParams::zero_temperature(0.0, 128.0, 1024.0),
            strokes: StrokeDurations::from_array(PAPER_DURATIONS).unwrap(),
            numerics: Numerics::default(),
            tedopa: TedopaParams::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let mut c = Self::paper_baseline();
        match name {
            "paper-4.1" | "paper-4.1-lite" => {}
            "paper-4.3" => c.dephasing = DephasingBathParams::zero_temperature(256.0, 128.0, 1024.0),
            // same effective rate and omega_0/gamma ratio at a 16x smaller mode frequency
            "paper-4.3-lite" => c.dephasing = DephasingBathParams::zero_temperature(64.0, 8.0, 64.0),
            "fig2" | "fig2-lite" => {
                c.dephasing = DephasingBathParams::zero_temperature(0.5, 2.0, 10.0);
                c.strokes = StrokeDurations::new(2.0, 2.0, 2.0, 2.0)?;
                if name == "fig2-lite" {
                    c.tedopa.a = 8.0;
                    c.tedopa.n_modes = 16;
                }
            }
            "appendixD" | "appendixD-lite" => {
                let (gamma_c, gbar, wbar) =
                    if name == "appendixD" { (256.0, 128.0, 1024.0) } else { (64.0, 8.0, 64.0) };
                let (_, gamma0) = analysis::scaling_constant_power(gbar, wbar, gbar)?;
                let g = gamma0 - DELTA_GAMMA;
                let (w0, _) = analysis::scaling_constant_power(gbar, wbar, g)?;
                c.dephasing = DephasingBathParams::zero_temperature(gamma_c, g, w0);
            }
            "quasistatic-check" => c.strokes = StrokeDurations::new(100.0, 100.0, 100.0, 100.0)?,
            "quasistatic-check-lite" => c.strokes = StrokeDurations::new(50.0, 50.0, 50.0, 50.0)?,
            _ => return Err(Error::config(format!("unknown preset '{name}' (known: {})", PRESETS.join(", ")))),
        }
        Ok(c)
    }

    pub fn drive(&self) -> DriveProfile {
        DriveProfile { omega: self.engine.omega, omega_rabi_max: self.engine.omega_rabi_max, durations: self.strokes }
    }

    pub fn with_durations(&self, d: StrokeDurations) -> Self {
        let mut c = *self;
        c.strokes = d;
        c
    }

    pub fn with_coupling(&self, coupling: f64) -> Self {
        let mut c = *self;
        c.dephasing.coupling = coupling;
        c.numerics.n_max = None;
        c
    }

    pub fn epsilon_max(&self) -> f64 {
        let d = self.drive();
        d.epsilon_hot().max(d.epsilon_cold())
    }

    /// Largest rate that the step size has to resolve.
    pub fn max_rate(&self) -> f64 {
        let mut r = self.epsilon_max();
        let p = &self.dephasing;
        if p.is_coupled() {
            r = r.max(p.omega0).max(p.coupling).max(p.width);
        }
        r
    }

    /// Default step: 0.02 over the largest rate, rounded down to a power of two
    /// (and at most 1/32) so that it divides stroke durations on the 1/32 grid.
    pub fn default_dt(&self) -> f64 {
        let target = (0.02 / self.max_rate()).min(1.0 / 32.0);
        2f64.powi(target.log2().floor() as i32)
    }

    pub fn resolved_dt(&self) -> f64 {
        self.numerics.dt.unwrap_or_else(|| self.default_dt())
    }

    /// Smallest cutoff whose coherent top-level population at the steady
    /// displacement (and thermal top-level population) is below 1e-8, plus 4.
    pub fn default_n_max(&self) -> usize {
        let p = &self.dephasing;
        if !p.is_coupled() {
            return 0;
        }
        let alpha = analysis::steady_displacement(p.coupling, p.width, p.omega0);
        let nth = p.n_osc();
        let mut n = 1;
        loop {
            let (_, top) = coherent_amplitudes(alpha, n);
            let thermal_top = if nth > 0.0 { (nth / (1.0 + nth)).powi(n as i32) / (1.0 + nth) } else { 0.0 };
            if top < 1e-8 && thermal_top < 1e-8 {
                break;
            }
            n += 1;
        }
        n + 4
    }

    pub fn resolved_n_max(&self) -> usize {
        if !self.dephasing.is_coupled() {
            return 0;
        }
        self.numerics.n_max.unwrap_or_else(|| self.default_n_max())
    }

    pub fn sample_stride(&self) -> usize {
        self.numerics
            .sample_stride
            .unwrap_or_else(|| ((self.strokes.cycle() / self.resolved_dt()) / 256.0).ceil().max(1.0) as usize)
    }

    /// Every violated constraint, not only the first.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let e = &self.engine;
        need(&mut errs, e.omega.is_finite(), format!("engine.omega must be finite (got {})", e.omega));
        need(
            &mut errs,
            e.omega_rabi_max.is_finite(),
            format!("engine.omega_rabi_max must be finite (got {})", e.omega_rabi_max),
        );
        need(
            &mut errs,
            !(e.omega == 0.0 && e.omega_rabi_max == 0.0) && e.omega != 0.0,
            "engine.omega must be non-zero (the cold-stroke gap would vanish)".into(),
        );
        for (k, b) in [("hot", &self.hot), ("cold", &self.cold)] {
            need(&mut errs, b.n >= 0.0 && b.n.is_finite(), format!("bath.{k}.n must be >= 0 (got {})", b.n));
            need(
                &mut errs,
                b.gamma >= 0.0 && b.gamma.is_finite(),
                format!("bath.{k}.gamma must be >= 0 (got {})", b.gamma),
            );
        }
        let p = &self.dephasing;
        need(
            &mut errs,
            p.coupling >= 0.0 && p.coupling.is_finite(),
            format!("dephasing.Gamma must be >= 0 (got {})", p.coupling),
        );
        need(&mut errs, p.width > 0.0 && p.width.is_finite(), format!("dephasing.gamma must be > 0 (got {})", p.width));
        need(
            &mut errs,
            p.omega0 > 0.0 && p.omega0.is_finite(),
            format!("dephasing.omega0 must be > 0 (got {})", p.omega0),
        );
        need(&mut errs, p.beta > 0.0, format!("dephasing.beta must be > 0 or inf (got {})", p.beta));
        if let Err(Error::Config(v)) = self.strokes.validate() {
            errs.extend(v);
        }
        let n = &self.numerics;
        need(&mut errs, n.cycle_tol > 0.0, format!("numerics.cycle_tol must be > 0 (got {})", n.cycle_tol));
        need(&mut errs, n.max_cycles >= 1, "numerics.max_cycles must be >= 1".into());
        need(&mut errs, n.stability_bound > 0.0, "numerics.stability_bound must be > 0".into());
        if let Some(dt) = n.dt {
            need(&mut errs, dt > 0.0 && dt.is_finite(), format!("numerics.dt must be > 0 (got {dt})"));
        }
        if errs.is_empty() {
            let dt = self.resolved_dt();
            let prod = dt * self.max_rate();
            if prod > n.stability_bound {
                errs.push(format!(
                    "numerics.dt = {dt} violates the stability bound: dt * max rate = {prod:.4} > {}",
                    n.stability_bound
                ));
            }
            for (k, v) in ["tau_com", "tau_h", "tau_exp", "tau_c"].iter().zip(self.strokes.as_array()) {
                let steps = v / dt;
                if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
                    errs.push(format!("numerics.dt = {dt} does not divide strokes.{k} = {v}"));
                }
            }
            let dim = 2 * (self.resolved_n_max() + 1);
            if dim > n.dim_cap {
                errs.push(format!("qubit-oscillator dimension {dim} exceeds numerics.dim_cap = {}", n.dim_cap));
            }
        }
        let t = &self.tedopa;
        need(&mut errs, t.a > 0.0, format!("tedopa.a must be > 0 (got {})", t.a));
        need(&mut errs, t.n_modes >= 1, "tedopa.N must be >= 1".into());
        need(&mut errs, t.local_dim >= 2, "tedopa.local_dim must be >= 2".into());
        need(&mut errs, t.max_excitations >= 1, "tedopa.max_excitations must be >= 1".into());
        need(&mut errs, t.horizon > 0.0 && t.dt > 0.0, "tedopa.horizon and tedopa.dt must be > 0".into());
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Flat `section.key -> value` view used by the file format and manifests.
    pub fn to_flat(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("engine.omega", fmt_exact(self.engine.omega));
        put("engine.omega_rabi_max", fmt_exact(self.engine.omega_rabi_max));
        put("bath.hot.n", fmt_exact(self.hot.n));
        put("bath.hot.gamma", fmt_exact(self.hot.gamma));
        put("bath.cold.n", fmt_exact(self.cold.n));
        put("bath.cold.gamma", fmt_exact(self.cold.gamma));
        put("dephasing.Gamma", fmt_exact(self.dephasing.coupling));
        put("dephasing.gamma", fmt_exact(self.dephasing.width));
        put("dephasing.omega0", fmt_exact(self.dephasing.omega0));
        put("dephasing.beta", fmt_exact(self.dephasing.beta));
        put("strokes.tau_com", fmt_exact(self.strokes.tau_com));
        put("strokes.tau_h", fmt_exact(self.strokes.tau_h));
        put("strokes.tau_exp", fmt_exact(self.strokes.tau_exp));
        put("strokes.tau_c", fmt_exact(self.strokes.tau_c));
        put("numerics.dt", fmt_exact(self.resolved_dt()));
        put("numerics.n_max", self.resolved_n_max().to_string());
        put("numerics.cycle_tol", fmt_exact(self.numerics.cycle_tol));
        put("numerics.max_cycles", self.numerics.max_cycles.to_string());
        put("numerics.sample_stride", self.sample_stride().to_string());
        put("numerics.stability_bound", fmt_exact(self.numerics.stability_bound));
        put("numerics.dim_cap", self.numerics.dim_cap.to_string());
        put("tedopa.a", fmt_exact(self.tedopa.a));
        put("tedopa.N", self.tedopa.n_modes.to_string());
        put("tedopa.local_dim", self.tedopa.local_dim.to_string());
        put("tedopa.max_excitations", self.tedopa.max_excitations.to_string());
        put("tedopa.horizon", fmt_exact(self.tedopa.horizon));
        put("tedopa.dt", fmt_exact(self.tedopa.dt));
        m
    }

    /// Deterministic text form of the resolved configuration.
    pub fn canonical_text(&self) -> String {
        self.to_flat().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_text().as_bytes())
    }

    /// Parse the flat file format. A `preset = "name"` entry supplies defaults
    /// for every key; without it all required keys must be present.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_str_with_preset(text, None)
    }

    /// As `from_toml_str`, with `preset` used when the file names none.
    pub fn from_toml_str_with_preset(text: &str, preset: Option<&str>) -> Result<Self> {
        let value: toml::Value =
            text.parse().map_err(|e: toml::de::Error| Error::config(format!("parse error: {e}")))?;
        let mut flat = BTreeMap::new();
        flatten("", &value, &mut flat);
        if let Some(p) = preset {
            flat.entry("preset".into()).or_insert_with(|| toml::Value::String(p.into()));
        }
        Self::from_flat(&flat)
    }

    pub fn from_flat(flat: &BTreeMap<String, toml::Value>) -> Result<Self> {
        let mut errs = Vec::new();
        let base = match flat.get("preset") {
            Some(toml::Value::String(p)) => match Self::preset(p) {
                Ok(c) => Some(c),
                Err(Error::Config(v)) => {
                    errs.extend(v);
                    None
                }
                Err(e) => return Err(e),
            },
            Some(v) => {
                errs.push(format!("preset must be a string (got {v})"));
                None
            }
            None => None,
        };
        if base.is_none() {
            for k in REQUIRED_KEYS {
                if !flat.contains_key(*k) {
                    errs.push(format!("missing required key '{k}'"));
                }
            }
        }
        for k in flat.keys() {
            if k != "preset" && !REQUIRED_KEYS.contains(&k.as_str()) && !OPTIONAL_KEYS.contains(&k.as_str()) {
                errs.push(format!("unknown key '{k}'"));
            }
        }
        let mut c = base.unwrap_or_else(Self::paper_baseline);
        for (k, v) in flat {
            if k == "preset" {
                continue;
            }
            if let Err(msg) = c.set_value(k, v) {
                errs.push(msg);
            }
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        c.validate()?;
        Ok(c)
    }

    /// Apply one `key = value` override.
    pub fn set_value(&mut self, key: &str, v: &toml::Value) -> std::result::Result<(), String> {
        let num = |v: &toml::Value| -> std::result::Result<f64, String> {
            match v {
                toml::Value::Float(f) => Ok(*f),
                toml::Value::Integer(i) => Ok(*i as f64),
                toml::Value::String(s) if s == "inf" => Ok(f64::INFINITY),
                _ => Err(format!("key '{key}' expects a number (got {v})")),
            }
        };
        let auto = |v: &toml::Value| matches!(v, toml::Value::String(s) if s == "auto");
        let int = |v: &toml::Value| -> std::result::Result<usize, String> {
            match v {
                toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
                _ => Err(format!("key '{key}' expects a non-negative integer (got {v})")),
            }
        };
        match key {
            "engine.omega" => self.engine.omega = num(v)?,
            "engine.omega_rabi_max" => self.engine.omega_rabi_max = num(v)?,
            "bath.hot.n" => self.hot.n = num(v)?,
            "bath.hot.gamma" => self.hot.gamma = num(v)?,
            "bath.cold.n" => self.cold.n = num(v)?,
            "bath.cold.gamma" => self.cold.gamma = num(v)?,
            "dephasing.Gamma" => self.dephasing.coupling = num(v)?,
            "dephasing.gamma" => self.dephasing.width = num(v)?,
            "dephasing.omega0" => self.dephasing.omega0 = num(v)?,
            "dephasing.beta" => self.dephasing.beta = num(v)?,
            "strokes.tau_com" => self.strokes.tau_com = num(v)?,
            "strokes.tau_h" => self.strokes.tau_h = num(v)?,
            "strokes.tau_exp" => self.strokes.tau_exp = num(v)?,
            "strokes.tau_c" => self.strokes.tau_c = num(v)?,
            "numerics.dt" => self.numerics.dt = if auto(v) { None } else { Some(num(v)?) },
            "numerics.n_max" => self.numerics.n_max = if auto(v) { None } else { Some(int(v)?) },
            "numerics.cycle_tol" => self.numerics.cycle_tol = num(v)?,
            "numerics.max_cycles" => self.numerics.max_cycles = int(v)?,
            "numerics.sample_stride" => self.numerics.sample_stride = if auto(v) { None } else { Some(int(v)?.max(1)) },
            "numerics.stability_bound" => self.numerics.stability_bound = num(v)?,
            "numerics.dim_cap" => self.numerics.dim_cap = int(v)?,
            "tedopa.a" => self.tedopa.a = num(v)?,
            "tedopa.N" => self.tedopa.n_modes = int(v)?,
            "tedopa.local_dim" => self.tedopa.local_dim = int(v)?,
            "tedopa.max_excitations" => self.tedopa.max_excitations = int(v)?,
            "tedopa.horizon" => self.tedopa.horizon = num(v)?,
            "tedopa.dt" => self.tedopa.dt = num(v)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Apply `key=value` strings (values in TOML syntax, bare words as strings).
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        let mut errs = Vec::new();
        for s in sets {
            let Some((k, v)) = s.split_once('=') else {
                errs.push(format!("override '{s}' is not of the form key=value"));
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            let val = parse_scalar(v);
            if let Err(m) = self.set_value(k, &val) {
                errs.push(m);
            }
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        self.validate()
    }
}

fn need(errs: &mut Vec<String>, ok: bool, msg: String) {
    if !ok {
        errs.push(msg);
    }
}

pub fn parse_scalar(v: &str) -> toml::Value {
    format!("x = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|t| t.get("x").cloned())
        .unwrap_or_else(|| toml::Value::String(v.to_string()))
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, toml::Value>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

/// Shortest round-trip representation, with `inf` spelled as in TOML.
pub fn fmt_exact(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:?}")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}
