//! Line-oriented run configuration: parsing, validation and the normalized
//! dump that parses back to the same value.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt::{self, Write as _};

use num_complex::Complex64 as C64;
use pdcnet::algebra::{ModeId, ModeKind, StateSpec};
use pdcnet::dynamics::EnsembleSettings;
use pdcnet::experiments::{
    build_preset, linspace, Bindings, NetworkTemplate, PresetId, PresetParams, ScanMetadata, ScanParam, ExperimentError,
    EQUAL_PATH_RATIO, MAX_PRESET_GAIN,
};
use pdcnet::network::{Component, NetworkError};
use pdcnet::NetworkSpec;
use serde::Serialize;

use crate::expr::{parse_constant, parse_expr, Expr, Var};

const MAX_GRID_POINTS: usize = 1_000_000;
const MAX_ENSEMBLE: usize = 4096;

/// Where a configuration value came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Line(usize),
    Flag(String),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigError {
    pub key: String,
    pub origin: Option<Origin>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.origin {
            Some(Origin::Line(n)) => write!(f, "line {n}: {}: {}", self.key, self.message),
            Some(Origin::Flag(flag)) => write!(f, "{flag}: {}", self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

/// Every problem found in a configuration, in source order where known.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, e) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Origins of configuration keys, used to attach locations to errors.
pub type Sources = BTreeMap<String, Origin>;

/// `start:end:step`, endpoints included when the step divides the span.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn default_phase() -> Self {
        Self { start: 0.0, end: TAU, step: TAU / 400.0 }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let parts: Vec<&str> = text.split(':').collect();
        let [a, b, s] = parts.as_slice() else {
            return Err(format!("grid `{text}` must have the form start:end:step"));
        };
        let g = Self { start: parse_constant(a)?, end: parse_constant(b)?, step: parse_constant(s)? };
        if !(g.step > 0.0) {
            return Err(format!("grid step {} must be positive", g.step));
        }
        if g.end < g.start {
            return Err(format!("grid end {} is below its start {}", g.end, g.start));
        }
        if (g.end - g.start) / g.step >= MAX_GRID_POINTS as f64 {
            return Err(format!("grid has more than {MAX_GRID_POINTS} points"));
        }
        Ok(g)
    }

    pub fn points(&self) -> Vec<f64> {
        let ratio = (self.end - self.start) / self.step;
        let slack = 1e-9 * ratio.max(1.0);
        let n = (ratio + slack).floor() as usize + 1;
        if ((n - 1) as f64 - ratio).abs() <= slack {
            linspace(self.start, self.end, n)
        } else {
            (0..n).map(|k| self.start + k as f64 * self.step).collect()
        }
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}:{:?}:{:?}", self.start, self.end, self.step)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ModelChoice {
    /// Classical-seed limit for seeded networks, full rate otherwise.
    #[default]
    Auto,
    Full,
    Stimulated,
}

impl ModelChoice {
    pub fn parse(text: &str) -> Result<Self, String> {
        match text {
            "auto" => Ok(Self::Auto),
            "full" => Ok(Self::Full),
            "stimulated" => Ok(Self::Stimulated),
            other => Err(format!("unknown model `{other}` (expected auto, full or stimulated)")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Auto => "auto",
            Self::Full => "full",
            Self::Stimulated => "stimulated",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexExpr {
    pub re: Expr,
    pub im: Expr,
}

impl ComplexExpr {
    pub fn real(re: f64) -> Self {
        Self { re: Expr::Num(re), im: Expr::Num(0.0) }
    }

    fn parse(text: &str) -> Result<Self, String> {
        let parts: Vec<&str> = text.split(',').collect();
        match parts.as_slice() {
            [re] => Ok(Self { re: parse_expr(re)?, im: Expr::Num(0.0) }),
            [re, im] => Ok(Self { re: parse_expr(re)?, im: parse_expr(im)? }),
            _ => Err(format!("complex value `{text}` must be `re` or `re, im`")),
        }
    }

    pub fn eval(&self, b: &Bindings) -> C64 {
        C64::new(self.re.eval(b), self.im.eval(b))
    }

    fn uses(&self, v: Var) -> bool {
        self.re.uses(v) || self.im.uses(v)
    }
}

impl fmt::Display for ComplexExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}", self.re, self.im)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ComponentSpec {
    Crystal { signal: String, idler: String, gain: ComplexExpr, pump_phase: Expr },
    Phase { mode: String, phase: Expr },
    Mirror { mode: String },
    Filter { mode: String, tau: Expr, theta: Expr, ancilla: String },
    Seed { mode: String, alpha: ComplexExpr },
    Combiner { inputs: Vec<String>, output: String, weights: Vec<ComplexExpr> },
    Detector { name: String, mode: String },
}

impl ComponentSpec {
    fn kind(&self) -> &'static str {
        match self {
            Self::Crystal { .. } => "crystal",
            Self::Phase { .. } => "phase",
            Self::Mirror { .. } => "mirror",
            Self::Filter { .. } => "filter",
            Self::Seed { .. } => "seed",
            Self::Combiner { .. } => "combiner",
            Self::Detector { .. } => "detector",
        }
    }

    fn uses(&self, v: Var) -> bool {
        match self {
            Self::Crystal { gain, pump_phase, .. } => gain.uses(v) || pump_phase.uses(v),
            Self::Phase { phase, .. } => phase.uses(v),
            Self::Filter { tau, theta, .. } => tau.uses(v) || theta.uses(v),
            Self::Seed { alpha, .. } => alpha.uses(v),
            Self::Combiner { weights, .. } => weights.iter().any(|w| w.uses(v)),
            Self::Mirror { .. } | Self::Detector { .. } => false,
        }
    }

    fn labels(&self) -> Vec<&str> {
        match self {
            Self::Crystal { signal, idler, .. } => vec![signal, idler],
            Self::Phase { mode, .. } | Self::Mirror { mode } | Self::Seed { mode, .. } | Self::Detector { mode, .. } => vec![mode],
            Self::Filter { mode, ancilla, .. } => vec![mode, ancilla],
            Self::Combiner { inputs, output, .. } => inputs.iter().map(String::as_str).chain([output.as_str()]).collect(),
        }
    }

    fn write_keys(&self, out: &mut String) {
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("kind", &self.kind());
        match self {
            Self::Crystal { signal, idler, gain, pump_phase } => {
                kv("signal", signal);
                kv("idler", idler);
                kv("gain", gain);
                kv("pump_phase", pump_phase);
            }
            Self::Phase { mode, phase } => {
                kv("mode", mode);
                kv("phase", phase);
            }
            Self::Mirror { mode } => kv("mode", mode),
            Self::Filter { mode, tau, theta, ancilla } => {
                kv("mode", mode);
                kv("tau", tau);
                kv("theta", theta);
                kv("ancilla", ancilla);
            }
            Self::Seed { mode, alpha } => {
                kv("mode", mode);
                kv("alpha", alpha);
            }
            Self::Combiner { inputs, output, weights } => {
                kv("inputs", &inputs.join(", "));
                kv("output", output);
                kv("weights", &weights.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("; "));
            }
            Self::Detector { name, mode } => {
                kv("name", name);
                kv("mode", mode);
            }
        }
    }
}

/// A network written out component by component. Numeric parameters may
/// reference `phi`, `phi_p`, `tau` and `theta`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InlineNetwork {
    pub components: Vec<ComponentSpec>,
    /// Coherent amplitudes of modes at the input.
    pub state: Vec<(String, C64)>,
}

impl InlineNetwork {
    pub fn uses(&self, v: Var) -> bool {
        self.components.iter().any(|c| c.uses(v))
    }

    fn mode_kinds(&self) -> BTreeMap<&str, ModeKind> {
        let mut kinds = BTreeMap::new();
        for c in &self.components {
            match c {
                ComponentSpec::Crystal { signal, idler, .. } => {
                    kinds.entry(signal.as_str()).or_insert(ModeKind::Signal);
                    kinds.entry(idler.as_str()).or_insert(ModeKind::Idler);
                }
                ComponentSpec::Filter { ancilla, .. } => {
                    kinds.entry(ancilla.as_str()).or_insert(ModeKind::Ancilla);
                }
                _ => {}
            }
        }
        kinds
    }

    /// Component `index` evaluated at `b`, with mode kinds inferred from the
    /// roles labels play elsewhere in the network.
    fn component(&self, index: usize, b: &Bindings, kinds: &BTreeMap<&str, ModeKind>) -> Component {
        let m = |label: &str| ModeId::new(label, kinds.get(label).copied().unwrap_or(ModeKind::Signal));
        match &self.components[index] {
            ComponentSpec::Crystal { signal, idler, gain, pump_phase } => {
                Component::Crystal { signal: m(signal), idler: m(idler), gain: gain.eval(b), pump_phase: pump_phase.eval(b) }
            }
            ComponentSpec::Phase { mode, phase } => Component::PhaseShift { mode: m(mode), phase: phase.eval(b) },
            ComponentSpec::Mirror { mode } => Component::Mirror { mode: m(mode) },
            ComponentSpec::Filter { mode, tau, theta, ancilla } => Component::Filter {
                mode: m(mode),
                transmission: C64::from_polar(tau.eval(b), theta.eval(b)),
                ancilla: m(ancilla),
            },
            ComponentSpec::Seed { mode, alpha } => Component::Seed { mode: m(mode), alpha: alpha.eval(b) },
            ComponentSpec::Combiner { inputs, output, weights } => Component::Combiner {
                inputs: inputs.iter().map(|l| m(l)).collect(),
                output: m(output),
                weights: weights.iter().map(|w| w.eval(b)).collect(),
            },
            ComponentSpec::Detector { name, mode } => Component::Detector { name: name.clone(), mode: m(mode) },
        }
    }

    pub fn network(&self, b: &Bindings) -> NetworkSpec {
        let kinds = self.mode_kinds();
        let components = (0..self.components.len()).map(|k| self.component(k, b, &kinds)).collect();
        let mut state = StateSpec::vacuum();
        for (label, alpha) in &self.state {
            state = state.with_coherent(ModeId::new(label, kinds.get(label.as_str()).copied().unwrap_or(ModeKind::Signal)), *alpha);
        }
        NetworkSpec::new(components).with_state(state)
    }
}

impl NetworkTemplate for InlineNetwork {
    fn instantiate(&self, bindings: &Bindings) -> Result<NetworkSpec, ExperimentError> {
        let net = self.network(bindings);
        net.validate()?;
        Ok(net)
    }

    fn metadata(&self) -> ScanMetadata {
        let base = Bindings::default();
        let net = self.network(&base);
        let seed = net
            .components
            .iter()
            .find_map(|c| match c {
                Component::Seed { alpha, .. } => Some(*alpha),
                _ => None,
            })
            .unwrap_or_default();
        let gains = net
            .components
            .iter()
            .filter_map(|c| match c {
                Component::Crystal { gain, .. } => Some(*gain),
                _ => None,
            })
            .collect();
        ScanMetadata { preset: "inline".into(), seed, gains }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NetworkSource {
    Preset(PresetId),
    Inline(InlineNetwork),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseLockConfig {
    pub ensemble: usize,
    pub signal: f64,
    pub idler: f64,
    pub pump: f64,
    pub kappa: f64,
    pub z_max: f64,
    pub tolerance: f64,
    pub epsilon: f64,
    pub growth: f64,
}

impl Default for PhaseLockConfig {
    fn default() -> Self {
        let s = EnsembleSettings::default();
        Self {
            ensemble: s.members,
            signal: s.signal,
            idler: s.idler,
            pump: s.pump,
            kappa: s.kappa,
            z_max: s.z_max,
            tolerance: s.tol,
            epsilon: s.epsilon,
            growth: s.growth_limit,
        }
    }
}

impl PhaseLockConfig {
    pub fn settings(&self) -> EnsembleSettings {
        EnsembleSettings {
            members: self.ensemble,
            signal: self.signal,
            idler: self.idler,
            pump: self.pump,
            kappa: self.kappa,
            z_max: self.z_max,
            tol: self.tolerance,
            epsilon: self.epsilon,
            growth_limit: self.growth,
        }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        if key == "ensemble" {
            self.ensemble = value.trim().parse().map_err(|_| format!("ensemble size `{value}` is not a whole number"))?;
            return Ok(());
        }
        let slot = match key {
            "signal" => &mut self.signal,
            "idler" => &mut self.idler,
            "pump" => &mut self.pump,
            "kappa" => &mut self.kappa,
            "z_max" => &mut self.z_max,
            "tolerance" => &mut self.tolerance,
            "epsilon" => &mut self.epsilon,
            "growth" => &mut self.growth,
            other => return Err(format!("unknown key `{other}`")),
        };
        *slot = parse_constant(value)?;
        Ok(())
    }

    fn fields(&self) -> [(&'static str, f64); 8] {
        [
            ("signal", self.signal),
            ("idler", self.idler),
            ("pump", self.pump),
            ("kappa", self.kappa),
            ("z_max", self.z_max),
            ("tolerance", self.tolerance),
            ("epsilon", self.epsilon),
            ("growth", self.growth),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: Option<NetworkSource>,
    /// Preset-only settings; `None` keeps the preset default.
    pub seeded: Option<bool>,
    pub alpha: Option<C64>,
    pub gain: Option<C64>,
    pub bindings: Bindings,
    /// Fringe parameter; `None` uses the preset's natural one.
    pub scan: Option<ScanParam>,
    pub phi_grid: GridSpec,
    pub tau_grid: Option<GridSpec>,
    /// Detector whose rate is scanned; `None` picks `A`, or the first
    /// detector of an inline network.
    pub detector: Option<String>,
    pub coincidence: Option<(String, String)>,
    pub model: ModelChoice,
    pub oracle: bool,
    pub out: String,
    pub phase_lock: Option<PhaseLockConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            network: None,
            seeded: None,
            alpha: None,
            gain: None,
            bindings: PresetParams::default().bindings(),
            scan: None,
            phi_grid: GridSpec::default_phase(),
            tau_grid: None,
            detector: None,
            coincidence: None,
            model: ModelChoice::Auto,
            oracle: false,
            out: "out".into(),
            phase_lock: None,
        }
    }
}

impl RunConfig {
    pub fn preset_params(&self) -> PresetParams {
        let mut p = PresetParams::default().bound(&self.bindings);
        if let Some(g) = self.gain {
            p.gains = [g; 3];
        }
        if let Some(a) = self.alpha {
            p.alpha = a;
        }
        p.seeded = self.seeded.unwrap_or(false);
        p
    }

    /// Network at the base bindings.
    pub fn base_network(&self) -> Option<Result<NetworkSpec, ExperimentError>> {
        match self.network.as_ref()? {
            NetworkSource::Preset(id) => Some(build_preset(*id, &self.preset_params())),
            NetworkSource::Inline(n) => Some(n.instantiate(&self.bindings)),
        }
    }

    pub fn template(&self) -> Option<Box<dyn NetworkTemplate>> {
        match self.network.as_ref()? {
            NetworkSource::Preset(id) => Some(Box::new(pdcnet::experiments::Preset::new(*id, self.preset_params()))),
            NetworkSource::Inline(n) => Some(Box::new(n.clone())),
        }
    }

    pub fn scan_param(&self) -> ScanParam {
        match (self.scan, &self.network) {
            (Some(s), _) => s,
            (None, Some(NetworkSource::Preset(id))) => id.fringe_parameter(),
            _ => ScanParam::Phi,
        }
    }

    /// Normalized configuration text; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::from("[run]\n");
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(NetworkSource::Preset(id)) = &self.network {
            kv("preset", id);
        }
        if let Some(s) = self.seeded {
            kv("seeded", &s);
        }
        if let Some(a) = self.alpha {
            kv("alpha", &complex_text(a));
        }
        if let Some(g) = self.gain {
            kv("gain", &complex_text(g));
        }
        let b = &self.bindings;
        for (k, v) in [("phi", b.phi), ("phi_p", b.phi_p), ("tau", b.tau), ("theta", b.theta)] {
            kv(k, &format_args!("{v:?}"));
        }
        if let Some(s) = self.scan {
            kv("scan", &s.name());
            if let ScanParam::Coupled { ratio } = s {
                kv("coupling_ratio", &format_args!("{ratio:?}"));
            }
        }
        kv("phi_grid", &self.phi_grid);
        if let Some(g) = &self.tau_grid {
            kv("tau_grid", g);
        }
        if let Some(d) = &self.detector {
            kv("detector", d);
        }
        if let Some((a, d)) = &self.coincidence {
            kv("coincidence", &format_args!("{a}, {d}"));
        }
        kv("model", &self.model.name());
        kv("oracle", &self.oracle);
        kv("out", &self.out);
        if let Some(pl) = &self.phase_lock {
            let _ = writeln!(out, "\n[phase_lock]\nensemble = {}", pl.ensemble);
            for (k, v) in pl.fields() {
                let _ = writeln!(out, "{k} = {v:?}");
            }
        }
        if let Some(NetworkSource::Inline(net)) = &self.network {
            if !net.state.is_empty() {
                out.push_str("\n[state]\n");
                for (label, a) in &net.state {
                    let _ = writeln!(out, "{label} = {}", complex_text(*a));
                }
            }
            for (k, c) in net.components.iter().enumerate() {
                let _ = writeln!(out, "\n[component.{}]", k + 1);
                c.write_keys(&mut out);
            }
        }
        out
    }

    /// Checks the assembled configuration; `sources` supplies locations.
    pub fn check(&self, sources: &Sources) -> Result<(), ConfigErrors> {
        let mut errs = Errors::new(sources);
        let inline = matches!(self.network, Some(NetworkSource::Inline(_)));
        if self.network.is_none() && self.phase_lock.is_none() {
            errs.push("run", "nothing to run: set a preset, add components, or enable phase_lock");
        }
        if inline {
            for (key, set) in [("seeded", self.seeded.is_some()), ("alpha", self.alpha.is_some()), ("gain", self.gain.is_some())] {
                if set {
                    errs.push(key, format!("`{key}` applies to presets only; use seed or crystal components"));
                }
            }
        }
        let b = &self.bindings;
        for (key, v) in [("phi", b.phi), ("phi_p", b.phi_p), ("tau", b.tau), ("theta", b.theta)] {
            if !v.is_finite() {
                errs.push(key, "value is not finite");
            }
        }
        if !(0.0..=1.0).contains(&b.tau) {
            errs.push("tau", format!("transmission {} is outside [0, 1]", b.tau));
        }
        if let Some(g) = self.gain {
            if !(g.norm() <= MAX_PRESET_GAIN) {
                errs.push("gain", format!("gain magnitude {} exceeds {MAX_PRESET_GAIN}", g.norm()));
            }
        }
        if let Some(a) = self.alpha {
            if !(a.re.is_finite() && a.im.is_finite()) {
                errs.push("alpha", "seed amplitude is not finite");
            }
        }
        let scan = self.scan_param();
        if let ScanParam::Coupled { ratio } = scan {
            if !(ratio.is_finite() && ratio > 0.0) {
                errs.push("coupling_ratio", format!("coupling ratio {ratio} must be positive"));
            }
        }
        if self.network.is_some() && scan.is_periodic() && self.phi_grid.end - self.phi_grid.start < TAU - 1e-9 {
            errs.push("phi_grid", "phase grid must span at least one full period (2*pi)");
        }
        if let Some(g) = &self.tau_grid {
            if g.start < 0.0 || g.points().last().is_some_and(|&t| t > 1.0 + 1e-12) {
                errs.push("tau_grid", "transmissions must lie in [0, 1]");
            }
            let tau_dependent = match &self.network {
                Some(NetworkSource::Preset(id)) => *id == PresetId::FilterSetup,
                Some(NetworkSource::Inline(n)) => n.uses(Var::Tau),
                None => false,
            };
            if !tau_dependent {
                errs.push("tau_grid", "the network does not depend on tau");
            }
        }
        if self.out.trim().is_empty() {
            errs.push("out", "output directory is empty");
        }
        if let Some(pl) = &self.phase_lock {
            if pl.ensemble == 0 || pl.ensemble > MAX_ENSEMBLE {
                errs.push("phase_lock.ensemble", format!("ensemble size must be between 1 and {MAX_ENSEMBLE}"));
            }
            for (k, v) in pl.fields() {
                if !(v.is_finite() && v > 0.0) {
                    errs.push(&format!("phase_lock.{k}"), format!("value {v} must be positive"));
                }
            }
            if pl.epsilon >= 1.0 {
                errs.push("phase_lock.epsilon", "lock threshold must be below 1");
            }
            if pl.growth <= 1.0 {
                errs.push("phase_lock.growth", "growth limit must exceed 1");
            }
        }
        if let Some(NetworkSource::Inline(net)) = &self.network {
            check_inline(net, b, &mut errs);
        }
        if errs.is_empty() {
            self.check_network(&mut errs);
        }
        errs.finish()
    }

    fn check_network(&self, errs: &mut Errors) {
        let Some(built) = self.base_network() else { return };
        let net = match built {
            Ok(net) => net,
            Err(ExperimentError::Network(e)) => {
                errs.push(&network_error_key(&e), e.to_string());
                return;
            }
            Err(e) => {
                let key = match &e {
                    ExperimentError::InvalidTransmission(_) => "tau",
                    ExperimentError::GainTooLarge(_) => "gain",
                    _ => "preset",
                };
                errs.push(key, e.to_string());
                return;
            }
        };
        let names: Vec<&str> = net.detectors().map(|(n, _)| n).collect();
        if names.is_empty() {
            errs.push("run", "the network has no detector");
        }
        if let Some(d) = &self.detector {
            if !names.contains(&d.as_str()) {
                errs.push("detector", format!("unknown detector `{d}`"));
            }
        } else if matches!(self.network, Some(NetworkSource::Preset(_))) && !names.contains(&"A") {
            errs.push("detector", "preset has no detector `A`");
        }
        if let Some((a, d)) = &self.coincidence {
            for n in [a, d] {
                if !names.contains(&n.as_str()) {
                    errs.push("coincidence", format!("unknown detector `{n}`"));
                }
            }
            if a == d {
                errs.push("coincidence", "coincidence needs two distinct detectors");
            }
        }
        if self.model == ModelChoice::Stimulated && !pdcnet::network::is_seeded(&net) {
            errs.push("model", "the stimulated model needs a seeded network");
        }
    }
}

fn complex_text(z: C64) -> String {
    format!("{:?}, {:?}", z.re, z.im)
}

fn network_error_key(e: &NetworkError) -> String {
    let index = match e {
        NetworkError::UndefinedMode { index, .. }
        | NetworkError::ModeRedefined { index, .. }
        | NetworkError::AncillaReused { index, .. }
        | NetworkError::DetectedModeRewritten { index, .. }
        | NetworkError::DuplicateDetector { index, .. }
        | NetworkError::CrystalModesCoincide { index, .. }
        | NetworkError::CombinerArity { index, .. }
        | NetworkError::NonFinite { index } => Some(*index),
        _ => None,
    };
    index.map_or_else(|| "network".to_string(), |k| format!("component.{}", k + 1))
}

fn valid_label(label: &str) -> bool {
    !label.is_empty() && label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn check_inline(net: &InlineNetwork, b: &Bindings, errs: &mut Errors) {
    if net.components.is_empty() {
        errs.push("run", "inline network has no components");
    }
    for (k, c) in net.components.iter().enumerate() {
        let key = format!("component.{}", k + 1);
        for label in c.labels() {
            if !valid_label(label) {
                errs.push(&key, format!("mode label `{label}` must be letters, digits or `_`"));
            }
        }
        if let ComponentSpec::Filter { tau, .. } = c {
            let t = tau.eval(b);
            if !(0.0..=1.0).contains(&t.abs()) {
                errs.push(&format!("{key}.tau"), format!("transmission {t} is outside [0, 1]"));
            }
        }
        if let ComponentSpec::Crystal { signal, idler, .. } = c {
            if signal == idler {
                errs.push(&key, format!("signal and idler share the label `{signal}`"));
            }
        }
    }
    let mut seen = BTreeMap::new();
    for (label, a) in &net.state {
        if !valid_label(label) {
            errs.push(&format!("state.{label}"), format!("mode label `{label}` must be letters, digits or `_`"));
        }
        if seen.insert(label.as_str(), ()).is_some() {
            errs.push(&format!("state.{label}"), "mode listed twice");
        }
        if !(a.re.is_finite() && a.im.is_finite()) {
            errs.push(&format!("state.{label}"), "amplitude is not finite");
        }
    }
}

struct Errors<'a> {
    sources: &'a Sources,
    list: Vec<ConfigError>,
}

impl<'a> Errors<'a> {
    fn new(sources: &'a Sources) -> Self {
        Self { sources, list: Vec::new() }
    }

    fn push(&mut self, key: &str, message: impl Into<String>) {
        // Fall back to the enclosing section's location.
        let origin = self.sources.get(key).or_else(|| key.rsplit_once('.').and_then(|(head, _)| self.sources.get(head))).cloned();
        self.list.push(ConfigError { key: key.to_string(), origin, message: message.into() });
    }

    fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    fn finish(mut self) -> Result<(), ConfigErrors> {
        if self.list.is_empty() {
            return Ok(());
        }
        self.list.sort_by_key(|e| match e.origin {
            Some(Origin::Line(n)) => n,
            _ => usize::MAX,
        });
        Err(ConfigErrors(self.list))
    }
}

struct Section {
    name: String,
    line: usize,
    entries: Vec<(String, String, usize)>,
}

/// Parses configuration text into a validated [`RunConfig`], reporting every
/// problem found.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    let (cfg, sources) = parse_unchecked(text)?;
    cfg.check(&sources)?;
    Ok(cfg)
}

/// Syntax-level parse. Cross-field validation is left to [`RunConfig::check`]
/// so that command-line overrides can be applied first.
pub fn parse_unchecked(text: &str) -> Result<(RunConfig, Sources), ConfigErrors> {
    let mut errors = Vec::new();
    let mut err = |line: usize, key: &str, message: String| {
        errors.push(ConfigError { key: key.to_string(), origin: Some(Origin::Line(line)), message });
    };
    let mut sections: Vec<Section> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                err(line, "section", format!("malformed section header `{content}`"));
                continue;
            };
            let name = name.trim().to_string();
            if sections.iter().any(|s| s.name == name) {
                err(line, &name, format!("section [{name}] appears twice"));
            }
            sections.push(Section { name, line, entries: Vec::new() });
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            err(line, "syntax", format!("expected `key = value`, found `{content}`"));
            continue;
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        let Some(section) = sections.last_mut() else {
            err(line, &key, "key outside of any section".into());
            continue;
        };
        if section.entries.iter().any(|(k, _, _)| *k == key) {
            err(line, &key, format!("key `{key}` repeated in [{}]", section.name));
            continue;
        }
        section.entries.push((key, value, line));
    }

    let mut cfg = RunConfig::default();
    let mut sources = Sources::new();
    let mut preset = None;
    let mut state = Vec::new();
    let mut components: Vec<(u32, ComponentSpec)> = Vec::new();
    let mut component_lines: Vec<(u32, usize, Vec<(String, usize)>)> = Vec::new();
    let mut scan_name: Option<(String, usize)> = None;
    let mut ratio: Option<(f64, usize)> = None;

    for section in &sections {
        match section.name.as_str() {
            "run" => {
                for (key, value, line) in &section.entries {
                    sources.insert(key.clone(), Origin::Line(*line));
                    let result: Result<(), String> = (|| {
                        match key.as_str() {
                            "preset" => preset = Some(value.parse::<PresetId>().map_err(|e| e.to_string())?),
                            "seeded" => cfg.seeded = Some(parse_bool(value)?),
                            "alpha" => cfg.alpha = Some(parse_complex_constant(value)?),
                            "gain" => cfg.gain = Some(parse_complex_constant(value)?),
                            "phi" => cfg.bindings.phi = parse_constant(value)?,
                            "phi_p" => cfg.bindings.phi_p = parse_constant(value)?,
                            "tau" => cfg.bindings.tau = parse_constant(value)?,
                            "theta" => cfg.bindings.theta = parse_constant(value)?,
                            "scan" => scan_name = Some((value.clone(), *line)),
                            "coupling_ratio" => ratio = Some((parse_constant(value)?, *line)),
                            "phi_grid" => cfg.phi_grid = GridSpec::parse(value)?,
                            "tau_grid" => cfg.tau_grid = Some(GridSpec::parse(value)?),
                            "detector" => cfg.detector = Some(parse_label(value)?),
                            "coincidence" => cfg.coincidence = Some(parse_pair(value)?),
                            "model" => cfg.model = ModelChoice::parse(value)?,
                            "oracle" => cfg.oracle = parse_bool(value)?,
                            "out" => cfg.out = value.clone(),
                            other => return Err(format!("unknown key `{other}` in [run]")),
                        }
                        Ok(())
                    })();
                    if let Err(m) = result {
                        err(*line, key, m);
                    }
                }
            }
            "phase_lock" => {
                let mut pl = PhaseLockConfig::default();
                sources.insert("phase_lock".into(), Origin::Line(section.line));
                for (key, value, line) in &section.entries {
                    sources.insert(format!("phase_lock.{key}"), Origin::Line(*line));
                    if let Err(m) = pl.set(key, value) {
                        err(*line, &format!("phase_lock.{key}"), m);
                    }
                }
                cfg.phase_lock = Some(pl);
            }
            "state" => {
                for (key, value, line) in &section.entries {
                    sources.insert(format!("state.{key}"), Origin::Line(*line));
                    match parse_complex_constant(value) {
                        Ok(a) => state.push((key.clone(), a)),
                        Err(m) => err(*line, &format!("state.{key}"), m),
                    }
                }
            }
            name => {
                let Some(index) = name.strip_prefix("component.") else {
                    err(section.line, name, format!("unknown section [{name}]"));
                    continue;
                };
                let Ok(n) = index.parse::<u32>() else {
                    err(section.line, name, format!("component index `{index}` is not a whole number"));
                    continue;
                };
                match parse_component(&section.entries) {
                    Ok(c) => components.push((n, c)),
                    Err(list) => {
                        for (line, key, m) in list {
                            let line = line.unwrap_or(section.line);
                            err(line, &format!("{name}.{key}"), m);
                        }
                    }
                }
                component_lines.push((n, section.line, section.entries.iter().map(|(k, _, l)| (k.clone(), *l)).collect()));
            }
        }
    }

    if let Some((name, line)) = scan_name {
        match ScanParam::from_name(&name) {
            Ok(ScanParam::Coupled { .. }) => {
                cfg.scan = Some(ScanParam::Coupled { ratio: ratio.map_or(EQUAL_PATH_RATIO, |r| r.0) });
            }
            Ok(p) => {
                cfg.scan = Some(p);
                if let Some((_, rl)) = ratio {
                    err(rl, "coupling_ratio", "coupling_ratio needs scan = phi_coupled".into());
                }
            }
            Err(e) => err(line, "scan", e.to_string()),
        }
    } else if let Some((_, rl)) = ratio {
        err(rl, "coupling_ratio", "coupling_ratio needs scan = phi_coupled".into());
    }

    components.sort_by_key(|(n, _)| *n);
    component_lines.sort_by_key(|(n, _, _)| *n);
    for (pos, (_, line, keys)) in component_lines.iter().enumerate() {
        let base = format!("component.{}", pos + 1);
        sources.insert(base.clone(), Origin::Line(*line));
        for (k, l) in keys {
            sources.insert(format!("{base}.{k}"), Origin::Line(*l));
        }
    }

    let inline = !components.is_empty() || !state.is_empty();
    match (preset, inline) {
        (Some(_), true) => {
            let line = match sources.get("preset") {
                Some(Origin::Line(n)) => *n,
                _ => 1,
            };
            err(line, "preset", "a preset cannot be combined with [component.*] or [state] sections".into());
        }
        (Some(id), false) => cfg.network = Some(NetworkSource::Preset(id)),
        (None, true) => {
            cfg.network =
                Some(NetworkSource::Inline(InlineNetwork { components: components.into_iter().map(|(_, c)| c).collect(), state }))
        }
        (None, false) => {}
    }

    if errors.is_empty() {
        Ok((cfg, sources))
    } else {
        errors.sort_by_key(|e| match e.origin {
            Some(Origin::Line(n)) => n,
            _ => usize::MAX,
        });
        Err(ConfigErrors(errors))
    }
}

type ComponentErrors = Vec<(Option<usize>, String, String)>;

fn parse_component(entries: &[(String, String, usize)]) -> Result<ComponentSpec, ComponentErrors> {
    let mut errs: ComponentErrors = Vec::new();
    let lookup: BTreeMap<&str, (&str, usize)> = entries.iter().map(|(k, v, l)| (k.as_str(), (v.as_str(), *l))).collect();
    let Some(&(kind, kind_line)) = lookup.get("kind") else {
        return Err(vec![(None, "kind".into(), "missing `kind`".into())]);
    };
    let allowed: &[&str] = match kind {
        "crystal" => &["signal", "idler", "gain", "pump_phase"],
        "phase" => &["mode", "phase"],
        "mirror" => &["mode"],
        "filter" => &["mode", "tau", "theta", "ancilla"],
        "seed" => &["mode", "alpha"],
        "combiner" => &["inputs", "output", "weights"],
        "detector" => &["name", "mode"],
        other => {
            return Err(vec![(
                Some(kind_line),
                "kind".into(),
                format!("unknown kind `{other}` (expected crystal, phase, mirror, filter, seed, combiner or detector)"),
            )])
        }
    };
    for (k, _, l) in entries {
        if k != "kind" && !allowed.contains(&k.as_str()) {
            errs.push((Some(*l), k.clone(), format!("unknown key `{k}` for a {kind}")));
        }
    }

    let mut field = |key: &str, default: Option<&str>| -> Option<(String, Option<usize>)> {
        match lookup.get(key) {
            Some(&(v, l)) => Some((v.to_string(), Some(l))),
            None => match default {
                Some(d) => Some((d.to_string(), None)),
                None => {
                    errs.push((None, key.into(), format!("missing `{key}` for a {kind}")));
                    None
                }
            },
        }
    };
    let mut raw = BTreeMap::new();
    let defaults: &[(&str, Option<&str>)] = match kind {
        "crystal" => &[("signal", None), ("idler", None), ("gain", None), ("pump_phase", Some("0"))],
        "phase" => &[("mode", None), ("phase", None)],
        "mirror" => &[("mode", None)],
        "filter" => &[("mode", None), ("tau", None), ("theta", Some("0")), ("ancilla", None)],
        "seed" => &[("mode", None), ("alpha", None)],
        "combiner" => &[("inputs", None), ("output", None), ("weights", Some(""))],
        _ => &[("name", None), ("mode", None)],
    };
    for (key, default) in defaults {
        if let Some(v) = field(key, *default) {
            raw.insert(*key, v);
        }
    }
    if !errs.is_empty() {
        return Err(errs);
    }

    let mut bad = Vec::new();
    let get = |key: &str| raw[key].0.clone();
    let mut note = |key: &str, r: Result<(), String>| {
        if let Err(m) = r {
            bad.push((raw[key].1, key.to_string(), m));
        }
    };
    let expr = |key: &str| parse_expr(&get(key));
    let spec = match kind {
        "crystal" => {
            let gain = ComplexExpr::parse(&get("gain"));
            let pump_phase = expr("pump_phase");
            let out = match (&gain, &pump_phase) {
                (Ok(g), Ok(p)) => Some(ComponentSpec::Crystal { signal: get("signal"), idler: get("idler"), gain: g.clone(), pump_phase: p.clone() }),
                _ => None,
            };
            note("gain", gain.map(|_| ()));
            note("pump_phase", pump_phase.map(|_| ()));
            out
        }
        "phase" => {
            let phase = expr("phase");
            let out = phase.as_ref().ok().map(|p| ComponentSpec::Phase { mode: get("mode"), phase: p.clone() });
            note("phase", phase.map(|_| ()));
            out
        }
        "mirror" => Some(ComponentSpec::Mirror { mode: get("mode") }),
        "filter" => {
            let (tau, theta) = (expr("tau"), expr("theta"));
            let out = match (&tau, &theta) {
                (Ok(t), Ok(th)) => {
                    Some(ComponentSpec::Filter { mode: get("mode"), tau: t.clone(), theta: th.clone(), ancilla: get("ancilla") })
                }
                _ => None,
            };
            note("tau", tau.map(|_| ()));
            note("theta", theta.map(|_| ()));
            out
        }
        "seed" => {
            let alpha = ComplexExpr::parse(&get("alpha"));
            let out = alpha.as_ref().ok().map(|a| ComponentSpec::Seed { mode: get("mode"), alpha: a.clone() });
            note("alpha", alpha.map(|_| ()));
            out
        }
        "combiner" => {
            let inputs: Vec<String> = get("inputs").split(',').map(|s| s.trim().to_string()).collect();
            let text = get("weights");
            let weights: Result<Vec<ComplexExpr>, String> = if text.trim().is_empty() {
                Ok(vec![ComplexExpr::real(1.0); inputs.len()])
            } else {
                text.split(';').map(ComplexExpr::parse).collect()
            };
            let out = weights.as_ref().ok().map(|w| ComponentSpec::Combiner { inputs: inputs.clone(), output: get("output"), weights: w.clone() });
            note("weights", weights.map(|_| ()));
            out
        }
        _ => Some(ComponentSpec::Detector { name: get("name"), mode: get("mode") }),
    };
    match spec {
        Some(s) if bad.is_empty() => Ok(s),
        _ => Err(bad),
    }
}

fn parse_bool(text: &str) -> Result<bool, String> {
    match text {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(format!("expected true or false, found `{other}`")),
    }
}

/// `re` or `re, im`, both constant expressions.
pub fn parse_complex_constant(text: &str) -> Result<C64, String> {
    let parts: Vec<&str> = text.split(',').collect();
    match parts.as_slice() {
        [re] => Ok(C64::new(parse_constant(re)?, 0.0)),
        [re, im] => Ok(C64::new(parse_constant(re)?, parse_constant(im)?)),
        _ => Err(format!("complex value `{text}` must be `re` or `re, im`")),
    }
}

fn parse_label(text: &str) -> Result<String, String> {
    let t = text.trim();
    if valid_label(t) {
        Ok(t.to_string())
    } else {
        Err(format!("`{t}` is not a valid name"))
    }
}

/// Two detector names separated by a comma.
pub fn parse_pair(text: &str) -> Result<(String, String), String> {
    match text.split(',').collect::<Vec<_>>().as_slice() {
        [a, d] => Ok((parse_label(a)?, parse_label(d)?)),
        _ => Err(format!("expected two detector names `A, D`, found `{text}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_preset_config() {
        let cfg = parse_config("[run]\npreset = cascade12\n").unwrap();
        assert_eq!(cfg.network, Some(NetworkSource::Preset(PresetId::Cascade12)));
        assert_eq!(cfg.phi_grid.points(), pdcnet::experiments::phase_grid());
        let names: Vec<String> = cfg.base_network().unwrap().unwrap().detectors().map(|(n, _)| n.to_string()).collect();
        assert_eq!(names, ["A"]);
    }

    #[test]
    fn reports_all_errors_with_lines() {
        let text = "[run]\npreset = filter\ntau = 1.5\nbogus = 1\n[component.x]\n";
        let errs = parse_unchecked(text).unwrap_err().0;
        let lines: Vec<_> = errs.iter().map(|e| e.origin.clone()).collect();
        assert_eq!(lines, [Some(Origin::Line(4)), Some(Origin::Line(5))]);
        let errs = parse_config("[run]\npreset = filter\ntau = 1.5\n").unwrap_err().0;
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].origin, Some(Origin::Line(3)));
        assert!(errs[0].message.contains("outside [0, 1]"));
    }

    #[test]
    fn grid_includes_divisible_endpoint() {
        let g = GridSpec::parse("0:1:0.05").unwrap();
        let pts = g.points();
        assert_eq!(pts.len(), 21);
        assert_eq!(*pts.last().unwrap(), 1.0);
        assert_eq!(GridSpec::parse("0:1:0.3").unwrap().points().len(), 4);
        assert!(GridSpec::parse("1:0:0.1").is_err());
        assert!(GridSpec::parse("0:1:0").is_err());
    }

    #[test]
    fn network_errors_point_at_component() {
        let text = "[component.1]\nkind = crystal\nsignal = s\nidler = i\ngain = 0.01\n\n[component.2]\nkind = detector\nname = A\nmode = q\n";
        let errs = parse_config(text).unwrap_err().0;
        assert_eq!(errs[0].key, "component.2");
        assert_eq!(errs[0].origin, Some(Origin::Line(7)));
    }

    #[test]
    fn dump_round_trips() {
        let text = "[run]\npreset = three-crystal\nseeded = true\nalpha = 1.5\nscan = phi_coupled\nphi_grid = 0:4*pi:pi/100\n[phase_lock]\nensemble = 4\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
    }
}
