//! Preset interferometers, parameter scans and fringe visibility.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};
use std::fmt;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use thiserror::Error;

use crate::algebra::ModeId;
use crate::fock::{oracle_rate, OracleError, OracleOptions};
use crate::network::{engine_rate, leading_coefficient, Component, NetworkError, NetworkSpec, Observable, OrderPolicy, RateModel};

pub const DEFAULT_GAIN: f64 = 0.01;
pub const MAX_PRESET_GAIN: f64 = 0.1;
pub const SIGNAL_WAVELENGTH_NM: f64 = 808.0;
pub const IDLER_WAVELENGTH_NM: f64 = 633.0;
pub const PUMP_WAVELENGTH_NM: f64 = 355.0;
/// Pump-phase advance per unit signal phase when both delay lines move at
/// the same path-length rate.
pub const EQUAL_PATH_RATIO: f64 = SIGNAL_WAVELENGTH_NM / PUMP_WAVELENGTH_NM;
pub const DEFAULT_GRID_POINTS: usize = 401;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("filter transmission {0} is outside [0, 1]")]
    InvalidTransmission(f64),
    #[error("crystal gain magnitude {0} exceeds {MAX_PRESET_GAIN}")]
    GainTooLarge(f64),
    #[error("non-finite preset parameter `{0}`")]
    NonFinite(&'static str),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("unknown scan parameter `{0}`")]
    UnknownParameter(String),
    #[error("scan grid is empty")]
    EmptyGrid,
    #[error("scan grid must be strictly increasing (index {0})")]
    GridNotIncreasing(usize),
    #[error("periodic scan spans {span:.6} rad, less than one period")]
    ScanTooShort { span: f64 },
    #[error("rate {value} at grid index {index} is negative or non-finite")]
    InvalidRate { index: usize, value: f64 },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PresetId {
    /// Crystals 1 and 2 sharing one idler mode.
    Cascade12,
    /// Crystals 2 and 3 with distinct, identically seeded idlers.
    Parallel23,
    /// Crystals 1 and 3 feeding one signal path, pump 3 delayed.
    Cascade13,
    ThreeCrystal,
    /// Cascade12 with an idler filter between the crystals and an idler
    /// detector behind crystal 2.
    FilterSetup,
}

impl PresetId {
    pub const ALL: [PresetId; 5] =
        [PresetId::Cascade12, PresetId::Parallel23, PresetId::Cascade13, PresetId::ThreeCrystal, PresetId::FilterSetup];

    pub fn name(self) -> &'static str {
        match self {
            PresetId::Cascade12 => "cascade12",
            PresetId::Parallel23 => "parallel23",
            PresetId::Cascade13 => "cascade13",
            PresetId::ThreeCrystal => "three-crystal",
            PresetId::FilterSetup => "filter",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            PresetId::Cascade12 => "crystals 1+2, shared idler, signal fringes in phi",
            PresetId::Parallel23 => "crystals 2+3, separate seeded idlers, signal fringes in phi",
            PresetId::Cascade13 => "crystals 1+3 on one signal path, fringes in pump phase phi_p",
            PresetId::ThreeCrystal => "all three crystals, beating between phi and phi_p fringes",
            PresetId::FilterSetup => "crystals 1+2 with idler filter tau*e^{i theta}, detectors A and D",
        }
    }

    /// Phase that produces this preset's fringes.
    pub fn fringe_parameter(self) -> ScanParam {
        match self {
            PresetId::Cascade13 => ScanParam::PhiP,
            _ => ScanParam::Phi,
        }
    }

    /// Crystal positions (1-based) the preset pumps.
    pub fn crystals(self) -> &'static [usize] {
        match self {
            PresetId::Cascade12 | PresetId::FilterSetup => &[1, 2],
            PresetId::Parallel23 => &[2, 3],
            PresetId::Cascade13 => &[1, 3],
            PresetId::ThreeCrystal => &[1, 2, 3],
        }
    }
}

impl fmt::Display for PresetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PresetId {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PresetId::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| ExperimentError::UnknownPreset(s.to_string()))
    }
}

/// Weights applied where the two signal paths meet at detector A.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CombinerWeights {
    /// Unit weights; splitter losses are folded into the gains.
    #[default]
    Folded,
    /// Lossless 50:50 splitter output port, weights `1/√2` and `i/√2`.
    FiftyFifty,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PresetParams {
    /// Gains of crystals 1, 2, 3.
    pub gains: [C64; 3],
    pub phi: f64,
    pub phi_p: f64,
    /// Filter amplitude transmission `|τ|`.
    pub tau: f64,
    /// Filter phase.
    pub theta: f64,
    pub alpha: C64,
    pub seeded: bool,
    pub combiner: CombinerWeights,
}

impl Default for PresetParams {
    fn default() -> Self {
        Self {
            gains: [C64::new(DEFAULT_GAIN, 0.0); 3],
            phi: 0.0,
            phi_p: 0.0,
            tau: 1.0,
            theta: 0.0,
            alpha: C64::new(1.0, 0.0),
            seeded: false,
            combiner: CombinerWeights::Folded,
        }
    }
}

impl PresetParams {
    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gains = [C64::new(gain, 0.0); 3];
        self
    }

    pub fn seeded_with(mut self, alpha: C64) -> Self {
        self.seeded = true;
        self.alpha = alpha;
        self
    }

    pub fn bound(mut self, b: &Bindings) -> Self {
        self.phi = b.phi;
        self.phi_p = b.phi_p;
        self.tau = b.tau;
        self.theta = b.theta;
        self
    }

    pub fn bindings(&self) -> Bindings {
        Bindings { phi: self.phi, phi_p: self.phi_p, tau: self.tau, theta: self.theta }
    }

    /// Seed photon number, zero when unseeded.
    pub fn seed_photons(&self) -> f64 {
        if self.seeded {
            self.alpha.norm_sqr()
        } else {
            0.0
        }
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        for (name, v) in [("phi", self.phi), ("phi_p", self.phi_p), ("tau", self.tau), ("theta", self.theta)] {
            if !v.is_finite() {
                return Err(ExperimentError::NonFinite(name));
            }
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(ExperimentError::InvalidTransmission(self.tau));
        }
        for g in &self.gains {
            if !(g.re.is_finite() && g.im.is_finite()) {
                return Err(ExperimentError::NonFinite("gain"));
            }
            if g.norm() > MAX_PRESET_GAIN {
                return Err(ExperimentError::GainTooLarge(g.norm()));
            }
        }
        if !(self.alpha.re.is_finite() && self.alpha.im.is_finite()) {
            return Err(ExperimentError::NonFinite("alpha"));
        }
        Ok(())
    }
}

pub fn build_preset(id: PresetId, p: &PresetParams) -> Result<NetworkSpec, ExperimentError> {
    p.validate()?;
    let s = |k: u8| ModeId::signal(format!("s{k}"));
    let i = |k: u8| ModeId::idler(format!("i{k}"));
    let sa = ModeId::signal("sA");
    let crystal = |sig: u8, idl: u8, pos: usize, pump_phase: f64| Component::Crystal {
        signal: s(sig),
        idler: i(idl),
        gain: p.gains[pos - 1],
        pump_phase,
    };
    let seed = |idl: u8| Component::Seed { mode: i(idl), alpha: p.alpha };
    let delay = |sig: u8| [Component::Mirror { mode: s(sig) }, Component::PhaseShift { mode: s(sig), phase: p.phi }];
    let combine = |delayed: u8, direct: u8| {
        let weights = match p.combiner {
            CombinerWeights::Folded => vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)],
            CombinerWeights::FiftyFifty => vec![C64::new(FRAC_1_SQRT_2, 0.0), C64::new(0.0, FRAC_1_SQRT_2)],
        };
        Component::Combiner { inputs: vec![s(delayed), s(direct)], output: sa.clone(), weights }
    };
    let detector_a = Component::Detector { name: "A".into(), mode: sa.clone() };

    let mut c = Vec::new();
    match id {
        PresetId::Cascade12 => {
            if p.seeded {
                c.push(seed(1));
            }
            c.extend([crystal(1, 1, 1, 0.0), crystal(2, 1, 2, 0.0)]);
            c.extend(delay(1));
            c.extend([combine(1, 2), detector_a]);
        }
        PresetId::Parallel23 => {
            if p.seeded {
                c.extend([seed(2), seed(3)]);
            }
            c.extend([crystal(2, 2, 2, 0.0), crystal(3, 3, 3, 0.0)]);
            c.extend(delay(3));
            c.extend([combine(3, 2), detector_a]);
        }
        PresetId::Cascade13 => {
            if p.seeded {
                c.extend([seed(1), seed(3)]);
            }
            c.extend([crystal(1, 1, 1, 0.0), crystal(1, 3, 3, p.phi_p)]);
            c.extend(delay(1));
            c.push(Component::Detector { name: "A".into(), mode: s(1) });
        }
        PresetId::ThreeCrystal => {
            if p.seeded {
                c.extend([seed(1), seed(3)]);
            }
            c.extend([crystal(1, 1, 1, 0.0), crystal(2, 1, 2, 0.0), crystal(1, 3, 3, p.phi_p)]);
            c.extend(delay(1));
            c.extend([combine(1, 2), detector_a]);
        }
        PresetId::FilterSetup => {
            if p.seeded {
                c.push(seed(1));
            }
            c.push(crystal(1, 1, 1, 0.0));
            c.push(Component::Filter {
                mode: i(1),
                transmission: C64::from_polar(p.tau, p.theta),
                ancilla: ModeId::ancilla("anc"),
            });
            c.push(crystal(2, 1, 2, 0.0));
            c.push(Component::Detector { name: "D".into(), mode: i(1) });
            c.extend(delay(1));
            c.extend([combine(1, 2), detector_a]);
        }
    }
    Ok(NetworkSpec::new(c))
}

/// Closed-form detector-A rate of a preset with equal gains and folded
/// combiner weights; `None` outside that case.
pub fn reference_rate(id: PresetId, p: &PresetParams, model: RateModel) -> Option<f64> {
    if p.combiner != CombinerWeights::Folded {
        return None;
    }
    let used = id.crystals();
    let g = p.gains[used[0] - 1];
    if used.iter().any(|&k| (p.gains[k - 1] - g).norm() > 0.0) {
        return None;
    }
    let c2 = g.norm_sqr();
    let n = p.seed_photons();
    let (phi, phi_p) = (p.phi, p.phi_p);
    // Rates split as vacuum + n * stimulated.
    let (vacuum, stimulated) = match id {
        PresetId::Cascade12 => (2.0 * (1.0 - phi.sin()), 2.0 * (1.0 - phi.sin())),
        PresetId::Parallel23 => (2.0, 2.0 * (1.0 - phi.sin())),
        PresetId::Cascade13 => (2.0, 2.0 * (1.0 + phi_p.cos())),
        PresetId::ThreeCrystal => {
            (3.0 - 2.0 * phi.sin(), 3.0 - 2.0 * phi.sin() - 2.0 * (phi + phi_p).sin() + 2.0 * phi_p.cos())
        }
        PresetId::FilterSetup => {
            let s = (phi + p.theta).sin();
            (2.0 - 2.0 * p.tau * s, 1.0 + p.tau * p.tau - 2.0 * p.tau * s)
        }
    };
    Some(match model {
        RateModel::Full => c2 * (vacuum + n * stimulated),
        RateModel::StimulatedLimit => c2 * n * stimulated,
    })
}

/// Visibility of the detector-A fringe of `FilterSetup` predicted in closed
/// form; `None` for seeded coincidences, which have no simple law.
pub fn reference_tau_visibility(tau: f64, n: f64, coincidence: bool, model: RateModel) -> Option<f64> {
    let two_over = 2.0 * tau / (1.0 + tau * tau);
    match (n > 0.0, coincidence, model) {
        (false, false, _) => Some(tau),
        (false, true, _) => Some(two_over),
        (true, false, RateModel::StimulatedLimit) => Some(two_over),
        (true, false, RateModel::Full) => Some(2.0 * tau * (1.0 + n) / (2.0 + n * (1.0 + tau * tau))),
        (true, true, _) => None,
    }
}

/// Numeric values substituted into a network template.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Bindings {
    pub phi: f64,
    pub phi_p: f64,
    pub tau: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScanMetadata {
    pub preset: String,
    pub seed: C64,
    pub gains: Vec<C64>,
}

/// Anything that can produce a network for given parameter values.
pub trait NetworkTemplate: Sync {
    fn instantiate(&self, bindings: &Bindings) -> Result<NetworkSpec, ExperimentError>;
    fn metadata(&self) -> ScanMetadata;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preset {
    pub id: PresetId,
    pub params: PresetParams,
}

impl Preset {
    pub fn new(id: PresetId, params: PresetParams) -> Self {
        Self { id, params }
    }
}

impl NetworkTemplate for Preset {
    fn instantiate(&self, bindings: &Bindings) -> Result<NetworkSpec, ExperimentError> {
        build_preset(self.id, &self.params.bound(bindings))
    }

    fn metadata(&self) -> ScanMetadata {
        ScanMetadata {
            preset: self.id.name().to_string(),
            seed: if self.params.seeded { self.params.alpha } else { C64::new(0.0, 0.0) },
            gains: self.id.crystals().iter().map(|&k| self.params.gains[k - 1]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScanParam {
    Phi,
    PhiP,
    Tau,
    /// Sets `φ = x` and advances `φ_p` by `ratio·x` from its base value.
    Coupled { ratio: f64 },
}

impl ScanParam {
    pub fn name(&self) -> &'static str {
        match self {
            ScanParam::Phi => "phi",
            ScanParam::PhiP => "phi_p",
            ScanParam::Tau => "tau",
            ScanParam::Coupled { .. } => "phi_coupled",
        }
    }

    pub fn unit(&self) -> &'static str {
        match self {
            ScanParam::Tau => "dimensionless",
            _ => "rad",
        }
    }

    pub fn is_periodic(&self) -> bool {
        !matches!(self, ScanParam::Tau)
    }

    pub fn from_name(name: &str) -> Result<Self, ExperimentError> {
        match name {
            "phi" => Ok(ScanParam::Phi),
            "phi_p" => Ok(ScanParam::PhiP),
            "tau" => Ok(ScanParam::Tau),
            "phi_coupled" => Ok(ScanParam::Coupled { ratio: EQUAL_PATH_RATIO }),
            other => Err(ExperimentError::UnknownParameter(other.to_string())),
        }
    }

    pub fn bind(&self, base: &Bindings, x: f64) -> Bindings {
        let mut b = *base;
        match self {
            ScanParam::Phi => b.phi = x,
            ScanParam::PhiP => b.phi_p = x,
            ScanParam::Tau => b.tau = x,
            ScanParam::Coupled { ratio } => {
                b.phi = x;
                b.phi_p = base.phi_p + ratio * x;
            }
        }
        b
    }

    /// Path-length change per radian of this parameter, for fringe-spacing
    /// metadata.
    pub fn path_length_per_radian_nm(&self) -> Option<f64> {
        match self {
            ScanParam::Phi | ScanParam::Coupled { .. } => Some(SIGNAL_WAVELENGTH_NM / TAU),
            ScanParam::PhiP => Some(PUMP_WAVELENGTH_NM / TAU),
            ScanParam::Tau => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Backend {
    Engine(OrderPolicy),
    Oracle(OracleOptions),
}

impl Default for Backend {
    fn default() -> Self {
        Backend::Engine(OrderPolicy::default())
    }
}

/// Evaluates one observable on a concrete network.
pub fn evaluate(net: &NetworkSpec, observable: &Observable, model: RateModel, backend: &Backend) -> Result<f64, ExperimentError> {
    match backend {
        Backend::Engine(policy) => Ok(engine_rate(net, observable, model, policy)?),
        Backend::Oracle(opts) => match model {
            RateModel::Full => Ok(oracle_rate(net, observable, opts)?),
            RateModel::StimulatedLimit => {
                let samples = (0..=observable.seed_degree())
                    .map(|k| oracle_rate(&net.scaled_seeds(k as f64), observable, opts))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(leading_coefficient(&samples))
            }
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanRequest {
    pub observable: Observable,
    pub model: RateModel,
    pub backend: Backend,
}

impl ScanRequest {
    pub fn detector(name: &str) -> Self {
        Self { observable: Observable::Detector(name.to_string()), model: RateModel::Full, backend: Backend::default() }
    }

    pub fn with_model(mut self, model: RateModel) -> Self {
        self.model = model;
        self
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanResult {
    pub parameter: ScanParam,
    pub grid: Vec<f64>,
    pub rates: Vec<f64>,
    pub metadata: ScanMetadata,
}

/// `points` evenly spaced values over `[start, end]`, endpoints included.
pub fn linspace(start: f64, end: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![start],
        _ => (0..points).map(|k| start + (end - start) * k as f64 / (points - 1) as f64).collect(),
    }
}

/// Default fringe grid: 401 points over one full period.
pub fn phase_grid() -> Vec<f64> {
    linspace(0.0, TAU, DEFAULT_GRID_POINTS)
}

/// Evaluates the request at every grid point. Points run in parallel and
/// are returned in grid order.
pub fn scan(
    template: &dyn NetworkTemplate,
    base: &Bindings,
    parameter: ScanParam,
    grid: &[f64],
    request: &ScanRequest,
) -> Result<ScanResult, ExperimentError> {
    if grid.is_empty() {
        return Err(ExperimentError::EmptyGrid);
    }
    if let Some(k) = grid.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(ExperimentError::GridNotIncreasing(k + 1));
    }
    let rates = grid
        .par_iter()
        .map(|&x| {
            let net = template.instantiate(&parameter.bind(base, x))?;
            evaluate(&net, &request.observable, request.model, &request.backend)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if let Some((index, &value)) = rates.iter().enumerate().find(|(_, r)| !r.is_finite() || **r < -1e-12) {
        return Err(ExperimentError::InvalidRate { index, value });
    }
    Ok(ScanResult { parameter, grid: grid.to_vec(), rates, metadata: template.metadata() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinusoidFit {
    pub period: f64,
    /// `r ≈ offset + amplitude·cos(2πx/period + phase)`.
    pub phase: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub rms_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisibilityReport {
    pub visibility: f64,
    pub r_max: f64,
    pub r_min: f64,
    pub fit_period: Option<f64>,
}

/// Extremum of the parabola through three samples around index `k`.
fn refine_extremum(x: &[f64], y: &[f64], k: usize) -> f64 {
    if k == 0 || k + 1 >= y.len() {
        return y[k];
    }
    let (x0, x1, x2) = (x[k - 1], x[k], x[k + 1]);
    let (y0, y1, y2) = (y[k - 1], y[k], y[k + 1]);
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let a = (d12 - d01) / (x2 - x0);
    if a == 0.0 {
        return y1;
    }
    let xv = 0.5 * (x0 + x1) - d01 / (2.0 * a);
    if xv < x0 || xv > x2 {
        return y1;
    }
    y0 + d01 * (xv - x0) + a * (xv - x0) * (xv - x1)
}

/// Visibility `(R_max − R_min)/(R_max + R_min)` from the discrete extrema,
/// refined by quadratic interpolation.
pub fn visibility(r: &ScanResult) -> Result<VisibilityReport, ExperimentError> {
    let (x, y) = (&r.grid, &r.rates);
    if y.is_empty() {
        return Err(ExperimentError::EmptyGrid);
    }
    if r.parameter.is_periodic() {
        let span = x[x.len() - 1] - x[0];
        if span < TAU - 1e-9 {
            return Err(ExperimentError::ScanTooShort { span });
        }
    }
    let imax = (0..y.len()).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap_or(0);
    let imin = (0..y.len()).min_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap_or(0);
    let r_max = refine_extremum(x, y, imax).max(y[imax]);
    let r_min = refine_extremum(x, y, imin).min(y[imin]).max(0.0);
    let sum = r_max + r_min;
    let visibility = if sum <= f64::MIN_POSITIVE || r_max - r_min <= 1e-15 * sum {
        0.0
    } else {
        ((r_max - r_min) / sum).clamp(0.0, 1.0)
    };
    Ok(VisibilityReport { visibility, r_max, r_min, fit_period: None })
}

/// [`visibility`] plus the period of a least-squares sinusoid fit.
pub fn visibility_with_fit(r: &ScanResult) -> Result<VisibilityReport, ExperimentError> {
    let mut report = visibility(r)?;
    if report.visibility > 0.0 {
        report.fit_period = fit_sinusoid(&r.grid, &r.rates).map(|f| f.period);
    }
    Ok(report)
}

fn fit_at(x: &[f64], y: &[f64], omega: f64) -> Option<(Vector3<f64>, f64)> {
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for (&xi, &yi) in x.iter().zip(y) {
        let row = Vector3::new(1.0, (omega * xi).cos(), (omega * xi).sin());
        ata += row * row.transpose();
        aty += row * yi;
    }
    let coeffs = ata.lu().solve(&aty)?;
    let sse = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let model = coeffs[0] + coeffs[1] * (omega * xi).cos() + coeffs[2] * (omega * xi).sin();
            (yi - model).powi(2)
        })
        .sum();
    Some((coeffs, sse))
}

/// Least-squares fit of `offset + A cos(ωx + φ)`, with ω found by a coarse
/// search followed by golden-section refinement.
pub fn fit_sinusoid(x: &[f64], y: &[f64]) -> Option<SinusoidFit> {
    if x.len() < 5 || x.len() != y.len() {
        return None;
    }
    let span = x[x.len() - 1] - x[0];
    let min_step = x.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if !(span > 0.0 && min_step > 0.0) {
        return None;
    }
    let lo = PI / span;
    let hi = 0.5 * PI / min_step;
    let step = PI / (4.0 * span);
    let count = (((hi - lo) / step).ceil() as usize).min(4000);
    let sse = |w: f64| fit_at(x, y, w).map_or(f64::INFINITY, |(_, e)| e);
    let best = (0..=count).map(|k| lo + k as f64 * step).min_by(|a, b| sse(*a).total_cmp(&sse(*b)))?;

    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = ((best - step).max(lo * 0.5), best + step);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    for _ in 0..100 {
        if sse(c) < sse(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - ratio * (b - a);
        d = a + ratio * (b - a);
    }
    let omega = 0.5 * (a + b);
    let (coeffs, err) = fit_at(x, y, omega)?;
    Some(SinusoidFit {
        period: TAU / omega,
        phase: (-coeffs[2]).atan2(coeffs[1]),
        amplitude: coeffs[1].hypot(coeffs[2]),
        offset: coeffs[0],
        rms_residual: (err / x.len() as f64).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TauPoint {
    pub tau: f64,
    pub visibility: f64,
    pub reference: Option<f64>,
}

/// Fringe visibility of the filter setup for each `|τ|`, from a full phase
/// scan at every point. Coincidences pair detectors A and D.
pub fn visibility_vs_tau(
    params: &PresetParams,
    coincidence: bool,
    tau_grid: &[f64],
    model: RateModel,
    backend: &Backend,
    phase_grid: &[f64],
) -> Result<Vec<TauPoint>, ExperimentError> {
    let observable =
        if coincidence { Observable::Coincidence("A".into(), "D".into()) } else { Observable::Detector("A".into()) };
    let request = ScanRequest { observable, model, backend: *backend };
    tau_grid
        .iter()
        .map(|&tau| {
            if !(0.0..=1.0).contains(&tau) {
                return Err(ExperimentError::InvalidTransmission(tau));
            }
            let preset = Preset::new(PresetId::FilterSetup, PresetParams { tau, ..*params });
            let result = scan(&preset, &preset.params.bindings(), ScanParam::Phi, phase_grid, &request)?;
            let v = visibility(&result)?.visibility;
            let reference = reference_tau_visibility(tau, params.seed_photons(), coincidence, model);
            Ok(TauPoint { tau, visibility: v, reference })
        })
        .collect()
}

/// Visibility of a two-crystal preset against seed photon number `n`,
/// using the full rate with seed amplitude `√n`.
pub fn stimulated_visibility_vs_n(id: PresetId, params: &PresetParams, n_grid: &[f64]) -> Result<Vec<(f64, f64)>, ExperimentError> {
    n_grid
        .iter()
        .map(|&n| {
            let p = PresetParams { seeded: n > 0.0, alpha: C64::new(n.max(0.0).sqrt(), 0.0), ..*params };
            let preset = Preset::new(id, p);
            let result = scan(&preset, &p.bindings(), id.fringe_parameter(), &phase_grid(), &ScanRequest::detector("A"))?;
            Ok((n, visibility(&result)?.visibility))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{compile, detector_rate};
    use std::f64::consts::FRAC_PI_2;

    fn result(grid: Vec<f64>, rates: Vec<f64>) -> ScanResult {
        ScanResult { parameter: ScanParam::Phi, grid, rates, metadata: ScanMetadata::default() }
    }

    #[test]
    fn visibility_of_sampled_fringe() {
        let r = result(linspace(0.0, TAU, 5), vec![2.0, 0.0, 2.0, 4.0, 2.0]);
        let v = visibility(&r).unwrap();
        assert!((v.visibility - 1.0).abs() < 1e-12);
    }

    #[test]
    fn short_periodic_scan_is_rejected() {
        let r = result(linspace(0.0, PI, 11), vec![1.0; 11]);
        assert!(matches!(visibility(&r), Err(ExperimentError::ScanTooShort { .. })));
    }

    #[test]
    fn flat_rates_have_zero_visibility() {
        let r = result(phase_grid(), vec![0.0; DEFAULT_GRID_POINTS]);
        assert_eq!(visibility(&r).unwrap().visibility, 0.0);
    }

    #[test]
    fn quadratic_refinement_recovers_offgrid_peak() {
        let grid = linspace(0.0, TAU, 37);
        let rates: Vec<f64> = grid.iter().map(|x| 3.0 + (x - 0.3).cos()).collect();
        let v = visibility(&result(grid, rates)).unwrap();
        assert!((v.visibility - 1.0 / 3.0).abs() < 1e-5, "{v:?}");
    }

    #[test]
    fn sinusoid_fit_finds_period() {
        let grid = linspace(0.0, 2.0 * TAU, 401);
        let rates: Vec<f64> = grid.iter().map(|x| 1.0 + 0.7 * (1.3 * x + 0.4).cos()).collect();
        let fit = fit_sinusoid(&grid, &rates).unwrap();
        assert!((fit.period - TAU / 1.3).abs() < 1e-8);
        assert!((fit.amplitude - 0.7).abs() < 1e-8);
        assert!((fit.phase - 0.4).abs() < 1e-8);
        assert!((fit.offset - 1.0).abs() < 1e-8);
    }

    #[test]
    fn cascade12_field_has_expected_first_order_part() {
        let phi = 0.9;
        let p = PresetParams { phi, ..Default::default() };
        let net = build_preset(PresetId::Cascade12, &p).unwrap();
        let fields = compile(&net, &OrderPolicy::default()).unwrap();
        let first = fields.get("A").unwrap().e_plus.order(1);
        let c = C64::new(DEFAULT_GAIN, 0.0);
        let expected = crate::algebra::OperatorExpr::create(&ModeId::idler("i1"))
            .scale(C64::i() * c * C64::from_polar(1.0, phi) + c);
        assert!(first.max_abs_diff(&expected) < 1e-18);
    }

    #[test]
    fn parallel_idler_vacua_do_not_interfere() {
        let net = build_preset(PresetId::Parallel23, &PresetParams { phi: 0.3, ..Default::default() }).unwrap();
        let f = compile(&net, &OrderPolicy::default()).unwrap();
        let rate = detector_rate(&f, "A", &net.initial_state).unwrap();
        assert!((rate - 2.0 * DEFAULT_GAIN * DEFAULT_GAIN).abs() < 1e-19);
    }

    #[test]
    fn engine_matches_reference_rates() {
        let params = PresetParams {
            phi: 0.7,
            phi_p: -1.1,
            tau: 0.45,
            theta: 0.2,
            ..PresetParams::default().seeded_with(C64::new(1.2, -0.5))
        };
        for id in PresetId::ALL {
            for model in [RateModel::Full, RateModel::StimulatedLimit] {
                let net = build_preset(id, &params).unwrap();
                let got = engine_rate(&net, &Observable::Detector("A".into()), model, &OrderPolicy::default()).unwrap();
                let want = reference_rate(id, &params, model).unwrap();
                assert!((got - want).abs() < 1e-12 * want.abs(), "{id} {model:?}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn parameter_ranges_are_checked() {
        let bad_tau = PresetParams { tau: 1.2, ..Default::default() };
        assert_eq!(build_preset(PresetId::FilterSetup, &bad_tau), Err(ExperimentError::InvalidTransmission(1.2)));
        let bad_gain = PresetParams::default().with_gain(0.5);
        assert!(matches!(build_preset(PresetId::Cascade12, &bad_gain), Err(ExperimentError::GainTooLarge(_))));
        assert!(matches!("nope".parse::<PresetId>(), Err(ExperimentError::UnknownPreset(_))));
        assert!(matches!(ScanParam::from_name("psi"), Err(ExperimentError::UnknownParameter(_))));
    }

    #[test]
    fn scan_rejects_bad_grids() {
        let preset = Preset::new(PresetId::Cascade12, PresetParams::default());
        let req = ScanRequest::detector("A");
        let b = Bindings::default();
        assert_eq!(scan(&preset, &b, ScanParam::Phi, &[], &req), Err(ExperimentError::EmptyGrid));
        assert_eq!(scan(&preset, &b, ScanParam::Phi, &[0.0, 1.0, 1.0], &req), Err(ExperimentError::GridNotIncreasing(2)));
    }

    #[test]
    fn seeded_cascade_fringe_has_signal_period_and_full_visibility() {
        let preset = Preset::new(PresetId::Cascade12, PresetParams::default().seeded_with(C64::new(2.0, 0.0)));
        let grid = linspace(0.0, 2.0 * TAU, 401);
        let r = scan(&preset, &Bindings::default(), ScanParam::Phi, &grid, &ScanRequest::detector("A")).unwrap();
        let v = visibility_with_fit(&r).unwrap();
        assert!((v.visibility - 1.0).abs() < 1e-9);
        assert!((v.fit_period.unwrap() - TAU).abs() < 1e-6);
    }

    #[test]
    fn pump_delay_fringes_follow_pump_phase() {
        let params = PresetParams::default().seeded_with(C64::new(1.0, 0.0));
        let preset = Preset::new(PresetId::Cascade13, params);
        let req = ScanRequest::detector("A").with_model(RateModel::StimulatedLimit);
        let r = scan(&preset, &Bindings::default(), ScanParam::PhiP, &phase_grid(), &req).unwrap();
        for (x, rate) in r.grid.iter().zip(&r.rates) {
            let want = 2.0 * DEFAULT_GAIN * DEFAULT_GAIN * (1.0 + x.cos());
            assert!((rate - want).abs() < 1e-15);
        }
        assert!((visibility_with_fit(&r).unwrap().fit_period.unwrap() - TAU).abs() < 1e-6);
    }

    #[test]
    fn tau_curve_matches_laws_on_coarse_grid() {
        let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
        let seeded = PresetParams::default().seeded_with(C64::new(1.0, 0.0));
        let stim = visibility_vs_tau(&seeded, false, &grid, RateModel::StimulatedLimit, &Backend::default(), &phase_grid()).unwrap();
        let expected = [0.0, 8.0 / 17.0, 0.8, 0.96, 1.0];
        for (p, e) in stim.iter().zip(expected) {
            assert!((p.visibility - e).abs() < 1e-6, "{p:?}");
        }
        let induced = visibility_vs_tau(&PresetParams::default(), false, &grid, RateModel::Full, &Backend::default(), &phase_grid()).unwrap();
        for p in induced {
            assert!((p.visibility - p.tau).abs() < 1e-6, "{p:?}");
        }
    }

    #[test]
    fn coupled_parameter_moves_both_phases() {
        let b = ScanParam::Coupled { ratio: 2.0 }.bind(&Bindings { phi_p: 0.5, ..Default::default() }, FRAC_PI_2);
        assert_eq!(b.phi, FRAC_PI_2);
        assert!((b.phi_p - (0.5 + PI)).abs() < 1e-15);
    }
}
