//! Truncated Fock-space simulation of the same networks the symbolic engine
//! compiles. States are evolved in the Schrödinger picture with exact
//! (series-exponentiated) squeezers, so none of the engine's gain-order
//! truncations apply here.
//!
//! Physical modes carry the photon-number basis. Phase shifts, mirrors and
//! combiners only rescale or mix *logical* fields, which are linear
//! combinations of physical annihilators evaluated at measurement time.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::algebra::{ModeId, ModeState};
use crate::network::{Component, NetworkError, NetworkSpec, Observable};

const BITS_PER_MODE: u32 = 8;
const MAX_MODES: usize = (u128::BITS / BITS_PER_MODE) as usize;
const MAX_CUTOFF: u32 = (1 << BITS_PER_MODE) - 1;
const AMPLITUDE_FLOOR: f64 = 1e-18;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("basis dimension {dimension:.3e} exceeds budget {budget:.3e}")]
    BudgetExceeded { dimension: f64, budget: f64 },
    #[error("cutoff leakage {leakage:.3e} on mode `{mode}` exceeds {threshold:.1e}")]
    Leakage { mode: String, leakage: f64, threshold: f64 },
    #[error("too many modes ({0}); at most {MAX_MODES} are supported")]
    TooManyModes(usize),
    #[error("cutoff {0} is outside 1..={MAX_CUTOFF}")]
    InvalidCutoff(u32),
    #[error("mode `{0}` is not part of the basis")]
    UnknownMode(String),
    #[error("seed amplitude {0} exceeds the oracle limit of 2")]
    SeedTooLarge(f64),
    #[error("squeezer series did not converge after {0} terms")]
    SeriesDiverged(usize),
    #[error("unsupported in the oracle: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleOptions {
    /// Cutoff for modes without a coherent seed.
    pub default_cutoff: u32,
    /// Tail probability allowed above a seeded mode's cutoff.
    pub seeded_tail: f64,
    pub leak_threshold: f64,
    pub budget: f64,
    /// Stop the squeezer series once the added term has smaller norm.
    pub series_tolerance: f64,
    /// Use exactly this many series terms instead of the tolerance.
    pub series_terms: Option<usize>,
    pub max_seed: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            default_cutoff: 4,
            seeded_tail: 1e-12,
            leak_threshold: 1e-10,
            budget: 2e6,
            series_tolerance: 1e-14,
            series_terms: None,
            max_seed: 2.0,
        }
    }
}

/// Smallest cutoff holding a coherent state of amplitude `|alpha|` with
/// population at or above the cutoff below `tail`, and at least `n + 6|α|`.
pub fn seeded_cutoff(alpha: f64, tail: f64) -> u32 {
    let n = alpha * alpha;
    let floor = (n + 6.0 * alpha).ceil() as u32;
    let pmf = |k: u32| -> f64 {
        if n == 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        let ln = -n + k as f64 * n.ln() - (1..=k).map(|j| (j as f64).ln()).sum::<f64>();
        ln.exp()
    };
    let tail_at = |k: u32| (k..k + 200).map(pmf).sum::<f64>();
    let mut k = floor.max(1);
    while tail_at(k) >= tail && k < MAX_CUTOFF {
        k += 1;
    }
    k
}

#[derive(Clone, Debug, PartialEq)]
pub struct FockBasis {
    modes: Vec<ModeId>,
    cutoffs: Vec<u32>,
}

impl FockBasis {
    pub fn new(modes: Vec<(ModeId, u32)>, budget: f64) -> Result<Self, OracleError> {
        if modes.len() > MAX_MODES {
            return Err(OracleError::TooManyModes(modes.len()));
        }
        if let Some(&(_, c)) = modes.iter().find(|(_, c)| *c == 0 || *c > MAX_CUTOFF) {
            return Err(OracleError::InvalidCutoff(c));
        }
        let basis = Self { modes: modes.iter().map(|(m, _)| m.clone()).collect(), cutoffs: modes.iter().map(|(_, c)| *c).collect() };
        let dimension = basis.dimension();
        if dimension > budget {
            return Err(OracleError::BudgetExceeded { dimension, budget });
        }
        Ok(basis)
    }

    pub fn dimension(&self) -> f64 {
        self.cutoffs.iter().map(|&c| (c + 1) as f64).product()
    }

    pub fn modes(&self) -> &[ModeId] {
        &self.modes
    }

    pub fn cutoff(&self, index: usize) -> u32 {
        self.cutoffs[index]
    }

    pub fn index(&self, mode: &ModeId) -> Result<usize, OracleError> {
        self.modes.iter().position(|m| m == mode).ok_or_else(|| OracleError::UnknownMode(mode.label().to_string()))
    }
}

fn occupation(key: u128, index: usize) -> u32 {
    ((key >> (BITS_PER_MODE as usize * index)) & MAX_CUTOFF as u128) as u32
}

fn with_occupation(key: u128, index: usize, n: u32) -> u128 {
    let shift = BITS_PER_MODE as usize * index;
    (key & !((MAX_CUTOFF as u128) << shift)) | ((n as u128) << shift)
}

type Amplitudes = BTreeMap<u128, C64>;

fn accumulate(map: &mut Amplitudes, key: u128, value: C64) {
    *map.entry(key).or_insert(C64::new(0.0, 0.0)) += value;
}

fn norm_sqr(map: &Amplitudes) -> f64 {
    map.values().map(|a| a.norm_sqr()).sum()
}

fn pruned(map: Amplitudes) -> Amplitudes {
    map.into_iter().filter(|(_, a)| a.norm() > AMPLITUDE_FLOOR).collect()
}

/// Sparse state vector keyed by packed occupation numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct FockState {
    basis: FockBasis,
    amplitudes: Amplitudes,
    /// Population lost to truncation so far.
    dropped: f64,
}

impl FockState {
    pub fn vacuum(basis: FockBasis) -> Self {
        let mut amplitudes = Amplitudes::new();
        amplitudes.insert(0, C64::new(1.0, 0.0));
        Self { basis, amplitudes, dropped: 0.0 }
    }

    pub fn basis(&self) -> &FockBasis {
        &self.basis
    }

    pub fn support(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amplitudes)
    }

    /// `|‖ψ‖ − 1|`.
    pub fn norm_deviation(&self) -> f64 {
        (self.norm_sqr().sqrt() - 1.0).abs()
    }

    pub fn dropped_population(&self) -> f64 {
        self.dropped
    }

    /// Amplitude of the basis state with the given occupations (basis order).
    pub fn amplitude(&self, occupations: &[u32]) -> C64 {
        let key = occupations.iter().enumerate().fold(0u128, |k, (i, &n)| with_occupation(k, i, n));
        self.amplitudes.get(&key).copied().unwrap_or_default()
    }

    /// Population in the highest retained level of mode `index`.
    pub fn top_level_population(&self, index: usize) -> f64 {
        let top = self.basis.cutoff(index);
        self.amplitudes.iter().filter(|(k, _)| occupation(**k, index) == top).map(|(_, a)| a.norm_sqr()).sum()
    }

    fn check_leakage(&self, indices: &[usize], threshold: f64) -> Result<(), OracleError> {
        for &i in indices {
            let leakage = self.top_level_population(i) + self.dropped;
            if leakage > threshold {
                return Err(OracleError::Leakage { mode: self.basis.modes[i].label().to_string(), leakage, threshold });
            }
        }
        Ok(())
    }

    fn lowered(amps: &Amplitudes, index: usize) -> Amplitudes {
        let mut out = Amplitudes::new();
        for (&k, &a) in amps {
            let n = occupation(k, index);
            if n > 0 {
                accumulate(&mut out, with_occupation(k, index, n - 1), a * (n as f64).sqrt());
            }
        }
        out
    }

    /// `Σ w_k a_{m_k} |ψ⟩` for a logical field over basis indices.
    fn field_applied(&self, field: &[(usize, C64)], amps: &Amplitudes) -> Amplitudes {
        let mut out = Amplitudes::new();
        for &(index, w) in field {
            for (k, a) in Self::lowered(amps, index) {
                accumulate(&mut out, k, a * w);
            }
        }
        out
    }

    /// `exp(ζ a†_s a†_i − ζ* a_s a_i)` with `ζ = gain·e^{iφ_p}`, on the truncated space.
    pub fn apply_squeezer(&mut self, s: &ModeId, i: &ModeId, gain: C64, pump_phase: f64, opts: &OracleOptions) -> Result<(), OracleError> {
        let si = self.basis.index(s)?;
        let ii = self.basis.index(i)?;
        if si == ii {
            return Err(OracleError::Unsupported(format!("squeezer on a single mode `{}`", s.label())));
        }
        let zeta = gain * C64::from_polar(1.0, pump_phase);
        if zeta.norm() == 0.0 {
            return Ok(());
        }
        let (cs, ci) = (self.basis.cutoff(si), self.basis.cutoff(ii));
        let generator = |amps: &Amplitudes| -> Amplitudes {
            let mut out = Amplitudes::new();
            for (&k, &a) in amps {
                let (ns, ni) = (occupation(k, si), occupation(k, ii));
                if ns < cs && ni < ci {
                    let key = with_occupation(with_occupation(k, si, ns + 1), ii, ni + 1);
                    accumulate(&mut out, key, a * zeta * (((ns + 1) * (ni + 1)) as f64).sqrt());
                }
                if ns > 0 && ni > 0 {
                    let key = with_occupation(with_occupation(k, si, ns - 1), ii, ni - 1);
                    accumulate(&mut out, key, -a * zeta.conj() * ((ns * ni) as f64).sqrt());
                }
            }
            out
        };
        let mut result = self.amplitudes.clone();
        let mut term = self.amplitudes.clone();
        let max_terms = opts.series_terms.unwrap_or(500);
        let mut k = 1;
        loop {
            term = generator(&term);
            let inv = 1.0 / k as f64;
            term.values_mut().for_each(|a| *a *= inv);
            for (&key, &a) in &term {
                accumulate(&mut result, key, a);
            }
            let done = match opts.series_terms {
                Some(n) => k >= n,
                None => norm_sqr(&term).sqrt() < opts.series_tolerance,
            };
            if done {
                break;
            }
            if k >= max_terms {
                return Err(OracleError::SeriesDiverged(k));
            }
            k += 1;
        }
        self.amplitudes = pruned(result);
        self.check_leakage(&[si, ii], opts.leak_threshold)
    }

    /// Coherent displacement `D(α)` on one mode, using exact matrix elements
    /// restricted to the cutoff. Population pushed above the cutoff is lost
    /// and counted as leakage.
    pub fn apply_displacement(&mut self, mode: &ModeId, alpha: C64, opts: &OracleOptions) -> Result<(), OracleError> {
        let index = self.basis.index(mode)?;
        if alpha.norm() == 0.0 {
            return Ok(());
        }
        let d = displacement_matrix(alpha, self.basis.cutoff(index));
        let before = self.norm_sqr();
        let mut out = Amplitudes::new();
        for (&k, &a) in &self.amplitudes {
            let n = occupation(k, index) as usize;
            for (m, row) in d.iter().enumerate() {
                accumulate(&mut out, with_occupation(k, index, m as u32), row[n] * a);
            }
        }
        self.amplitudes = pruned(out);
        self.dropped += (before - self.norm_sqr()).max(0.0);
        self.check_leakage(&[index], opts.leak_threshold)
    }

    /// Phase shift `a → e^{iφ} a` acting on the state.
    pub fn apply_phase(&mut self, mode: &ModeId, phase: f64) -> Result<(), OracleError> {
        let index = self.basis.index(mode)?;
        for (k, a) in self.amplitudes.iter_mut() {
            *a *= C64::from_polar(1.0, phase * occupation(*k, index) as f64);
        }
        Ok(())
    }

    /// Two-mode passive transform with `a → τ a + r b`, `b → −r a + τ* b`,
    /// `r = √(1−|τ|²)`. With `b` in vacuum this is the filter with its
    /// noise mode.
    pub fn apply_filter(&mut self, mode: &ModeId, transmission: C64, ancilla: &ModeId, opts: &OracleOptions) -> Result<(), OracleError> {
        if transmission.norm() > 1.0 + 1e-12 {
            return Err(NetworkError::InvalidTransmission { magnitude: transmission.norm() }.into());
        }
        let ai = self.basis.index(mode)?;
        let bi = self.basis.index(ancilla)?;
        let tau = transmission;
        let r = C64::new((1.0 - tau.norm_sqr()).max(0.0).sqrt(), 0.0);
        // Creation operators transform with the columns of M = [[τ, r], [−r, τ*]].
        let (c00, c10, c01, c11) = (tau, -r, r, tau.conj());
        let (ca, cb) = (self.basis.cutoff(ai), self.basis.cutoff(bi));
        let before = self.norm_sqr();
        let mut out = Amplitudes::new();
        for (&k, &amp) in &self.amplitudes {
            let (n0, n1) = (occupation(k, ai), occupation(k, bi));
            let norm_in = (factorial(n0) * factorial(n1)).sqrt();
            for j in 0..=n0 {
                let left = binomial(n0, j) * c00.powu(j) * c10.powu(n0 - j);
                for l in 0..=n1 {
                    let right = binomial(n1, l) * c01.powu(l) * c11.powu(n1 - l);
                    let p = j + l;
                    let q = n0 + n1 - p;
                    if p > ca || q > cb {
                        continue;
                    }
                    let norm_out = (factorial(p) * factorial(q)).sqrt();
                    let key = with_occupation(with_occupation(k, ai, p), bi, q);
                    accumulate(&mut out, key, amp * left * right * (norm_out / norm_in));
                }
            }
        }
        self.amplitudes = pruned(out);
        self.dropped += (before - self.norm_sqr()).max(0.0);
        self.check_leakage(&[ai, bi], opts.leak_threshold)
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Generalized Laguerre polynomials `L_j^{(a)}(x)` for `j = 0..=n`.
fn laguerre(n: u32, a: u32, x: f64) -> Vec<f64> {
    let a = a as f64;
    let mut l = vec![1.0];
    if n >= 1 {
        l.push(1.0 + a - x);
    }
    for j in 1..n as usize {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0 + a - x) * l[j] - (jf + a) * l[j - 1]) / (jf + 1.0);
        l.push(next);
    }
    l
}

/// `⟨m|D(α)|n⟩` for `m, n ≤ cutoff`, indexed `[m][n]`.
fn displacement_matrix(alpha: C64, cutoff: u32) -> Vec<Vec<C64>> {
    let x = alpha.norm_sqr();
    let envelope = (-x / 2.0).exp();
    let size = cutoff as usize + 1;
    let mut d = vec![vec![C64::new(0.0, 0.0); size]; size];
    for m in 0..=cutoff {
        for n in 0..=cutoff {
            let (lo, hi) = (m.min(n), m.max(n));
            let ratio = ((lo + 1)..=hi).fold(1.0, |acc, k| acc / (k as f64).sqrt());
            let poly = laguerre(lo, hi - lo, x)[lo as usize];
            let power = if m >= n { alpha.powu(m - n) } else { (-alpha.conj()).powu(n - m) };
            d[m as usize][n as usize] = power * (envelope * ratio * poly);
        }
    }
    d
}

/// Logical field: `Σ w a_phys` over basis indices.
type LogicalField = Vec<(usize, C64)>;

/// Runs a network on a Fock state, tracking logical fields for modes that
/// only ever see phases, mirrors or combiners.
#[derive(Clone, Debug)]
pub struct FockSimulation {
    state: FockState,
    fields: BTreeMap<ModeId, LogicalField>,
    /// Physical modes read by a detector or combiner; further gates on them
    /// would retroactively change what was read.
    frozen: BTreeSet<usize>,
    detectors: BTreeMap<String, LogicalField>,
    opts: OracleOptions,
}

impl FockSimulation {
    /// Basis and cutoffs derived from the network; initial coherent
    /// assignments are applied as displacements.
    pub fn new(net: &NetworkSpec, opts: &OracleOptions) -> Result<Self, OracleError> {
        net.validate()?;
        let modes = physical_modes(net, opts)?;
        let basis = FockBasis::new(modes, opts.budget)?;
        let fields = basis.modes().iter().enumerate().map(|(i, m)| (m.clone(), vec![(i, C64::new(1.0, 0.0))])).collect();
        let mut sim = Self { state: FockState::vacuum(basis), fields, frozen: BTreeSet::new(), detectors: BTreeMap::new(), opts: *opts };
        for (mode, s) in net.initial_state.assignments() {
            if let ModeState::Coherent(alpha) = s {
                sim.state.apply_displacement(mode, alpha, opts)?;
            }
        }
        Ok(sim)
    }

    pub fn state(&self) -> &FockState {
        &self.state
    }

    fn single_physical(&self, mode: &ModeId) -> Result<(usize, C64), OracleError> {
        let field = self.fields.get(mode).ok_or_else(|| OracleError::UnknownMode(mode.label().to_string()))?;
        match field.as_slice() {
            [(index, w)] if (w.norm() - 1.0).abs() < 1e-12 => {
                if self.frozen.contains(index) {
                    return Err(OracleError::Unsupported(format!("gate on `{}` after it was read", mode.label())));
                }
                Ok((*index, *w))
            }
            _ => Err(OracleError::Unsupported(format!("gate on combined mode `{}`", mode.label()))),
        }
    }

    fn mode_at(&self, index: usize) -> ModeId {
        self.state.basis.modes[index].clone()
    }

    fn scale_field(&mut self, mode: &ModeId, factor: C64) -> Result<(), OracleError> {
        let field = self.fields.get_mut(mode).ok_or_else(|| OracleError::UnknownMode(mode.label().to_string()))?;
        field.iter_mut().for_each(|(_, w)| *w *= factor);
        Ok(())
    }

    fn freeze(&mut self, mode: &ModeId) -> Result<LogicalField, OracleError> {
        let field = self.fields.get(mode).cloned().ok_or_else(|| OracleError::UnknownMode(mode.label().to_string()))?;
        self.frozen.extend(field.iter().map(|(i, _)| *i));
        Ok(field)
    }

    pub fn apply(&mut self, component: &Component) -> Result<(), OracleError> {
        let opts = self.opts;
        match component {
            Component::Crystal { signal, idler, gain, pump_phase } => {
                let (s, ws) = self.single_physical(signal)?;
                let (i, wi) = self.single_physical(idler)?;
                let effective = gain * ws.conj() * wi.conj();
                let (sm, im) = (self.mode_at(s), self.mode_at(i));
                self.state.apply_squeezer(&sm, &im, effective, *pump_phase, &opts)
            }
            Component::Seed { mode, alpha } => {
                if alpha.norm() > opts.max_seed {
                    return Err(OracleError::SeedTooLarge(alpha.norm()));
                }
                let (p, w) = self.single_physical(mode)?;
                let m = self.mode_at(p);
                self.state.apply_displacement(&m, alpha * w.conj(), &opts)
            }
            Component::Filter { mode, transmission, ancilla } => {
                let (p, _) = self.single_physical(mode)?;
                let m = self.mode_at(p);
                self.state.apply_filter(&m, *transmission, ancilla, &opts)
            }
            Component::PhaseShift { mode, phase } => self.scale_field(mode, C64::from_polar(1.0, *phase)),
            Component::Mirror { mode } => self.scale_field(mode, C64::i()),
            Component::Combiner { inputs, output, weights } => {
                let mut combined: BTreeMap<usize, C64> = BTreeMap::new();
                for (m, w) in inputs.iter().zip(weights) {
                    for (i, v) in self.freeze(m)? {
                        *combined.entry(i).or_default() += v * w;
                    }
                }
                self.fields.insert(output.clone(), combined.into_iter().collect());
                Ok(())
            }
            Component::Detector { name, mode } => {
                let field = self.freeze(mode)?;
                self.detectors.insert(name.clone(), field);
                Ok(())
            }
        }
    }

    fn detector(&self, name: &str) -> Result<&LogicalField, OracleError> {
        self.detectors.get(name).ok_or_else(|| NetworkError::UnknownDetector(name.to_string()).into())
    }

    /// `‖E⁺ψ‖²` at detector `name`.
    pub fn rate(&self, name: &str) -> Result<f64, OracleError> {
        let f = self.detector(name)?;
        Ok(norm_sqr(&self.state.field_applied(f, &self.state.amplitudes)))
    }

    /// `‖E⁺_b E⁺_a ψ‖²`.
    pub fn coincidence(&self, a: &str, b: &str) -> Result<f64, OracleError> {
        let (fa, fb) = (self.detector(a)?, self.detector(b)?);
        let once = self.state.field_applied(fa, &self.state.amplitudes);
        Ok(norm_sqr(&self.state.field_applied(fb, &once)))
    }

    pub fn measure(&self, observable: &Observable) -> Result<f64, OracleError> {
        match observable {
            Observable::Detector(d) => self.rate(d),
            Observable::Coincidence(a, b) => self.coincidence(a, b),
        }
    }

    /// `⟨E⁺⟩` for a logical mode.
    pub fn mean_field(&self, mode: &ModeId) -> Result<C64, OracleError> {
        let field = self.fields.get(mode).ok_or_else(|| OracleError::UnknownMode(mode.label().to_string()))?;
        let lowered = self.state.field_applied(field, &self.state.amplitudes);
        Ok(lowered.iter().map(|(k, a)| self.state.amplitudes.get(k).copied().unwrap_or_default().conj() * a).sum())
    }
}

/// Physical modes and cutoffs. Seeded modes get a cutoff sized to the total
/// seed magnitude; an ancilla inherits its filtered mode's cutoff.
fn physical_modes(net: &NetworkSpec, opts: &OracleOptions) -> Result<Vec<(ModeId, u32)>, OracleError> {
    let mut order: Vec<ModeId> = Vec::new();
    let mut seed: BTreeMap<ModeId, f64> = BTreeMap::new();
    let mut ancilla_of: BTreeMap<ModeId, ModeId> = BTreeMap::new();
    let mut logical: BTreeSet<ModeId> = BTreeSet::new();
    let add = |m: &ModeId, order: &mut Vec<ModeId>| {
        if !order.contains(m) {
            order.push(m.clone());
        }
    };
    for (m, s) in net.initial_state.assignments() {
        add(m, &mut order);
        *seed.entry(m.clone()).or_default() += s.amplitude().norm();
    }
    for c in &net.components {
        match c {
            Component::Crystal { signal, idler, .. } => {
                for m in [signal, idler] {
                    if !logical.contains(m) {
                        add(m, &mut order);
                    }
                }
            }
            Component::Seed { mode, alpha } => {
                if alpha.norm() > opts.max_seed {
                    return Err(OracleError::SeedTooLarge(alpha.norm()));
                }
                if !logical.contains(mode) {
                    add(mode, &mut order);
                }
                *seed.entry(mode.clone()).or_default() += alpha.norm();
            }
            Component::Filter { mode, ancilla, .. } => {
                add(ancilla, &mut order);
                ancilla_of.insert(ancilla.clone(), mode.clone());
            }
            Component::Combiner { output, .. } => {
                logical.insert(output.clone());
            }
            _ => {}
        }
    }
    let cutoff_of = |m: &ModeId| match seed.get(m) {
        Some(&a) if a > 0.0 => seeded_cutoff(a, opts.seeded_tail).max(opts.default_cutoff),
        _ => opts.default_cutoff,
    };
    Ok(order
        .iter()
        .map(|m| {
            let cutoff = match ancilla_of.get(m) {
                Some(parent) => cutoff_of(parent),
                None => cutoff_of(m),
            };
            (m.clone(), cutoff)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub rates: BTreeMap<String, f64>,
    pub coincidences: Vec<(String, String, f64)>,
    pub dimension: f64,
    pub support: usize,
    pub norm_deviation: f64,
    pub dropped_population: f64,
}

/// Simulates the whole network and measures every detector plus the
/// requested coincidence pairs.
pub fn oracle_run(net: &NetworkSpec, coincidences: &[(String, String)], opts: &OracleOptions) -> Result<OracleReport, OracleError> {
    let mut sim = FockSimulation::new(net, opts)?;
    for c in &net.components {
        sim.apply(c)?;
    }
    let state = sim.state();
    let norm_deviation = state.norm_deviation();
    if norm_deviation > 1e-6 {
        log::warn!("oracle norm deviation {norm_deviation:.3e}; cutoffs may be too small");
    }
    let rates = sim.detectors.keys().map(|d| Ok((d.clone(), sim.rate(d)?))).collect::<Result<_, OracleError>>()?;
    let coincidences = coincidences
        .iter()
        .map(|(a, b)| Ok((a.clone(), b.clone(), sim.coincidence(a, b)?)))
        .collect::<Result<_, OracleError>>()?;
    Ok(OracleReport {
        rates,
        coincidences,
        dimension: state.basis().dimension(),
        support: state.support(),
        norm_deviation,
        dropped_population: state.dropped_population(),
    })
}

/// Single observable through the oracle.
pub fn oracle_rate(net: &NetworkSpec, observable: &Observable, opts: &OracleOptions) -> Result<f64, OracleError> {
    let mut sim = FockSimulation::new(net, opts)?;
    for c in &net.components {
        sim.apply(c)?;
    }
    sim.measure(observable)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn two_mode(cs: u32, ci: u32) -> FockState {
        let basis = FockBasis::new(vec![(ModeId::signal("s"), cs), (ModeId::idler("i"), ci)], 2e6).unwrap();
        FockState::vacuum(basis)
    }

    fn number(state: &FockState, index: usize) -> f64 {
        state.amplitudes.iter().map(|(k, a)| occupation(*k, index) as f64 * a.norm_sqr()).sum()
    }

    #[test]
    fn zero_gain_squeezer_is_identity() {
        let mut psi = two_mode(4, 4);
        let before = psi.clone();
        psi.apply_squeezer(&ModeId::signal("s"), &ModeId::idler("i"), c(0.0, 0.0), 0.3, &OracleOptions::default()).unwrap();
        assert_eq!(psi, before);
    }

    #[test]
    fn squeezed_vacuum_moments() {
        let gain = 0.01_f64;
        let phase = 0.7;
        let mut psi = two_mode(6, 6);
        psi.apply_squeezer(&ModeId::signal("s"), &ModeId::idler("i"), c(gain, 0.0), phase, &OracleOptions::default()).unwrap();
        let sh2 = gain.sinh().powi(2);
        assert!((number(&psi, 0) - sh2).abs() < 1e-14);
        assert!((psi.norm_sqr() - 1.0).abs() < 1e-13);

        // ⟨a_s a_i⟩ = Σ ⟨n,n| a_s a_i |n+1,n+1⟩-weighted overlaps.
        let pair: C64 = (0..6u32).map(|n| psi.amplitude(&[n, n]).conj() * psi.amplitude(&[n + 1, n + 1]) * (n + 1) as f64).sum();
        let expected = C64::from_polar(gain.cosh() * gain.sinh(), phase);
        assert!((pair - expected).norm() < 1e-14);
    }

    #[test]
    fn displacement_gives_coherent_mean() {
        let basis = FockBasis::new(vec![(ModeId::idler("i"), 12)], 2e6).unwrap();
        let mut psi = FockState::vacuum(basis);
        let opts = OracleOptions { leak_threshold: 1e-6, ..Default::default() };
        psi.apply_displacement(&ModeId::idler("i"), c(1.0, 0.0), &opts).unwrap();
        assert!((number(&psi, 0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn displacement_matrix_is_unitary_on_low_block() {
        let d = displacement_matrix(c(0.4, -0.3), 30);
        for n in 0..5 {
            for m in 0..5 {
                let dot: C64 = (0..31).map(|k| d[k][n].conj() * d[k][m]).sum();
                let expected = if n == m { 1.0 } else { 0.0 };
                assert!((dot - expected).norm() < 1e-12, "{n} {m} {dot}");
            }
        }
    }

    #[test]
    fn seeded_cutoff_is_large_enough() {
        assert!(seeded_cutoff(1.5, 1e-12) >= 12);
        assert!(seeded_cutoff(1.0, 1e-12) >= 7);
        assert_eq!(seeded_cutoff(0.0, 1e-12), 1);
    }

    fn filter_net(tau: C64, alpha: C64) -> NetworkSpec {
        NetworkSpec::new(vec![
            Component::Seed { mode: ModeId::idler("i"), alpha },
            Component::Filter { mode: ModeId::idler("i"), transmission: tau, ancilla: ModeId::ancilla("n") },
            Component::Detector { name: "D".into(), mode: ModeId::idler("i") },
        ])
    }

    #[test]
    fn filter_attenuates_coherent_state() {
        let alpha = c(1.0, 0.0);
        let tau = C64::from_polar(0.6, 0.9);
        let net = filter_net(tau, alpha);
        let mut sim = FockSimulation::new(&net, &OracleOptions::default()).unwrap();
        for comp in &net.components {
            sim.apply(comp).unwrap();
        }
        assert!((sim.rate("D").unwrap() - 0.36).abs() < 1e-11);
        assert!((sim.mean_field(&ModeId::idler("i")).unwrap() - tau * alpha).norm() < 1e-11);
        assert!(sim.state().norm_deviation() < 1e-10);
    }

    #[test]
    fn transparent_filter_leaves_state_unchanged() {
        let mut psi = {
            let basis = FockBasis::new(vec![(ModeId::idler("i"), 8), (ModeId::ancilla("n"), 8)], 2e6).unwrap();
            FockState::vacuum(basis)
        };
        psi.apply_displacement(&ModeId::idler("i"), c(0.3, 0.2), &OracleOptions::default()).unwrap();
        let before = psi.clone();
        psi.apply_filter(&ModeId::idler("i"), c(1.0, 0.0), &ModeId::ancilla("n"), &OracleOptions::default()).unwrap();
        for (k, a) in &before.amplitudes {
            assert!((psi.amplitudes[k] - a).norm() < 1e-15);
        }
    }

    #[test]
    fn phase_on_state_rotates_mean_field() {
        let basis = FockBasis::new(vec![(ModeId::idler("i"), 14)], 2e6).unwrap();
        let mut psi = FockState::vacuum(basis);
        let alpha = c(0.8, 0.1);
        psi.apply_displacement(&ModeId::idler("i"), alpha, &OracleOptions::default()).unwrap();
        psi.apply_phase(&ModeId::idler("i"), 0.5).unwrap();
        let lowered = FockState::lowered(&psi.amplitudes, 0);
        let mean: C64 = lowered.iter().map(|(k, a)| psi.amplitudes.get(k).copied().unwrap_or_default().conj() * a).sum();
        assert!((mean - alpha * C64::from_polar(1.0, 0.5)).norm() < 1e-10);
    }

    #[test]
    fn measurements_on_simple_states() {
        let vac = NetworkSpec::new(vec![
            Component::Seed { mode: ModeId::idler("i"), alpha: c(0.0, 0.0) },
            Component::Detector { name: "D".into(), mode: ModeId::idler("i") },
        ]);
        assert_eq!(oracle_run(&vac, &[], &OracleOptions::default()).unwrap().rates["D"], 0.0);

        let coh = NetworkSpec::new(vec![
            Component::Seed { mode: ModeId::idler("i"), alpha: c(2.0, 0.0) },
            Component::Detector { name: "D".into(), mode: ModeId::idler("i") },
        ]);
        assert!((oracle_run(&coh, &[], &OracleOptions::default()).unwrap().rates["D"] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn squeezed_vacuum_coincidence() {
        let gain = 0.01_f64;
        let net = NetworkSpec::new(vec![
            Component::Crystal { signal: ModeId::signal("s"), idler: ModeId::idler("i"), gain: c(gain, 0.0), pump_phase: 0.0 },
            Component::Detector { name: "S".into(), mode: ModeId::signal("s") },
            Component::Detector { name: "I".into(), mode: ModeId::idler("i") },
        ]);
        let report = oracle_run(&net, &[("S".into(), "I".into())], &OracleOptions::default()).unwrap();
        let (sh, ch) = (gain.sinh(), gain.cosh());
        let expected = sh * sh * ch * ch + sh.powi(4);
        assert!((report.coincidences[0].2 - expected).abs() < 1e-15);
    }

    #[test]
    fn budget_and_seed_limits() {
        let modes = (0..8).map(|k| (ModeId::signal(format!("m{k}")), 8)).collect();
        assert!(matches!(FockBasis::new(modes, 2e6), Err(OracleError::BudgetExceeded { .. })));
        let big = filter_net(c(0.5, 0.0), c(2.5, 0.0));
        assert!(matches!(oracle_run(&big, &[], &OracleOptions::default()), Err(OracleError::SeedTooLarge(_))));
    }

    #[test]
    fn small_cutoff_reports_leakage() {
        let net = filter_net(c(0.5, 0.0), c(1.0, 0.0));
        let opts = OracleOptions { seeded_tail: 1e-2, ..Default::default() };
        let tight = OracleOptions { default_cutoff: 1, ..opts };
        let mut sim = FockSimulation::new(&net, &tight).unwrap();
        let err = sim.apply(&net.components[0]).unwrap_err();
        assert!(matches!(err, OracleError::Leakage { .. }));
    }
}
