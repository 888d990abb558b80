//! Heisenberg-picture compilation of interferometer networks into detector
//! field expressions, and count rates from those fields.
//!
//! Every mode starts as its own annihilation operator. Components are applied
//! in propagation order, each rewriting the current field of the modes it
//! touches in terms of the initial operators. Fields are graded by their order
//! in the crystal gains so the first-order truncation is explicit.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::algebra::{ModeId, ModeState, OperatorExpr, StateSpec};

/// Gains above this magnitude violate the weak-conversion assumption; such
/// networks still compile but a warning is logged.
pub const GAIN_WARNING_THRESHOLD: f64 = 0.1;

/// Tolerance for the imaginary part of a computed rate, relative to its real part.
pub const RATE_IMAG_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("component {index}: mode `{mode}` is referenced before it is defined")]
    UndefinedMode { index: usize, mode: String },
    #[error("component {index}: mode `{mode}` is already defined")]
    ModeRedefined { index: usize, mode: String },
    #[error("component {index}: ancilla `{mode}` belongs to a filter and cannot be reused")]
    AncillaReused { index: usize, mode: String },
    #[error("component {index}: mode `{mode}` is rewritten after detector `{detector}` read it")]
    DetectedModeRewritten { index: usize, mode: String, detector: String },
    #[error("component {index}: detector name `{name}` is used twice")]
    DuplicateDetector { index: usize, name: String },
    #[error("component {index}: crystal signal and idler must be distinct modes (`{mode}`)")]
    CrystalModesCoincide { index: usize, mode: String },
    #[error("filter transmission magnitude {magnitude} exceeds 1")]
    InvalidTransmission { magnitude: f64 },
    #[error("component {index}: combiner needs matching non-empty inputs and weights ({inputs} inputs, {weights} weights)")]
    CombinerArity { index: usize, inputs: usize, weights: usize },
    #[error("component {index}: non-finite parameter")]
    NonFinite { index: usize },
    #[error("unknown detector `{0}`")]
    UnknownDetector(String),
    #[error("rate is not real: {re} + {im}i")]
    RateNotReal { re: f64, im: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Component {
    /// Down-conversion crystal with effective gain `C` and pump phase.
    Crystal { signal: ModeId, idler: ModeId, gain: C64, pump_phase: f64 },
    PhaseShift { mode: ModeId, phase: f64 },
    /// Reflection; multiplies the field by `i`.
    Mirror { mode: ModeId },
    /// Attenuator with complex field transmission `τ`; the lost amplitude is
    /// replaced by a fresh vacuum ancilla so the output stays canonical.
    Filter { mode: ModeId, transmission: C64, ancilla: ModeId },
    /// Coherent classical displacement of a mode.
    Seed { mode: ModeId, alpha: C64 },
    /// Writes `Σ weights[k] * inputs[k]` into a new output mode.
    Combiner { inputs: Vec<ModeId>, output: ModeId, weights: Vec<C64> },
    Detector { name: String, mode: ModeId },
}

impl Component {
    /// Modes whose field this component rewrites.
    fn written_modes(&self) -> Vec<&ModeId> {
        match self {
            Component::Crystal { signal, idler, .. } => vec![signal, idler],
            Component::PhaseShift { mode, .. }
            | Component::Mirror { mode }
            | Component::Filter { mode, .. }
            | Component::Seed { mode, .. } => vec![mode],
            Component::Combiner { output, .. } => vec![output],
            Component::Detector { .. } => vec![],
        }
    }

    fn is_finite(&self) -> bool {
        let c = |z: &C64| z.re.is_finite() && z.im.is_finite();
        match self {
            Component::Crystal { gain, pump_phase, .. } => c(gain) && pump_phase.is_finite(),
            Component::PhaseShift { phase, .. } => phase.is_finite(),
            Component::Filter { transmission, .. } => c(transmission),
            Component::Seed { alpha, .. } => c(alpha),
            Component::Combiner { weights, .. } => weights.iter().all(c),
            Component::Mirror { .. } | Component::Detector { .. } => true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetworkSpec {
    pub components: Vec<Component>,
    pub initial_state: StateSpec,
}

impl NetworkSpec {
    pub fn new(components: Vec<Component>) -> Self {
        Self { components, initial_state: StateSpec::vacuum() }
    }

    pub fn with_state(mut self, state: StateSpec) -> Self {
        self.initial_state = state;
        self
    }

    pub fn detectors(&self) -> impl Iterator<Item = (&str, &ModeId)> {
        self.components.iter().filter_map(|c| match c {
            Component::Detector { name, mode } => Some((name.as_str(), mode)),
            _ => None,
        })
    }

    /// Copy of the network with every seed amplitude, including coherent
    /// initial-state assignments, multiplied by `factor`.
    pub fn scaled_seeds(&self, factor: f64) -> Self {
        let components = self
            .components
            .iter()
            .map(|c| match c {
                Component::Seed { mode, alpha } => Component::Seed { mode: mode.clone(), alpha: alpha * factor },
                other => other.clone(),
            })
            .collect();
        Self { components, initial_state: self.initial_state.scaled(factor) }
    }

    /// Structural checks: modes defined before use, unique detector names and
    /// ancillas, no writes to a mode after a detector has read it.
    pub fn validate(&self) -> Result<(), NetworkError> {
        let mut defined: BTreeSet<ModeId> = self.initial_state.assignments().map(|(m, _)| m.clone()).collect();
        let mut ancillas: BTreeSet<ModeId> = BTreeSet::new();
        let mut frozen: BTreeMap<ModeId, String> = BTreeMap::new();
        let mut detector_names: BTreeSet<&str> = BTreeSet::new();

        for (index, comp) in self.components.iter().enumerate() {
            if !comp.is_finite() {
                return Err(NetworkError::NonFinite { index });
            }
            let referenced: Vec<&ModeId> = match comp {
                Component::Crystal { signal, idler, .. } => vec![signal, idler],
                Component::PhaseShift { mode, .. }
                | Component::Mirror { mode }
                | Component::Seed { mode, .. }
                | Component::Detector { mode, .. } => vec![mode],
                Component::Filter { mode, ancilla, .. } => vec![mode, ancilla],
                Component::Combiner { inputs, output, .. } => inputs.iter().chain(std::iter::once(output)).collect(),
            };
            if let Some(m) = referenced.iter().find(|m| ancillas.contains(**m)) {
                return Err(NetworkError::AncillaReused { index, mode: m.label().to_string() });
            }
            for m in comp.written_modes() {
                if let Some(detector) = frozen.get(m) {
                    return Err(NetworkError::DetectedModeRewritten {
                        index,
                        mode: m.label().to_string(),
                        detector: detector.clone(),
                    });
                }
            }
            let require = |m: &ModeId, defined: &BTreeSet<ModeId>| {
                if defined.contains(m) {
                    Ok(())
                } else {
                    Err(NetworkError::UndefinedMode { index, mode: m.label().to_string() })
                }
            };
            match comp {
                Component::Crystal { signal, idler, gain, .. } => {
                    if signal == idler {
                        return Err(NetworkError::CrystalModesCoincide { index, mode: signal.label().to_string() });
                    }
                    if gain.norm() > GAIN_WARNING_THRESHOLD {
                        log::warn!(
                            "crystal {index}: |C| = {:.3} exceeds {GAIN_WARNING_THRESHOLD}; first-order rates lose accuracy",
                            gain.norm()
                        );
                    }
                    defined.insert(signal.clone());
                    defined.insert(idler.clone());
                }
                Component::PhaseShift { mode, .. } | Component::Mirror { mode } => require(mode, &defined)?,
                Component::Filter { mode, transmission, ancilla } => {
                    require(mode, &defined)?;
                    check_transmission(*transmission)?;
                    if defined.contains(ancilla) {
                        return Err(NetworkError::ModeRedefined { index, mode: ancilla.label().to_string() });
                    }
                    ancillas.insert(ancilla.clone());
                }
                Component::Seed { mode, .. } => {
                    defined.insert(mode.clone());
                }
                Component::Combiner { inputs, output, weights } => {
                    if inputs.is_empty() || inputs.len() != weights.len() {
                        return Err(NetworkError::CombinerArity { index, inputs: inputs.len(), weights: weights.len() });
                    }
                    for m in inputs {
                        require(m, &defined)?;
                    }
                    if defined.contains(output) {
                        return Err(NetworkError::ModeRedefined { index, mode: output.label().to_string() });
                    }
                    defined.insert(output.clone());
                }
                Component::Detector { name, mode } => {
                    require(mode, &defined)?;
                    if !detector_names.insert(name) {
                        return Err(NetworkError::DuplicateDetector { index, name: name.clone() });
                    }
                    frozen.entry(mode.clone()).or_insert_with(|| name.clone());
                }
            }
        }
        Ok(())
    }
}

fn check_transmission(tau: C64) -> Result<(), NetworkError> {
    if tau.norm() > 1.0 + 1e-12 {
        Err(NetworkError::InvalidTransmission { magnitude: tau.norm() })
    } else {
        Ok(())
    }
}

/// Truncation orders in the crystal gains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrderPolicy {
    /// Highest gain order kept in any field expression.
    pub max_field_order: usize,
    /// Highest total gain order kept in products of fields.
    pub max_product_order: usize,
}

impl Default for OrderPolicy {
    fn default() -> Self {
        Self { max_field_order: 1, max_product_order: 2 }
    }
}

/// Operator expression split by order in the crystal gains: `orders[k]`
/// collects the terms proportional to k gain factors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradedExpr {
    orders: Vec<OperatorExpr>,
}

impl GradedExpr {
    pub fn from_order_zero(e: OperatorExpr) -> Self {
        Self { orders: vec![e] }
    }

    pub fn annihilator(mode: &ModeId) -> Self {
        Self::from_order_zero(OperatorExpr::annihilate(mode))
    }

    pub fn order(&self, k: usize) -> OperatorExpr {
        self.orders.get(k).cloned().unwrap_or_default()
    }

    pub fn max_order(&self) -> usize {
        self.orders.len().saturating_sub(1)
    }

    /// Sum over all orders.
    pub fn total(&self) -> OperatorExpr {
        self.orders.iter().fold(OperatorExpr::zero(), |acc, e| &acc + e)
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { orders: self.orders.iter().map(|e| e.scale(c)).collect() }
    }

    pub fn adjoint(&self) -> Self {
        Self { orders: self.orders.iter().map(OperatorExpr::adjoint).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.orders.len().max(other.orders.len());
        Self { orders: (0..n).map(|k| &self.order(k) + &other.order(k)).collect() }
    }

    /// Multiplies by one gain factor `c`, raising every term by one order.
    pub fn raised(&self, c: C64) -> Self {
        let mut orders = vec![OperatorExpr::zero()];
        orders.extend(self.orders.iter().map(|e| e.scale(c)));
        Self { orders }
    }

    pub fn truncated(mut self, max_order: usize) -> Self {
        self.orders.truncate(max_order + 1);
        self
    }

    /// Product keeping total orders up to `max_order`.
    pub fn multiply(&self, rhs: &Self, max_order: usize) -> Self {
        let n = (self.orders.len() + rhs.orders.len()).saturating_sub(1).min(max_order + 1);
        let mut orders = vec![OperatorExpr::zero(); n];
        for (i, l) in self.orders.iter().enumerate() {
            for (j, r) in rhs.orders.iter().enumerate() {
                if i + j < n && !l.is_zero() && !r.is_zero() {
                    orders[i + j] = &orders[i + j] + &l.multiply(r);
                }
            }
        }
        Self { orders }
    }
}

pub type FieldMap = BTreeMap<ModeId, GradedExpr>;

fn field_of(fields: &FieldMap, mode: &ModeId) -> GradedExpr {
    fields.get(mode).cloned().unwrap_or_else(|| GradedExpr::annihilator(mode))
}

/// Applies one component's input-output relation to the current fields.
/// Modes without an entry carry their own annihilation operator.
pub fn apply_component(fields: &FieldMap, component: &Component, policy: &OrderPolicy) -> Result<FieldMap, NetworkError> {
    let mut out = fields.clone();
    match component {
        Component::Crystal { signal, idler, gain, pump_phase } => {
            let coupling = gain * C64::from_polar(1.0, *pump_phase);
            let s_in = field_of(fields, signal);
            let i_in = field_of(fields, idler);
            let s_out = s_in.add(&i_in.adjoint().raised(coupling)).truncated(policy.max_field_order);
            let i_out = i_in.add(&s_in.adjoint().raised(coupling)).truncated(policy.max_field_order);
            out.insert(signal.clone(), s_out);
            out.insert(idler.clone(), i_out);
        }
        Component::PhaseShift { mode, phase } => {
            out.insert(mode.clone(), field_of(fields, mode).scale(C64::from_polar(1.0, *phase)));
        }
        Component::Mirror { mode } => {
            out.insert(mode.clone(), field_of(fields, mode).scale(C64::i()));
        }
        Component::Filter { mode, transmission, ancilla } => {
            check_transmission(*transmission)?;
            let loss = (1.0 - transmission.norm_sqr()).max(0.0).sqrt();
            let noise = GradedExpr::annihilator(ancilla).scale(C64::new(loss, 0.0));
            out.insert(mode.clone(), field_of(fields, mode).scale(*transmission).add(&noise));
        }
        Component::Seed { mode, alpha } => {
            let shift = GradedExpr::from_order_zero(OperatorExpr::scalar(*alpha));
            out.insert(mode.clone(), field_of(fields, mode).add(&shift));
        }
        Component::Combiner { inputs, output, weights } => {
            if inputs.is_empty() || inputs.len() != weights.len() {
                return Err(NetworkError::CombinerArity { index: 0, inputs: inputs.len(), weights: weights.len() });
            }
            let combined = inputs
                .iter()
                .zip(weights)
                .fold(GradedExpr::default(), |acc, (m, w)| acc.add(&field_of(fields, m).scale(*w)));
            out.insert(output.clone(), combined);
        }
        Component::Detector { .. } => {}
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorField {
    pub mode: ModeId,
    pub e_plus: GradedExpr,
    pub e_minus: GradedExpr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorFields {
    pub detectors: BTreeMap<String, DetectorField>,
    pub policy: OrderPolicy,
}

impl DetectorFields {
    pub fn get(&self, name: &str) -> Result<&DetectorField, NetworkError> {
        self.detectors.get(name).ok_or_else(|| NetworkError::UnknownDetector(name.to_string()))
    }
}

pub fn compile(net: &NetworkSpec, policy: &OrderPolicy) -> Result<DetectorFields, NetworkError> {
    net.validate()?;
    let mut fields = FieldMap::new();
    let mut detectors = BTreeMap::new();
    for comp in &net.components {
        if let Component::Detector { name, mode } = comp {
            let e_plus = field_of(&fields, mode);
            let e_minus = e_plus.adjoint();
            detectors.insert(name.clone(), DetectorField { mode: mode.clone(), e_plus, e_minus });
        } else {
            fields = apply_component(&fields, comp, policy)?;
        }
    }
    Ok(DetectorFields { detectors, policy: *policy })
}

fn real_rate(op: &OperatorExpr, state: &StateSpec) -> Result<f64, NetworkError> {
    let value = op.expectation(state);
    let scale = op.expectation_magnitude(state);
    let tolerance = RATE_IMAG_TOLERANCE * value.re.abs().max(1e-2 * scale);
    if value.im.abs() > tolerance {
        return Err(NetworkError::RateNotReal { re: value.re, im: value.im });
    }
    Ok(value.re)
}

/// `⟨E⁻ E⁺⟩` at detector `name`.
pub fn detector_rate(fields: &DetectorFields, name: &str, state: &StateSpec) -> Result<f64, NetworkError> {
    let d = fields.get(name)?;
    let product = d.e_minus.multiply(&d.e_plus, fields.policy.max_product_order);
    real_rate(&product.total(), state)
}

/// `⟨E⁻_A E⁻_B E⁺_B E⁺_A⟩` for detectors `a` and `b`.
pub fn coincidence_rate(fields: &DetectorFields, a: &str, b: &str, state: &StateSpec) -> Result<f64, NetworkError> {
    let da = fields.get(a)?;
    let db = fields.get(b)?;
    let max = fields.policy.max_product_order;
    let product = da
        .e_minus
        .multiply(&db.e_minus, max)
        .multiply(&db.e_plus, max)
        .multiply(&da.e_plus, max);
    real_rate(&product.total(), state)
}

/// Quantity measured on a network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Observable {
    Detector(String),
    Coincidence(String, String),
}

impl Observable {
    /// Number of field factors carrying seed amplitudes; the rate is a
    /// polynomial of this degree in a common seed scale.
    pub fn seed_degree(&self) -> usize {
        match self {
            Observable::Detector(_) => 2,
            Observable::Coincidence(..) => 4,
        }
    }
}

/// How seeds enter a rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RateModel {
    /// Seeds are coherent states; vacuum contributions are kept.
    #[default]
    Full,
    /// Classical-seed limit: only the part of the rate growing with the
    /// highest power of the seed amplitude (the stimulated part).
    StimulatedLimit,
}

/// Leading coefficient of a polynomial of degree ≤ `degree` sampled at
/// `0, 1, ..., degree`, via the forward difference `Δ^d p(0) / d!`.
pub fn leading_coefficient(samples: &[f64]) -> f64 {
    let d = samples.len() - 1;
    let mut binom = 1.0;
    let mut sum = 0.0;
    for (k, v) in samples.iter().enumerate() {
        let sign = if (d - k) % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * binom * v;
        binom = binom * (d - k) as f64 / (k + 1) as f64;
    }
    let factorial: f64 = (1..=d).map(|k| k as f64).product();
    sum / factorial
}

/// Evaluates `observable` with the engine, under the chosen seed model.
pub fn engine_rate(net: &NetworkSpec, observable: &Observable, model: RateModel, policy: &OrderPolicy) -> Result<f64, NetworkError> {
    let eval = |net: &NetworkSpec| -> Result<f64, NetworkError> {
        let fields = compile(net, policy)?;
        match observable {
            Observable::Detector(d) => detector_rate(&fields, d, &net.initial_state),
            Observable::Coincidence(a, b) => coincidence_rate(&fields, a, b, &net.initial_state),
        }
    };
    match model {
        RateModel::Full => eval(net),
        RateModel::StimulatedLimit => {
            let samples = (0..=observable.seed_degree())
                .map(|k| eval(&net.scaled_seeds(k as f64)))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(leading_coefficient(&samples))
        }
    }
}

/// `true` if any seed or coherent assignment is present.
pub fn is_seeded(net: &NetworkSpec) -> bool {
    net.components.iter().any(|c| matches!(c, Component::Seed { alpha, .. } if alpha.norm() > 0.0))
        || net.initial_state.assignments().any(|(_, s)| matches!(s, ModeState::Coherent(a) if a.norm() > 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Signature;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn crystal(s: &str, i: &str, gain: f64) -> Component {
        Component::Crystal { signal: ModeId::signal(s), idler: ModeId::idler(i), gain: c(gain, 0.0), pump_phase: 0.0 }
    }

    fn cascade(phi: f64, gain: f64, seed: Option<C64>) -> NetworkSpec {
        let mut comps = Vec::new();
        if let Some(alpha) = seed {
            comps.push(Component::Seed { mode: ModeId::idler("i1"), alpha });
        }
        comps.extend([
            crystal("s1", "i1", gain),
            crystal("s2", "i1", gain),
            Component::Mirror { mode: ModeId::signal("s1") },
            Component::PhaseShift { mode: ModeId::signal("s1"), phase: phi },
            Component::Combiner {
                inputs: vec![ModeId::signal("s1"), ModeId::signal("s2")],
                output: ModeId::signal("sA"),
                weights: vec![c(1.0, 0.0), c(1.0, 0.0)],
            },
            Component::Detector { name: "A".into(), mode: ModeId::signal("sA") },
        ]);
        NetworkSpec::new(comps)
    }

    #[test]
    fn crystal_on_vacuum_adds_gain_times_idler_creator() {
        let fields = apply_component(&FieldMap::new(), &crystal("s2", "i2", 0.05), &OrderPolicy::default()).unwrap();
        let s = &fields[&ModeId::signal("s2")];
        assert_eq!(s.order(0), OperatorExpr::annihilate(&ModeId::signal("s2")));
        assert_eq!(s.order(1), OperatorExpr::create(&ModeId::idler("i2")).scale(c(0.05, 0.0)));
    }

    #[test]
    fn transparent_filter_is_identity() {
        let f = Component::Filter { mode: ModeId::idler("i"), transmission: c(1.0, 0.0), ancilla: ModeId::ancilla("anc") };
        let fields = apply_component(&FieldMap::new(), &f, &OrderPolicy::default()).unwrap();
        assert_eq!(fields[&ModeId::idler("i")].total(), OperatorExpr::annihilate(&ModeId::idler("i")));
    }

    #[test]
    fn filter_preserves_commutator() {
        let f = Component::Filter { mode: ModeId::idler("i"), transmission: c(0.6, 0.0), ancilla: ModeId::ancilla("anc") };
        let fields = apply_component(&FieldMap::new(), &f, &OrderPolicy::default()).unwrap();
        let out = fields[&ModeId::idler("i")].total();
        let comm = out.commutator(&out.adjoint());
        assert_eq!(comm.len(), 1);
        assert!((comm.constant() - 1.0).norm() < 1e-15);
    }

    #[test]
    fn overdriven_filter_is_rejected() {
        let f = Component::Filter { mode: ModeId::idler("i"), transmission: c(1.5, 0.0), ancilla: ModeId::ancilla("anc") };
        assert!(matches!(
            apply_component(&FieldMap::new(), &f, &OrderPolicy::default()),
            Err(NetworkError::InvalidTransmission { .. })
        ));
    }

    #[test]
    fn empty_network_detector_sees_bare_mode() {
        let m = ModeId::signal("m");
        let net = NetworkSpec::new(vec![Component::Detector { name: "D".into(), mode: m.clone() }])
            .with_state(StateSpec::vacuum().with_coherent(m.clone(), c(0.0, 0.0)));
        let fields = compile(&net, &OrderPolicy::default()).unwrap();
        assert_eq!(fields.get("D").unwrap().e_plus.total(), OperatorExpr::annihilate(&m));
    }

    #[test]
    fn cascade_field_has_two_generated_terms_on_shared_idler() {
        let gain = 0.01;
        let phi = 0.4;
        let fields = compile(&cascade(phi, gain, None), &OrderPolicy::default()).unwrap();
        let first = fields.get("A").unwrap().e_plus.order(1);
        let coeff = first.coefficient(&Signature::single(
            ModeId::idler("i1"),
            crate::algebra::Powers { create: 1, annihilate: 0 },
        ));
        let expected = c(0.0, 1.0) * gain * C64::from_polar(1.0, phi) + gain;
        assert!((coeff - expected).norm() < 1e-16);
        assert_eq!(first.len(), 1);
    }

    #[test]
    fn cascade_rates_follow_two_crystal_law() {
        let gain = 0.01;
        let g2 = gain * gain;
        let rate = |phi: f64, seed: Option<C64>| {
            let net = cascade(phi, gain, seed);
            let f = compile(&net, &OrderPolicy::default()).unwrap();
            detector_rate(&f, "A", &net.initial_state).unwrap()
        };
        assert!((rate(0.0, None) - 2.0 * g2).abs() < 1e-18);
        assert!(rate(FRAC_PI_2, Some(c(10.0, 0.0))).abs() < 1e-16);
        let r = rate(-FRAC_PI_2, Some(c(10.0, 0.0)));
        assert!((r - 2.0 * g2 * 2.0 * 101.0).abs() < 1e-14);
    }

    #[test]
    fn stimulated_limit_drops_vacuum_part() {
        let gain = 0.01;
        let net = cascade(PI, gain, Some(c(3.0, 0.0)));
        let obs = Observable::Detector("A".into());
        let full = engine_rate(&net, &obs, RateModel::Full, &OrderPolicy::default()).unwrap();
        let stim = engine_rate(&net, &obs, RateModel::StimulatedLimit, &OrderPolicy::default()).unwrap();
        assert!((full - 2.0 * gain * gain * 10.0).abs() < 1e-15);
        assert!((stim - 2.0 * gain * gain * 9.0).abs() < 1e-15);
    }

    #[test]
    fn seed_component_matches_coherent_state() {
        let alpha = c(0.7, -0.4);
        let seeded = cascade(0.3, 0.02, Some(alpha));
        let via_state = cascade(0.3, 0.02, None).with_state(StateSpec::vacuum().with_coherent(ModeId::idler("i1"), alpha));
        let obs = Observable::Detector("A".into());
        let p = OrderPolicy::default();
        let a = engine_rate(&seeded, &obs, RateModel::Full, &p).unwrap();
        let b = engine_rate(&via_state, &obs, RateModel::Full, &p).unwrap();
        assert!((a - b).abs() < 1e-12 * a.abs().max(1e-30));
    }

    #[test]
    fn leading_coefficient_recovers_top_power() {
        let p = |x: f64| 3.0 - 2.0 * x + 0.5 * x * x;
        assert!((leading_coefficient(&[p(0.0), p(1.0), p(2.0)]) - 0.5).abs() < 1e-15);
        let q = |x: f64| 1.0 + x + x * x + x * x * x - 2.0 * x.powi(4);
        let s: Vec<f64> = (0..5).map(|k| q(k as f64)).collect();
        assert!((leading_coefficient(&s) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn validation_catches_structural_errors() {
        let undefined = NetworkSpec::new(vec![Component::Mirror { mode: ModeId::signal("x") }]);
        assert!(matches!(undefined.validate(), Err(NetworkError::UndefinedMode { .. })));

        let mut rewritten = cascade(0.0, 0.01, None);
        rewritten.components.push(Component::PhaseShift { mode: ModeId::signal("sA"), phase: 1.0 });
        assert!(matches!(rewritten.validate(), Err(NetworkError::DetectedModeRewritten { .. })));

        let mut dup = cascade(0.0, 0.01, None);
        dup.components.push(Component::Detector { name: "A".into(), mode: ModeId::signal("s2") });
        assert!(matches!(dup.validate(), Err(NetworkError::DuplicateDetector { .. })));

        let reuse = NetworkSpec::new(vec![
            crystal("s", "i", 0.01),
            Component::Filter { mode: ModeId::idler("i"), transmission: c(0.5, 0.0), ancilla: ModeId::ancilla("n") },
            Component::Detector { name: "N".into(), mode: ModeId::ancilla("n") },
        ]);
        assert!(matches!(reuse.validate(), Err(NetworkError::AncillaReused { .. })));

        let same = NetworkSpec::new(vec![crystal("x", "x", 0.01)]);
        assert!(matches!(same.validate(), Err(NetworkError::CrystalModesCoincide { .. })));
    }

    #[test]
    fn unknown_detector_is_an_error() {
        let net = cascade(0.0, 0.01, None);
        let f = compile(&net, &OrderPolicy::default()).unwrap();
        assert_eq!(detector_rate(&f, "Z", &net.initial_state), Err(NetworkError::UnknownDetector("Z".into())));
    }
}
