//! Exact algebra of bosonic mode operators.
//!
//! Every [`OperatorExpr`] is stored in normally ordered form: a map from a
//! per-mode signature of creation/annihilation exponents to a complex
//! coefficient. Products are reordered with the single-mode identity
//!
//! ```text
//! a^m a†^n = Σ_k  C(m,k) C(n,k) k!  a†^(n-k) a^(m-k)
//! ```
//!
//! applied mode by mode (operators on distinct modes commute), so the
//! representation is exact for polynomial operators.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64 as C64;

/// Coefficients with magnitude below this are dropped after every merge.
pub const PRUNE_THRESHOLD: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModeKind {
    Signal,
    Idler,
    Ancilla,
}

/// A labelled single-mode field. Equality, ordering and hashing use the
/// label only; the kind is descriptive.
#[derive(Clone, Debug)]
pub struct ModeId {
    label: Arc<str>,
    kind: ModeKind,
}

impl ModeId {
    pub fn new(label: impl AsRef<str>, kind: ModeKind) -> Self {
        Self { label: Arc::from(label.as_ref()), kind }
    }

    pub fn signal(label: impl AsRef<str>) -> Self {
        Self::new(label, ModeKind::Signal)
    }

    pub fn idler(label: impl AsRef<str>) -> Self {
        Self::new(label, ModeKind::Idler)
    }

    pub fn ancilla(label: impl AsRef<str>) -> Self {
        Self::new(label, ModeKind::Ancilla)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> ModeKind {
        self.kind
    }
}

impl PartialEq for ModeId {
    fn eq(&self, other: &Self) -> bool {
        self.label == other.label
    }
}

impl Eq for ModeId {}

impl std::hash::Hash for ModeId {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.label.hash(state);
    }
}

impl PartialOrd for ModeId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ModeId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.label.cmp(&other.label)
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

/// Exponents of one mode inside a normally ordered monomial `a†^create a^annihilate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Powers {
    pub create: u32,
    pub annihilate: u32,
}

impl Powers {
    fn is_identity(self) -> bool {
        self.create == 0 && self.annihilate == 0
    }

    fn swapped(self) -> Self {
        Self { create: self.annihilate, annihilate: self.create }
    }
}

/// Normally ordered monomial without its coefficient. Modes with zero
/// exponents are never stored, so the empty signature is the identity.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Signature(BTreeMap<ModeId, Powers>);

impl Signature {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn single(mode: ModeId, powers: Powers) -> Self {
        let mut map = BTreeMap::new();
        if !powers.is_identity() {
            map.insert(mode, powers);
        }
        Self(map)
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_empty()
    }

    pub fn powers(&self, mode: &ModeId) -> Powers {
        self.0.get(mode).copied().unwrap_or(Powers { create: 0, annihilate: 0 })
    }

    pub fn modes(&self) -> impl Iterator<Item = (&ModeId, Powers)> {
        self.0.iter().map(|(m, p)| (m, *p))
    }

    /// Total number of ladder operators in the monomial.
    pub fn degree(&self) -> u32 {
        self.0.values().map(|p| p.create + p.annihilate).sum()
    }

    fn adjoint(&self) -> Self {
        Self(self.0.iter().map(|(m, p)| (m.clone(), p.swapped())).collect())
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("1");
        }
        let mut first = true;
        for (mode, p) in &self.0 {
            for _ in 0..p.create {
                if !first {
                    f.write_str(" ")?;
                }
                write!(f, "a†[{mode}]")?;
                first = false;
            }
        }
        for (mode, p) in &self.0 {
            for _ in 0..p.annihilate {
                if !first {
                    f.write_str(" ")?;
                }
                write!(f, "a[{mode}]")?;
                first = false;
            }
        }
        Ok(())
    }
}

/// A normally ordered monomial with its coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct Monomial {
    pub coeff: C64,
    pub signature: Signature,
}

/// Single ladder operator, used to spell out products in arbitrary order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Ladder {
    Create(ModeId),
    Annihilate(ModeId),
}

/// Finite sum of complex-weighted normally ordered monomials.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OperatorExpr {
    terms: BTreeMap<Signature, C64>,
}

/// Value of one mode in a product state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModeState {
    Vacuum,
    Coherent(C64),
}

impl ModeState {
    pub fn amplitude(self) -> C64 {
        match self {
            ModeState::Vacuum => C64::new(0.0, 0.0),
            ModeState::Coherent(alpha) => alpha,
        }
    }
}

/// Product state over modes; unassigned modes are vacuum.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StateSpec {
    assignments: BTreeMap<ModeId, ModeState>,
}

impl StateSpec {
    pub fn vacuum() -> Self {
        Self::default()
    }

    pub fn with_coherent(mut self, mode: ModeId, alpha: C64) -> Self {
        self.assignments.insert(mode, ModeState::Coherent(alpha));
        self
    }

    pub fn set(&mut self, mode: ModeId, state: ModeState) {
        self.assignments.insert(mode, state);
    }

    pub fn get(&self, mode: &ModeId) -> ModeState {
        self.assignments.get(mode).copied().unwrap_or(ModeState::Vacuum)
    }

    pub fn assignments(&self) -> impl Iterator<Item = (&ModeId, ModeState)> {
        self.assignments.iter().map(|(m, s)| (m, *s))
    }

    /// Same state with every coherent amplitude multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let assignments = self
            .assignments
            .iter()
            .map(|(m, s)| {
                let s = match s {
                    ModeState::Vacuum => ModeState::Vacuum,
                    ModeState::Coherent(a) => ModeState::Coherent(a * factor),
                };
                (m.clone(), s)
            })
            .collect();
        Self { assignments }
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * f64::from(n - j) / f64::from(j + 1))
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, j| acc * f64::from(j))
}

/// Normally ordered expansion of `(a†^c1 a^a1)(a†^c2 a^a2)` on a single mode.
fn reorder_single_mode(left: Powers, right: Powers) -> Vec<(f64, Powers)> {
    let kmax = left.annihilate.min(right.create);
    (0..=kmax)
        .map(|k| {
            let weight = binomial(left.annihilate, k) * binomial(right.create, k) * factorial(k);
            let powers = Powers {
                create: left.create + right.create - k,
                annihilate: left.annihilate + right.annihilate - k,
            };
            (weight, powers)
        })
        .collect()
}

fn multiply_signatures(left: &Signature, right: &Signature) -> Vec<(f64, Signature)> {
    let mut modes: Vec<&ModeId> = left.0.keys().chain(right.0.keys()).collect();
    modes.sort();
    modes.dedup();

    let mut acc: Vec<(f64, Signature)> = vec![(1.0, Signature::identity())];
    for mode in modes {
        let expansion = reorder_single_mode(left.powers(mode), right.powers(mode));
        let mut next = Vec::with_capacity(acc.len() * expansion.len());
        for (w, sig) in &acc {
            for (v, powers) in &expansion {
                let mut sig = sig.clone();
                if !powers.is_identity() {
                    sig.0.insert(mode.clone(), *powers);
                }
                next.push((w * v, sig));
            }
        }
        acc = next;
    }
    acc
}

impl OperatorExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn identity() -> Self {
        Self::scalar(C64::new(1.0, 0.0))
    }

    pub fn scalar(c: C64) -> Self {
        let mut e = Self::zero();
        e.add_term(Signature::identity(), c);
        e
    }

    pub fn annihilate(mode: &ModeId) -> Self {
        Self::monomial(C64::new(1.0, 0.0), Signature::single(mode.clone(), Powers { create: 0, annihilate: 1 }))
    }

    pub fn create(mode: &ModeId) -> Self {
        Self::monomial(C64::new(1.0, 0.0), Signature::single(mode.clone(), Powers { create: 1, annihilate: 0 }))
    }

    pub fn monomial(coeff: C64, signature: Signature) -> Self {
        let mut e = Self::zero();
        e.add_term(signature, coeff);
        e
    }

    pub fn from_ladder(op: &Ladder) -> Self {
        match op {
            Ladder::Create(m) => Self::create(m),
            Ladder::Annihilate(m) => Self::annihilate(m),
        }
    }

    /// Merge `coeff * signature` into the sum, pruning a vanishing result.
    pub fn add_term(&mut self, signature: Signature, coeff: C64) {
        use std::collections::btree_map::Entry;
        match self.terms.entry(signature) {
            Entry::Vacant(slot) => {
                if coeff.norm() >= PRUNE_THRESHOLD {
                    slot.insert(coeff);
                }
            }
            Entry::Occupied(mut slot) => {
                let sum = *slot.get() + coeff;
                if sum.norm() < PRUNE_THRESHOLD {
                    slot.remove();
                } else {
                    *slot.get_mut() = sum;
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, signature: &Signature) -> C64 {
        self.terms.get(signature).copied().unwrap_or_default()
    }

    /// Coefficient of the identity (c-number) part.
    pub fn constant(&self) -> C64 {
        self.coefficient(&Signature::identity())
    }

    pub fn terms(&self) -> impl Iterator<Item = Monomial> + '_ {
        self.terms.iter().map(|(s, c)| Monomial { coeff: *c, signature: s.clone() })
    }

    /// Modes touched by any term.
    pub fn modes(&self) -> Vec<ModeId> {
        let mut modes: Vec<ModeId> = self.terms.keys().flat_map(|s| s.0.keys().cloned()).collect();
        modes.sort();
        modes.dedup();
        modes
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut out = Self::zero();
        for (s, v) in &self.terms {
            out.add_term(s.clone(), v * c);
        }
        out
    }

    pub fn multiply(&self, rhs: &Self) -> Self {
        let mut out = Self::zero();
        for (ls, lc) in &self.terms {
            for (rs, rc) in &rhs.terms {
                let c = lc * rc;
                for (w, sig) in multiply_signatures(ls, rs) {
                    out.add_term(sig, c * w);
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zero();
        for (s, c) in &self.terms {
            out.add_term(s.adjoint(), c.conj());
        }
        out
    }

    pub fn commutator(&self, rhs: &Self) -> Self {
        &self.multiply(rhs) - &rhs.multiply(self)
    }

    /// Re-canonicalise: merges duplicates and prunes tiny coefficients.
    /// Expressions are always kept normally ordered, so this is idempotent.
    pub fn normal_order(&self) -> Self {
        let mut out = Self::zero();
        for (s, c) in &self.terms {
            out.add_term(s.clone(), *c);
        }
        out
    }

    /// Exact expectation value in a product of vacuum/coherent states:
    /// each `a_m` contributes `α_m`, each `a†_m` contributes `α_m*`.
    pub fn expectation(&self, state: &StateSpec) -> C64 {
        self.terms
            .iter()
            .map(|(sig, c)| {
                sig.0.iter().fold(*c, |acc, (mode, p)| {
                    let alpha = state.get(mode).amplitude();
                    acc * alpha.conj().powu(p.create) * alpha.powu(p.annihilate)
                })
            })
            .sum()
    }

    /// Sum of `|coeff * value|` over the terms of [`expectation`]; a scale
    /// for judging cancellation in the result.
    ///
    /// [`expectation`]: OperatorExpr::expectation
    pub fn expectation_magnitude(&self, state: &StateSpec) -> f64 {
        self.terms
            .iter()
            .map(|(sig, c)| {
                sig.0.iter().fold(c.norm(), |acc, (mode, p)| {
                    let r = state.get(mode).amplitude().norm();
                    acc * r.powi((p.create + p.annihilate) as i32)
                })
            })
            .sum()
    }

    /// Largest coefficient difference against `other`, term by term.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let diff = self - other;
        diff.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// Canonical form of an expression; see [`OperatorExpr::normal_order`].
pub fn normal_order(e: &OperatorExpr) -> OperatorExpr {
    e.normal_order()
}

/// Normally ordered form of `coeff * ops[0] ops[1] ...` taken in the given order.
pub fn normal_order_word(coeff: C64, ops: &[Ladder]) -> OperatorExpr {
    ops.iter()
        .fold(OperatorExpr::scalar(coeff), |acc, op| acc.multiply(&OperatorExpr::from_ladder(op)))
}

pub fn multiply(e1: &OperatorExpr, e2: &OperatorExpr) -> OperatorExpr {
    e1.multiply(e2)
}

pub fn adjoint(e: &OperatorExpr) -> OperatorExpr {
    e.adjoint()
}

pub fn commutator(e1: &OperatorExpr, e2: &OperatorExpr) -> OperatorExpr {
    e1.commutator(e2)
}

pub fn expectation(e: &OperatorExpr, state: &StateSpec) -> C64 {
    e.expectation(state)
}

impl Add for &OperatorExpr {
    type Output = OperatorExpr;

    fn add(self, rhs: &OperatorExpr) -> OperatorExpr {
        let mut out = self.clone();
        for (s, c) in &rhs.terms {
            out.add_term(s.clone(), *c);
        }
        out
    }
}

impl Add for OperatorExpr {
    type Output = OperatorExpr;

    fn add(self, rhs: OperatorExpr) -> OperatorExpr {
        &self + &rhs
    }
}

impl Sub for &OperatorExpr {
    type Output = OperatorExpr;

    fn sub(self, rhs: &OperatorExpr) -> OperatorExpr {
        let mut out = self.clone();
        for (s, c) in &rhs.terms {
            out.add_term(s.clone(), -c);
        }
        out
    }
}

impl Sub for OperatorExpr {
    type Output = OperatorExpr;

    fn sub(self, rhs: OperatorExpr) -> OperatorExpr {
        &self - &rhs
    }
}

impl Neg for &OperatorExpr {
    type Output = OperatorExpr;

    fn neg(self) -> OperatorExpr {
        self.scale(C64::new(-1.0, 0.0))
    }
}

impl Mul for &OperatorExpr {
    type Output = OperatorExpr;

    fn mul(self, rhs: &OperatorExpr) -> OperatorExpr {
        self.multiply(rhs)
    }
}

impl Mul for OperatorExpr {
    type Output = OperatorExpr;

    fn mul(self, rhs: OperatorExpr) -> OperatorExpr {
        self.multiply(&rhs)
    }
}

impl Mul<C64> for &OperatorExpr {
    type Output = OperatorExpr;

    fn mul(self, rhs: C64) -> OperatorExpr {
        self.scale(rhs)
    }
}

impl Mul<C64> for OperatorExpr {
    type Output = OperatorExpr;

    fn mul(self, rhs: C64) -> OperatorExpr {
        self.scale(rhs)
    }
}

impl fmt::Display for OperatorExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (i, (s, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            write!(f, "({:.6}{:+.6}i) {}", c.re, c.im, s)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn a(m: &str) -> OperatorExpr {
        OperatorExpr::annihilate(&ModeId::idler(m))
    }

    fn ad(m: &str) -> OperatorExpr {
        OperatorExpr::create(&ModeId::idler(m))
    }

    fn one() -> OperatorExpr {
        OperatorExpr::identity()
    }

    #[test]
    fn annihilator_then_creator_gains_identity() {
        let e = a("x") * ad("x");
        let expected = &(ad("x") * a("x")) + &one();
        assert_eq!(e, expected);
    }

    #[test]
    fn distinct_modes_commute() {
        let e = a("i1") * ad("i2");
        assert_eq!(e, ad("i2") * a("i1"));
        assert_eq!(e.len(), 1);
    }

    #[test]
    fn two_annihilators_past_one_creator() {
        // a a a† = a† a a + 2 a
        let m = ModeId::idler("x");
        let e = normal_order_word(
            c(1.0, 0.0),
            &[Ladder::Annihilate(m.clone()), Ladder::Annihilate(m.clone()), Ladder::Create(m.clone())],
        );
        let expected = &(ad("x") * a("x") * a("x")) + &(a("x") * c(2.0, 0.0));
        assert_eq!(e, expected);
    }

    #[test]
    fn multiply_examples() {
        assert_eq!(ad("x") * a("x"), OperatorExpr::monomial(c(1.0, 0.0), Signature::single(ModeId::idler("x"), Powers { create: 1, annihilate: 1 })));
        let lhs = &a("s") + &ad("i");
        let got = lhs.multiply(&ad("s"));
        let expected = &(&(ad("s") * a("s")) + &one()) + &(ad("i") * ad("s"));
        assert_eq!(got, expected);
    }

    #[test]
    fn adjoint_of_generated_signal_term() {
        let gain = c(0.3, 0.1);
        let phi = 0.7;
        let e = ad("i1") * (c(0.0, 1.0) * gain * C64::from_polar(1.0, phi));
        let expected = a("i1") * (c(0.0, -1.0) * gain.conj() * C64::from_polar(1.0, -phi));
        assert!(e.adjoint().max_abs_diff(&expected) < 1e-15);
        let n = ad("x") * a("x");
        assert_eq!(n.adjoint(), n);
    }

    #[test]
    fn expectation_examples() {
        let vac = StateSpec::vacuum();
        assert_eq!((a("i10") * ad("i10")).expectation(&vac), c(1.0, 0.0));
        let coh = StateSpec::vacuum().with_coherent(ModeId::idler("x"), c(2.0, 0.0));
        assert_eq!((ad("x") * a("x")).expectation(&coh), c(4.0, 0.0));
        assert_eq!((ad("i10") * a("i30")).expectation(&vac), c(0.0, 0.0));
    }

    #[test]
    fn commutator_examples() {
        assert_eq!(a("x").commutator(&ad("x")), one());
        assert!(a("i1").commutator(&ad("i3")).is_zero());

        let tau = 0.6;
        let r = (1.0f64 - tau * tau).sqrt();
        let out = &(a("x") * c(tau, 0.0)) + &(a("anc") * c(r, 0.0));
        let comm = out.commutator(&out.adjoint());
        assert_eq!(comm.len(), 1);
        assert!((comm.constant() - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn merge_prunes_cancelled_terms() {
        let e = &a("x") - &a("x");
        assert!(e.is_zero());
        let tiny = OperatorExpr::scalar(c(1e-16, 0.0));
        assert!(tiny.is_zero());
    }

    #[test]
    fn mode_equality_ignores_kind() {
        assert_eq!(ModeId::signal("m"), ModeId::idler("m"));
        assert_ne!(ModeId::signal("m"), ModeId::signal("n"));
    }

    #[test]
    fn display_is_readable() {
        let e = ad("i1") * a("s1");
        assert_eq!(e.to_string(), "(1.000000+0.000000i) a†[i1] a[s1]");
    }
}
