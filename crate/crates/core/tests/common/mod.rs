#![allow(dead_code)]

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use pdcnet::algebra::{Ladder, ModeId, ModeState, OperatorExpr, StateSpec};
use pdcnet::network::{Component, NetworkSpec};
use rand::Rng;

/// Unbounded Fock ket over a fixed list of modes.
pub type Ket = BTreeMap<Vec<u32>, C64>;

pub fn basis_ket(occupations: &[u32]) -> Ket {
    let mut k = Ket::new();
    k.insert(occupations.to_vec(), C64::new(1.0, 0.0));
    k
}

fn ladder_on(ket: &Ket, index: usize, create: bool) -> Ket {
    let mut out = Ket::new();
    for (occ, a) in ket {
        let n = occ[index];
        let (m, factor) = if create {
            (n + 1, ((n + 1) as f64).sqrt())
        } else if n > 0 {
            (n - 1, (n as f64).sqrt())
        } else {
            continue;
        };
        let mut next = occ.clone();
        next[index] = m;
        *out.entry(next).or_default() += a * factor;
    }
    out
}

/// Applies a word of ladder operators, rightmost first, with exact
/// matrix elements.
pub fn apply_word(word: &[Ladder], modes: &[ModeId], ket: &Ket) -> Ket {
    word.iter().rev().fold(ket.clone(), |k, op| match op {
        Ladder::Create(m) => ladder_on(&k, modes.iter().position(|x| x == m).unwrap(), true),
        Ladder::Annihilate(m) => ladder_on(&k, modes.iter().position(|x| x == m).unwrap(), false),
    })
}

/// Applies a normally ordered expression term by term.
pub fn apply_expr(expr: &OperatorExpr, modes: &[ModeId], ket: &Ket) -> Ket {
    let mut out = Ket::new();
    for term in expr.terms() {
        let mut k = ket.clone();
        for (m, p) in term.signature.modes() {
            let i = modes.iter().position(|x| x == m).unwrap();
            for _ in 0..p.annihilate {
                k = ladder_on(&k, i, false);
            }
        }
        for (m, p) in term.signature.modes() {
            let i = modes.iter().position(|x| x == m).unwrap();
            for _ in 0..p.create {
                k = ladder_on(&k, i, true);
            }
        }
        for (occ, a) in k {
            *out.entry(occ).or_default() += a * term.coeff;
        }
    }
    out
}

pub fn ket_distance(a: &Ket, b: &Ket) -> f64 {
    let mut keys: Vec<&Vec<u32>> = a.keys().chain(b.keys()).collect();
    keys.dedup();
    keys.into_iter()
        .map(|k| (a.get(k).copied().unwrap_or_default() - b.get(k).copied().unwrap_or_default()).norm())
        .fold(0.0, f64::max)
}

pub fn test_modes(count: usize) -> Vec<ModeId> {
    (0..count).map(|k| ModeId::signal(format!("m{k}"))).collect()
}

pub fn random_word(rng: &mut impl Rng, modes: &[ModeId], max_len: usize) -> Vec<Ladder> {
    let len = rng.gen_range(1..=max_len);
    (0..len)
        .map(|_| {
            let m = modes[rng.gen_range(0..modes.len())].clone();
            if rng.gen_bool(0.5) {
                Ladder::Create(m)
            } else {
                Ladder::Annihilate(m)
            }
        })
        .collect()
}

pub fn random_complex(rng: &mut impl Rng, scale: f64) -> C64 {
    C64::new(rng.gen_range(-scale..=scale), rng.gen_range(-scale..=scale))
}

/// Random valid network of at most `max_components` components, ending in
/// a detector.
pub fn random_network(rng: &mut impl Rng, max_components: usize) -> (NetworkSpec, String) {
    let labels = ["a", "b", "c", "d"];
    let mut defined: Vec<ModeId> = Vec::new();
    let mut fresh = 0usize;
    let mut comps = Vec::new();
    let mut state = StateSpec::vacuum();
    if rng.gen_bool(0.3) {
        let m = ModeId::idler(labels[rng.gen_range(0..labels.len())]);
        state.set(m.clone(), ModeState::Coherent(random_complex(rng, 1.5)));
        defined.push(m);
    }
    let body = rng.gen_range(0..max_components);
    while comps.len() < body {
        let kind = rng.gen_range(0..6);
        let pick = |rng: &mut dyn rand::RngCore, defined: &[ModeId]| defined[rng.gen_range(0..defined.len())].clone();
        let comp = match kind {
            0 => {
                let s = labels[rng.gen_range(0..labels.len())];
                let mut i = labels[rng.gen_range(0..labels.len())];
                while i == s {
                    i = labels[rng.gen_range(0..labels.len())];
                }
                let (s, i) = (ModeId::signal(s), ModeId::idler(i));
                for m in [&s, &i] {
                    if !defined.contains(m) {
                        defined.push(m.clone());
                    }
                }
                Component::Crystal { signal: s, idler: i, gain: random_complex(rng, 0.1), pump_phase: rng.gen_range(-3.2..3.2) }
            }
            1 if !defined.is_empty() => Component::PhaseShift { mode: pick(rng, &defined), phase: rng.gen_range(-7.0..7.0) },
            2 if !defined.is_empty() => Component::Mirror { mode: pick(rng, &defined) },
            3 if !defined.is_empty() => {
                fresh += 1;
                let tau = C64::from_polar(rng.gen_range(0.0..=1.0), rng.gen_range(-3.2..3.2));
                Component::Filter { mode: pick(rng, &defined), transmission: tau, ancilla: ModeId::ancilla(format!("n{fresh}")) }
            }
            4 => {
                let m = ModeId::idler(labels[rng.gen_range(0..labels.len())]);
                if !defined.contains(&m) {
                    defined.push(m.clone());
                }
                Component::Seed { mode: m, alpha: random_complex(rng, 1.5) }
            }
            5 if defined.len() >= 2 => {
                fresh += 1;
                let a = pick(rng, &defined);
                let b = pick(rng, &defined);
                let output = ModeId::signal(format!("out{fresh}"));
                let weights = vec![random_complex(rng, 1.0), random_complex(rng, 1.0)];
                let comp = Component::Combiner { inputs: vec![a, b], output: output.clone(), weights };
                defined.push(output);
                comp
            }
            _ => continue,
        };
        comps.push(comp);
    }
    if defined.is_empty() {
        defined.push(ModeId::signal("a"));
        comps.push(Component::Seed { mode: ModeId::signal("a"), alpha: random_complex(rng, 1.0) });
    }
    let target = defined[rng.gen_range(0..defined.len())].clone();
    comps.push(Component::Detector { name: "X".into(), mode: target });
    (NetworkSpec::new(comps).with_state(state), "X".into())
}
