//! Operator-algebra modelling of induced-coherence interferometers built from
//! spontaneous parametric down-conversion crystals.

pub mod algebra;
pub mod dynamics;
pub mod experiments;
pub mod fock;
pub mod network;
mod ode;

pub use algebra::{ModeId, ModeKind, ModeState, OperatorExpr, StateSpec};
pub use experiments::{build_preset, PresetId, PresetParams};
pub use network::{Component, NetworkSpec, Observable, OrderPolicy, RateModel};
