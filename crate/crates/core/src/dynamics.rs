//! Classical three-wave mixing along a crystal and the phase locking it
//! produces, plus the quantum linear-regime correlations.
//!
//! Field equations, with `z` in units of `1/κ`:
//!
//! ```text
//! dE_s/dz = −iκ E_p E_i*     dE_i/dz = −iκ E_p E_s*     dE_p/dz = −iκ E_s E_i
//! ```
//!
//! Writing `E_j = R_j e^{iθ_j}` and `Δθ = θ_p − θ_s − θ_i` gives
//!
//! ```text
//! dR_s/dz =  κ R_i R_p sinΔθ
//! dR_i/dz =  κ R_s R_p sinΔθ
//! dR_p/dz = −κ R_s R_i sinΔθ
//! dΔθ/dz  =  κ cosΔθ (R_p R_i/R_s + R_p R_s/R_i − R_s R_i/R_p)
//! ```
//!
//! so amplification (`sinΔθ > 0`) drives `Δθ` to `+π/2`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use thiserror::Error;

use crate::algebra::{ModeId, OperatorExpr, StateSpec};
use crate::ode::{self, OdeFailure, StepStats};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const OUTPUT_POINTS: usize = 512;
pub const ENSEMBLE_SIZE: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("amplitude-phase form needs nonzero amplitudes at the start")]
    SingularStart,
    #[error("invariant drift {drift:.3e} at z = {z:.6} exceeds {limit:.3e}")]
    InvariantDrift { z: f64, drift: f64, limit: f64 },
    #[error("step size underflow at z = {z:.6}")]
    StepUnderflow { z: f64 },
    #[error("non-finite state at z = {z:.6}")]
    NonFinite { z: f64 },
}

/// Folds an angle into `(−π, π]`.
pub fn wrap_phase(angle: f64) -> f64 {
    let w = angle.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WaveState {
    pub signal: C64,
    pub idler: C64,
    pub pump: C64,
}

impl WaveState {
    fn to_array(self) -> [f64; 6] {
        [self.signal.re, self.signal.im, self.idler.re, self.idler.im, self.pump.re, self.pump.im]
    }

    fn from_array(y: &[f64; 6]) -> Self {
        Self { signal: C64::new(y[0], y[1]), idler: C64::new(y[2], y[3]), pump: C64::new(y[4], y[5]) }
    }

    /// Conserved `(|E_s|² − |E_i|², |E_s|² + |E_p|²)`.
    pub fn invariants(&self) -> (f64, f64) {
        let (s, i, p) = (self.signal.norm_sqr(), self.idler.norm_sqr(), self.pump.norm_sqr());
        (s - i, s + p)
    }

    pub fn amplitude_phase(&self) -> AmplitudePhaseState {
        AmplitudePhaseState {
            r_s: self.signal.norm(),
            r_i: self.idler.norm(),
            r_p: self.pump.norm(),
            delta_theta: wrap_phase(self.pump.arg() - self.signal.arg() - self.idler.arg()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AmplitudePhaseState {
    pub r_s: f64,
    pub r_i: f64,
    pub r_p: f64,
    /// `θ_p − θ_s − θ_i`, not folded.
    pub delta_theta: f64,
}

impl AmplitudePhaseState {
    pub fn invariants(&self) -> (f64, f64) {
        (self.r_s * self.r_s - self.r_i * self.r_i, self.r_s * self.r_s + self.r_p * self.r_p)
    }

    /// Complex fields with `θ_p = 0`, `θ_i = 0`, `θ_s = −Δθ`.
    pub fn to_wave(&self) -> WaveState {
        WaveState {
            signal: C64::from_polar(self.r_s, -self.delta_theta),
            idler: C64::new(self.r_i, 0.0),
            pump: C64::new(self.r_p, 0.0),
        }
    }
}

/// Quantities lock detection needs from a sample.
pub trait PhaseSample {
    /// `Δθ` folded to `(−π, π]`.
    fn delta_theta(&self) -> f64;
    fn signal_amplitude(&self) -> f64;
}

impl PhaseSample for WaveState {
    fn delta_theta(&self) -> f64 {
        self.amplitude_phase().delta_theta
    }

    fn signal_amplitude(&self) -> f64 {
        self.signal.norm()
    }
}

impl PhaseSample for AmplitudePhaseState {
    fn delta_theta(&self) -> f64 {
        wrap_phase(self.delta_theta)
    }

    fn signal_amplitude(&self) -> f64 {
        self.r_s
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IntegratorStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Largest drift of each invariant over accepted steps.
    pub max_invariant_drift: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S> {
    pub samples: Vec<(f64, S)>,
    pub stats: IntegratorStats,
}

impl<S: PhaseSample + Clone> Trajectory<S> {
    /// Samples up to, not including, the first whose signal amplitude
    /// reaches `factor` times the initial one.
    pub fn until_growth(&self, factor: f64) -> Trajectory<S> {
        let r0 = self.samples.first().map_or(0.0, |(_, s)| s.signal_amplitude());
        let end = self.samples.iter().position(|(_, s)| s.signal_amplitude() >= factor * r0).unwrap_or(self.samples.len());
        Trajectory { samples: self.samples[..end].to_vec(), stats: self.stats }
    }

    /// First `z` where the signal amplitude reaches `factor` times its start.
    pub fn growth_point(&self, factor: f64) -> Option<f64> {
        let r0 = self.samples.first()?.1.signal_amplitude();
        self.samples.iter().find(|(_, s)| s.signal_amplitude() >= factor * r0).map(|(z, _)| *z)
    }
}

fn output_grid(z_max: f64) -> Vec<f64> {
    (1..OUTPUT_POINTS).map(|k| z_max * k as f64 / (OUTPUT_POINTS - 1) as f64).collect()
}

fn check_parameters(kappa: f64, z_max: f64, tol: f64) -> Result<(), DynamicsError> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(DynamicsError::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    if !(z_max > 0.0 && z_max.is_finite()) {
        return Err(DynamicsError::InvalidParameter(format!("z_max must be positive, got {z_max}")));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(DynamicsError::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

fn ode_error(e: OdeFailure<DynamicsError>) -> DynamicsError {
    match e {
        OdeFailure::StepUnderflow { z } => DynamicsError::StepUnderflow { z },
        OdeFailure::NonFinite { z } => DynamicsError::NonFinite { z },
        OdeFailure::Rejected(e) => e,
    }
}

fn stats(steps: StepStats, drift: (f64, f64)) -> IntegratorStats {
    IntegratorStats { accepted_steps: steps.accepted, rejected_steps: steps.rejected, max_invariant_drift: drift }
}

pub fn integrate_complex(init: WaveState, kappa: f64, z_max: f64, tol: f64) -> Result<Trajectory<WaveState>, DynamicsError> {
    check_parameters(kappa, z_max, tol)?;
    let rhs = |y: &[f64; 6]| {
        let w = WaveState::from_array(y);
        let mi = C64::new(0.0, -kappa);
        WaveState { signal: mi * w.pump * w.idler.conj(), idler: mi * w.pump * w.signal.conj(), pump: mi * w.signal * w.idler }
            .to_array()
    };
    let (i1, i2) = init.invariants();
    let mut drift = (0.0_f64, 0.0_f64);
    let check = |_z: f64, y: &[f64; 6]| -> Result<(), DynamicsError> {
        let (a, b) = WaveState::from_array(y).invariants();
        drift = (drift.0.max((a - i1).abs()), drift.1.max((b - i2).abs()));
        Ok(())
    };
    let grid = output_grid(z_max);
    let (ys, steps) = ode::integrate(rhs, init.to_array(), &grid, tol, check).map_err(ode_error)?;
    let mut samples = vec![(0.0, init)];
    samples.extend(grid.iter().zip(&ys).map(|(z, y)| (*z, WaveState::from_array(y))));
    Ok(Trajectory { samples, stats: stats(steps, drift) })
}

pub fn integrate_amplitude_phase(
    init: AmplitudePhaseState,
    kappa: f64,
    z_max: f64,
    tol: f64,
) -> Result<Trajectory<AmplitudePhaseState>, DynamicsError> {
    check_parameters(kappa, z_max, tol)?;
    if !(init.r_s > 0.0 && init.r_i > 0.0 && init.r_p > 0.0) {
        return Err(DynamicsError::SingularStart);
    }
    let rhs = |y: &[f64; 4]| {
        let [rs, ri, rp, d] = *y;
        let (sin, cos) = d.sin_cos();
        [
            kappa * ri * rp * sin,
            kappa * rs * rp * sin,
            -kappa * rs * ri * sin,
            kappa * cos * (rp * ri / rs + rp * rs / ri - rs * ri / rp),
        ]
    };
    let (i1, i2) = init.invariants();
    let limit = 100.0 * tol;
    let mut drift = (0.0_f64, 0.0_f64);
    let check = |z: f64, y: &[f64; 4]| -> Result<(), DynamicsError> {
        let state = AmplitudePhaseState { r_s: y[0], r_i: y[1], r_p: y[2], delta_theta: y[3] };
        let (a, b) = state.invariants();
        drift = (drift.0.max((a - i1).abs()), drift.1.max((b - i2).abs()));
        let worst = drift.0.max(drift.1);
        if worst > limit {
            return Err(DynamicsError::InvariantDrift { z, drift: worst, limit });
        }
        Ok(())
    };
    let grid = output_grid(z_max);
    let y0 = [init.r_s, init.r_i, init.r_p, init.delta_theta];
    let (ys, steps) = ode::integrate(rhs, y0, &grid, tol, check).map_err(ode_error)?;
    let mut samples = vec![(0.0, init)];
    samples.extend(
        grid.iter()
            .zip(&ys)
            .map(|(z, y)| (*z, AmplitudePhaseState { r_s: y[0], r_i: y[1], r_p: y[2], delta_theta: y[3] })),
    );
    Ok(Trajectory { samples, stats: stats(steps, drift) })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LockReport {
    /// Smallest sampled `z` from which `|cosΔθ| < ε` holds to the end.
    pub z_lock: Option<f64>,
    /// Final `Δθ`, folded to `(−π, π]`.
    pub delta_theta_limit: f64,
}

/// Locking point of a trajectory. An empty trajectory never locks.
pub fn detect_locking<S: PhaseSample>(trajectory: &Trajectory<S>, epsilon: f64) -> LockReport {
    let samples = &trajectory.samples;
    let Some((_, last)) = samples.last() else {
        return LockReport { z_lock: None, delta_theta_limit: f64::NAN };
    };
    let tail = samples.iter().rev().take_while(|(_, s)| s.delta_theta().cos().abs() < epsilon).count();
    let z_lock = (tail > 0).then(|| samples[samples.len() - tail].0);
    LockReport { z_lock, delta_theta_limit: last.delta_theta() }
}

/// Initial phase mismatches spread evenly over `(−π, π)`.
pub fn ensemble_phases(count: usize) -> Vec<f64> {
    (0..count).map(|k| -PI + (k as f64 + 0.5) * TAU / count as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleSettings {
    pub members: usize,
    pub signal: f64,
    pub idler: f64,
    pub pump: f64,
    pub kappa: f64,
    pub z_max: f64,
    pub tol: f64,
    pub epsilon: f64,
    /// Signal growth factor ending the amplification stage.
    pub growth_limit: f64,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        Self {
            members: ENSEMBLE_SIZE,
            signal: 1e-3,
            idler: 1e-3,
            pump: 1.0,
            kappa: 1.0,
            z_max: 20.0,
            tol: DEFAULT_TOLERANCE,
            epsilon: 1e-3,
            growth_limit: 100.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleMember {
    pub initial_delta_theta: f64,
    /// Locking within the amplification stage.
    pub lock: LockReport,
    /// Where the signal reached the growth limit, if it did.
    pub z_growth_limit: Option<f64>,
    pub stats: IntegratorStats,
}

impl EnsembleMember {
    pub fn locked_before_growth_limit(&self) -> bool {
        match (self.lock.z_lock, self.z_growth_limit) {
            (Some(zl), Some(zg)) => zl < zg,
            (Some(_), None) => true,
            _ => false,
        }
    }
}

/// Integrates the complex equations for each initial `Δθ` of
/// [`ensemble_phases`] and reports locking during amplification.
pub fn locking_ensemble(settings: &EnsembleSettings) -> Result<Vec<EnsembleMember>, DynamicsError> {
    ensemble_phases(settings.members)
        .par_iter()
        .map(|&delta| {
            let init = WaveState {
                signal: C64::from_polar(settings.signal, -delta),
                idler: C64::new(settings.idler, 0.0),
                pump: C64::new(settings.pump, 0.0),
            };
            let t = integrate_complex(init, settings.kappa, settings.z_max, settings.tol)?;
            let stage = t.until_growth(settings.growth_limit);
            Ok(EnsembleMember {
                initial_delta_theta: delta,
                lock: detect_locking(&stage, settings.epsilon),
                z_growth_limit: t.growth_point(settings.growth_limit),
                stats: t.stats,
            })
        })
        .collect()
}

/// Output fields of a thin crystal with an undepleted pump:
/// `E_s = a_s − iK a_i†`, `E_i = a_i − iK a_s†`.
pub fn linear_output_fields(k: C64) -> (OperatorExpr, OperatorExpr) {
    let s = ModeId::signal("s");
    let i = ModeId::idler("i");
    let mik = C64::new(0.0, -1.0) * k;
    let es = &OperatorExpr::annihilate(&s) + &OperatorExpr::create(&i).scale(mik);
    let ei = &OperatorExpr::annihilate(&i) + &OperatorExpr::create(&s).scale(mik);
    (es, ei)
}

/// Vacuum `⟨E_s⁻ E_i⁺⟩` at the crystal output.
pub fn linear_correlation(k: C64) -> C64 {
    let (es, ei) = linear_output_fields(k);
    es.adjoint().multiply(&ei).expectation(&StateSpec::vacuum())
}

/// Vacuum `⟨E_s⁺ E_i⁺⟩` at the crystal output.
pub fn anomalous_correlation(k: C64) -> C64 {
    let (es, ei) = linear_output_fields(k);
    es.multiply(&ei).expectation(&StateSpec::vacuum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn unseeded_fields_stay_constant() {
        let init = WaveState { pump: C64::new(1.0, 0.0), ..Default::default() };
        let t = integrate_complex(init, 1.0, 5.0, DEFAULT_TOLERANCE).unwrap();
        assert!(t.samples.iter().all(|(_, s)| *s == init));
        assert_eq!(t.samples.len(), OUTPUT_POINTS);
    }

    #[test]
    fn invariants_hold_on_complex_trajectory() {
        let init = AmplitudePhaseState { r_s: 1e-3, r_i: 1e-3, r_p: 1.0, delta_theta: 0.4 }.to_wave();
        let t = integrate_complex(init, 1.0, 20.0, DEFAULT_TOLERANCE).unwrap();
        let (a, b) = t.stats.max_invariant_drift;
        assert!(a < 1e-8 && b < 1e-8, "{a:e} {b:e}");
        assert!(t.samples.windows(2).all(|w| w[1].0 > w[0].0));
    }

    #[test]
    fn locked_start_stays_locked() {
        let init = AmplitudePhaseState { r_s: 1e-3, r_i: 1e-3, r_p: 1.0, delta_theta: FRAC_PI_2 };
        let t = integrate_amplitude_phase(init, 1.0, 4.0, DEFAULT_TOLERANCE).unwrap();
        assert!(t.samples.iter().all(|(_, s)| (s.delta_theta - FRAC_PI_2).abs() < 1e-12));
        assert!(t.samples.windows(2).all(|w| w[1].1.r_s > w[0].1.r_s));
        assert_eq!(detect_locking(&t, 1e-3).z_lock, Some(0.0));
    }

    #[test]
    fn amplitude_form_matches_complex_form() {
        let init = AmplitudePhaseState { r_s: 1e-3, r_i: 2e-3, r_p: 1.0, delta_theta: -0.7 };
        let a = integrate_amplitude_phase(init, 1.0, 6.0, DEFAULT_TOLERANCE).unwrap();
        let c = integrate_complex(init.to_wave(), 1.0, 6.0, DEFAULT_TOLERANCE).unwrap();
        for ((za, sa), (zc, sc)) in a.samples.iter().zip(&c.samples) {
            assert_eq!(za, zc);
            let ap = sc.amplitude_phase();
            assert!((sa.r_s - ap.r_s).abs() < 1e-8);
            assert!((sa.r_i - ap.r_i).abs() < 1e-8);
            assert!((sa.r_p - ap.r_p).abs() < 1e-8);
            assert!(wrap_phase(sa.delta_theta - ap.delta_theta).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_amplitude_start_is_rejected() {
        let init = AmplitudePhaseState { r_s: 0.0, r_i: 1e-3, r_p: 1.0, delta_theta: 0.0 };
        assert_eq!(integrate_amplitude_phase(init, 1.0, 1.0, 1e-10), Err(DynamicsError::SingularStart));
        assert!(matches!(integrate_complex(WaveState::default(), -1.0, 1.0, 1e-10), Err(DynamicsError::InvalidParameter(_))));
    }

    #[test]
    fn swapping_signal_and_idler_phases_gives_same_mismatch() {
        let a = WaveState { signal: C64::from_polar(1e-3, 0.3), idler: C64::from_polar(1e-3, -1.9), pump: C64::new(1.0, 0.0) };
        let b = WaveState { signal: a.idler, idler: a.signal, pump: a.pump };
        let ta = integrate_complex(a, 1.0, 8.0, DEFAULT_TOLERANCE).unwrap();
        let tb = integrate_complex(b, 1.0, 8.0, DEFAULT_TOLERANCE).unwrap();
        for ((_, sa), (_, sb)) in ta.samples.iter().zip(&tb.samples) {
            assert!(wrap_phase(sa.delta_theta() - sb.delta_theta()).abs() < 1e-9);
        }
    }

    #[test]
    fn never_locking_trajectory_reports_none() {
        let t = Trajectory {
            samples: vec![(0.0, AmplitudePhaseState { r_s: 1.0, r_i: 1.0, r_p: 1.0, delta_theta: 0.0 })],
            stats: IntegratorStats::default(),
        };
        assert_eq!(detect_locking(&t, 1e-3).z_lock, None);
    }

    #[test]
    fn linear_regime_correlations() {
        for k in [C64::new(0.0, 0.0), C64::new(0.1, 0.0), C64::new(0.03, -0.05)] {
            assert_eq!(linear_correlation(k), C64::new(0.0, 0.0));
            assert!((anomalous_correlation(k) - C64::new(0.0, -1.0) * k).norm() < 1e-17);
        }
    }

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-15);
        assert!((wrap_phase(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-15);
    }
}
