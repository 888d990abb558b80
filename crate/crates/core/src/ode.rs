//! Dormand–Prince 5(4) embedded Runge–Kutta pair with adaptive steps that
//! land exactly on a fixed set of output points.

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

const MIN_STEP: f64 = 1e-14;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OdeFailure<E> {
    StepUnderflow { z: f64 },
    NonFinite { z: f64 },
    Rejected(E),
}

/// Integrates the autonomous system `y' = f(y)` from `z = 0` and returns the state at each of
/// `outputs` (ascending, last one is the end point). Each accepted step must
/// satisfy `‖err‖∞ ≤ tol·h`. `check` runs after every accepted step.
pub fn integrate<const N: usize, E>(
    f: impl Fn(&[f64; N]) -> [f64; N],
    y0: [f64; N],
    outputs: &[f64],
    tol: f64,
    mut check: impl FnMut(f64, &[f64; N]) -> Result<(), E>,
) -> Result<(Vec<[f64; N]>, StepStats), OdeFailure<E>> {
    let mut stats = StepStats::default();
    let mut samples = Vec::with_capacity(outputs.len());
    let mut z = 0.0;
    let mut y = y0;
    let mut h = 1e-3_f64.min(outputs.last().copied().unwrap_or(0.0).max(MIN_STEP));
    let mut k1 = f(&y);
    for &target in outputs {
        while z < target {
            let remaining = target - z;
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            let mut k = [[0.0; N]; 7];
            k[0] = k1;
            for s in 1..7 {
                let mut ys = y;
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = A[s][j];
                    if a != 0.0 {
                        for n in 0..N {
                            ys[n] += step * a * kj[n];
                        }
                    }
                }
                k[s] = f(&ys);
            }
            let mut y_new = y;
            let mut err: f64 = 0.0;
            for n in 0..N {
                let mut hi = 0.0;
                let mut diff = 0.0;
                for s in 0..7 {
                    hi += B5[s] * k[s][n];
                    diff += (B5[s] - B4[s]) * k[s][n];
                }
                y_new[n] += step * hi;
                err = err.max((step * diff).abs());
            }
            if !y_new.iter().all(|v| v.is_finite()) || !err.is_finite() {
                if step <= MIN_STEP {
                    return Err(OdeFailure::NonFinite { z });
                }
                h = step * 0.25;
                stats.rejected += 1;
                continue;
            }
            let allowed = tol * step;
            let factor = if err == 0.0 { 5.0 } else { (0.9 * (allowed / err).powf(0.25)).clamp(0.2, 5.0) };
            if err <= allowed {
                z = if last { target } else { z + step };
                y = y_new;
                k1 = k[6];
                stats.accepted += 1;
                check(z, &y).map_err(OdeFailure::Rejected)?;
                if !last || factor < 1.0 {
                    h = step * factor;
                }
            } else {
                stats.rejected += 1;
                h = step * factor;
                if h < MIN_STEP {
                    return Err(OdeFailure::StepUnderflow { z });
                }
            }
        }
        samples.push(y);
    }
    Ok((samples, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_is_accurate() {
        let outputs: Vec<f64> = (1..=10).map(|k| k as f64 * 0.5).collect();
        let (ys, stats) = integrate(|y: &[f64; 1]| [-y[0]], [1.0], &outputs, 1e-10, |_, _| Ok::<(), ()>(())).unwrap();
        for (z, y) in outputs.iter().zip(&ys) {
            assert!((y[0] - (-z).exp()).abs() < 1e-10);
        }
        assert!(stats.accepted > 0);
    }

    #[test]
    fn harmonic_oscillator_keeps_energy() {
        let outputs = vec![20.0];
        let (ys, _) = integrate(|y: &[f64; 2]| [y[1], -y[0]], [1.0, 0.0], &outputs, 1e-11, |_, _| Ok::<(), ()>(())).unwrap();
        let e = ys[0][0].powi(2) + ys[0][1].powi(2);
        assert!((e - 1.0).abs() < 1e-9);
        assert!((ys[0][0] - 20f64.cos()).abs() < 1e-9);
    }

    #[test]
    fn check_failure_stops_integration() {
        let r = integrate(|y: &[f64; 1]| [y[0]], [1.0], &[5.0], 1e-8, |_, y| if y[0] > 2.0 { Err("big") } else { Ok(()) });
        assert_eq!(r.unwrap_err(), OdeFailure::Rejected("big"));
    }
}
