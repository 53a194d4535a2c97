//! Embedded Dormand-Prince 5(4) step with the usual error-per-step control.

/// Outcome of one trial step.
#[derive(Debug, Clone, Copy)]
pub struct StepResult {
    pub y: f64,
    /// Scaled error estimate; the step is acceptable when `<= 1`.
    pub err: f64,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;

const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;

// difference between 5th and embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// One scalar Dormand-Prince step from `(t, y)` with step `h`.
///
/// `f` may fail (for instance when a stage leaves the domain); the error
/// is passed through untouched so the caller can shrink the step.
pub fn dopri5_step<E, F>(
    f: &mut F,
    t: f64,
    y: f64,
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<StepResult, E>
where
    F: FnMut(f64, f64) -> Result<f64, E> + ?Sized,
{
    let k1 = f(t, y)?;
    let k2 = f(t + C2 * h, y + h * A21 * k1)?;
    let k3 = f(t + C3 * h, y + h * (A31 * k1 + A32 * k2))?;
    let k4 = f(t + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3))?;
    let k5 = f(
        t + C5 * h,
        y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4),
    )?;
    let k6 = f(
        t + h,
        y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5),
    )?;
    let y_new = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
    let k7 = f(t + h, y_new)?;
    let err_abs = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);
    let scale = atol + rtol * y.abs().max(y_new.abs());
    Ok(StepResult {
        y: y_new,
        err: (err_abs / scale).abs(),
    })
}

/// Step-size multiplier after a trial step with scaled error `err`.
pub fn step_factor(err: f64) -> f64 {
    if err == 0.0 {
        return 5.0;
    }
    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate(t1: f64, rtol: f64) -> (f64, usize) {
        // y' = -2 t y, y(0) = 1  =>  y = exp(-t^2)
        let mut f = |t: f64, y: f64| -> Result<f64, ()> { Ok(-2.0 * t * y) };
        let (mut t, mut y, mut h) = (0.0, 1.0, 1e-3_f64);
        let mut steps = 0;
        while t < t1 {
            let h_try = h.min(t1 - t);
            let r = dopri5_step(&mut f, t, y, h_try, rtol, 1e-14).unwrap();
            if r.err <= 1.0 {
                t += h_try;
                y = r.y;
                steps += 1;
            }
            h = h_try * step_factor(r.err);
        }
        (y, steps)
    }

    #[test]
    fn gaussian_decay_to_tolerance() {
        let (y, _) = integrate(2.0, 1e-12);
        assert!((y - (-4.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn fifth_order_convergence() {
        // fixed steps: error ratio for halved h should be near 2^5
        let mut f = |t: f64, y: f64| -> Result<f64, ()> { Ok(-2.0 * t * y) };
        let run = |n: usize, f: &mut dyn FnMut(f64, f64) -> Result<f64, ()>| {
            let h = 1.0 / n as f64;
            let mut y = 1.0;
            for k in 0..n {
                y = dopri5_step(f, k as f64 * h, y, h, 1.0, 1.0).unwrap().y;
            }
            (y - (-1.0f64).exp()).abs()
        };
        let e1 = run(16, &mut f);
        let e2 = run(32, &mut f);
        let order = (e1 / e2).log2();
        assert!(order > 4.5 && order < 6.5, "observed order {order}");
    }
}
