//! Closed-form oracles shared by the integration tests.

use mcte_core::quadrature::GaussLegendre;
use num_complex::Complex64;

/// `omega_V` dsigma-coefficient of the toy surface in closed form, over complex V.
pub fn omega_v_sigma(c: f64, v: Complex64, sigma: f64) -> Complex64 {
    let x = v - 0.75;
    let bv = 1.0 / x + c * sigma / (x * x);
    let bs = -1.0 / (1.0 - sigma) - c / x;
    let gvv = 1.0 / (x * x) + 2.0 * c * sigma / (x * x * x);
    let gvs = -c / (x * x);
    (gvv * bs - gvs * bv) / (bv * bv)
}

/// Area integral of the curl `d omega_V_sigma / dV` by complex-step
/// differentiation and tensor Gauss-Legendre quadrature.
pub fn stokes_oracle(c: f64, v: (f64, f64), s: (f64, f64)) -> f64 {
    let gl = GaussLegendre::new(12);
    let h = 1e-30;
    let cells = 4;
    let (wv, ws) = ((v.1 - v.0) / cells as f64, (s.1 - s.0) / cells as f64);
    let mut total = 0.0;
    for cv in 0..cells {
        for cs in 0..cells {
            for (tv, av) in gl.nodes.iter().zip(&gl.weights) {
                for (ts, as_) in gl.nodes.iter().zip(&gl.weights) {
                    let vv = v.0 + (cv as f64 + tv) * wv;
                    let ss = s.0 + (cs as f64 + ts) * ws;
                    let d = omega_v_sigma(c, Complex64::new(vv, h), ss).im / h;
                    total += av * as_ * wv * ws * d;
                }
            }
        }
    }
    total
}
