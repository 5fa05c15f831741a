//! Shared oracles for the integration tests.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Raw pair model with a linear OCV `U(z) = alpha z + beta`: both cells see
/// the same terminal voltage and the branch currents add up to `i`.
#[derive(Debug, Clone, Copy)]
pub struct RawPair {
    pub q: [f64; 2],
    pub r: [f64; 2],
    pub alpha: f64,
    pub beta: f64,
}

impl RawPair {
    /// Branch currents from Kirchhoff's laws, solved directly.
    pub fn currents(&self, z: [f64; 2], i: f64) -> [f64; 2] {
        let u1 = self.alpha * z[0] + self.beta;
        let u2 = self.alpha * z[1] + self.beta;
        // u1 - i1 r1 = u2 - (i - i1) r2
        let i1 = (u1 - u2 + i * self.r[1]) / (self.r[0] + self.r[1]);
        [i1, i - i1]
    }

    fn deriv(&self, z: [f64; 2], i: f64) -> [f64; 2] {
        let c = self.currents(z, i);
        [-c[0] / self.q[0], -c[1] / self.q[1]]
    }

    /// Classical fourth-order Runge-Kutta under a constant current.
    pub fn rk4(&self, z0: [f64; 2], i: f64, t_end: f64, dt: f64) -> [f64; 2] {
        let steps = (t_end / dt).round() as usize;
        let mut z = z0;
        let add = |z: [f64; 2], k: [f64; 2], h: f64| [z[0] + h * k[0], z[1] + h * k[1]];
        for _ in 0..steps {
            let k1 = self.deriv(z, i);
            let k2 = self.deriv(add(z, k1, dt / 2.0), i);
            let k3 = self.deriv(add(z, k2, dt / 2.0), i);
            let k4 = self.deriv(add(z, k3, dt), i);
            for c in 0..2 {
                z[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
        }
        z
    }
}

/// Realistic random pair: 1-5 Ah, 20-200 mOhm, slope 0.5-1.5 V.
pub fn random_pair(rng: &mut ChaCha8Rng) -> RawPair {
    RawPair {
        q: [rng.gen_range(1.0..5.0) * 3600.0, rng.gen_range(1.0..5.0) * 3600.0],
        r: [rng.gen_range(0.02..0.2), rng.gen_range(0.02..0.2)],
        alpha: rng.gen_range(0.5..1.5),
        beta: rng.gen_range(3.0..3.5),
    }
}
