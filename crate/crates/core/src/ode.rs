//! Adaptive Dormand–Prince 5(4) integrator for two-component systems.

/// Step-size controlled integrator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dp45 {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Dp45 {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-13,
            h_min: 1e-14,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Reached([f64; 2]),
    /// The event predicate fired at an accepted step ending at `r`.
    Event { r: f64, y: [f64; 2] },
    /// Step size underflow or step budget exhausted.
    Stalled { r: f64, y: [f64; 2] },
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B_LOW: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

impl Dp45 {
    /// Integrates `y' = f(r, y)` from `r0` to `r1`, updating the step guess `h`.
    pub fn integrate<F, E>(&self, f: F, r0: f64, y0: [f64; 2], r1: f64, h: &mut f64, event: E) -> Outcome
    where
        F: Fn(f64, &[f64; 2]) -> [f64; 2],
        E: Fn(&[f64; 2]) -> bool,
    {
        let mut r = r0;
        let mut y = y0;
        if r1 <= r0 {
            return Outcome::Reached(y);
        }
        if !(*h > 0.0) {
            *h = (r1 - r0) * 1e-3;
        }
        for _ in 0..self.max_steps {
            let remaining = r1 - r;
            if remaining <= 0.0 {
                return Outcome::Reached(y);
            }
            let last = *h >= remaining;
            let step = if last { remaining } else { *h };
            let mut k = [[0.0f64; 2]; 7];
            for s in 0..7 {
                let mut ys = y;
                for (j, kj) in k.iter().enumerate().take(s) {
                    for c in 0..2 {
                        ys[c] += step * A[s][j] * kj[c];
                    }
                }
                k[s] = f(r + C[s] * step, &ys);
            }
            let mut y_new = y;
            let mut err: f64 = 0.0;
            for c in 0..2 {
                let mut hi = 0.0;
                let mut lo = 0.0;
                for s in 0..7 {
                    hi += B[s] * k[s][c];
                    lo += B_LOW[s] * k[s][c];
                }
                y_new[c] = y[c] + step * hi;
                let scale = self.atol + self.rtol * y[c].abs().max(y_new[c].abs());
                err = err.max((step * (hi - lo)).abs() / scale);
            }
            if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                *h = step * 0.2;
                if *h < self.h_min {
                    return Outcome::Stalled { r, y };
                }
                continue;
            }
            if err <= 1.0 {
                r = if last { r1 } else { r + step };
                y = y_new;
                if event(&y) {
                    return Outcome::Event { r, y };
                }
                let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // Keep the last full step as the guess for the next interval.
                if !last {
                    *h = step * grow;
                } else {
                    *h = (*h).max(step * grow);
                }
                if last {
                    return Outcome::Reached(y);
                }
            } else {
                *h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                if *h < self.h_min {
                    return Outcome::Stalled { r, y };
                }
            }
        }
        Outcome::Stalled { r, y }
    }
}
