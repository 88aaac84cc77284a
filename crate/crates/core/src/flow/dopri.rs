//! Dormand-Prince 5(4) with Hairer's continuous extension, specialised to
//! the 4-dimensional autonomous systems used here.

use crate::error::{Error, Result};

pub type State = [f64; 4];

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
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[inline]
fn axpy(y: &State, terms: &[(f64, &State)]) -> State {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..4 {
            out[i] += c * k[i];
        }
    }
    out
}

/// Step-size control parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

/// One accepted step with its dense-output polynomial.
#[derive(Debug, Clone, Copy)]
pub struct Step {
    pub t0: f64,
    pub t1: f64,
    pub y0: State,
    pub y1: State,
    /// Derivative at `t0` (first stage).
    pub k0: State,
    rcont: [State; 5],
}

impl Step {
    /// Dense output at `t` within `[t0, t1]`.
    pub fn interpolate(&self, t: f64) -> State {
        if t == self.t1 {
            return self.y1;
        }
        if t == self.t0 {
            return self.y0;
        }
        let h = self.t1 - self.t0;
        let th = (t - self.t0) / h;
        let th1 = 1.0 - th;
        let r = &self.rcont;
        let mut out = [0.0; 4];
        for i in 0..4 {
            out[i] = r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])));
        }
        out
    }
}

struct Stages {
    y1: State,
    k7: State,
    err: State,
    dense5: State,
}

fn stages<F: Fn(&State) -> State>(f: &F, y: &State, k1: &State, h: f64) -> Stages {
    let k2 = f(&axpy(y, &[(h * A21, k1)]));
    let k3 = f(&axpy(y, &[(h * A31, k1), (h * A32, &k2)]));
    let k4 = f(&axpy(y, &[(h * A41, k1), (h * A42, &k2), (h * A43, &k3)]));
    let k5 = f(&axpy(
        y,
        &[
            (h * A51, k1),
            (h * A52, &k2),
            (h * A53, &k3),
            (h * A54, &k4),
        ],
    ));
    let k6 = f(&axpy(
        y,
        &[
            (h * A61, k1),
            (h * A62, &k2),
            (h * A63, &k3),
            (h * A64, &k4),
            (h * A65, &k5),
        ],
    ));
    let y1 = axpy(
        y,
        &[
            (h * A71, k1),
            (h * A73, &k3),
            (h * A74, &k4),
            (h * A75, &k5),
            (h * A76, &k6),
        ],
    );
    let k7 = f(&y1);
    let mut err = [0.0; 4];
    let mut dense5 = [0.0; 4];
    for i in 0..4 {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        dense5[i] =
            h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }
    Stages {
        y1,
        k7,
        err,
        dense5,
    }
}

/// A single fifth-order step of size `h` from `y` (with `k1 = f(y)`), no
/// error control. Used to land exactly on event times.
pub fn single_step<F: Fn(&State) -> State>(f: &F, y: &State, k1: &State, h: f64) -> State {
    stages(f, y, k1, h).y1
}

/// Adaptive integrator state.
pub struct Dopri5<F> {
    f: F,
    ctl: StepControl,
    t: f64,
    y: State,
    k1: State,
    h: f64,
    dir: f64,
    facold: f64,
    steps: usize,
}

impl<F: Fn(&State) -> State> Dopri5<F> {
    /// Start at `(t0, y0)`, integrating forward if `direction > 0`, backward otherwise.
    pub fn new(f: F, ctl: StepControl, t0: f64, y0: State, direction: f64) -> Self {
        let k1 = f(&y0);
        let dir = if direction >= 0.0 { 1.0 } else { -1.0 };
        let h = initial_step(&f, &y0, &k1, &ctl, dir);
        Dopri5 {
            f,
            ctl,
            t: t0,
            y: y0,
            k1,
            h,
            dir,
            facold: 1e-4,
            steps: 0,
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &State {
        &self.y
    }

    pub fn field(&self) -> &F {
        &self.f
    }

    /// Replace the current state (e.g. after a projection); keeps the step size.
    pub fn reset_state(&mut self, y: State) {
        self.k1 = (self.f)(&y);
        self.y = y;
    }

    /// Take one accepted step, not passing `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<Step> {
        const SAFE: f64 = 0.9;
        const FAC1: f64 = 0.2;
        const FAC2: f64 = 10.0;
        const BETA: f64 = 0.04;
        let expo1 = 0.2 - BETA * 0.75;
        loop {
            self.steps += 1;
            if self.steps > self.ctl.max_steps {
                return Err(Error::StepFailure(format!(
                    "exceeded {} steps at t = {}",
                    self.ctl.max_steps, self.t
                )));
            }
            let remaining = (t_limit - self.t) * self.dir;
            if remaining <= 0.0 {
                return Err(Error::StepFailure("step requested past the limit".into()));
            }
            let mut h_abs = self.h.abs().min(self.ctl.max_step);
            let clamped = h_abs >= remaining;
            if clamped {
                h_abs = remaining;
            }
            let h = h_abs * self.dir;
            if h_abs <= 1e-15 * self.t.abs().max(1.0) && !clamped {
                return Err(Error::StepFailure(format!(
                    "step size underflow at t = {}",
                    self.t
                )));
            }
            let s = stages(&self.f, &self.y, &self.k1, h);
            let mut err = 0.0;
            for i in 0..4 {
                let sk = self.ctl.atol + self.ctl.rtol * self.y[i].abs().max(s.y1[i].abs());
                let e = s.err[i] / sk;
                err += e * e;
            }
            let err = (err / 4.0).sqrt();
            if !err.is_finite() || s.y1.iter().any(|v| !v.is_finite()) {
                self.h = 0.1 * h_abs;
                continue;
            }
            let fac11 = err.powf(expo1);
            let mut fac = fac11 / self.facold.powf(BETA);
            fac = (fac / SAFE).clamp(1.0 / FAC2, 1.0 / FAC1);
            let h_new = h_abs / fac;
            if err <= 1.0 {
                self.facold = err.max(1e-4);
                let t0 = self.t;
                let t1 = if clamped { t_limit } else { t0 + h };
                let y0 = self.y;
                let r2: State = std::array::from_fn(|i| s.y1[i] - y0[i]);
                let r3: State = std::array::from_fn(|i| h * self.k1[i] - r2[i]);
                let r4: State = std::array::from_fn(|i| r2[i] - h * s.k7[i] - r3[i]);
                let step = Step {
                    t0,
                    t1,
                    y0,
                    y1: s.y1,
                    k0: self.k1,
                    rcont: [y0, r2, r3, r4, s.dense5],
                };
                self.t = t1;
                self.y = s.y1;
                self.k1 = s.k7;
                // a step shortened to hit the limit must not shrink the next one
                if !clamped || h_new < self.h.abs() {
                    self.h = h_new;
                }
                return Ok(step);
            }
            self.h = h_abs / (fac11 / SAFE).min(1.0 / FAC1);
        }
    }
}

fn initial_step<F: Fn(&State) -> State>(
    f: &F,
    y: &State,
    k1: &State,
    ctl: &StepControl,
    dir: f64,
) -> f64 {
    let norm = |v: &State| {
        let mut s = 0.0;
        for i in 0..4 {
            let sk = ctl.atol + ctl.rtol * y[i].abs();
            s += (v[i] / sk).powi(2);
        }
        (s / 4.0).sqrt()
    };
    let d0 = norm(y);
    let d1 = norm(k1);
    let mut h0 = if d0 < 1e-10 || d1 < 1e-10 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(ctl.max_step);
    let y1 = axpy(y, &[(dir * h0, k1)]);
    let k2 = f(&y1);
    let diff: State = std::array::from_fn(|i| k2[i] - k1[i]);
    let d2 = norm(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (1e-6f64).max(h0 * 1e-3)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(ctl.max_step)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(y: &State) -> State {
        [y[1], -y[0], y[3], -y[2]]
    }

    fn ctl(tol: f64) -> StepControl {
        StepControl {
            rtol: tol,
            atol: tol,
            max_step: 1.0,
            max_steps: 1_000_000,
        }
    }

    #[test]
    fn harmonic_oscillator_accuracy() {
        let mut s = Dopri5::new(oscillator, ctl(1e-12), 0.0, [1.0, 0.0, 0.0, 1.0], 1.0);
        let t_end = 20.0;
        while s.t() < t_end {
            s.step(t_end).unwrap();
        }
        let y = s.y();
        assert!((y[0] - t_end.cos()).abs() < 1e-9);
        assert!((y[2] - t_end.sin()).abs() < 1e-9);
        assert_eq!(s.t(), t_end);
    }

    #[test]
    fn backward_integration() {
        let mut s = Dopri5::new(oscillator, ctl(1e-12), 0.0, [1.0, 0.0, 0.0, 1.0], -1.0);
        while s.t() > -3.0 {
            s.step(-3.0).unwrap();
        }
        assert!((s.y()[0] - (-3.0f64).cos()).abs() < 1e-10);
        assert!((s.y()[2] - (-3.0f64).sin()).abs() < 1e-10);
    }

    #[test]
    fn dense_output_is_fourth_order_accurate() {
        let mut s = Dopri5::new(
            oscillator,
            StepControl {
                max_step: 0.2,
                ..ctl(1e-9)
            },
            0.0,
            [1.0, 0.0, 0.0, 1.0],
            1.0,
        );
        let mut worst: f64 = 0.0;
        while s.t() < 5.0 {
            let step = s.step(5.0).unwrap();
            for k in 0..=10 {
                let t = step.t0 + (step.t1 - step.t0) * k as f64 / 10.0;
                let y = step.interpolate(t);
                worst = worst
                    .max((y[0] - t.cos()).abs())
                    .max((y[2] - t.sin()).abs());
            }
            assert_eq!(step.interpolate(step.t1), step.y1);
        }
        assert!(worst < 1e-8, "dense output error {worst}");
    }

    #[test]
    fn single_step_matches_accepted_step() {
        let mut s = Dopri5::new(oscillator, ctl(1e-10), 0.0, [1.0, 0.0, 0.0, 1.0], 1.0);
        let step = s.step(1.0).unwrap();
        let y = single_step(&oscillator, &step.y0, &step.k0, step.t1 - step.t0);
        assert_eq!(y, step.y1);
    }
}
