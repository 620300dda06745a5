//! Second-order forward jets in up to three variables.

use std::ops::{Add, Mul, Neg, Sub};

pub const MAX_VARS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d: [f64; MAX_VARS],
    pub dd: [[f64; MAX_VARS]; MAX_VARS],
}

impl Jet {
    pub fn constant(v: f64) -> Jet {
        Jet { v, d: [0.0; MAX_VARS], dd: [[0.0; MAX_VARS]; MAX_VARS] }
    }

    pub fn var(i: usize, v: f64) -> Jet {
        let mut j = Jet::constant(v);
        j.d[i] = 1.0;
        j
    }

    /// Apply a scalar function given its value and first two derivatives.
    pub fn chain(self, f0: f64, f1: f64, f2: f64) -> Jet {
        let mut out = Jet::constant(f0);
        for i in 0..MAX_VARS {
            out.d[i] = f1 * self.d[i];
            for j in 0..MAX_VARS {
                out.dd[i][j] = f1 * self.dd[i][j] + f2 * self.d[i] * self.d[j];
            }
        }
        out
    }

    pub fn sin(self) -> Jet {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Jet {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn powi(self, n: i32) -> Jet {
        let v = self.v;
        let f = |m: i32| if m < 0 { 0.0 } else { v.powi(m) };
        let n_ = n as f64;
        self.chain(v.powi(n), n_ * f(n - 1), n_ * (n_ - 1.0) * f(n - 2))
    }

    pub fn scale(self, c: f64) -> Jet {
        let mut out = self;
        out.v *= c;
        for i in 0..MAX_VARS {
            out.d[i] *= c;
            for j in 0..MAX_VARS {
                out.dd[i][j] *= c;
            }
        }
        out
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        let mut out = self;
        out.v += o.v;
        for i in 0..MAX_VARS {
            out.d[i] += o.d[i];
            for j in 0..MAX_VARS {
                out.dd[i][j] += o.dd[i][j];
            }
        }
        out
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, c: f64) -> Jet {
        self.v += c;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, c: f64) -> Jet {
        self.scale(c)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut out = Jet::constant(self.v * o.v);
        for i in 0..MAX_VARS {
            out.d[i] = self.v * o.d[i] + o.v * self.d[i];
            for j in 0..MAX_VARS {
                out.dd[i][j] = self.v * o.dd[i][j]
                    + o.v * self.dd[i][j]
                    + self.d[i] * o.d[j]
                    + self.d[j] * o.d[i];
            }
        }
        out
    }
}
