//! Minimal interval arithmetic for Jacobian bounds.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const ZERO: Interval = Interval { lo: 0.0, hi: 0.0 };

    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi);
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn add(self, other: Interval) -> Self {
        Self { lo: self.lo + other.lo, hi: self.hi + other.hi }
    }

    pub fn scale(self, w: f64) -> Self {
        if w >= 0.0 {
            Self { lo: w * self.lo, hi: w * self.hi }
        } else {
            Self { lo: w * self.hi, hi: w * self.lo }
        }
    }

    /// Product with an interval of nonnegative numbers.
    pub fn mul_nonneg(self, d: Interval) -> Self {
        debug_assert!(d.lo >= 0.0);
        let lo = if self.lo >= 0.0 { d.lo * self.lo } else { d.hi * self.lo };
        let hi = if self.hi >= 0.0 { d.hi * self.hi } else { d.lo * self.hi };
        Self { lo, hi }
    }

    pub fn magnitude(self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Range of σ(z) for z in the interval.
pub fn sigmoid_range(z: Interval) -> Interval {
    Interval::new(sigmoid(z.lo), sigmoid(z.hi))
}

/// Range of σ'(z) = σ(z)(1 − σ(z)) for z in the interval.
pub fn sigmoid_slope_range(z: Interval) -> Interval {
    let slope = |v: f64| {
        let s = sigmoid(v);
        s * (1.0 - s)
    };
    let (a, b) = (slope(z.lo), slope(z.hi));
    let hi = if z.lo <= 0.0 && z.hi >= 0.0 { 0.25 } else { a.max(b) };
    Interval::new(a.min(b), hi)
}
