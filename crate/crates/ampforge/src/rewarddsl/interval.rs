//! Closed-interval arithmetic used to prove the validator's range and
//! domain rules.
//!
//! Every operation returns an interval that contains all values the exact
//! real-valued operation can produce for inputs in the operand intervals.
//! Soundness with floating point relies on each primitive being evaluated
//! at interval endpoints with the same f64 operations the evaluator uses:
//! the enclosed functions are monotone piecewise in each argument, so the
//! extreme outputs occur at endpoint combinations and are computed
//! bit-identically here and at evaluation time.

/// A closed interval `[lo, hi]` with `lo <= hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval endpoints out of order: [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn contains_zero(&self) -> bool {
        self.lo <= 0.0 && self.hi >= 0.0
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn add(self, o: Interval) -> Interval {
        Interval::new(self.lo + o.lo, self.hi + o.hi)
    }

    pub fn sub(self, o: Interval) -> Interval {
        Interval::new(self.lo - o.hi, self.hi - o.lo)
    }

    pub fn mul(self, o: Interval) -> Interval {
        let c = [
            self.lo * o.lo,
            self.lo * o.hi,
            self.hi * o.lo,
            self.hi * o.hi,
        ];
        Interval::new(
            c.iter().copied().fold(f64::INFINITY, f64::min),
            c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }

    /// Quotient interval. Callers must reject divisors containing zero
    /// first; with zero excluded the quotient extremes are at the corners.
    pub fn div(self, o: Interval) -> Interval {
        debug_assert!(!o.contains_zero());
        let c = [
            self.lo / o.lo,
            self.lo / o.hi,
            self.hi / o.lo,
            self.hi / o.hi,
        ];
        Interval::new(
            c.iter().copied().fold(f64::INFINITY, f64::min),
            c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }

    pub fn min(self, o: Interval) -> Interval {
        Interval::new(self.lo.min(o.lo), self.hi.min(o.hi))
    }

    pub fn max(self, o: Interval) -> Interval {
        Interval::new(self.lo.max(o.lo), self.hi.max(o.hi))
    }

    pub fn exp(self) -> Interval {
        Interval::new(self.lo.exp(), self.hi.exp())
    }

    /// `ln(1 + x)`. Callers must reject intervals reaching below zero
    /// first, so the function is monotone over the remaining domain.
    pub fn log1p(self) -> Interval {
        debug_assert!(self.lo >= 0.0);
        Interval::new(self.lo.ln_1p(), self.hi.ln_1p())
    }

    pub fn sigmoid(self) -> Interval {
        Interval::new(stable_sigmoid(self.lo), stable_sigmoid(self.hi))
    }

    /// Integer power. Monotone for odd exponents; for even exponents the
    /// minimum is 0 when the interval straddles zero, otherwise at the
    /// endpoint nearer zero.
    pub fn powi(self, n: u32) -> Interval {
        if n == 0 {
            return Interval::point(1.0);
        }
        let (a, b) = (self.lo.powi(n as i32), self.hi.powi(n as i32));
        if n % 2 == 1 {
            Interval::new(a, b)
        } else if self.contains_zero() {
            Interval::new(0.0, a.max(b))
        } else {
            Interval::new(a.min(b), a.max(b))
        }
    }
}

/// Numerically stable logistic function, shared by the validator and the
/// expression evaluator so both see the exact same f64 values.
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
