//! Minimal double-double arithmetic.
//!
//! Optical-path phases at geostationary range are of order 1e14 rad, while
//! the null conditions live on the wrapped remainder below 2*pi. Plain f64
//! loses the remainder entirely, so phase bookkeeping is done on unevaluated
//! hi + lo pairs (~32 significant digits).

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

/// Requires |a| >= |b|.
#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// pi/2 to double-double precision.
pub(crate) const FRAC_PI_2: Dd = Dd {
    hi: std::f64::consts::FRAC_PI_2,
    lo: 6.123233995736766e-17,
};

impl Dd {
    #[inline]
    pub fn new(hi: f64, lo: f64) -> Self {
        let (hi, lo) = two_sum(hi, lo);
        Dd { hi, lo }
    }

    #[inline]
    pub fn from_f64(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    #[inline]
    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let e = e + self.lo + o.lo;
        let (hi, lo) = quick_two_sum(s, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    #[inline]
    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    #[inline]
    pub fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + self.hi * o.lo + self.lo * o.hi;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn mul_f64(self, x: f64) -> Dd {
        self.mul(Dd::from_f64(x))
    }

    #[inline]
    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul_f64(q1));
        let q2 = r.hi / o.hi;
        let r2 = r.sub(o.mul_f64(q2));
        let q3 = r2.hi / o.hi;
        let (hi, lo) = two_sum(q1, q2);
        Dd { hi, lo }.add(Dd::from_f64(q3))
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// Largest integer not exceeding the value, as f64 (value must be < 2^53).
    pub fn floor(self) -> f64 {
        let f = self.hi.floor();
        if f < self.hi {
            f
        } else {
            // hi is integral; the fractional information sits in lo.
            f + self.lo.floor()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_keeps_low_bits() {
        // k * l with k ~ 6e6 and l ~ 4e7 exceeds 2^53; the remainder below
        // 1 rad must survive.
        let k = 6.184e6;
        let l = 4.0e7 + 0.37;
        let p = Dd::from_f64(k).mul(Dd::from_f64(l));
        let back = p.sub(Dd::from_f64(k).mul_f64(4.0e7));
        // Sterbenz: l - 4e7 is exact in f64, so this oracle is exact
        let expected = k * (l - 4.0e7);
        assert!((back.to_f64() - expected).abs() < 1e-6);
    }

    #[test]
    fn pi_over_2_times_big_integer() {
        // m * pi/2 for m ~ 1e14 must carry the lo contribution (~0.006 rad).
        let m = 1.5e14;
        let p = FRAC_PI_2.mul_f64(m);
        let naive = std::f64::consts::FRAC_PI_2 * m;
        // exact correction: fma residual of the hi product plus the lo term
        let expected = FRAC_PI_2.hi.mul_add(m, -naive) + FRAC_PI_2.lo * m;
        let correction = p.sub(Dd::from_f64(naive)).to_f64();
        assert!(expected.abs() > 1e-3); // the correction genuinely matters
        assert!((correction - expected).abs() / expected.abs() < 1e-12);
    }

    #[test]
    fn floor_uses_low_word() {
        let x = Dd::new(10.0, -1e-20);
        assert_eq!(x.floor(), 9.0);
        let y = Dd::new(10.0, 1e-20);
        assert_eq!(y.floor(), 10.0);
        let z = Dd::new(10.5, 0.0);
        assert_eq!(z.floor(), 10.0);
    }

    #[test]
    fn division_round_trip() {
        let big = 4.0e7 + 0.123456789;
        let a = Dd::from_f64(5.08e5).mul(Dd::from_f64(big));
        let l = a.div(Dd::from_f64(5.08e5));
        assert!((l.to_f64() - big).abs() < 1e-12);
        assert!((l.sub(Dd::from_f64(4.0e7)).to_f64() - (big - 4.0e7)).abs() < 1e-12);
    }
}
