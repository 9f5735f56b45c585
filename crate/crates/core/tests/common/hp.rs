//! Fixed-point arbitrary-precision reals (320 fractional bits, ~96 digits)
//! used as an oracle for the accountant.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Float, One, Signed, ToPrimitive, Zero};
use std::sync::OnceLock;

const S: u32 = 320;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Hp(BigInt);

impl Hp {
    pub fn int(n: i64) -> Self {
        Hp(BigInt::from(n) << S)
    }

    /// Exact value of an f64.
    pub fn f64(x: f64) -> Self {
        let (mant, exp, sign) = x.integer_decode();
        let m = BigInt::from(mant) * BigInt::from(sign);
        let shift = i64::from(exp) + i64::from(S);
        Hp(if shift >= 0 { m << shift as u32 } else { m >> (-shift) as u32 })
    }

    fn ratio(r: &BigRational) -> Self {
        Hp((r.numer().clone() << S) / r.denom())
    }

    pub fn add(&self, o: &Hp) -> Hp {
        Hp(&self.0 + &o.0)
    }

    pub fn sub(&self, o: &Hp) -> Hp {
        Hp(&self.0 - &o.0)
    }

    pub fn mul(&self, o: &Hp) -> Hp {
        Hp((&self.0 * &o.0) >> S)
    }

    pub fn div(&self, o: &Hp) -> Hp {
        Hp((&self.0 << S) / &o.0)
    }

    pub fn neg(&self) -> Hp {
        Hp(-&self.0)
    }

    pub fn abs(&self) -> Hp {
        Hp(self.0.abs())
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn to_f64(&self) -> f64 {
        // keep 64 significant bits before the float conversion
        let bits = self.0.bits() as i64;
        let drop = (bits - 64).max(0);
        let top = (&self.0 >> drop as u32).to_f64().unwrap();
        top * 2f64.powi((drop - i64::from(S)) as i32)
    }

    pub fn exp(&self) -> Hp {
        if self.0.is_negative() {
            return Hp::int(1).div(&self.neg().exp());
        }
        let k = (self.0.bits() as i64 - i64::from(S) + 10).max(0) as u32;
        let r = Hp(&self.0 >> k);
        let mut sum = Hp::int(1);
        let mut term = Hp::int(1);
        let mut n = 1i64;
        loop {
            term = Hp(term.mul(&r).0 / n);
            if term.is_zero() {
                break;
            }
            sum = sum.add(&term);
            n += 1;
        }
        for _ in 0..k {
            sum = sum.mul(&sum);
        }
        sum
    }

    fn atanh_inv_series(z: &Hp) -> Hp {
        // Σ z^(2i+1)/(2i+1)
        let z2 = z.mul(z);
        let mut pow = z.clone();
        let mut sum = z.clone();
        let mut i = 1i64;
        loop {
            pow = pow.mul(&z2);
            let t = Hp(&pow.0 / (2 * i + 1));
            if t.is_zero() {
                break;
            }
            sum = sum.add(&t);
            i += 1;
        }
        sum
    }

    pub fn ln2() -> Hp {
        static LN2: OnceLock<Hp> = OnceLock::new();
        LN2.get_or_init(|| {
            let third = Hp::int(1).div(&Hp::int(3));
            let a = Hp::atanh_inv_series(&third);
            a.add(&a)
        })
        .clone()
    }

    pub fn ln(&self) -> Hp {
        assert!(self.0.is_positive(), "ln of non-positive value");
        let k = self.0.bits() as i64 - 1 - i64::from(S);
        let m = if k >= 0 { Hp(&self.0 >> k as u32) } else { Hp(&self.0 << (-k) as u32) };
        let one = Hp::int(1);
        let z = m.sub(&one).div(&m.add(&one));
        let a = Hp::atanh_inv_series(&z);
        Hp(Hp::ln2().0 * BigInt::from(k)).add(&a).add(&a)
    }

    fn atan_inv(x: i64) -> Hp {
        let x2 = BigInt::from(x * x);
        let mut pow = Hp::int(1).0 / x;
        let mut sum = pow.clone();
        let mut i = 1i64;
        loop {
            pow /= &x2;
            let t = &pow / (2 * i + 1);
            if t.is_zero() {
                break;
            }
            if i % 2 == 1 {
                sum -= t;
            } else {
                sum += t;
            }
            i += 1;
        }
        Hp(sum)
    }

    pub fn pi() -> Hp {
        static PI: OnceLock<Hp> = OnceLock::new();
        PI.get_or_init(|| Hp(Hp::atan_inv(5).0 * 16 - Hp::atan_inv(239).0 * 4)).clone()
    }

    /// ln Γ(z) for z > 0: upward shift, then the Stirling series.
    pub fn ln_gamma(&self) -> Hp {
        assert!(self.0.is_positive());
        let mut w = self.clone();
        let mut prod = Hp::int(1);
        let sixty = Hp::int(60);
        while w < sixty {
            prod = prod.mul(&w);
            w = w.add(&Hp::int(1));
        }
        let half = Hp(Hp::int(1).0 >> 1u32);
        let two_pi = Hp(Hp::pi().0 * 2);
        let mut acc = w.sub(&half).mul(&w.ln()).sub(&w).add(&half.mul(&two_pi.ln()));
        let b = bernoulli();
        let w2 = w.mul(&w);
        let mut wpow = w.clone();
        for j in 1..=30usize {
            let coef = &b[2 * j] / BigRational::from_integer(BigInt::from(2 * j * (2 * j - 1)));
            acc = acc.add(&Hp::ratio(&coef).div(&wpow));
            wpow = wpow.mul(&w2);
        }
        acc.sub(&prod.ln())
    }
}

/// B_0 ..= B_60.
fn bernoulli() -> &'static [BigRational] {
    static B: OnceLock<Vec<BigRational>> = OnceLock::new();
    B.get_or_init(|| {
        let mut b: Vec<BigRational> = vec![BigRational::one()];
        for m in 1..=60usize {
            let mut s = BigRational::zero();
            let mut binom = BigInt::one();
            for (k, bk) in b.iter().enumerate() {
                s += BigRational::from_integer(binom.clone()) * bk;
                binom = binom * BigInt::from(m + 1 - k) / BigInt::from(k + 1);
            }
            b.push(-s / BigRational::from_integer(BigInt::from(m + 1)));
        }
        b
    })
}

/// Per-step subsampled-Gaussian RDP, evaluated directly at high precision.
pub fn rdp_step(sigma: f64, q: f64, lambda: f64) -> Hp {
    let (s, q, l) = (Hp::f64(sigma), Hp::f64(q), Hp::f64(lambda));
    let one = Hp::int(1);
    let binom = l.add(&l).add(&one).ln_gamma().sub(&l.add(&one).ln_gamma().mul(&Hp::int(2))).exp();
    let growth = l.div(&s.mul(&s)).exp().sub(&one);
    let inner = one.add(&q.mul(&q).mul(&l).mul(&binom).mul(&growth));
    inner.ln().div(&l.sub(&one))
}

/// High-precision R(λ) at every order.
pub fn rdp_table(sigma: f64, q: f64, orders: &[f64]) -> Vec<Hp> {
    orders.iter().map(|&l| rdp_step(sigma, q, l)).collect()
}

/// ε = min over orders of T·R(λ) + ln(1/δ)/(λ−1), with the minimizing index.
pub fn epsilon(table: &[Hp], steps: u64, delta: f64, orders: &[f64]) -> (Hp, usize) {
    let log_inv_delta = Hp::int(1).div(&Hp::f64(delta)).ln();
    let t = Hp(Hp::int(1).0 * BigInt::from(steps));
    table
        .iter()
        .zip(orders)
        .enumerate()
        .map(|(i, (r, &l))| (t.mul(r).add(&log_inv_delta.div(&Hp::f64(l).sub(&Hp::int(1)))), i))
        .min()
        .unwrap()
}

pub fn rel_err(value: f64, oracle: &Hp) -> f64 {
    Hp::f64(value).sub(oracle).abs().div(&oracle.abs()).to_f64()
}

impl Hp {
    /// Truncated decimal expansion with `digits` fractional digits.
    pub fn to_decimal(&self, digits: u32) -> String {
        let scaled: BigInt = (self.0.abs() * BigInt::from(10).pow(digits)) >> S;
        let s = format!("{:0>width$}", scaled.to_string(), width = digits as usize + 1);
        let (int, frac) = s.split_at(s.len() - digits as usize);
        format!("{}{int}.{frac}", if self.0.is_negative() { "-" } else { "" })
    }
}
