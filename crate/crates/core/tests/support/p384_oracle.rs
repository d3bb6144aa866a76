//! Textbook affine P-384 arithmetic over big integers.
//!
//! Slow and variable-time; exists only to check the production curve code
//! against a second, independent implementation.
#![allow(dead_code)]

use num_bigint::BigUint;

const P_HEX: &str = "fffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffeffffffff0000000000000000ffffffff";
const B_HEX: &str = "b3312fa7e23ee7e4988e056be3f82d19181d9c6efe8141120314088f5013875ac656398d8a2ed19d2a85c8edd3ec2aef";
const GX_HEX: &str = "aa87ca22be8b05378eb1c71ef320ad746e1d3b628ba79b9859f741e082542a385502f25dbf55296c3a545e3872760ab7";
const GY_HEX: &str = "3617de4a96262c6f5d9e98bf9292dc29f8f41dbd289a147ce9da3113b5f0b8c00a60b1ce1d7e819d7a431d7c90ea0e5f";
pub const N_HEX: &str =
    "ffffffffffffffffffffffffffffffffffffffffffffffffc7634d81f4372ddf581a0db248b0a77aecec196accc52973";

fn num(hex: &str) -> BigUint {
    BigUint::parse_bytes(hex.as_bytes(), 16).unwrap()
}

pub struct Curve {
    p: BigUint,
    b: BigUint,
    pub g: Point,
    pub n: BigUint,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Point {
    Infinity,
    Affine(BigUint, BigUint),
}

impl Curve {
    pub fn p384() -> Self {
        Self { p: num(P_HEX), b: num(B_HEX), g: Point::Affine(num(GX_HEX), num(GY_HEX)), n: num(N_HEX) }
    }

    fn sub(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a + &self.p - (b % &self.p)) % &self.p
    }

    fn inv(&self, a: &BigUint) -> BigUint {
        a.modpow(&(&self.p - 2u32), &self.p)
    }

    pub fn rhs(&self, x: &BigUint) -> BigUint {
        let x3 = x.modpow(&BigUint::from(3u32), &self.p);
        let three_x = (x * 3u32) % &self.p;
        (self.sub(&x3, &three_x) + &self.b) % &self.p
    }

    pub fn on_curve(&self, pt: &Point) -> bool {
        match pt {
            Point::Infinity => true,
            Point::Affine(x, y) => (y * y) % &self.p == self.rhs(x),
        }
    }

    pub fn add(&self, a: &Point, b: &Point) -> Point {
        match (a, b) {
            (Point::Infinity, q) | (q, Point::Infinity) => q.clone(),
            (Point::Affine(x1, y1), Point::Affine(x2, y2)) => {
                if x1 == x2 {
                    if (y1 + y2) % &self.p == BigUint::from(0u32) {
                        return Point::Infinity;
                    }
                    // doubling: lambda = (3x^2 - 3) / 2y
                    let num = self.sub(&((x1 * x1 * 3u32) % &self.p), &BigUint::from(3u32));
                    let lambda = (num * self.inv(&((y1 * 2u32) % &self.p))) % &self.p;
                    return self.finish(&lambda, x1, y1, x2);
                }
                let lambda = (self.sub(y2, y1) * self.inv(&self.sub(x2, x1))) % &self.p;
                self.finish(&lambda, x1, y1, x2)
            }
        }
    }

    fn finish(&self, lambda: &BigUint, x1: &BigUint, y1: &BigUint, x2: &BigUint) -> Point {
        let x3 = self.sub(&self.sub(&((lambda * lambda) % &self.p), x1), x2);
        let y3 = self.sub(&((lambda * self.sub(x1, &x3)) % &self.p), y1);
        Point::Affine(x3, y3)
    }

    pub fn mul(&self, k: &BigUint, pt: &Point) -> Point {
        let mut acc = Point::Infinity;
        for i in (0..k.bits()).rev() {
            acc = self.add(&acc, &acc);
            if k.bit(i) {
                acc = self.add(&acc, pt);
            }
        }
        acc
    }

    /// Lifts an x-coordinate to the point with even y (p = 3 mod 4).
    pub fn lift_x(&self, x: &BigUint) -> Option<Point> {
        let rhs = self.rhs(x);
        let y = rhs.modpow(&((&self.p + 1u32) / 4u32), &self.p);
        if (&y * &y) % &self.p != rhs {
            return None;
        }
        let y = if y.bit(0) { &self.p - y } else { y };
        Some(Point::Affine(x.clone(), y))
    }
}

pub fn to_48(v: &BigUint) -> [u8; 48] {
    let bytes = v.to_bytes_be();
    let mut out = [0u8; 48];
    out[48 - bytes.len()..].copy_from_slice(&bytes);
    out
}

fn x_of(pt: &Point) -> [u8; 48] {
    match pt {
        Point::Affine(x, _) => to_48(x),
        Point::Infinity => panic!("point at infinity has no x"),
    }
}

/// x-coordinate of `d * G`.
pub fn mul_base_x(d: &[u8; 48]) -> [u8; 48] {
    let c = Curve::p384();
    x_of(&c.mul(&BigUint::from_bytes_be(d), &c.g))
}

/// x-coordinate of `d * Q` where `Q` is given by its x-coordinate.
pub fn mul_x(d: &[u8; 48], q_x: &[u8; 48]) -> [u8; 48] {
    let c = Curve::p384();
    let q = c.lift_x(&BigUint::from_bytes_be(q_x)).expect("x on curve");
    x_of(&c.mul(&BigUint::from_bytes_be(d), &q))
}
