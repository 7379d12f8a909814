//! Division-free modular reduction.
//!
//! A [`Reducer`] precomputes a 128-bit magic constant for a fixed modulus
//! so the hot path replaces the hardware division with two wide
//! multiplications. Exact for every 64-bit input and modulus.

/// Precomputed reduction context for one modulus.
#[derive(Debug, Clone, Copy)]
pub struct Reducer {
    n: u64,
    magic: u128,
}

impl Reducer {
    /// Builds the magic constant for `n`. The single division happens
    /// here, once per modulus.
    pub fn new(n: u64) -> Self {
        assert!(n >= 1, "modulus must be positive");
        let magic = if n == 1 { 0 } else { u128::MAX / n as u128 + 1 };
        Self { n, magic }
    }

    pub fn modulus(&self) -> u64 {
        self.n
    }

    /// Returns `x % n` without dividing.
    #[inline]
    pub fn reduce(&self, x: u64) -> u64 {
        if self.n == 1 {
            return 0;
        }
        let lowbits = self.magic.wrapping_mul(x as u128);
        mulhi_u128_u64(lowbits, self.n)
    }
}

/// High 128 bits of `a * b` where `b` fits in 64 bits; the value returned
/// is `floor(a * b / 2^128)`, which for the reduction above is `< b`.
#[inline]
fn mulhi_u128_u64(a: u128, b: u64) -> u64 {
    let a_lo = a as u64 as u128;
    let a_hi = (a >> 64) as u128;
    let t = a_lo * b as u128;
    let u = a_hi * b as u128;
    ((u + (t >> 64)) >> 64) as u64
}

/// Convenience wrapper building a throwaway reducer.
pub fn reduce(x: u64, n: u64) -> u64 {
    Reducer::new(n).reduce(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input() {
        assert_eq!(reduce(0, 7), 0);
    }

    #[test]
    fn exact_multiple() {
        for n in [1u64, 2, 3, 97, 1 << 20, u64::MAX - 1] {
            assert_eq!(reduce(n, n), 0);
        }
    }

    #[test]
    fn matches_native_modulo_exhaustively() {
        // Oracle: the language's native modulo.
        for n in [2u64, 3, 5, 7, 1023, 4096] {
            let r = Reducer::new(n);
            for x in 0..(1u64 << 16) {
                assert_eq!(r.reduce(x), x % n, "x={x} n={n}");
            }
        }
    }

    #[test]
    fn matches_native_modulo_on_extremes() {
        let xs = [
            0u64,
            1,
            2,
            (1 << 32) - 1,
            1 << 32,
            u64::MAX - 1,
            u64::MAX,
            0x8000_0000_0000_0000,
        ];
        let ns = [
            1u64,
            2,
            3,
            (1 << 32) - 1,
            1 << 32,
            (1 << 63) - 1,
            1 << 63,
            u64::MAX - 1,
            u64::MAX,
        ];
        for &n in &ns {
            let r = Reducer::new(n);
            for &x in &xs {
                assert_eq!(r.reduce(x), x % n, "x={x} n={n}");
            }
        }
    }

    #[test]
    fn matches_native_modulo_randomized() {
        let mut state = 0x123456789abcdefu64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..200_000 {
            let x = next();
            let n = next() | 1;
            assert_eq!(reduce(x, n), x % n);
        }
    }
}
