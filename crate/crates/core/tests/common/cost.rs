//! Integer re-derivation of the FLOP tables, written from the formulas
//! without going through the library. Sides are powers of two so every
//! logarithm is an integer.

#[derive(Clone, Copy, Debug)]
pub struct Tuple {
    pub f: u128,
    pub fp: u128,
    pub lg_n: u32,
    pub k: u128,
    pub c: u128,
}

impl Tuple {
    pub fn n(&self) -> u128 {
        1 << self.lg_n
    }

    fn n3(&self) -> u128 {
        self.n().pow(3)
    }

    fn np3(&self) -> u128 {
        (self.n() - self.k + 1).pow(3)
    }

    /// 3·C·n³·log₂ n
    fn transform(&self) -> u128 {
        3 * self.c * self.n3() * self.lg_n as u128
    }
}

pub fn ceil_lg(x: u128) -> u128 {
    let mut r = 0;
    while (1u128 << r) < x {
        r += 1;
    }
    r
}

pub fn lg_exact(x: u128) -> u128 {
    assert!(x.is_power_of_two());
    x.trailing_zeros() as u128
}

/// Work per pass, `[fwd, bwd, update]`, for direct, fft, memoized fft.
pub fn conv_work(t: &Tuple) -> [[u128; 3]; 3] {
    let direct = t.fp * t.f * t.np3() * t.k.pow(3);
    let mul = 4 * t.fp * t.f * t.n3();
    let fft = t.transform() * (t.fp + t.f + t.fp * t.f) + mul;
    [[direct; 3], [fft; 3], [fft, t.transform() * (t.fp + t.f) + mul, t.transform() * t.fp * t.f + mul]]
}

pub fn conv_span(t: &Tuple) -> [[u128; 3]; 3] {
    let d = t.np3() * t.k.pow(3);
    let two = 2 * t.transform();
    [
        [d + t.np3() * ceil_lg(t.f), d + t.n3() * ceil_lg(t.fp), d],
        [two + 4 * t.n3() * ceil_lg(t.f), two + 4 * t.n3() * ceil_lg(t.fp), two + 4 * t.n3()],
        [two + 4 * t.n3() * ceil_lg(t.f), two + 4 * t.n3() * ceil_lg(t.fp), t.transform() + 4 * t.n3()],
    ]
}

/// `[pooling, filtering, transfer][pass]` for one image (span) of side `n`
/// with window side `k`; work is `f` times this.
pub fn nonconv(n: u128, k: u128) -> [[u128; 3]; 3] {
    let n3 = n.pow(3);
    [[n3, n3, 0], [6 * n3 * lg_exact(k), n3, 0], [n3, n3, n3]]
}
