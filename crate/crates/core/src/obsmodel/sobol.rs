//! Unscrambled Sobol sequence in base 2 with 32-bit resolution.

use super::sobol_table::{MAX_DIM, POLY, VINIT};
use crate::error::{invalid, Result};

const BITS: usize = 32;
const SCALE: f64 = 1.0 / 4_294_967_296.0;

/// Deterministic low-discrepancy point stream over `(0,1)^dimension`.
///
/// The all-zero point at index 0 is never emitted: a fresh stream starts at
/// index 1. Points are produced in natural order, so the `i`-th point of a
/// stream is identical no matter how many others were drawn before it.
#[derive(Debug, Clone)]
pub struct QmcStream {
    dimension: usize,
    directions: Vec<[u32; BITS]>,
    index: u64,
    state: Vec<u32>,
}

impl QmcStream {
    pub const MAX_DIMENSION: usize = MAX_DIM;

    pub fn new(dimension: usize) -> Result<Self> {
        Self::starting_at(dimension, 1)
    }

    /// Stream whose first emitted point is the `start`-th sequence element.
    pub fn starting_at(dimension: usize, start: u64) -> Result<Self> {
        if dimension == 0 || dimension > MAX_DIM {
            return Err(invalid("dimension", format!("{dimension} not in 1..={MAX_DIM}")));
        }
        if start == 0 || start >= 1 << BITS {
            return Err(invalid("start", format!("{start} not in 1..2^32")));
        }
        let directions = (0..dimension).map(direction_numbers).collect();
        let mut s = QmcStream { dimension, directions, index: start, state: vec![0; dimension] };
        s.seek(start);
        Ok(s)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Index of the next point to be emitted.
    pub fn index(&self) -> u64 {
        self.index
    }

    fn seek(&mut self, index: u64) {
        let gray = index ^ (index >> 1);
        for (d, dirs) in self.directions.iter().enumerate() {
            let mut x = 0u32;
            for (bit, v) in dirs.iter().enumerate() {
                if gray >> bit & 1 == 1 {
                    x ^= v;
                }
            }
            self.state[d] = x;
        }
        self.index = index;
    }

    /// Writes the next point into `out`.
    pub fn next_into(&mut self, out: &mut [f64]) {
        assert_eq!(out.len(), self.dimension, "output buffer has wrong dimension");
        for (o, &x) in out.iter_mut().zip(&self.state) {
            *o = x as f64 * SCALE;
        }
        // Gray-code step: the next point differs in the direction of the
        // lowest zero bit of the current index.
        let c = (!self.index).trailing_zeros() as usize;
        for (x, dirs) in self.state.iter_mut().zip(&self.directions) {
            *x ^= dirs[c.min(BITS - 1)];
        }
        self.index += 1;
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let mut p = vec![0.0; self.dimension];
        self.next_into(&mut p);
        p
    }

    /// The next `count` points, row-major.
    pub fn take_points(&mut self, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.next_point()).collect()
    }
}

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let poly = POLY[dim];
    let degree = (u32::BITS - 1 - poly.leading_zeros()) as usize;
    for k in 0..degree {
        v[k] = VINIT[dim][k] << (BITS - 1 - k);
    }
    for k in degree..BITS {
        let mut x = v[k - degree] ^ (v[k - degree] >> degree);
        for i in 1..degree {
            if poly >> (degree - i) & 1 == 1 {
                x ^= v[k - i];
            }
        }
        v[k] = x;
    }
    v
}
