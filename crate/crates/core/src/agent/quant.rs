//! INT4 deployment form of the Q-network.
//!
//! Each layer carries one power-of-two scale: a weight `w` is stored as a
//! 4-bit integer `k` with `w ~= k * 2^e`. Inputs are the integer features in
//! `[0, 128]`, so layer 1 accumulates at scale `2^e1` and layer 2 at scale
//! `2^(e1 + e2)`. Biases are stored as integers at their layer's accumulator
//! scale, which keeps the whole forward pass in integer arithmetic.

use serde::{Deserialize, Serialize};

use super::network::{QNetwork, HIDDEN, INPUT, OUTPUT};
use crate::error::{Error, Result};

pub const INT4_MIN: i8 = -8;
pub const INT4_MAX: i8 = 7;

/// Exponent used for an all-zero layer.
pub const DEFAULT_EXPONENT_FLOOR: i32 = -16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedNetwork {
    pub w1: Vec<i8>,
    pub b1: Vec<i32>,
    pub w2: Vec<i8>,
    pub b2: Vec<i32>,
    pub exp1: i32,
    pub exp2: i32,
}

/// Smallest `p >= floor` with `max_abs <= 7 * 2^p`.
fn layer_exponent(max_abs: f64, floor: i32) -> i32 {
    if max_abs <= 0.0 {
        return floor;
    }
    let mut p = (max_abs / INT4_MAX as f64).log2().ceil() as i32;
    while p > floor && max_abs <= INT4_MAX as f64 * 2f64.powi(p - 1) {
        p -= 1;
    }
    while max_abs > INT4_MAX as f64 * 2f64.powi(p) {
        p += 1;
    }
    p.max(floor)
}

fn quantize_weights(w: &[f64], exp: i32) -> Vec<i8> {
    let step = 2f64.powi(exp);
    w.iter()
        .map(|x| (x / step).round().clamp(INT4_MIN as f64, INT4_MAX as f64) as i8)
        .collect()
}

fn quantize_biases(b: &[f64], exp: i32) -> Vec<i32> {
    let step = 2f64.powi(exp);
    b.iter()
        .map(|x| (x / step).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
        .collect()
}

fn max_abs(w: &[f64]) -> f64 {
    w.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn quantize_int4(net: &QNetwork) -> QuantizedNetwork {
    quantize_int4_with_floor(net, DEFAULT_EXPONENT_FLOOR)
}

pub fn quantize_int4_with_floor(net: &QNetwork, floor: i32) -> QuantizedNetwork {
    let exp1 = layer_exponent(max_abs(&net.w1), floor);
    let exp2 = layer_exponent(max_abs(&net.w2), floor);
    QuantizedNetwork {
        w1: quantize_weights(&net.w1, exp1),
        b1: quantize_biases(&net.b1, exp1),
        w2: quantize_weights(&net.w2, exp2),
        b2: quantize_biases(&net.b2, exp1 + exp2),
        exp1,
        exp2,
    }
}

impl QuantizedNetwork {
    /// Exponent of the integer outputs: `q_real = q_int * 2^output_exponent`.
    pub fn output_exponent(&self) -> i32 {
        self.exp1 + self.exp2
    }

    /// Float network with exactly the weights this one represents.
    pub fn dequantize(&self) -> QNetwork {
        let s1 = 2f64.powi(self.exp1);
        let s2 = 2f64.powi(self.exp2);
        let so = 2f64.powi(self.output_exponent());
        QNetwork {
            w1: self.w1.iter().map(|&k| k as f64 * s1).collect(),
            b1: self.b1.iter().map(|&k| k as f64 * s1).collect(),
            w2: self.w2.iter().map(|&k| k as f64 * s2).collect(),
            b2: self.b2.iter().map(|&k| k as f64 * so).collect(),
        }
    }

    pub fn dequantize_output(&self, q: &[i32; OUTPUT]) -> [f64; OUTPUT] {
        let so = 2f64.powi(self.output_exponent());
        q.map(|v| v as f64 * so)
    }

    /// Integer-only forward pass. Accumulation is checked; an overflow means
    /// the scale exponents do not fit the inputs.
    pub fn forward(&self, state: &[i32; INPUT]) -> Result<[i32; OUTPUT]> {
        let mut hidden = [0i32; HIDDEN];
        for (j, h) in hidden.iter_mut().enumerate() {
            let row = &self.w1[j * INPUT..(j + 1) * INPUT];
            let mut acc = self.b1[j];
            for (&w, &x) in row.iter().zip(state) {
                acc = (w as i32)
                    .checked_mul(x)
                    .and_then(|p| acc.checked_add(p))
                    .ok_or(Error::AccumulatorOverflow { layer: 1 })?;
            }
            *h = acc.max(0);
        }
        let mut q = [0i32; OUTPUT];
        for (a, out) in q.iter_mut().enumerate() {
            let row = &self.w2[a * HIDDEN..(a + 1) * HIDDEN];
            let mut acc = self.b2[a];
            for (&w, &h) in row.iter().zip(&hidden) {
                acc = (w as i32)
                    .checked_mul(h)
                    .and_then(|p| acc.checked_add(p))
                    .ok_or(Error::AccumulatorOverflow { layer: 2 })?;
            }
            *out = acc;
        }
        Ok(q)
    }
}

/// Packs 4-bit values two per byte, the earlier value in the low nibble.
pub fn pack_nibbles(values: &[i8]) -> Vec<u8> {
    values
        .chunks(2)
        .map(|pair| {
            let lo = (pair[0] as u8) & 0x0f;
            let hi = pair.get(1).map_or(0, |&v| (v as u8) & 0x0f);
            lo | (hi << 4)
        })
        .collect()
}

/// Inverse of [`pack_nibbles`] for `count` values.
pub fn unpack_nibbles(bytes: &[u8], count: usize) -> Result<Vec<i8>> {
    if bytes.len() != count.div_ceil(2) {
        return Err(Error::WeightFormat(format!(
            "{} packed bytes cannot hold exactly {count} nibbles",
            bytes.len()
        )));
    }
    let sign = |n: u8| ((n << 4) as i8) >> 4;
    Ok(bytes
        .iter()
        .flat_map(|&b| [sign(b & 0x0f), sign(b >> 4)])
        .take(count)
        .collect())
}
