use super::QDenseLayer;
use crate::error::{Error, Result};
use crate::quant::{requantize_shift, QTensor};

/// Int8 fully-connected layer producing pre-activation codes.
///
/// For each output the accumulator starts at the bias code, takes the integer
/// dot product in one pass over the row, and is shifted from the accumulator
/// exponent `e_in + e_w` to the pre-activation exponent with rounding and
/// saturation. `out_dim == 1` goes through exactly the same loop.
pub fn linear_int8(input: &QTensor, layer: &QDenseLayer) -> Result<QTensor> {
    if input.params() != layer.in_params() {
        return Err(Error::Invariant(format!(
            "input exponent {} does not match layer input exponent {}",
            input.params().exponent(),
            layer.in_params().exponent()
        )));
    }
    if input.len() != layer.in_dim() {
        return Err(Error::Invariant(format!(
            "input has {} codes, layer expects {}",
            input.len(),
            layer.in_dim()
        )));
    }
    let out_params = layer.preact_params();
    let shift = layer.bias_exponent() - out_params.exponent();
    let x = input.codes();
    let mut out = Vec::with_capacity(layer.out_dim());
    for (j, &bias) in layer.biases().iter().enumerate() {
        // |dot| <= in_dim * 2^14 < 2^30 for in_dim <= u16::MAX.
        let dot: i32 = layer
            .row(j)
            .iter()
            .zip(x)
            .map(|(&w, &a)| w as i32 * a as i32)
            .sum();
        let acc = bias.saturating_add(dot);
        out.push(requantize_shift(acc, shift.clamp(-31, 31)));
    }
    Ok(QTensor::vector(out, out_params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::quant::{build_lut, QuantParams};

    fn p(e: i32) -> QuantParams {
        QuantParams::new(e).unwrap()
    }

    fn layer(w: Vec<i8>, out: usize, inp: usize, b: Vec<i32>, ein: i32, ew: i32, epre: i32) -> QDenseLayer {
        QDenseLayer::new(
            QTensor::new(w, vec![out, inp], p(ew)).unwrap(),
            b,
            p(ein),
            build_lut(Activation::Tanh, p(epre), p(-7)),
        )
        .unwrap()
    }

    #[test]
    fn zero_input_zero_bias() {
        let l = layer(vec![5; 6], 3, 2, vec![0; 3], -7, -7, -4);
        let x = QTensor::zeros(vec![2], p(-7));
        assert_eq!(linear_int8(&x, &l).unwrap().codes(), &[0, 0, 0]);
    }

    #[test]
    fn worked_example() {
        let l = layer(vec![2, 3], 1, 2, vec![48], -7, -7, -7);
        let x = QTensor::vector(vec![10, 20], p(-7));
        let out = linear_int8(&x, &l).unwrap();
        assert_eq!(out.codes(), &[1]);
        assert_eq!(out.params(), p(-7));
        // Float oracle on dequantized values.
        let real = (10.0 * 2.0 + 20.0 * 3.0) / 16384.0 + 48.0 / 16384.0;
        assert_eq!((real * 128.0f64).round() as i8, 1);
    }

    #[test]
    fn mismatched_input_rejected() {
        let l = layer(vec![2, 3], 1, 2, vec![48], -7, -7, -7);
        let x = QTensor::vector(vec![10, 20], p(-6));
        assert!(matches!(linear_int8(&x, &l), Err(Error::Invariant(_))));
        let x = QTensor::vector(vec![10, 20, 30], p(-7));
        assert!(matches!(linear_int8(&x, &l), Err(Error::Invariant(_))));
    }

    #[test]
    fn saturates_both_ends() {
        let l = layer(vec![127, -128], 2, 1, vec![0, 0], -7, -7, -10);
        let x = QTensor::vector(vec![127], p(-7));
        assert_eq!(linear_int8(&x, &l).unwrap().codes(), &[127, -128]);
    }

    /// Exact oracle: integer accumulator scaled by a power of two in f64
    /// (exact for |acc| < 2^53), rounded half away from zero, clamped.
    fn oracle(x: &[i8], w: &[i8], bias: i32, shift: i32) -> i8 {
        let acc = bias as i64 + x.iter().zip(w).map(|(&a, &b)| a as i64 * b as i64).sum::<i64>();
        let scaled = acc as f64 * 2f64.powi(shift);
        scaled.round().clamp(-128.0, 127.0) as i8
    }

    fn check(x: &[i8], w: &[i8], out_dim: usize, biases: &[i32], (ein, ew, epre): (i32, i32, i32)) {
        let in_dim = x.len();
        let l = layer(w.to_vec(), out_dim, in_dim, biases.to_vec(), ein, ew, epre);
        let got = linear_int8(&QTensor::vector(x.to_vec(), p(ein)), &l).unwrap();
        for j in 0..out_dim {
            let want = oracle(x, &w[j * in_dim..(j + 1) * in_dim], biases[j], ein + ew - epre);
            assert_eq!(got.codes()[j], want, "x={x:?} w={w:?} b={biases:?} e=({ein},{ew},{epre}) j={j}");
        }
    }

    #[test]
    fn exhaustive_small_cases_match_oracle() {
        const CODES: [i8; 5] = [-128, -1, 0, 1, 127];
        let exps = [(-7, -7, -4), (-7, -7, -7), (-7, -8, -14), (-4, -6, -12), (0, 0, 3)];
        for in_dim in 1..=3usize {
            let n = CODES.len().pow(in_dim as u32);
            let vec_at = |mut k: usize| -> Vec<i8> {
                (0..in_dim)
                    .map(|_| {
                        let c = CODES[k % CODES.len()];
                        k /= CODES.len();
                        c
                    })
                    .collect()
            };
            for xi in 0..n {
                let x = vec_at(xi);
                for wi in 0..n {
                    let w = vec_at(wi);
                    for &bias in &[0, 1, -1, 64, -4096] {
                        for &e in &exps {
                            check(&x, &w, 1, &[bias], e);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn random_cases_match_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for case in 0..10_000 {
            // every tenth case is a single-output layer, including the 32 -> 1 shape
            let out_dim = if case % 10 == 0 { 1 } else { rng.random_range(1..=8) };
            let in_dim = if case % 20 == 0 { 32 } else { rng.random_range(1..=40) };
            let x: Vec<i8> = (0..in_dim).map(|_| rng.random()).collect();
            let w: Vec<i8> = (0..in_dim * out_dim).map(|_| rng.random()).collect();
            let b: Vec<i32> = (0..out_dim).map(|_| rng.random_range(-(1 << 20)..(1 << 20))).collect();
            let ein = rng.random_range(-10..=-4);
            let ew = rng.random_range(-10..=-4);
            let epre = rng.random_range(ein + ew..=-2);
            check(&x, &w, out_dim, &b, (ein, ew, epre));
        }
    }

    #[test]
    fn single_output_matches_float_path() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(32);
        for _ in 0..1000 {
            let x: Vec<i8> = (0..32).map(|_| rng.random()).collect();
            let w: Vec<i8> = (0..32).map(|_| rng.random()).collect();
            let b = rng.random_range(-20_000..20_000);
            let l = layer(w.clone(), 1, 32, vec![b], -7, -7, -4);
            let got = linear_int8(&QTensor::vector(x.clone(), p(-7)), &l).unwrap().codes()[0];
            let real: f64 = x.iter().zip(&w).map(|(&a, &c)| a as f64 / 128.0 * c as f64 / 128.0).sum::<f64>()
                + b as f64 / 16384.0;
            let want = (real * 16.0).round().clamp(-128.0, 127.0) as i32;
            assert!((got as i32 - want).abs() <= 1, "{got} vs {want}");
        }
    }
}
