//! Seeded parameter initialization.
//!
//! Every parameter draws from its own xoshiro256** stream. The stream is
//! keyed by the run seed and a stream id (usually a hash of the parameter
//! name), mixed through splitmix64, so adding a parameter never shifts the
//! values of the others.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use super::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
    XavierUniform,
    Zeros,
    /// Layer-norm gains.
    Ones,
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the name bytes; the stream id for a named parameter.
pub fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> Xoshiro256StarStar {
    Xoshiro256StarStar::seed_from_u64(splitmix64(seed ^ splitmix64(stream)))
}

/// `(fan_in, fan_out)` under the `x · W` convention: rows are inputs.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [rows, cols] => (*rows, *cols),
        [rows, rest @ ..] => (*rows, rest.iter().product()),
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn seeded_init<T: Real>(shape: &[usize], scheme: InitScheme, seed: u64, stream: u64) -> Tensor<T> {
    match scheme {
        InitScheme::Zeros => Tensor::zeros(shape),
        InitScheme::Ones => Tensor::full(shape, T::one()),
        InitScheme::XavierUniform => {
            let (fan_in, fan_out) = fans(shape);
            let bound = xavier_bound(fan_in, fan_out);
            let mut rng = stream_rng(seed, stream);
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
            Tensor::new(shape.to_vec(), data).expect("product of shape")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_is_bit_identical() {
        let a: Tensor<f32> = seeded_init(&[4, 5], InitScheme::XavierUniform, 7, 3);
        let b: Tensor<f32> = seeded_init(&[4, 5], InitScheme::XavierUniform, 7, 3);
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn distinct_streams_differ() {
        let a: Tensor<f32> = seeded_init(&[4, 5], InitScheme::XavierUniform, 7, 3);
        let b: Tensor<f32> = seeded_init(&[4, 5], InitScheme::XavierUniform, 7, 4);
        assert!(a.data().iter().zip(b.data()).any(|(x, y)| x != y));
        let c: Tensor<f32> = seeded_init(&[4, 5], InitScheme::XavierUniform, 8, 3);
        assert!(a.data().iter().zip(c.data()).any(|(x, y)| x != y));
    }

    #[test]
    fn xavier_bound_formula() {
        assert_eq!(xavier_bound(3, 3), 1.0);
        let t: Tensor<f64> = seeded_init(&[3, 3], InitScheme::XavierUniform, 1, 1);
        assert!(t.data().iter().all(|v| v.abs() < 1.0));
        let big: Tensor<f64> = seeded_init(&[40, 60], InitScheme::XavierUniform, 1, 2);
        let b = xavier_bound(40, 60);
        assert!(big.data().iter().all(|v| v.abs() < b));
        // a 2400-sample maximum lands near the bound
        let max = big.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max > 0.95 * b);
    }

    #[test]
    fn zeros_and_ones() {
        let z: Tensor<f32> = seeded_init(&[2, 3], InitScheme::Zeros, 1, 1);
        assert!(z.data().iter().all(|&v| v == 0.0));
        let o: Tensor<f32> = seeded_init(&[3], InitScheme::Ones, 1, 1);
        assert!(o.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn splitmix_reference_value() {
        // first output of the reference splitmix64 generator seeded with 0
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
    }
}
