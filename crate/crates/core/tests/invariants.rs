use std::sync::Arc;

use micseg_core::{Tape, Tensor};
use proptest::prelude::*;

fn finite_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, n)
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(data in finite_vec(12)) {
        let mut tape = Tape::new();
        let x = Tensor::from_vec(&[3, 4], data).unwrap();
        let y = tape.softmax(&x).unwrap();
        for r in 0..3 {
            let s: f64 = y.data()[r * 4..(r + 1) * 4].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_is_shift_invariant(data in finite_vec(8), shift in -20.0f64..20.0) {
        let mut tape = Tape::new();
        let x = Tensor::from_vec(&[2, 4], data.clone()).unwrap();
        let xs = Tensor::from_vec(&[2, 4], data.iter().map(|v| v + shift).collect()).unwrap();
        let a = tape.softmax(&x).unwrap();
        let b = tape.softmax(&xs).unwrap();
        for (u, v) in a.data().iter().zip(b.data().iter()) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn matmul_identity_is_bitwise(data in finite_vec(16)) {
        let mut tape = Tape::new();
        let x = Tensor::from_vec(&[4, 4], data).unwrap();
        let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        let y = tape.matmul(&x, &eye).unwrap();
        prop_assert!(y.bitwise_eq(&x));
    }

    #[test]
    fn gather_perm_roundtrip_is_bitwise(data in finite_vec(12), seed in 0u64..1000) {
        let mut order: Vec<usize> = (0..6).collect();
        // Cheap deterministic shuffle keyed by the seed.
        for i in (1..6).rev() {
            let j = (micseg_core::seeds::splitmix64(seed.wrapping_add(i as u64)) % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }
        let mut inverse = vec![0usize; 6];
        for (i, &p) in order.iter().enumerate() {
            inverse[p] = i;
        }
        let mut tape = Tape::new();
        let x = Tensor::from_vec(&[6, 2], data).unwrap();
        let y = tape.gather_rows(&x, Arc::new(order)).unwrap();
        let z = tape.gather_rows(&y, Arc::new(inverse)).unwrap();
        prop_assert!(z.bitwise_eq(&x));
    }

    #[test]
    fn add_then_sub_recovers_finite(data in finite_vec(6), other in finite_vec(6)) {
        let mut tape = Tape::new();
        let a = Tensor::from_vec(&[6], data).unwrap();
        let b = Tensor::from_vec(&[6], other).unwrap();
        let s = tape.add(&a, &b).unwrap();
        let d = tape.sub(&s, &b).unwrap();
        for (u, v) in d.data().iter().zip(a.data().iter()) {
            prop_assert!((u - v).abs() <= 1e-9 * v.abs().max(1.0));
        }
    }
}
