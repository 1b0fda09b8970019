use proptest::prelude::*;
use rerank_tensor::{Tape, Tensor};

fn matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..5, 1usize..7).prop_flat_map(|(r, c)| {
        (Just(r), Just(c), proptest::collection::vec(-30.0f64..30.0, r * c))
    })
}

proptest! {
    #[test]
    fn softmax_slices_sum_to_one((r, c, data) in matrix(), axis in 0usize..2) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![r, c], data).unwrap());
        let y = tape.softmax(x, axis).unwrap();
        let out = tape.value(y);
        prop_assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let (outer, len) = if axis == 1 { (r, c) } else { (c, r) };
        for o in 0..outer {
            let total: f64 = (0..len)
                .map(|i| if axis == 1 { out.get2(o, i) } else { out.get2(i, o) })
                .sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn softmax_shift_invariant((r, c, data) in matrix(), shift in -50.0f64..50.0) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![r, c], data.clone()).unwrap());
        let shifted = tape.constant(Tensor::new(vec![r, c], data.iter().map(|v| v + shift).collect()).unwrap());
        let a = tape.softmax(x, 1).unwrap();
        let b = tape.softmax(shifted, 1).unwrap();
        for (p, q) in tape.value(a).data().iter().zip(tape.value(b).data()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn finite_inputs_give_finite_outputs((r, c, data) in matrix()) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![r, c], data).unwrap().requires_grad(true));
        let g = tape.constant(Tensor::filled(&[c], 1.0));
        let b = tape.constant(Tensor::zeros(&[c]));
        let n = tape.layernorm(x, g, b).unwrap();
        let s = tape.sigmoid(n);
        let p = tape.mean_pool(s, 1).unwrap();
        let m = tape.mean_pool(p, 0).unwrap();
        let l = tape.bce_loss(m, 1.0).unwrap();
        tape.backward(l).unwrap();
        prop_assert!(tape.value(l).is_finite());
        prop_assert!(tape.grad(x).unwrap().iter().all(|v| v.is_finite()));
    }
}
