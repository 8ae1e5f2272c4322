//! Dense `f64` numerics with hand-written gradients, Adam, a finite-difference
//! checker and the on-disk tensor format shared by checkpoints and datasets.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{TensorFile, FORMAT_VERSION};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, Objective};
pub use ops::{attention, cosine_similarity, cross_entropy, matmul, softmax};
pub use params::{Grads, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod properties {
    use super::ops::*;
    use super::*;
    use proptest::prelude::*;

    fn finite_vec(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, n)
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(x in finite_vec(1..20), shift in -100.0f64..100.0) {
            let t = Tensor::vector(x.clone()).unwrap();
            let p = softmax(&t, 0).unwrap();
            let s: f64 = p.data().iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(p.data().iter().all(|&v| v >= 0.0));
            let shifted = Tensor::vector(x.iter().map(|v| v + shift).collect()).unwrap();
            let q = softmax(&shifted, 0).unwrap();
            prop_assert!(p.max_abs_diff(&q) < 1e-12);
        }

        #[test]
        fn cross_entropy_nonnegative(x in finite_vec(2..10), label in 0usize..10) {
            let label = label % x.len();
            let p = softmax(&Tensor::vector(x).unwrap(), 0).unwrap();
            let mut gt = vec![0.0; p.len()];
            gt[label] = 1.0;
            prop_assert!(cross_entropy(p.data(), &gt).unwrap() >= 0.0);
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            p in finite_vec(3..4), q in finite_vec(3..4),
            a in 0.01f64..100.0, b in 0.01f64..100.0,
        ) {
            prop_assume!(p.iter().any(|v| v.abs() > 1e-3) && q.iter().any(|v| v.abs() > 1e-3));
            let s = cosine_similarity(&p, &q).unwrap();
            prop_assert!((s - cosine_similarity(&q, &p).unwrap()).abs() < 1e-15);
            let ps: Vec<f64> = p.iter().map(|v| v * a).collect();
            let qs: Vec<f64> = q.iter().map(|v| v * b).collect();
            prop_assert!((s - cosine_similarity(&ps, &qs).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s));
        }

        #[test]
        fn attention_rows_are_convex_combinations(
            q in finite_vec(6..7), k in finite_vec(9..10), v in finite_vec(9..10),
        ) {
            let q = Tensor::new(vec![2, 3], q).unwrap();
            let k = Tensor::new(vec![3, 3], k).unwrap();
            let v = Tensor::new(vec![3, 3], v).unwrap();
            let out = attention(&q, &k, &v).unwrap();
            for c in 0..3 {
                let lo = (0..3).map(|r| v.get2(r, c)).fold(f64::INFINITY, f64::min);
                let hi = (0..3).map(|r| v.get2(r, c)).fold(f64::NEG_INFINITY, f64::max);
                for r in 0..2 {
                    let x = out.get2(r, c);
                    prop_assert!(x >= lo - 1e-9 && x <= hi + 1e-9);
                }
            }
        }
    }

    /// Every differentiable kernel against central differences.
    #[test]
    fn kernel_gradients_pass_grad_check() {
        let mut ps = ParamStore::new();
        let vals = |n: usize, s: f64| (0..n).map(|i| ((i as f64 + 1.0) * s).sin()).collect::<Vec<_>>();
        ps.insert("q", Tensor::new(vec![2, 3], vals(6, 0.7)).unwrap()).unwrap();
        ps.insert("k", Tensor::new(vec![4, 3], vals(12, 1.3)).unwrap()).unwrap();
        ps.insert("v", Tensor::new(vec![4, 3], vals(12, 0.4)).unwrap()).unwrap();
        ps.insert("w", Tensor::new(vec![3, 5], vals(15, 2.1)).unwrap()).unwrap();
        ps.insert("r", Tensor::vector(vals(5, 0.9)).unwrap()).unwrap();
        // loss = CE(softmax(mean_rows(attn(q,k,v) w)), 2) - cos(softmax(..), softmax(r))
        let forward = |p: &ParamStore| -> Result<(f64, Grads), crate::Error> {
            let (a, wts) = attention_with_weights(p.get("q"), p.get("k"), p.get("v"))?;
            let h = matmul(&a, p.get("w"))?;
            let mut z = h.mean_rows();
            softmax_in_place(&mut z);
            let mut r = p.get("r").data().to_vec();
            softmax_in_place(&mut r);
            let (s, ds_dz, ds_dr) = cosine_similarity_grad(&z, &r)?;
            let loss = cross_entropy_index(&z, 2) - s;
            let dz: Vec<f64> = cross_entropy_grad(&z, 2)
                .iter()
                .zip(&ds_dz)
                .map(|(a, b)| a - b)
                .collect();
            let dlogits = softmax_backward(&z, &dz);
            let dr: Vec<f64> = ds_dr.iter().map(|v| -v).collect();
            let dr_logits = softmax_backward(&r, &dr);
            let rows = h.rows() as f64;
            let dh = Tensor::from_rows(&vec![dlogits.iter().map(|v| v / rows).collect(); h.rows()])?;
            let (da, dw) = matmul_backward(&a, p.get("w"), &dh);
            let (dq, dk, dv) = attention_backward(p.get("q"), p.get("k"), p.get("v"), &wts, &da);
            let mut g = Grads::zeros_like(p);
            *g.get_mut("q") = dq;
            *g.get_mut("k") = dk;
            *g.get_mut("v") = dv;
            *g.get_mut("w") = dw;
            *g.get_mut("r") = Tensor::vector(dr_logits)?;
            Ok((loss, g))
        };
        let value = |p: &ParamStore| forward(p).map(|(l, _)| l);
        let report = grad_check(&(value, forward), &ps, &GradCheckOptions::default()).unwrap();
        assert!(report.max_rel_error() <= 1e-4, "{:?}", report);
    }
}
