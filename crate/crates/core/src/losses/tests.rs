use super::*;
use crate::numkit::gradcheck::{grad_check, GradCheckOptions};
use crate::numkit::{Grads, ParamStore, Tensor};
use proptest::prelude::*;
use std::f64::consts::LN_2;

fn dist(p: &[f64]) -> AnswerDistribution {
    AnswerDistribution::new(p.to_vec()).unwrap()
}

/// log(1 + e^-10), evaluated at 40 significant digits.
const LOG1P_EXP_MINUS_10: f64 = 4.539_889_921_686_465e-5;

#[test]
fn answer_loss_cases() {
    let perfect = [dist(&[1.0, 0.0, 0.0]), dist(&[0.0, 0.0, 1.0])];
    assert_eq!(loss_qa(&perfect, &[0, 2]).unwrap(), 0.0);
    let uniform = [AnswerDistribution::uniform(4), AnswerDistribution::uniform(4)];
    assert!((loss_qa(&uniform, &[1, 3]).unwrap() - 4f64.ln()).abs() < 1e-15);
    // -ln 0.7 and -ln 0.5, averaged by hand.
    let mixed = [dist(&[0.7, 0.2, 0.1]), dist(&[0.25, 0.25, 0.5])];
    assert!((loss_qa(&mixed, &[0, 2]).unwrap() - 0.524_911_062_249_338_9).abs() < 1e-15);
    assert_eq!(loss_pos(&mixed, &[0, 2]).unwrap(), loss_qa(&mixed, &[0, 2]).unwrap());
    assert_eq!(loss_neg(&mixed, &[0, 2]).unwrap(), loss_qa(&mixed, &[0, 2]).unwrap());
}

#[test]
fn answer_loss_errors() {
    assert!(matches!(loss_qa(&[], &[]), Err(Error::Input(_))));
    assert!(matches!(loss_qa(&[AnswerDistribution::uniform(3)], &[0, 1]), Err(Error::Dimension(_))));
    assert!(matches!(loss_qa(&[AnswerDistribution::uniform(3)], &[3]), Err(Error::Dimension(_))));
}

#[test]
fn equal_similarities_give_ln2() {
    let p = dist(&[0.5, 0.3, 0.2]);
    for tau in [0.01, 0.1, 1.0, 7.0] {
        assert!((loss_con(&p, &p, &p, tau).unwrap() - LN_2).abs() < 1e-15);
        let a = dist(&[1.0, 0.0, 0.0]);
        let b = dist(&[0.0, 1.0, 0.0]);
        let c = dist(&[0.0, 0.0, 1.0]);
        assert!((loss_con(&a, &b, &c, tau).unwrap() - LN_2).abs() < 1e-15);
    }
}

#[test]
fn one_hot_contrast_matches_closed_form() {
    let got = loss_con(&dist(&[1.0, 0.0]), &dist(&[1.0, 0.0]), &dist(&[0.0, 1.0]), 0.1).unwrap();
    assert!((got - LOG1P_EXP_MINUS_10).abs() < 1e-9);
    assert!((got - LOG1P_EXP_MINUS_10).abs() / LOG1P_EXP_MINUS_10 < 1e-12);
}

#[test]
fn contrast_decreases_as_positive_similarity_grows() {
    let lo = con_from_similarities(0.2, 0.5, 0.1).unwrap();
    let hi = con_from_similarities(0.8, 0.5, 0.1).unwrap();
    assert!(hi < lo);
}

#[test]
fn contrast_is_stable_at_extreme_exponents() {
    let l = con_from_similarities(-1.0, 1.0, 0.001).unwrap();
    assert!((l - 2000.0).abs() < 1e-9);
    let l = con_from_similarities(1.0, -1.0, 0.001).unwrap();
    assert!((0.0..1e-300).contains(&l));
    assert!(matches!(con_from_similarities(0.0, 0.0, 0.0), Err(Error::Config(_))));
}

#[test]
fn weighted_total() {
    let w = LossWeights::default();
    let b = total_loss(1.0, 1.0, 1.0, 1.0, &w);
    assert!((b.total - 2.81).abs() < 1e-12);
    let b = total_loss(0.7, 3.0, 2.0, 5.0, &LossWeights::answer_only());
    assert_eq!(b.total, 0.7);
    let b = total_loss(0.3, 1.7, 0.9, 0.6, &w);
    assert!((b.recompute(&w) - b.total).abs() < 1e-12);
}

#[test]
fn positive_term_scales_linearly_with_its_weight() {
    let (qa, pos, neg, con) = (0.9, 1.3, 2.2, 0.4);
    let lo = LossWeights { alpha: 0.3, ..LossWeights::default() };
    let hi = LossWeights { alpha: 0.8, ..LossWeights::default() };
    let diff = total_loss(qa, pos, neg, con, &hi).total - total_loss(qa, pos, neg, con, &lo).total;
    assert!((diff - 0.5 * pos).abs() < 1e-12);
    let b1 = LossWeights { beta: 1.0, ..LossWeights::default() };
    let b2 = LossWeights { beta: 3.0, ..LossWeights::default() };
    let diff = total_loss(qa, pos, neg, con, &b2).total - total_loss(qa, pos, neg, con, &b1).total;
    assert!((diff - 2.0 * neg).abs() < 1e-12);
}

#[test]
fn weight_validation() {
    assert!(LossWeights::default().validate().is_ok());
    assert!(LossWeights { tau: 0.0, ..LossWeights::default() }.validate().is_err());
    assert!(LossWeights { beta: -1.0, ..LossWeights::default() }.validate().is_err());
}

#[test]
fn contrast_gradient_passes_grad_check() {
    let mut ps = ParamStore::new();
    ps.insert("p", Tensor::vector(vec![0.5, 0.2, 0.3]).unwrap()).unwrap();
    ps.insert("a", Tensor::vector(vec![0.1, 0.6, 0.3]).unwrap()).unwrap();
    ps.insert("b", Tensor::vector(vec![0.3, 0.3, 0.4]).unwrap()).unwrap();
    let value = |p: &ParamStore| {
        let s_pos = cosine_similarity(p.get("p").data(), p.get("a").data())?;
        let s_neg = cosine_similarity(p.get("p").data(), p.get("b").data())?;
        con_from_similarities(s_pos, s_neg, 0.1)
    };
    let grad = |p: &ParamStore| {
        let c = loss_con_grad(p.get("p").data(), p.get("a").data(), p.get("b").data(), 0.1)?;
        let mut g = Grads::zeros_like(p);
        *g.get_mut("p") = Tensor::vector(c.d_anchor)?;
        *g.get_mut("a") = Tensor::vector(c.d_pos)?;
        *g.get_mut("b") = Tensor::vector(c.d_neg)?;
        Ok((c.loss, g))
    };
    let r = grad_check(&(value, grad), &ps, &GradCheckOptions::default()).unwrap();
    assert!(r.max_rel_error() <= 1e-6, "{r:#?}");
}

#[test]
fn batch_objective_matches_term_functions() {
    let orig = [dist(&[0.6, 0.3, 0.1]), dist(&[0.2, 0.5, 0.3]), dist(&[0.1, 0.1, 0.8])];
    let labels = [0, 1, 2];
    let usable = [true, false, true];
    let pos = [dist(&[0.5, 0.4, 0.1]), dist(&[0.2, 0.2, 0.6])];
    let neg = [dist(&[0.1, 0.8, 0.1]), dist(&[0.3, 0.4, 0.3])];
    let w = LossWeights::default();
    let (b, g) = batch_objective(
        &BatchPredictions {
            orig: &orig,
            pos: &pos,
            neg: &neg,
            labels: &labels,
            usable: &usable,
        },
        &w,
    )
    .unwrap();
    assert!((b.l_qa - loss_qa(&orig, &labels).unwrap()).abs() < 1e-15);
    assert!((b.l_pos - loss_pos(&pos, &[0, 2]).unwrap()).abs() < 1e-15);
    assert!((b.l_neg - loss_neg(&neg, &[0, 2]).unwrap()).abs() < 1e-15);
    let con = (loss_con(&orig[0], &pos[0], &neg[0], 0.1).unwrap() + loss_con(&orig[2], &pos[1], &neg[1], 0.1).unwrap()) / 2.0;
    assert!((b.l_con - con).abs() < 1e-15);
    assert!((b.recompute(&w) - b.total).abs() < 1e-12);
    assert_eq!((g.d_orig.len(), g.d_pos.len(), g.d_neg.len()), (3, 2, 2));
    // The unusable sample only feels the answer loss.
    assert_eq!(g.d_orig[1], cross_entropy_grad(orig[1].probs(), 1).iter().map(|x| x / 3.0).collect::<Vec<_>>());
}

#[test]
fn batch_without_usable_samples_has_zero_counterfactual_terms() {
    let orig = [dist(&[0.6, 0.4])];
    let (b, g) = batch_objective(
        &BatchPredictions {
            orig: &orig,
            pos: &[],
            neg: &[],
            labels: &[1],
            usable: &[false],
        },
        &LossWeights::default(),
    )
    .unwrap();
    assert_eq!((b.l_pos, b.l_neg, b.l_con), (0.0, 0.0, 0.0));
    assert_eq!(b.total, b.l_qa);
    assert!(g.d_pos.is_empty());
    let err = batch_objective(
        &BatchPredictions {
            orig: &orig,
            pos: &[],
            neg: &[],
            labels: &[1],
            usable: &[true],
        },
        &LossWeights::default(),
    );
    assert!(matches!(err, Err(Error::Dimension(_))));
}

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn swapped_roles_sum_at_least_2ln2(p in simplex(4), a in simplex(4), b in simplex(4), tau in 0.05f64..2.0) {
        let (p, a, b) = (dist(&p), dist(&a), dist(&b));
        let l1 = loss_con(&p, &a, &b, tau).unwrap();
        let l2 = loss_con(&p, &b, &a, tau).unwrap();
        prop_assert!(l1 > 0.0 && l2 > 0.0);
        prop_assert!(l1 + l2 >= 2.0 * LN_2 - 1e-12);
        let sa = cosine_similarity(p.probs(), a.probs()).unwrap();
        let sb = cosine_similarity(p.probs(), b.probs()).unwrap();
        if (sa - sb).abs() > 1e-6 {
            prop_assert!(l1 + l2 > 2.0 * LN_2);
        }
    }

    #[test]
    fn contrast_is_scale_invariant(p in simplex(3), a in simplex(3), b in simplex(3), c in 0.1f64..10.0) {
        let scale = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
        let base = loss_con_grad(p.as_slice(), &a, &b, 0.1).unwrap().loss;
        let scaled = loss_con_grad(&scale(&p), &scale(&a), &scale(&b), 0.1).unwrap().loss;
        prop_assert!((base - scaled).abs() < 1e-9);
    }
}
