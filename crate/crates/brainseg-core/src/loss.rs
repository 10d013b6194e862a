//! Training objectives: smoothed Dice, categorical cross-entropy and their
//! combination, plus the class-averaged Dice loss.
//!
//! Each objective exists twice: as a graph builder producing a
//! differentiable scalar node, and as a plain function evaluating the same
//! formula in f64 for reporting. The builders and evaluators agree to
//! floating-point accuracy; tests assert it.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::math::Element;
use crate::tensor::Tensor;

/// Smoothing constant of every Dice ratio.
pub const DICE_EPS: f64 = 1e-6;

/// Probability clamp applied before the cross-entropy log.
pub const CE_CLAMP: f64 = 1e-12;

fn check_pair<E: Element>(op: &'static str, a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    a.dims4(op)?;
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            alloc::format!("shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Global soft Dice node: `(2 sum(t*p) + eps) / (sum(t) + sum(p) + eps)`
/// over every element of every channel.
pub fn dice_coefficient_node<E: Element>(
    g: &mut Graph<E>,
    y_true: Var,
    y_pred: Var,
    eps: f64,
) -> Result<Var> {
    check_pair("dice_coefficient", g.value(y_true), g.value(y_pred))?;
    let inter = g.mul(y_true, y_pred)?;
    let inter_sum = g.sum_all(inter);
    let num = g.affine(inter_sum, 2.0, eps);
    let t_sum = g.sum_all(y_true);
    let p_sum = g.sum_all(y_pred);
    let denom = g.add(t_sum, p_sum)?;
    let denom = g.affine(denom, 1.0, eps);
    g.div(num, denom)
}

/// Categorical cross-entropy node: mean over pixels of
/// `-sum_c t_c ln(p_c + clamp)`.
pub fn cross_entropy_node<E: Element>(g: &mut Graph<E>, y_true: Var, y_pred: Var) -> Result<Var> {
    check_pair("cross_entropy", g.value(y_true), g.value(y_pred))?;
    let (n, _, h, w) = g.value(y_pred).dims4("cross_entropy")?;
    let log_p = g.ln_eps(y_pred, CE_CLAMP);
    let weighted = g.mul(y_true, log_p)?;
    let total = g.sum_all(weighted);
    Ok(g.affine(total, -1.0 / (n * h * w) as f64, 0.0))
}

/// Combined objective node: cross-entropy plus `1 - dice_coefficient`.
pub fn combined_loss_node<E: Element>(g: &mut Graph<E>, y_true: Var, y_pred: Var) -> Result<Var> {
    let ce = cross_entropy_node(g, y_true, y_pred)?;
    let dice = dice_coefficient_node(g, y_true, y_pred, DICE_EPS)?;
    let dice_loss = g.affine(dice, -1.0, 1.0);
    g.add(ce, dice_loss)
}

/// Class-averaged Dice loss node: `1 - mean_c per_class_dice_c`, each class
/// smoothed independently.
pub fn categorical_dice_loss_node<E: Element>(
    g: &mut Graph<E>,
    y_true: Var,
    y_pred: Var,
    eps: f64,
) -> Result<Var> {
    check_pair("categorical_dice_loss", g.value(y_true), g.value(y_pred))?;
    let inter = g.mul(y_true, y_pred)?;
    let inter_c = g.channel_sums(inter)?;
    let t_c = g.channel_sums(y_true)?;
    let p_c = g.channel_sums(y_pred)?;
    let num = g.affine(inter_c, 2.0, eps);
    let denom = g.add(t_c, p_c)?;
    let denom = g.affine(denom, 1.0, eps);
    let per_class = g.div(num, denom)?;
    let mean = g.mean_all(per_class);
    Ok(g.affine(mean, -1.0, 1.0))
}

/// Evaluates the global soft Dice in f64.
pub fn dice_coefficient<E: Element>(
    y_true: &Tensor<E>,
    y_pred: &Tensor<E>,
    eps: f64,
) -> Result<f64> {
    check_pair("dice_coefficient", y_true, y_pred)?;
    let mut inter = 0.0;
    let mut t_sum = 0.0;
    let mut p_sum = 0.0;
    for (&t, &p) in y_true.data().iter().zip(y_pred.data()) {
        let (t, p) = (t.to_f64(), p.to_f64());
        inter += t * p;
        t_sum += t;
        p_sum += p;
    }
    Ok((2.0 * inter + eps) / (t_sum + p_sum + eps))
}

/// Evaluates the categorical cross-entropy in f64.
pub fn cross_entropy<E: Element>(y_true: &Tensor<E>, y_pred: &Tensor<E>) -> Result<f64> {
    check_pair("cross_entropy", y_true, y_pred)?;
    let (n, _, h, w) = y_pred.dims4("cross_entropy")?;
    let mut total = 0.0;
    for (&t, &p) in y_true.data().iter().zip(y_pred.data()) {
        total += t.to_f64() * crate::math::ln(p.to_f64() + CE_CLAMP);
    }
    Ok(-total / (n * h * w) as f64)
}

/// Evaluates cross-entropy plus `1 - dice` in f64.
pub fn combined_loss<E: Element>(y_true: &Tensor<E>, y_pred: &Tensor<E>) -> Result<f64> {
    let ce = cross_entropy(y_true, y_pred)?;
    let dice = dice_coefficient(y_true, y_pred, DICE_EPS)?;
    Ok(ce + (1.0 - dice))
}

/// Evaluates the class-averaged Dice loss in f64.
pub fn categorical_dice_loss<E: Element>(
    y_true: &Tensor<E>,
    y_pred: &Tensor<E>,
    eps: f64,
) -> Result<f64> {
    check_pair("categorical_dice_loss", y_true, y_pred)?;
    let (n, c, h, w) = y_true.dims4("categorical_dice_loss")?;
    let hw = h * w;
    let mut mean = 0.0;
    for ci in 0..c {
        let mut inter = 0.0;
        let mut t_sum = 0.0;
        let mut p_sum = 0.0;
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            for p in 0..hw {
                let t = y_true.data()[base + p].to_f64();
                let q = y_pred.data()[base + p].to_f64();
                inter += t * q;
                t_sum += t;
                p_sum += q;
            }
        }
        mean += (2.0 * inter + eps) / (t_sum + p_sum + eps);
    }
    Ok(1.0 - mean / c as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedRng;
    use alloc::vec;
    use alloc::vec::Vec;

    /// One-hot tensor from labels laid out as [n, h, w].
    fn one_hot(labels: &[u8], n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
        let hw = h * w;
        let mut t = Tensor::zeros(&[n, c, h, w]);
        for ni in 0..n {
            for p in 0..hw {
                let class = labels[ni * hw + p] as usize;
                t.data_mut()[(ni * c + class) * hw + p] = 1.0;
            }
        }
        t
    }

    fn random_probs(shape: &[usize], rng: &mut SeedRng) -> Tensor<f64> {
        let mut logits = Tensor::<f64>::zeros(shape);
        logits.fill_normal(rng, 1.0);
        crate::ops::softmax_channels_forward(&logits).unwrap()
    }

    #[test]
    fn dice_is_one_for_perfect_overlap() {
        let t = one_hot(&[0, 1, 2, 3], 1, 4, 2, 2);
        let d = dice_coefficient(&t, &t, DICE_EPS).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dice_of_disjoint_masks_is_ratio_of_smoothers() {
        // true puts 8 pixels in class 1, prediction the same 8 in class 2:
        // intersection 0, sums 8 + 8, dice = eps / (16 + eps)
        let t = one_hot(&[1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0], 1, 4, 4, 4);
        let p = one_hot(&[2, 2, 2, 2, 2, 2, 2, 2, 0, 0, 0, 0, 0, 0, 0, 0], 1, 4, 4, 4);
        // restrict to the tumor channels so the background channel does not
        // contribute intersection
        let strip = |x: &Tensor<f64>| {
            let mut y = x.clone();
            for p in 0..16 {
                y.data_mut()[p] = 0.0;
            }
            y
        };
        let d = dice_coefficient(&strip(&t), &strip(&p), 1e-6).unwrap();
        let expected = 1e-6 / (16.0 + 1e-6);
        assert!((d - expected).abs() < 1e-15, "d {d}");
        assert!((d - 6.25e-8).abs() < 1e-12);
    }

    #[test]
    fn dice_of_half_overlap_is_half() {
        // |T| = |P| = 4 with intersection 2 -> 2*2 / (4+4) = 0.5
        let t = one_hot(&[1, 1, 1, 1, 0, 0, 0, 0], 1, 2, 2, 4);
        let p = one_hot(&[1, 1, 0, 0, 1, 1, 0, 0], 1, 2, 2, 4);
        let strip = |x: &Tensor<f64>| {
            let mut y = x.clone();
            for p in 0..8 {
                y.data_mut()[p] = 0.0;
            }
            y
        };
        let d = dice_coefficient(&strip(&t), &strip(&p), 1e-12).unwrap();
        assert!((d - 0.5).abs() < 1e-9);
    }

    #[test]
    fn dice_is_symmetric_for_hard_masks() {
        let mut rng = SeedRng::new(21);
        let labels_a: Vec<u8> = (0..32).map(|_| rng.below(4) as u8).collect();
        let labels_b: Vec<u8> = (0..32).map(|_| rng.below(4) as u8).collect();
        let a = one_hot(&labels_a, 2, 4, 4, 4);
        let b = one_hot(&labels_b, 2, 4, 4, 4);
        let ab = dice_coefficient(&a, &b, DICE_EPS).unwrap();
        let ba = dice_coefficient(&b, &a, DICE_EPS).unwrap();
        assert_eq!(ab, ba);
        assert!(ab > 0.0 && ab <= 1.0);
    }

    #[test]
    fn combined_loss_vanishes_on_perfect_prediction() {
        let t = one_hot(&[0, 1, 2, 3], 1, 4, 2, 2);
        let loss = combined_loss(&t, &t).unwrap();
        assert!(loss.abs() <= 1e-5, "loss {loss}");
    }

    #[test]
    fn uniform_prediction_gives_ln4_cross_entropy() {
        let t = one_hot(&[0, 1, 2, 3], 1, 4, 2, 2);
        let p = Tensor::full(&[1, 4, 2, 2], 0.25);
        let ce = cross_entropy(&t, &p).unwrap();
        assert!((ce - 4.0f64.ln()).abs() < 1e-9, "ce {ce}");

        let loss = combined_loss(&t, &p).unwrap();
        let dice = dice_coefficient(&t, &p, DICE_EPS).unwrap();
        assert!((loss - (ce + 1.0 - dice)).abs() < 1e-12);
    }

    #[test]
    fn combined_loss_is_nonnegative_on_random_probs() {
        let mut rng = SeedRng::new(22);
        for _ in 0..20 {
            let labels: Vec<u8> = (0..16).map(|_| rng.below(4) as u8).collect();
            let t = one_hot(&labels, 1, 4, 4, 4);
            let p = random_probs(&[1, 4, 4, 4], &mut rng);
            assert!(combined_loss(&t, &p).unwrap() >= 0.0);
        }
    }

    #[test]
    fn categorical_dice_loss_handles_perfect_and_empty_classes() {
        let t = one_hot(&[0, 0, 0, 0], 1, 4, 2, 2);
        let loss = categorical_dice_loss(&t, &t, DICE_EPS).unwrap();
        // class 0 dice = 1 exactly; empty classes give eps/eps = 1
        assert!(loss.abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn categorical_dice_loss_stays_in_unit_interval() {
        let mut rng = SeedRng::new(23);
        for _ in 0..20 {
            let labels: Vec<u8> = (0..16).map(|_| rng.below(4) as u8).collect();
            let t = one_hot(&labels, 1, 4, 4, 4);
            let p = random_probs(&[1, 4, 4, 4], &mut rng);
            let loss = categorical_dice_loss(&t, &p, DICE_EPS).unwrap();
            assert!((0.0..=1.0).contains(&loss), "loss {loss}");
        }
    }

    #[test]
    fn graph_builders_agree_with_value_functions() {
        let mut rng = SeedRng::new(24);
        let labels: Vec<u8> = (0..16).map(|_| rng.below(4) as u8).collect();
        let t = one_hot(&labels, 1, 4, 4, 4);
        let p = random_probs(&[1, 4, 4, 4], &mut rng);

        let mut g = Graph::new();
        let tv = g.input(t.clone());
        let pv = g.input(p.clone());
        let dice = dice_coefficient_node(&mut g, tv, pv, DICE_EPS).unwrap();
        let ce = cross_entropy_node(&mut g, tv, pv).unwrap();
        let combined = combined_loss_node(&mut g, tv, pv).unwrap();
        let cat = categorical_dice_loss_node(&mut g, tv, pv, DICE_EPS).unwrap();

        assert!((g.scalar(dice).unwrap() - dice_coefficient(&t, &p, DICE_EPS).unwrap()).abs() < 1e-12);
        assert!((g.scalar(ce).unwrap() - cross_entropy(&t, &p).unwrap()).abs() < 1e-12);
        assert!((g.scalar(combined).unwrap() - combined_loss(&t, &p).unwrap()).abs() < 1e-12);
        assert!(
            (g.scalar(cat).unwrap() - categorical_dice_loss(&t, &p, DICE_EPS).unwrap()).abs()
                < 1e-12
        );
    }

    #[test]
    fn loss_rejects_shape_mismatch() {
        let t = Tensor::<f64>::zeros(&[1, 4, 2, 2]);
        let p = Tensor::<f64>::zeros(&[1, 4, 4, 4]);
        assert!(dice_coefficient(&t, &p, DICE_EPS).is_err());
        assert!(combined_loss(&t, &p).is_err());
        assert!(categorical_dice_loss(&t, &p, DICE_EPS).is_err());
    }

    #[test]
    fn dice_is_monotone_in_intersection() {
        // fixed mask sizes, growing overlap -> non-decreasing dice
        let mut previous = 0.0;
        for overlap in 0..=4 {
            let t = one_hot(&[1, 1, 1, 1, 0, 0, 0, 0], 1, 2, 2, 4);
            let mut labels = vec![0u8; 8];
            for i in 0..4 {
                labels[if i < overlap { i } else { i + 4 }] = 1;
            }
            let p = one_hot(&labels, 1, 2, 2, 4);
            let d = dice_coefficient(&t, &p, DICE_EPS).unwrap();
            assert!(d >= previous);
            previous = d;
        }
    }
}
