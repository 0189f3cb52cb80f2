mod common;

use common::scenarios::*;
use common::*;
use robens::attacks::{pgd_attack, AttackConfig};
use robens::autodiff::cross_entropy;
use robens::ensemble::{uniform_ensemble, validate_simplex, Combine, EnsemblePredictor};
use robens::predictor::{loss_and_input_grad, Predictor};

#[test]
fn ensemble_loss_bounded_by_member_average() {
    let j = jensen_bound(1000);
    assert_eq!(j.violations, 0, "worst gap {:e}", j.worst_gap);
}

/// Holds at the perturbation PGD finds against the ensemble itself, which
/// is the case robustness claims rest on.
#[test]
fn bound_holds_at_ensemble_attack() {
    for s in 0..30u64 {
        let members: Vec<_> = (0..4).map(|j| small_model(100 * s + j, 5, vec![8], 3)).collect();
        let ens = uniform_ensemble(members.clone()).unwrap();
        let x = uniform_vec(&mut rng(s), 5, 0.0, 1.0);
        let y = (s % 3) as usize;
        let d = pgd_attack(&ens, &x, y, &AttackConfig::evaluation(0.5, s)).unwrap();
        let xa: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
        let lhs = cross_entropy(&ens.logits(&xa).unwrap(), y).unwrap();
        let rhs: f64 = members.iter().map(|m| cross_entropy(&m.logits(&xa).unwrap(), y).unwrap()).sum::<f64>() / 4.0;
        assert!(lhs <= rhs + 1e-12);
    }
}

#[test]
fn probability_rule_differs_from_logit_rule() {
    let members: Vec<_> = (0..2).map(|j| small_model(j, 3, vec![4], 3)).collect();
    let w = validate_simplex(&[0.5, 0.5]).unwrap();
    let logit = EnsemblePredictor::new(members.clone(), w.clone()).unwrap();
    let prob = EnsemblePredictor::new(members, w).unwrap().with_combine(Combine::Probabilities);
    let x = [0.2, 0.4, 0.6];
    assert_ne!(logit.logits(&x).unwrap(), prob.logits(&x).unwrap());
}

#[test]
fn input_gradient_is_weighted_member_gradient() {
    let members: Vec<_> = (0..3).map(|j| small_model(j + 7, 4, vec![5], 2)).collect();
    let w = [0.2, 0.3, 0.5];
    let ens = EnsemblePredictor::new(members.clone(), validate_simplex(&w).unwrap()).unwrap();
    let x = [0.1, 0.9, 0.4, 0.6];
    let (_, g) = loss_and_input_grad(&ens, &x, 1).unwrap();
    // Central differences of the ensemble loss.
    for i in 0..4 {
        let mut xp = x;
        xp[i] += FD_STEP;
        let mut xm = x;
        xm[i] -= FD_STEP;
        let lp = cross_entropy(&ens.logits(&xp).unwrap(), 1).unwrap();
        let lm = cross_entropy(&ens.logits(&xm).unwrap(), 1).unwrap();
        let fd = (lp - lm) / (2.0 * FD_STEP);
        assert!((g[i] - fd).abs() <= FD_TOL * fd.abs().max(1e-3), "{} vs {fd}", g[i]);
    }
}

#[test]
fn invalid_weights_not_renormalized() {
    assert!(validate_simplex(&[0.6, 0.6]).is_err());
    assert!(validate_simplex(&[1.0 + 1e-8, 0.0]).is_err());
    assert!(validate_simplex(&[1.0 + 1e-10, 0.0]).is_ok());
}
