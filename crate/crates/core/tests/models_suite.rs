use convexlab::gradcheck::{check_one, gradcheck_families, DETACHED_TOL};
use convexlab::models::{sequence_at, space_size};
use convexlab::{ModelClass, ModelConfig, NeuralModel, SequenceModel, Vocab};
use proptest::prelude::*;

fn config(v: usize, t: usize, c: usize) -> ModelConfig {
    ModelConfig::new(Vocab::with_size(v).unwrap(), t, c)
}

fn scaled(class: ModelClass, cfg: ModelConfig, seed: u64, scale: f64) -> NeuralModel {
    let mut m = NeuralModel::new(class, cfg, seed).unwrap();
    for t in m.params_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x *= scale);
    }
    m
}

#[test]
fn exact_and_detached_gradients_agree_on_random_models() {
    let families = gradcheck_families();
    for seed in 0..50u64 {
        let family = &families[seed as usize % families.len()];
        for class in [ModelClass::Autoregressive, ModelClass::NonAutoregressive] {
            let e = check_one(family, class, 1000 + seed, 1e-4, 1e-4).unwrap();
            assert!(e.detached_max_abs_diff <= DETACHED_TOL, "{e:?}");
        }
    }
}

#[test]
fn nar_distribution_is_product_of_marginals() {
    let cfg = config(3, 3, 2);
    let m = scaled(ModelClass::NonAutoregressive, cfg, 7, 10.0);
    for c in 0..2 {
        let heads: Vec<Vec<f64>> = (0..3).map(|t| m.next_token_probs(c, &vec![0; t]).unwrap()).collect();
        // prefix contents must not matter
        assert_eq!(m.next_token_probs(c, &[2, 1]).unwrap(), heads[2]);
        let dist = m.enumerate_distribution(c).unwrap();
        for (i, p) in dist.probs().iter().enumerate() {
            let seq = sequence_at(i, 3, 3);
            let prod: f64 = seq.iter().enumerate().map(|(t, &x)| heads[t][x]).product();
            assert!((p - prod).abs() < 1e-12);
        }
    }
}

#[test]
fn ar_prefix_changes_the_next_token() {
    let m = scaled(ModelClass::Autoregressive, config(3, 2, 1), 3, 10.0);
    let a = m.next_token_probs(0, &[0]).unwrap();
    let b = m.next_token_probs(0, &[2]).unwrap();
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn enumeration_sums_to_one(
        seed in 0u64..1000,
        v in 2usize..=4,
        t in 1usize..=4,
        nar in any::<bool>(),
        scale in 0.5f64..20.0,
    ) {
        let class = if nar { ModelClass::NonAutoregressive } else { ModelClass::Autoregressive };
        let m = scaled(class, config(v, t, 2), seed, scale);
        for c in 0..2 {
            let d = m.enumerate_distribution(c).unwrap();
            prop_assert_eq!(d.probs().len(), space_size(v, t).unwrap());
            let s: f64 = d.probs().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            // enumeration agrees with direct scoring
            let i = (seed as usize) % d.probs().len();
            let lp = m.sequence_logprob(c, &sequence_at(i, v, t)).unwrap().total();
            prop_assert!((lp.exp() - d.probs()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn every_parameter_receives_gradient(seed in 0u64..500, nar in any::<bool>()) {
        let class = if nar { ModelClass::NonAutoregressive } else { ModelClass::Autoregressive };
        let e = check_one(&convexlab::LossFamily::Log, class, seed, 1e-4, 1e-4).unwrap();
        prop_assert!(e.passed, "{:?}", e);
    }
}
