mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use tinyattn::nn::Params;
use tinyattn::{count_adapter_params, AdapterConfig, Tensor, TinyAttnAdapter};

fn random_adapter(seed: u64, heads: usize, head_dim: usize, hidden: usize) -> TinyAttnAdapter {
    let mut r = rng(seed);
    let mut a = TinyAttnAdapter::zeros(hidden, AdapterConfig { heads, head_dim, with_biases: true });
    a.visit_mut("", &mut |_, t| t.values_mut().iter_mut().for_each(|v| *v = r.gen_range(-1.0..1.0)));
    a
}

fn input(seed: u64, b: usize, t: usize, h: usize) -> Tensor {
    Tensor::uniform(&[b, t, h], -2.0, 2.0, &mut rng(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn output_depends_on_other_positions(seed in any::<u64>(), t in 2usize..=6, target in 0usize..6, other in 0usize..6) {
        let (target, other) = (target % t, other % t);
        prop_assume!(target != other);
        let a = random_adapter(seed, 2, 2, 8);
        let z = input(seed ^ 1, 1, t, 8);
        let mut z2 = z.clone();
        z2.values_mut()[other * 8..(other + 1) * 8].iter_mut().for_each(|v| *v += 0.5);
        let y = a.apply(&z, None).unwrap();
        let y2 = a.apply(&z2, None).unwrap();
        let row = |y: &Tensor| y.values()[target * 8..(target + 1) * 8].to_vec();
        prop_assert!(row(&y) != row(&y2));
    }

    #[test]
    fn merging_ignores_head_order(seed in any::<u64>(), heads in 2usize..=5) {
        let a = random_adapter(seed, heads, 3, 8);
        let mut b = a.clone();
        b.heads.reverse();
        let z = input(seed ^ 2, 2, 4, 8);
        let ya = a.merge_heads().apply(&z, None).unwrap();
        let yb = b.merge_heads().apply(&z, None).unwrap();
        prop_assert!(ya.max_abs_diff(&yb) <= 1e-12);
    }

    #[test]
    fn small_noise_keeps_derived_heads_close(seed in any::<u64>(), heads in 2usize..=8) {
        let single = TinyAttnAdapter::init_single_head(32, 1, true, 1.0, &mut rng(seed));
        let multi = single.init_from_single(heads, 1e-3, &mut rng(seed ^ 3)).unwrap();
        let z = input(seed ^ 4, 32, 6, 32);
        let y1 = single.apply(&z, None).unwrap();
        let ym = multi.apply(&z, None).unwrap();
        let diff: Vec<f64> = y1.values().iter().zip(ym.values()).map(|(a, b)| a - b).collect();
        let rel = Tensor::new(y1.shape().to_vec(), diff).unwrap().l2_norm() / y1.l2_norm();
        prop_assert!(rel <= 1e-2, "relative diff {}", rel);
    }

    #[test]
    fn masked_positions_do_not_influence_others(seed in any::<u64>(), keep in 1usize..=5) {
        let a = random_adapter(seed, 2, 2, 8);
        let t = 6;
        let mask: Vec<bool> = (0..t).map(|i| i < keep).collect();
        let z = input(seed ^ 5, 1, t, 8);
        let mut z2 = z.clone();
        z2.values_mut()[keep * 8..].iter_mut().for_each(|v| *v = -*v + 1.0);
        let y = a.apply(&z, Some(&mask)).unwrap();
        let y2 = a.apply(&z2, Some(&mask)).unwrap();
        prop_assert_eq!(&y.values()[..keep * 8], &y2.values()[..keep * 8]);
    }
}

#[test]
fn attention_rows_are_convex_combinations() {
    // a constant value of 1 through a unit output map reads back the total
    // attention weight, which must be exactly one per unmasked position
    let mut a = TinyAttnAdapter::zeros(4, AdapterConfig { heads: 1, head_dim: 1, with_biases: true });
    let mut r = rng(6);
    let head = &mut a.heads[0];
    for w in [&mut head.query, &mut head.key] {
        w.values_mut().iter_mut().for_each(|v| *v = r.gen_range(-3.0..3.0));
    }
    a.heads[0].value_bias.as_mut().unwrap().values_mut()[0] = 1.0;
    a.heads[0].output.values_mut()[0] = 1.0;
    let z = input(7, 2, 5, 4);
    let mask = vec![true, true, true, false, false, true, false, true, true, true];
    let y = a.apply(&z, Some(&mask)).unwrap();
    for (pos, row) in y.values().chunks(4).enumerate() {
        assert!((row[0] - 1.0).abs() <= 1e-12, "position {pos}: {}", row[0]);
    }
}

#[test]
fn count_is_linear_in_heads_and_layers() {
    for (h, d, bias) in [(32, 1, false), (32, 4, true), (1024, 1, false)] {
        let one = count_adapter_params(1, h, 1, d, bias);
        assert_eq!(count_adapter_params(6, h, 4, d, bias), 24 * one);
    }
    assert_eq!(count_adapter_params(2, 32, 1, 1, false), 256);
    assert_eq!(count_adapter_params(24, 1024, 1, 1, false), 98_304);
    let a = random_adapter(8, 3, 2, 16);
    let mut n = 0;
    a.visit("", &mut |_, t| n += t.len());
    assert_eq!(n, count_adapter_params(1, 16, 3, 2, true));
}
