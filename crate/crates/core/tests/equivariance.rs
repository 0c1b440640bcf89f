use cyclicnet::cyclic::PoolKind;
use cyclicnet::nn::{self, count_params, InputSpec, LayerSpec, LossKind, ModelSpec, Network, Padding};
use cyclicnet::oracle::{check_filter_rotation_equivalence, check_model_equivariance, naive_conv2d, random_tensor, EquivarianceMode};
use cyclicnet::{DType, Dims, GroupKind, Scalar};

fn conv(filters: usize) -> LayerSpec {
    LayerSpec::Conv { filters, kernel: 3, padding: Padding::Same, bias: true }
}

fn spec(size: usize, layers: Vec<LayerSpec>, loss: LossKind, dtype: DType) -> ModelSpec {
    ModelSpec { input: InputSpec { channels: 2, size }, layers, loss, dtype }
}

fn invariant_layers(group: GroupKind, pool: PoolKind) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Slice { group },
        conv(4),
        LayerSpec::Relu {},
        LayerSpec::Maxpool { window: 3, stride: 2 },
        conv(4),
        LayerSpec::Flatten {},
        LayerSpec::Dense { units: 5, bias: true },
        LayerSpec::Pool { function: pool, relu: false, realign: false },
    ]
}

fn same_equivariant_layers(group: GroupKind) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Slice { group },
        conv(3),
        LayerSpec::Relu {},
        LayerSpec::Roll {},
        conv(3),
        LayerSpec::Relu {},
        LayerSpec::Roll {},
        LayerSpec::Conv { filters: 2, kernel: 1, padding: Padding::Same, bias: true },
        LayerSpec::Pool { function: PoolKind::Mean, relu: false, realign: true },
    ]
}

fn check<T: Scalar>(layers: Vec<LayerSpec>, group: GroupKind, mode: EquivarianceMode, loss: LossKind, tol: f64) -> f64 {
    let s = spec(7, layers, loss, T::DTYPE);
    let net = Network::<T>::init(s.validate().unwrap(), 5);
    let r = check_model_equivariance(&net, group, mode, 6, 17, tol).unwrap();
    assert_eq!(r.deviations.len(), group.order());
    assert!(r.passed, "{r:?}");
    r.max_deviation
}

#[test]
fn invariant_models_for_every_pool_function() {
    for group in [GroupKind::C4, GroupKind::D4] {
        for pool in [PoolKind::Mean, PoolKind::Max, PoolKind::Rms] {
            check::<f64>(invariant_layers(group, pool), group, EquivarianceMode::Invariant, LossKind::CrossEntropy, 1e-5);
            check::<f32>(invariant_layers(group, pool), group, EquivarianceMode::Invariant, LossKind::CrossEntropy, 1e-3);
        }
    }
}

#[test]
fn fully_convolutional_models_are_same_equivariant() {
    for group in [GroupKind::C4, GroupKind::D4] {
        check::<f64>(same_equivariant_layers(group), group, EquivarianceMode::SameEquivariant, LossKind::Rmse, 1e-5);
        check::<f32>(same_equivariant_layers(group), group, EquivarianceMode::SameEquivariant, LossKind::Rmse, 1e-3);
    }
}

#[test]
fn stack_instead_of_pool_is_not_invariant() {
    let layers = vec![
        LayerSpec::Slice { group: GroupKind::C4 },
        conv(4),
        LayerSpec::Relu {},
        LayerSpec::Stack {},
        LayerSpec::Flatten {},
        LayerSpec::Dense { units: 3, bias: true },
    ];
    let net = Network::<f64>::init(spec(7, layers, LossKind::CrossEntropy, DType::F64).validate().unwrap(), 5);
    let r = check_model_equivariance(&net, GroupKind::C4, EquivarianceMode::Invariant, 4, 3, 1e-5).unwrap();
    assert!(!r.passed);
    assert!(r.max_deviation > 1e-2, "{r:?}");
}

#[test]
fn baseline_is_not_invariant() {
    let layers = vec![conv(4), LayerSpec::Relu {}, LayerSpec::Flatten {}, LayerSpec::Dense { units: 3, bias: true }];
    let net = Network::<f64>::init(spec(7, layers, LossKind::CrossEntropy, DType::F64).validate().unwrap(), 5);
    let r = check_model_equivariance(&net, GroupKind::C4, EquivarianceMode::Invariant, 4, 3, 1e-5).unwrap();
    assert_eq!(r.deviations[0].max_abs_deviation, 0.0);
    assert!(r.max_deviation > 1e-2, "{r:?}");
}

#[test]
fn c4_model_is_not_flip_invariant() {
    let r = {
        let s = spec(7, invariant_layers(GroupKind::C4, PoolKind::Mean), LossKind::CrossEntropy, DType::F64);
        let net = Network::<f64>::init(s.validate().unwrap(), 5);
        check_model_equivariance(&net, GroupKind::D4, EquivarianceMode::Invariant, 4, 3, 1e-5).unwrap()
    };
    assert!(r.deviations[..4].iter().all(|d| d.max_abs_deviation < 1e-12));
    assert!(r.deviations[4..].iter().all(|d| d.max_abs_deviation > 1e-3));
}

#[test]
fn slice_then_pool_is_exactly_invariant() {
    let layers = vec![LayerSpec::Slice { group: GroupKind::C4 }, LayerSpec::Pool { function: PoolKind::Mean, relu: false, realign: true }];
    let net = Network::<f64>::init(spec(5, layers, LossKind::Rmse, DType::F64).validate().unwrap(), 0);
    let r = check_model_equivariance(&net, GroupKind::C4, EquivarianceMode::SameEquivariant, 3, 1, 0.0).unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn filter_rotation_equivalence_on_random_pairs() {
    for seed in 0..20 {
        let x = random_tensor::<f64>(Dims::new(1, 2, 5, 5), 2 * seed);
        let w = random_tensor::<f64>(Dims::new(3, 2, 3, 3), 2 * seed + 1);
        for group in [GroupKind::C4, GroupKind::D4] {
            let r = check_filter_rotation_equivalence(&x, &w, group, 1e-12).unwrap();
            assert!(r.passed, "{r:?}");
        }
    }
}

#[test]
fn conv_agrees_with_naive_oracle() {
    let mut seed = 0;
    for padding in [Padding::Same, Padding::Valid] {
        for kernel in [1usize, 3, 5] {
            for (h, w) in [(6, 6), (5, 7), (7, 5), (5, 5)] {
                seed += 1;
                let p = nn::ConvParams {
                    weight: random_tensor(Dims::new(4, 3, kernel, kernel), seed),
                    bias: Some(random_tensor(Dims::new(4, 1, 1, 1), seed + 1000)),
                    padding,
                };
                let x = random_tensor::<f64>(Dims::new(2, 3, h, w), seed + 2000);
                let fast = nn::conv2d_forward(&x, &p).unwrap();
                let slow = naive_conv2d(&x, &p).unwrap();
                assert!(fast.max_abs_diff(&slow).unwrap() <= 1e-12, "{padding:?} k={kernel} {h}x{w}");
            }
        }
    }
}

fn nobias(filters: usize) -> LayerSpec {
    LayerSpec::Conv { filters, kernel: 3, padding: Padding::Same, bias: false }
}

#[test]
fn roll_all_quarter_filters_divides_intermediate_convs_by_four() {
    for depth in 2..6 {
        for base in [4usize, 8, 16, 32] {
            let mut plain = Vec::new();
            let mut rolled = vec![LayerSpec::Slice { group: GroupKind::C4 }];
            for _ in 0..depth {
                plain.push(nobias(base));
                rolled.push(nobias(base / 4));
                rolled.push(LayerSpec::Roll {});
            }
            rolled.push(LayerSpec::Pool { function: PoolKind::Mean, relu: false, realign: true });
            let input = InputSpec { channels: 3, size: 6 };
            let p = count_params(&ModelSpec { input, layers: plain, loss: LossKind::Rmse, dtype: DType::F64 }).unwrap();
            let r = count_params(&ModelSpec { input, layers: rolled, loss: LossKind::Rmse, dtype: DType::F64 }).unwrap();
            for i in 1..depth {
                assert_eq!(r.conv(i).unwrap() * 4, p.conv(i).unwrap(), "depth {depth} base {base} conv {i}");
            }
            // the first conv sees the raw input, so it only shrinks with its filter count
            assert_eq!(r.conv(0).unwrap() * 4, p.conv(0).unwrap());
        }
    }
}

#[test]
fn param_count_matches_instantiated_buffers() {
    for group in [GroupKind::C4, GroupKind::D4] {
        let s = spec(7, same_equivariant_layers(group), LossKind::Rmse, DType::F64);
        let report = count_params(&s).unwrap();
        let net = Network::<f64>::init(s.validate().unwrap(), 0);
        assert_eq!(report.total, net.param_count());
        let s = spec(7, invariant_layers(group, PoolKind::Mean), LossKind::CrossEntropy, DType::F64);
        let per_layer: usize = count_params(&s).unwrap().rows.iter().map(|r| r.params).sum();
        assert_eq!(per_layer, Network::<f64>::init(s.validate().unwrap(), 0).param_count());
    }
}
