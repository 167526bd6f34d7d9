mod common;

use csd_core::conversation::Stance;
use csd_core::mkian::{AblationFlags, Activation, EncoderMode, HashEncoder, Mkian, ModelConfig};
use ndarray::Array1;

use common::{chain_instance, micro, stub_annotations, tanh_config, worst_relative_error};

#[test]
fn analytic_gradients_match_finite_differences() {
    let (model, prep) = micro(tanh_config());
    assert_eq!(prep.n(), 4);
    for (name, rel) in worst_relative_error(&model, &prep, None) {
        assert!(rel <= 1e-4, "{name}: relative error {rel:e}");
    }
}

#[test]
fn gradients_with_sigmoid_unnormalized_literal_mask() {
    let cfg = ModelConfig {
        activation: Activation::Sigmoid,
        gcn_normalize: false,
        local_mask: csd_core::mkian::LocalMask::Literal,
        lambda: 0.7,
        hops: 2,
        ..tanh_config()
    };
    let (model, prep) = micro(cfg);
    for (name, rel) in worst_relative_error(&model, &prep, None) {
        assert!(rel <= 1e-4, "{name}: relative error {rel:e}");
    }
}

#[test]
fn gradients_with_dropout_mask_and_token_table() {
    let cfg = ModelConfig {
        hidden: 4,
        encoder_mode: EncoderMode::FineTune,
        ..tanh_config()
    };
    let enc = HashEncoder::with_buckets(4, 64, 5);
    let inst = chain_instance(&["Tesla is fine", "no it is not"], Stance::Favor);
    let ann = stub_annotations(&inst);
    let model = Mkian::new(cfg, AblationFlags::ALL_ON, &enc, 2).unwrap();
    let prep = model.prepare(&inst, Some(&ann), &enc).unwrap();
    let mask = Array1::from_shape_fn(16, |i| if i % 3 == 0 { 0.0 } else { 1.5 });
    let errs = worst_relative_error(&model, &prep, Some(&mask));
    assert!(errs.iter().any(|(n, _)| n == "encoder.token_table"));
    for (name, rel) in errs {
        assert!(rel <= 1e-4, "{name}: relative error {rel:e}");
    }
}
