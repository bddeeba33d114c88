#[path = "support/gradcheck.rs"]
#[allow(dead_code)]
mod gradcheck;

use gradcheck::TOLERANCE;

fn assert_group(results: Vec<(&str, f64)>) {
    for (name, worst) in results {
        assert!(worst < TOLERANCE, "{name}: max relative error {worst:e}");
    }
}

#[test]
fn conv2d_same_and_valid() {
    assert_group(gradcheck::conv2d_same_and_valid());
}

#[test]
fn pointwise_conv_and_bias() {
    assert_group(gradcheck::pointwise_conv_and_bias());
}

#[test]
fn maxpool_and_upsample() {
    assert_group(gradcheck::maxpool_and_upsample());
}

#[test]
fn batchnorm_train_and_infer() {
    assert_group(gradcheck::batchnorm_train_and_infer());
}

#[test]
fn relu_sigmoid_concat_add() {
    assert_group(gradcheck::relu_sigmoid_concat_add());
}

#[test]
fn losses_and_weighted_sum() {
    assert_group(gradcheck::losses_and_weighted_sum());
}

#[test]
fn deeply_supervised_multires_unet() {
    let r = gradcheck::deeply_supervised_multires_unet();
    assert!(r.checked > 500, "only {} entries checked", r.checked);
    assert!(r.worst < TOLERANCE, "{}: max relative error {:e}", r.worst_at, r.worst);
}
