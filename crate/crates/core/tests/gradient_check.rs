//! Analytic encoder gradients against central finite differences of the
//! loss evaluated through the public HSIC path.

use kerase::encoder::{encoder_forward, EncoderParams, Activation, LossWeights};

mod common;
use common::{check, Problem};

#[test]
fn gradients_match_finite_differences_on_twenty_instances() {
    let w = LossWeights::encoder_supervised();
    let mut worst = 0.0f64;
    for instance in 0..20u64 {
        let problem = Problem::new(32, 6, 500 + instance * 7);
        let params = EncoderParams::init(6, 8, 1, 6, Activation::Silu, 900 + instance).unwrap();
        let err = check(&problem, &params, &w);
        assert!(err <= 1e-4, "instance {instance}: max relative error {err:e}");
        worst = worst.max(err);
    }
    eprintln!("worst relative error over 20 instances: {worst:e}");
}

#[test]
fn gradients_match_for_deeper_and_linear_encoders() {
    let w = LossWeights { tau_xi: 0.3, tau_x: 0.2, tau_y: 1.5 };
    for (layers, activation) in [(2, Activation::Silu), (3, Activation::Silu), (1, Activation::Identity)] {
        let problem = Problem::new(24, 6, 40 + layers as u64);
        let params = EncoderParams::init(6, 8, layers, 6, activation, 77).unwrap();
        let err = check(&problem, &params, &w);
        assert!(err <= 1e-4, "{layers} layers / {activation:?}: {err:e}");
    }
}

#[test]
fn zero_weights_leave_only_the_attribute_term() {
    let problem = Problem::new(32, 6, 3);
    let params = EncoderParams::init(6, 8, 1, 6, Activation::Silu, 5).unwrap();
    let w = LossWeights { tau_xi: 0.0, tau_x: 0.0, tau_y: 0.0 };
    let z = encoder_forward(&params, &problem.x).unwrap();
    let phi_z = problem.z_map.features(&z).unwrap();
    let direct = kerase::hsic::hsic_feature(&phi_z, &problem.phi_s).unwrap().value;
    assert!((problem.loss(&params, &w) - direct).abs() < 1e-15);
    assert!(check(&problem, &params, &w) <= 1e-4);
}
