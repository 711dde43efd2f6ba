//! Frozen forward-pass values: a fixed seeded model and prefix must
//! reproduce the same confidence bit-for-bit across runs and platforms.

use serde::{Deserialize, Serialize};

use relay_core::seed::{derive_rng, sample_standard_normal};
use relay_core::verifier::{VerifierConfig, VerifierModel};

#[derive(Debug, Serialize, Deserialize)]
struct GoldenCase {
    name: String,
    hidden_dim: usize,
    proj_dim: usize,
    ff_width: usize,
    max_prefix_len: usize,
    weight_seed: u64,
    input_seed: u64,
    prefix_len: usize,
    confidence_bits: String,
    confidence: f64,
}

fn run_case(case: &GoldenCase) -> f64 {
    let config = VerifierConfig {
        hidden_dim: case.hidden_dim,
        proj_dim: case.proj_dim,
        ff_width: case.ff_width,
        max_prefix_len: case.max_prefix_len,
        ln_epsilon: 1e-5,
    };
    let model = VerifierModel::init_seeded(config, case.weight_seed).unwrap();
    let mut rng = derive_rng(case.input_seed, &["golden-input", &case.name]);
    let hidden: Vec<Vec<f64>> = (0..case.prefix_len)
        .map(|_| (0..config.hidden_dim).map(|_| sample_standard_normal(&mut rng)).collect())
        .collect();
    let scalars: Vec<[f64; 3]> = (0..case.prefix_len)
        .map(|_| {
            [
                sample_standard_normal(&mut rng).abs(),
                -sample_standard_normal(&mut rng).abs(),
                sample_standard_normal(&mut rng).abs(),
            ]
        })
        .collect();
    model.forward_trace(&hidden, &scalars).unwrap().confidence
}

#[test]
fn forward_reproduces_frozen_values_bit_exactly() {
    let cases: Vec<GoldenCase> =
        serde_json::from_str(include_str!("golden/verifier_forward.json")).unwrap();
    assert!(!cases.is_empty());
    for case in &cases {
        let confidence = run_case(case);
        let expected_bits = u64::from_str_radix(&case.confidence_bits, 16).unwrap();
        assert_eq!(
            confidence.to_bits(),
            expected_bits,
            "{}: {} vs frozen {}",
            case.name,
            confidence,
            f64::from_bits(expected_bits)
        );
        assert!((confidence - case.confidence).abs() <= 1e-12, "{}", case.name);
    }
}

/// One-time fixture generator; prints the JSON to freeze.
#[test]
#[ignore]
fn generate_golden_fixture() {
    let mut cases = vec![
        GoldenCase {
            name: "small".into(),
            hidden_dim: 16,
            proj_dim: 8,
            ff_width: 12,
            max_prefix_len: 8,
            weight_seed: 12001,
            input_seed: 12002,
            prefix_len: 3,
            confidence_bits: String::new(),
            confidence: 0.0,
        },
        GoldenCase {
            name: "default-shape".into(),
            hidden_dim: 896,
            proj_dim: 64,
            ff_width: 128,
            max_prefix_len: 8,
            weight_seed: 12003,
            input_seed: 12004,
            prefix_len: 5,
            confidence_bits: String::new(),
            confidence: 0.0,
        },
        GoldenCase {
            name: "single-token".into(),
            hidden_dim: 32,
            proj_dim: 8,
            ff_width: 16,
            max_prefix_len: 4,
            weight_seed: 12005,
            input_seed: 12006,
            prefix_len: 1,
            confidence_bits: String::new(),
            confidence: 0.0,
        },
    ];
    for case in &mut cases {
        let confidence = run_case(case);
        case.confidence_bits = format!("{:016x}", confidence.to_bits());
        case.confidence = confidence;
    }
    println!("{}", serde_json::to_string_pretty(&cases).unwrap());
}
