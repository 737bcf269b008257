//! Golden-file tests: the committed artifacts pin the model description
//! format and the platform-independent bit-exactness of quantized
//! inference. Regenerate with
//! `cargo test -p crackseg --test golden -- --ignored regen`.

use std::path::PathBuf;

use crackseg::model::{build_model, init_params, ModelConfig, UpsampleMode};
use crackseg::quant::{calibrate, fold_bn, integer_forward, quantize_input, quantize_model, QuantizedGraph};
use crackseg::tensor::{Tensor, TensorShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn unit_image(rng: &mut ChaCha8Rng, hw: usize) -> Tensor {
    let shape = TensorShape::new(1, 3, hw, hw);
    let data = (0..shape.num_elements()).map(|_| rng.gen_range(0.0f32..1.0)).collect();
    Tensor::from_f32(shape, data)
}

/// The reference quantized model: c=2, seed 2024, calibrated on four seeded
/// 16x16 images.
fn reference_quantized() -> QuantizedGraph {
    let cfg = ModelConfig::new(2, UpsampleMode::Tconv).unwrap();
    let graph = init_params(build_model(cfg).unwrap(), 2024);
    let folded = fold_bn(&graph).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let calib: Vec<Tensor> = (0..4).map(|_| unit_image(&mut rng, 16)).collect();
    let stats = calibrate(&folded, &calib).unwrap();
    quantize_model(&folded, &stats, 8).unwrap()
}

fn reference_logits() -> Vec<u8> {
    let qg = reference_quantized();
    let mut rng = ChaCha8Rng::seed_from_u64(7777);
    let image = unit_image(&mut rng, 16);
    let q_in = quantize_input(&qg, &image).unwrap();
    let logits = integer_forward(&qg, &q_in).unwrap();
    logits.as_f32().unwrap().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn reference_dump() -> String {
    let graph = build_model(ModelConfig::new(2, UpsampleMode::Tconv).unwrap()).unwrap();
    graph.dump((64, 64))
}

#[test]
fn quantized_logits_match_committed_golden() {
    let want = std::fs::read(golden_dir().join("int8_logits_c2_16x16.bin"))
        .expect("golden logits missing; run the regen test");
    assert_eq!(reference_logits(), want, "quantized inference is no longer bit-stable");
}

#[test]
fn model_dump_matches_committed_golden() {
    let want = std::fs::read_to_string(golden_dir().join("model_dump_c2_64x64.txt"))
        .expect("golden dump missing; run the regen test");
    assert_eq!(reference_dump(), want);
}

#[test]
#[ignore = "writes the golden files; run explicitly after intentional changes"]
fn regen_golden_files() {
    let dir = golden_dir();
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("int8_logits_c2_16x16.bin"), reference_logits()).unwrap();
    std::fs::write(dir.join("model_dump_c2_64x64.txt"), reference_dump()).unwrap();
}
