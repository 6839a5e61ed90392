//! Frozen outputs for fixed seeds. A change here means the numerics or the
//! stream format changed.

use sha2::{Digest, Sha256};
use stylecodec::bitstream::encode;
use stylecodec::entropy::GaussianParams;
use stylecodec::numeric::{seeded_matrix, Matrix, SeededRng};
use stylecodec::params::WeightInit;
use stylecodec::style::{LayerId, StyleVectorSet};
use stylecodec::weights::{CodecConfig, Weights};

fn sha(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn weights() -> Weights {
    Weights::generate(CodecConfig::fast(), 2024, WeightInit::Random).unwrap()
}

fn base_params(rng: &mut SeededRng) -> GaussianParams {
    let mu = (0..6 * 64).map(|_| rng.symmetric_f32(3.0)).collect();
    let delta = (0..6 * 64).map(|_| 0.2 + rng.unit_f32()).collect();
    GaussianParams::new(mu, delta).unwrap()
}

fn decoded(rng: &mut SeededRng) -> Matrix {
    let m = seeded_matrix(rng, 6, 64, 6.0).unwrap();
    m.map(f32::round)
}

#[test]
fn hyper_encoder_output() {
    let w = weights();
    let mut rng = SeededRng::new(1);
    let x = seeded_matrix(&mut rng, 18, 64, 4.0)
        .unwrap()
        .map(f32::round);
    let h = w.model.hyper_encoder.forward(&x).unwrap();
    assert_eq!(h.shape(), (18, 16));
    assert_eq!(
        sha(&h.to_le_bytes()),
        "1576bf6ec10a6cd880f6c1ca696f3d9d3a65d9f34f73e99a00eddda5a1e2d0f5"
    );
}

#[test]
fn hyper_decoder_output() {
    let w = weights();
    let mut rng = SeededRng::new(2);
    let h = seeded_matrix(&mut rng, 18, 16, 3.0)
        .unwrap()
        .map(f32::round);
    let p = w
        .model
        .hyper_decoder
        .forward(&h, LayerId::Enhanced)
        .unwrap();
    assert_eq!(
        sha(&p.to_le_bytes()),
        "65e6dce11342adb6dda6e5fc7147de19d40ac7bb3c8377b0f3be59c29904b58a"
    );
}

#[test]
fn cross_l2_output() {
    let w = weights();
    let mut rng = SeededRng::new(3);
    let base = base_params(&mut rng);
    let l1 = decoded(&mut rng);
    let p = w.model.cross_l2.forward(&base, &l1).unwrap();
    assert_eq!(
        sha(&p.to_le_bytes()),
        "fea1e201ff9ced92a83cd8c9321bb253fb13ceb8bc49ffca421a65ef2939b796"
    );
}

#[test]
fn cross_l3_output() {
    let w = weights();
    let mut rng = SeededRng::new(4);
    let base = base_params(&mut rng);
    let l1 = decoded(&mut rng);
    let l2 = decoded(&mut rng);
    let p = w.model.cross_l3.forward(&base, &l1, &l2).unwrap();
    assert_eq!(
        sha(&p.to_le_bytes()),
        "a0d7144df6cff7b2562ee745125523e00380c3c8cbc39683937c5cffccb8a475"
    );
}

#[test]
fn weight_file_bytes() {
    let w = Weights::generate(CodecConfig::fast(), 7, WeightInit::ZeroResidual).unwrap();
    assert_eq!(
        sha(&w.to_bytes()),
        "cb5bde30591602bab1d103bcc86d55b7ce9b1922c99851d8bf028aa1e050b199"
    );
}

#[test]
fn stream_bytes() {
    let w = weights();
    let mut rng = SeededRng::new(5);
    let data = (0..18 * 64)
        .map(|_| (rng.normal_f64() * 3.0) as f32)
        .collect();
    let s = StyleVectorSet::new(64, data).unwrap();
    let out = encode(&s, &w).unwrap();
    assert_eq!(
        sha(&out.stream.to_bytes()),
        "f51bd792c2e5a8b796aacddf6e3f96e0e9b8c51a080b29bb82bcecd5697bdc64"
    );
}
