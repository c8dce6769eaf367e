//! End-to-end checks through the public API: files on disk to trained
//! checkpoints to representations.

use std::fs;

use comir::data::{load_dataset, synthetic_pair, AugmentationConfig, LayoutDescriptor};
use comir::encoder::{infer_comir, train, Checkpoint, EncoderConfig, TrainConfig};
use comir::equivariance::checkpoint_equivariance_curve;
use comir::imaging::io::save_png8;
use comir::imaging::{rotate_c4, C4Element, Image};
use comir::nn::OptimizerConfig;

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        first_conv_filters: 4,
        growth_rate: 2,
        down_blocks: vec![1, 1],
        up_blocks: vec![1, 1],
        bottleneck_layers: 1,
        ..EncoderConfig::desk(1, 1)
    }
}

fn tiny_train(seed: u64) -> TrainConfig {
    TrainConfig {
        optimizer: OptimizerConfig::adam(1e-3, 1e-4),
        batch_size: 4,
        steps_per_epoch: 3,
        epochs: 1,
        patch_size: 16,
        ..TrainConfig::biomedical(seed)
    }
}

fn to_bytes(img: &Image) -> Image {
    img.with_data(1, img.height(), img.width(), img.data().iter().map(|v| v * 255.0).collect())
}

#[test]
fn paired_directory_trains_and_round_trips_through_a_checkpoint() {
    let root = tempfile::tempdir().unwrap();
    fs::create_dir_all(root.path().join("bf")).unwrap();
    fs::create_dir_all(root.path().join("shg")).unwrap();
    for (i, id) in ["s1", "s2"].iter().enumerate() {
        let pair = synthetic_pair(id, 40, 40, 0.0, i as u64).unwrap();
        save_png8(&to_bytes(&pair.images[0]), &root.path().join(format!("bf/{id}.png"))).unwrap();
        save_png8(&to_bytes(&pair.images[1]), &root.path().join(format!("shg/{id}.png"))).unwrap();
    }
    let layout = LayoutDescriptor::from_toml(
        r#"
        [[modalities]]
        name = "bf"
        files = "bf/*.png"

        [[modalities]]
        name = "shg"
        files = "shg/*.png"
        "#,
    )
    .unwrap();
    let samples = load_dataset(root.path(), &layout).unwrap();
    assert_eq!(samples.len(), 2);
    assert_eq!(samples[0].id, "s1");
    assert_eq!(samples[0].images[1].modality, "shg");

    let cfg = tiny_train(3);
    let encoders = vec![tiny_encoder(); 2];
    let mut trained = train(&samples, &encoders, &cfg, &AugmentationConfig::default()).unwrap();
    assert_eq!(trained.history.len(), 3);
    let ckpt = Checkpoint::from_trained(&mut trained, &cfg).unwrap();

    let path = root.path().join("model.bin");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.id(), ckpt.id());
    assert_eq!(back.modalities, vec!["bf".to_string(), "shg".to_string()]);
    assert_eq!(back.train, Some(cfg));

    let img = samples[1].images[0].clone();
    let a = infer_comir(&ckpt, "bf", &img).unwrap();
    let b = infer_comir(&back, "bf", &img).unwrap();
    assert_eq!(a.image, b.image);
    assert_eq!((a.image.height(), a.image.width()), (40, 40));
    assert!(infer_comir(&back, "nir", &img).is_err());
}

#[test]
fn training_is_reproducible_from_its_seeds() {
    let samples = vec![synthetic_pair("a", 48, 48, 0.02, 5).unwrap()];
    let encoders = vec![tiny_encoder(); 2];
    let run = |cfg: &TrainConfig| {
        let mut t = train(&samples, &encoders, cfg, &AugmentationConfig::default()).unwrap();
        Checkpoint::from_trained(&mut t, cfg).unwrap()
    };
    let a = run(&tiny_train(9));
    let b = run(&tiny_train(9));
    assert_eq!(a.id(), b.id());
    assert_eq!(a.history, b.history);
    let c = run(&TrainConfig { data_seed: Some(10), ..tiny_train(9) });
    assert_ne!(a.id(), c.id());
}

#[test]
fn quarter_turns_of_a_c4_model_are_measured_exactly() {
    let samples = vec![synthetic_pair("a", 48, 48, 0.02, 5).unwrap()];
    let cfg = tiny_train(2);
    let mut t = train(&samples, &[tiny_encoder(), tiny_encoder()], &cfg, &AugmentationConfig::default()).unwrap();
    let ckpt = Checkpoint::from_trained(&mut t, &cfg).unwrap();
    let img = samples[0].images[0].clone();
    let curve = checkpoint_equivariance_curve(&ckpt, "m1", &img, 90.0).unwrap();
    assert_eq!(curve.angles, vec![0.0, 90.0, 180.0, 270.0]);
    assert!((curve.at(0.0).unwrap() - 1.0).abs() < 1e-9);
    // four quarter turns are the identity on pixels
    let g = C4Element::new(1);
    let back = (0..4).fold(img.clone(), |acc, _| rotate_c4(&acc, g));
    assert_eq!(back.data(), img.data());
}
