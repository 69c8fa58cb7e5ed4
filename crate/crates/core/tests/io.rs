use fedldp::checkpoint::{load_batch, load_params, save_batch, save_params};
use fedldp::data::{encode_idx_images, encode_idx_labels, mnist_from_bytes, IDX_IMAGE_MAGIC};
use fedldp::{init_params, load_mnist_idx, Error, ExperimentConfig, LabeledBatch, Tensor};
use proptest::prelude::*;

fn tiny_idx(n: usize) -> (Vec<u8>, Vec<u8>) {
    let pixels: Vec<u8> = (0..n * 4).map(|i| (i * 37 % 256) as u8).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    (encode_idx_images(&pixels, n, 2, 2), encode_idx_labels(&labels))
}

#[test]
fn idx_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = tiny_idx(12);
    std::fs::write(dir.path().join("img"), &img).unwrap();
    std::fs::write(dir.path().join("lab"), &lab).unwrap();
    let ds = load_mnist_idx(dir.path().join("img"), dir.path().join("lab")).unwrap();
    assert_eq!((ds.len(), ds.dim(), ds.n_classes), (12, 4, 10));
    assert_eq!(ds.data.inputs().row(1), &[148.0 / 255.0, 185.0 / 255.0, 222.0 / 255.0, 3.0 / 255.0]);
    assert_eq!(ds.data.labels()[11], 1);
}

#[test]
fn idx_rejects_malformed_headers() {
    let (img, lab) = tiny_idx(5);
    let cases: Vec<(Vec<u8>, Vec<u8>)> = vec![
        (img[..10].to_vec(), lab.clone()),
        (img[..img.len() - 1].to_vec(), lab.clone()),
        (lab.clone(), lab.clone()),
        (img.clone(), img.clone()),
        (img.clone(), encode_idx_labels(&[0, 1, 2])),
        (img.clone(), encode_idx_labels(&[0, 1, 2, 3, 12])),
    ];
    for (i, l) in cases {
        assert!(matches!(mnist_from_bytes(&i, &l), Err(Error::Format(_))));
    }
    let mut huge = IDX_IMAGE_MAGIC.to_be_bytes().to_vec();
    for _ in 0..3 {
        huge.extend_from_slice(&u32::MAX.to_be_bytes());
    }
    assert!(matches!(mnist_from_bytes(&huge, &lab), Err(Error::Format(_))));
}

proptest! {
    #[test]
    fn idx_parser_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64), cut in 0usize..64) {
        let (img, lab) = tiny_idx(3);
        let _ = mnist_from_bytes(&bytes, &lab);
        let _ = mnist_from_bytes(&img, &bytes);
        let _ = mnist_from_bytes(&img[..cut.min(img.len())], &lab);
    }

    #[test]
    fn checkpoint_decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..96)) {
        let _ = fedldp::checkpoint::decode_params(&bytes);
        let _ = fedldp::checkpoint::decode_batch(&bytes);
    }
}

#[test]
fn checkpoint_and_batch_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let params = init_params(&[5, 4, 3], 77).unwrap();
    save_params(dir.path().join("m.ckpt"), &params).unwrap();
    assert_eq!(load_params(dir.path().join("m.ckpt")).unwrap(), params);

    let batch = LabeledBatch::new(Tensor::from_rows(&[vec![0.0, 1.0], vec![0.5, 0.125]]).unwrap(), vec![2, 0]).unwrap();
    save_batch(dir.path().join("adv.bin"), &batch).unwrap();
    assert_eq!(load_batch(dir.path().join("adv.bin")).unwrap(), batch);
    assert!(matches!(load_params(dir.path().join("adv.bin")), Err(Error::Format(_))));
}

#[test]
fn shipped_configs_parse() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["mnist_sweep.toml", "synthetic_sweep.toml"] {
        let cfg = ExperimentConfig::load(root.join(name)).unwrap();
        cfg.validate().unwrap();
    }
    let mnist = ExperimentConfig::load(root.join("mnist_sweep.toml")).unwrap();
    let defaults = ExperimentConfig::default();
    assert_eq!(
        ExperimentConfig { data_dir: defaults.data_dir.clone(), output: defaults.output.clone(), ..mnist },
        defaults
    );
}
