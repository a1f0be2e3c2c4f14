use std::path::PathBuf;

use veinatn::image::{decode_pgm, decode_png, encode_pgm, encode_png};
use veinatn::metrics::{eer_from_det, parse_det_csv, write_det_csv};
use veinatn::model::{decode_checkpoint, encode_checkpoint};
use veinatn::scores::{parse_scores_csv, scores_csv_bytes};
use veinatn::train::TrainConfig;

/// Every seed checked in for a fuzz target, so the corpus stays decodable.
fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds in {}", dir.display());
    files.into_iter().map(|p| (p.clone(), std::fs::read(p).unwrap())).collect()
}

#[test]
fn pgm_seeds_round_trip() {
    for (path, bytes) in seeds("pgm") {
        let img = decode_pgm(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
    }
}

#[test]
fn png_seeds_round_trip() {
    for (path, bytes) in seeds("png") {
        let img = decode_png(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(decode_png(&encode_png(&img).unwrap()).unwrap(), img);
    }
}

#[test]
fn checkpoint_seeds_round_trip() {
    for (path, bytes) in seeds("checkpoint") {
        let ckpt = decode_checkpoint(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(encode_checkpoint(&ckpt).unwrap(), bytes);
    }
}

#[test]
fn train_config_seeds_round_trip() {
    for (path, bytes) in seeds("train_config") {
        let cfg = TrainConfig::parse(std::str::from_utf8(&bytes).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(TrainConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
}

#[test]
fn scores_seeds_round_trip() {
    for (path, bytes) in seeds("scores_csv") {
        let pairs = parse_scores_csv(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(scores_csv_bytes(&pairs).unwrap(), bytes);
    }
}

#[test]
fn det_seeds_round_trip() {
    for (path, bytes) in seeds("det_csv") {
        let curve = parse_det_csv(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(write_det_csv(&curve).as_bytes(), bytes);
        assert!((0.0..=1.0).contains(&eer_from_det(&curve).unwrap().eer));
    }
}
