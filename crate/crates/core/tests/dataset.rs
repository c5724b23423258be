use std::fs;
use std::path::Path;

use spr_core::operators::{EncodingOperator, MeasuredData};
use spr_core::sim::{load_measured, load_split, make_dataset, read_manifest, record_seed, save_measured, DatasetConfig, Split};
use spr_core::Error;

fn small(seed: u64) -> DatasetConfig {
    DatasetConfig {
        n_train: 2,
        n_val: 1,
        n_test: 1,
        nx: 16,
        ny: 16,
        nt: 4,
        n_coils: 2,
        spokes_per_frame: 3,
        seed,
        ..Default::default()
    }
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn regeneration_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    make_dataset(&a, &small(3), false).unwrap();
    make_dataset(&b, &small(3), false).unwrap();
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), 1 + 4 * 3);
    assert_eq!(fa, fb);

    let c = dir.path().join("c");
    make_dataset(&c, &small(4), false).unwrap();
    let xa = fs::read(a.join("train/rec_0000/x_f.spt")).unwrap();
    let xc = fs::read(c.join("train/rec_0000/x_f.spt")).unwrap();
    assert_ne!(xa, xc);
}

#[test]
fn manifest_counts_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let m = make_dataset(dir.path(), &small(9), false).unwrap();
    assert_eq!(read_manifest(dir.path()).unwrap(), m);
    assert_eq!((m.counts.train, m.counts.val, m.counts.test), (2, 1, 1));
    assert_eq!(m.record_seeds.val, vec![record_seed(9, Split::Val, 0)]);
    let mut all: Vec<u64> = [&m.record_seeds.train, &m.record_seeds.val, &m.record_seeds.test]
        .into_iter()
        .flatten()
        .copied()
        .collect();
    all.sort();
    all.dedup();
    assert_eq!(all.len(), 4);
}

#[test]
fn stored_measurements_match_the_operator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig { sigma: 0.0, ..small(5) };
    make_dataset(dir.path(), &cfg, false).unwrap();
    for r in load_split(dir.path(), Split::Train).unwrap() {
        let clean = r.op.forward(&r.x_f).unwrap();
        let err: f64 = clean.as_slice().iter().zip(r.y.as_slice()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "noise-free record differs by {err}");
        assert_eq!(r.manifest.shape, cfg.shape());
    }
}

#[test]
fn measured_data_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<_> = (0..2 * 3 * 5).map(|i| num_complex::Complex64::new(i as f64, -0.5 * i as f64)).collect();
    let y = MeasuredData::from_vec(2, vec![5; 3], data).unwrap();
    let p = dir.path().join("y.spt");
    save_measured(&p, &y).unwrap();
    let back = load_measured(&p).unwrap();
    assert_eq!(back.as_slice(), y.as_slice());
    assert_eq!(back.frame_lens(), y.frame_lens());
}

#[test]
fn existing_directory_needs_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), &small(1), false).unwrap();
    assert!(matches!(make_dataset(dir.path(), &small(2), false), Err(Error::Exists(_))));
    make_dataset(dir.path(), &small(2), true).unwrap();
    assert_eq!(read_manifest(dir.path()).unwrap().config.seed, 2);
}

#[test]
fn missing_pieces_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_manifest(dir.path()), Err(Error::MissingInput(_))));
    make_dataset(dir.path(), &small(1), false).unwrap();
    fs::remove_file(dir.path().join("test/rec_0000/y.spt")).unwrap();
    assert!(matches!(load_split(dir.path(), Split::Test), Err(Error::MissingInput(_))));
    assert!(matches!(
        make_dataset(&dir.path().join("x"), &DatasetConfig { nx: 16, ny: 8, ..small(1) }, false),
        Err(Error::Config(_))
    ));
}
