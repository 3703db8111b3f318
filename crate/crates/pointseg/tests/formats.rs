use std::fs;

use pointseg::checkpoint::Checkpoint;
use pointseg::config::RunConfig;
use pointseg::imaging::{read_image, read_mask, write_image, write_mask};
use pointseg::manifest::{load_manifest, read_entries, write_manifest, ManifestEntry};
use pointseg::prior_cache::{decode, encode, read_prior, write_prior, HEADER_LEN};
use pointseg::Error;
use pointseg_core::phantom::{synth_corpus, PhantomConfig};
use pointseg_core::pipeline::{prepare, Preset, TrainSettings, Trainer};
use pointseg_core::prior::fusion_prior;

fn small() -> PhantomConfig {
    PhantomConfig {
        size: 32,
        radius_min: 5.0,
        radius_max: 9.0,
        distractors: 1,
        ..PhantomConfig::default()
    }
}

#[test]
fn images_and_masks_round_trip_through_png_and_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let r = &synth_corpus(1, 1, &small()).unwrap()[0];
    for ext in ["png", "pgm"] {
        let ip = dir.path().join(format!("img.{ext}"));
        let mp = dir.path().join(format!("mask.{ext}"));
        write_image(&ip, &r.image).unwrap();
        write_mask(&mp, r.gt_mask.as_ref().unwrap()).unwrap();
        let back = read_image(&ip).unwrap();
        assert_eq!(back.dims(), r.image.dims());
        for (a, b) in back.data().iter().zip(r.image.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        assert_eq!(&read_mask(&mp).unwrap(), r.gt_mask.as_ref().unwrap());
    }
    assert!(matches!(read_image(&dir.path().join("none.png")), Err(Error::MissingFile(_))));
}

fn write_corpus(dir: &std::path::Path, n: usize) -> Vec<ManifestEntry> {
    let records = synth_corpus(5, n, &small()).unwrap();
    let mut entries = Vec::new();
    for r in &records {
        let img = format!("{}.png", r.id);
        write_image(&dir.join(&img), &r.image).unwrap();
        let mask = format!("{}_mask.png", r.id);
        write_mask(&dir.join(&mask), r.gt_mask.as_ref().unwrap()).unwrap();
        let mut e = ManifestEntry::new(&r.id, img, &r.annotation);
        e.mask = Some(mask.into());
        entries.push(e);
    }
    entries
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut entries = write_corpus(dir.path(), 3);
    entries[1].spacing_mm = Some(0.1);
    // Sub-pixel points must survive serialization exactly.
    entries[2].points[0][0] += 0.1 + 1e-9;
    let path = dir.path().join("m.jsonl");
    write_manifest(&path, &entries).unwrap();
    let first = fs::read(&path).unwrap();
    let parsed: Vec<ManifestEntry> = read_entries(&path).unwrap().into_iter().map(|(_, e)| e).collect();
    assert_eq!(parsed, entries);
    write_manifest(&path, &parsed).unwrap();
    assert_eq!(fs::read(&path).unwrap(), first);

    let records = load_manifest(&path).unwrap();
    assert_eq!(records.len(), 3);
    for (r, e) in records.iter().zip(&entries) {
        assert_eq!(r.id, e.id);
        assert_eq!(r.image.dims().width, 32);
        assert_eq!(r.gt_mask.as_ref().unwrap().dims(), r.image.dims());
        let pts: Vec<[f64; 2]> = r.annotation.points().iter().map(|p| [p.x, p.y]).collect();
        assert_eq!(pts, e.points);
    }
    assert_eq!(records[1].spacing_mm, Some(0.1));
}

#[test]
fn manifest_points_are_order_free() {
    let dir = tempfile::tempdir().unwrap();
    let mut entries = write_corpus(dir.path(), 1);
    let canonical = entries[0].points.clone();
    entries[0].points.reverse();
    let path = dir.path().join("m.jsonl");
    write_manifest(&path, &entries).unwrap();
    let r = load_manifest(&path).unwrap();
    let pts: Vec<[f64; 2]> = r[0].annotation.points().iter().map(|p| [p.x, p.y]).collect();
    assert_eq!(pts, canonical);
}

#[test]
fn manifest_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let entries = write_corpus(dir.path(), 3);
    let path = dir.path().join("m.jsonl");

    let mut bad = entries.clone();
    bad[1].points.pop();
    write_manifest(&path, &bad).unwrap();
    match load_manifest(&path) {
        Err(Error::Parse { line, message, .. }) => {
            assert_eq!(line, 2);
            assert!(message.contains("got 3"), "{message}");
        }
        other => panic!("{other:?}"),
    }

    let mut bad = entries.clone();
    bad[2].points[0] = [999.0, 10.0];
    write_manifest(&path, &bad).unwrap();
    assert!(matches!(load_manifest(&path), Err(Error::AnnotationOutOfBounds { line: 3, .. })));

    let mut bad = entries.clone();
    bad[0].image = "missing.png".into();
    write_manifest(&path, &bad).unwrap();
    assert!(matches!(load_manifest(&path), Err(Error::MissingFile(_))));

    fs::write(&path, "{\"id\": 1}\n").unwrap();
    assert!(matches!(load_manifest(&path), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(load_manifest(&dir.path().join("nope.jsonl")), Err(Error::MissingFile(_))));
}

#[test]
fn prior_cache_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let r = &synth_corpus(2, 1, &small()).unwrap()[0];
    let map = fusion_prior(&r.image, &r.annotation, &Default::default()).unwrap();
    let bytes = encode(&map);
    assert_eq!(bytes.len(), HEADER_LEN + 4 * 32 * 32);
    assert_eq!(&bytes[..4], b"DSPR");
    let path = dir.path().join("p.dspr");
    write_prior(&path, &map).unwrap();
    let back = read_prior(&path).unwrap();
    assert_eq!(back.dims, map.dims);
    for (a, b) in back.values.iter().zip(&map.values) {
        assert_eq!(*a, *b as f32 as f64);
    }
    assert_eq!(encode(&back), bytes);
    assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert!(decode(&wrong).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let records = synth_corpus(3, 4, &small()).unwrap();
    let data = prepare::<f32>(&records, Preset::H, &Default::default()).unwrap();
    let mut t = Trainer::<f32>::new(TrainSettings {
        epochs: 1,
        batch_size: 2,
        seed: 17,
        ..Default::default()
    })
    .unwrap();
    t.train_epoch(&data).unwrap();
    let ck = Checkpoint::from_trainer(&t);
    let path = dir.path().join("a.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.params.checksum(), t.params.checksum());
    assert_eq!(back.encode(), fs::read(&path).unwrap());
    assert_eq!(back.adam.step, 2);

    // A resumed run continues exactly like an uninterrupted one.
    let mut resumed = back.into_trainer();
    resumed.train_epoch(&data).unwrap();
    t.train_epoch(&data).unwrap();
    assert_eq!(resumed, t);

    let bytes = fs::read(&path).unwrap();
    assert!(Checkpoint::decode(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::decode(&[bytes.clone(), vec![0]].concat()).is_err());
    assert!(matches!(
        Checkpoint::load(&dir.path().join("none.ckpt")),
        Err(Error::MissingFile(_))
    ));
}

#[test]
fn config_toml_round_trip_and_defaults() {
    let cfg = RunConfig::default();
    assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    let partial = RunConfig::from_toml("[train]\npreset = \"C\"\nepochs = 3\n[train.prior]\nsigma = 0.3\n").unwrap();
    assert_eq!(partial.train.preset, Preset::C);
    assert_eq!(partial.train.epochs, 3);
    assert_eq!(partial.train.prior.sigma, 0.3);
    assert_eq!(partial.train.prior.theta, 0.25);
    assert_eq!(partial.data, Default::default());
    assert!(RunConfig::from_toml("[train]\npreset = \"Q\"\n").is_err());
    assert!(RunConfig::from_toml("[train]\nbatch_size = 1\n").is_err());
    assert!(RunConfig::from_toml("[bogus]\n").is_err());
}
