use hlnet::imaging::normalize_exposure;
use hlnet::simdata::{
    degrade, gen_scene, make_dataset, read_dataset, sample_path, write_dataset, DegradeConfig, Geometry, MANIFEST_NAME,
};

#[test]
fn dataset_round_trips_through_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DegradeConfig { seed: 7, ..DegradeConfig::default() };
    let geo = Geometry { channels: 4, height: 8, width: 8 };
    let pairs = make_dataset(8, &cfg, geo).unwrap();
    assert_eq!(pairs.len(), 8);
    write_dataset(dir.path(), &pairs, &cfg, geo).unwrap();
    assert!(dir.path().join(MANIFEST_NAME).exists());
    assert!(sample_path(dir.path(), "0007").exists());
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.config, cfg);
    assert_eq!(back.pairs, pairs);
}

#[test]
fn writes_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = DegradeConfig { seed: 3, ..DegradeConfig::default() };
    let geo = Geometry { channels: 1, height: 8, width: 8 };
    for d in [&a, &b] {
        write_dataset(d.path(), &make_dataset(2, &cfg, geo).unwrap(), &cfg, geo).unwrap();
    }
    for name in [MANIFEST_NAME, "scene_0000.hlt", "scene_0001.hlt"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap()
        );
    }
}

#[test]
fn short_exposures_are_noisier_after_normalization() {
    // residuals of noisy minus clean frames, normalized by exposure, on
    // pixels the clean frame leaves unsaturated
    let noisy = DegradeConfig { blur_frames: vec![], ..DegradeConfig::default() };
    let clean = noisy.clone().clean();
    let (mut short, mut long) = (Vec::new(), Vec::new());
    for s in 0..50u64 {
        let gt = gen_scene(s, 1, 32, 32).unwrap();
        let id = format!("{s:04}");
        let n = degrade(&gt, &noisy, &id).unwrap();
        let c = degrade(&gt, &clean, &id).unwrap();
        for (idx, bucket) in [(0usize, &mut short), (2usize, &mut long)] {
            let yn = normalize_exposure(&n.frames[idx], 1.0).unwrap();
            let yc = normalize_exposure(&c.frames[idx], 1.0).unwrap();
            for ((a, b), raw) in yn.iter().zip(yc.iter()).zip(c.frames[idx].data.iter()) {
                if *raw < 0.95 && *raw > 0.0 {
                    bucket.push((a - b) as f64);
                }
            }
        }
    }
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let f = var(&short) / var(&long);
    // one-sided F test; with tens of thousands of samples per side the 1%
    // critical value is below 1.05
    assert!(short.len() > 1000 && long.len() > 1000);
    assert!(f > 1.05, "F = {f}");
}

#[test]
fn degrade_rejects_out_of_range_ground_truth() {
    let mut gt = gen_scene(0, 1, 16, 16).unwrap();
    gt[[0, 0, 0, 0]] = 1.5;
    assert!(degrade(&gt, &DegradeConfig::default(), "x").is_err());
}
