mod common;

use std::collections::BTreeMap;

use nalgebra::DVector;
use xmorph::data::{load_manifest, write_manifest, Behavior, Modality, TrialFilter};
use xmorph::synth::{class_mean, generate_synthetic_dataset, SynthConfig, SynthRobot};

fn one_context(trials: usize, object_sigma: f64) -> SynthConfig {
    SynthConfig {
        trials_per_object: trials,
        object_sigma,
        robots: vec![
            SynthRobot::new("baxter", 7, &[Behavior::Push], &[Modality::Effort]),
            SynthRobot::new("ur5", 6, &[Behavior::Push], &[Modality::Effort]),
        ],
        ..Default::default()
    }
}

#[test]
fn class_means_are_recoverable() {
    let config = one_context(40, 0.0);
    let ds = generate_synthetic_dataset(&config).unwrap();
    let sep = config.separation();
    let latent_var = config.latent_sigma.powi(2);
    for robot in ["baxter", "ur5"] {
        let map = &ds.maps[&format!("{robot}-push-effort")];
        let sd: Vec<f64> = (0..map.matrix.nrows())
            .map(|j| (map.matrix.row(j).norm_squared() * latent_var + config.noise_sigma.powi(2)).sqrt())
            .collect();
        let trials = ds.manifest.select_trials(&TrialFilter::context(robot, Behavior::Push, Modality::Effort)).unwrap();
        let mut groups: BTreeMap<(String, String), (DVector<f64>, Vec<&[f64]>)> = BTreeMap::new();
        for t in &trials {
            let o = ds.manifest.object(&t.object).unwrap();
            let key = (format!("{:?}", o.weight), format!("{:?}", o.content));
            groups.entry(key).or_insert_with(|| (class_mean(o, config.latent_dim, sep), Vec::new())).1.push(&t.feature);
        }
        assert_eq!(groups.len(), 19);
        for ((w, c), (mu, rows)) in &groups {
            let n = rows.len() as f64;
            let expected = map.apply(mu);
            // Standardized deviations of the sample mean, one per feature.
            let z: Vec<f64> = (0..expected.len())
                .map(|j| (rows.iter().map(|r| r[j]).sum::<f64>() / n - expected[j]) / (sd[j] / n.sqrt()))
                .collect();
            let rms = (z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64).sqrt();
            assert!(rms <= 3.0, "{robot} {w}/{c}: rms z {rms}");
        }
    }
}

#[test]
fn same_seed_is_bit_identical() {
    let config = one_context(5, 0.25);
    let a = generate_synthetic_dataset(&config).unwrap();
    let b = generate_synthetic_dataset(&config).unwrap();
    assert_eq!(a.manifest, b.manifest);
    let dir = tempfile::tempdir().unwrap();
    let (da, db) = (dir.path().join("a"), dir.path().join("b"));
    write_manifest(&a.manifest, &da).unwrap();
    write_manifest(&b.manifest, &db).unwrap();
    let mut pending = vec![std::path::PathBuf::new()];
    let mut files = 0;
    while let Some(rel) = pending.pop() {
        for entry in std::fs::read_dir(da.join(&rel)).unwrap() {
            let rel = rel.join(entry.unwrap().file_name());
            if da.join(&rel).is_dir() {
                pending.push(rel);
                continue;
            }
            assert_eq!(std::fs::read(da.join(&rel)).unwrap(), std::fs::read(db.join(&rel)).unwrap(), "{rel:?}");
            files += 1;
        }
    }
    assert!(files >= 3, "only {files} files written");
    let other = generate_synthetic_dataset(&SynthConfig { seed: 1, ..config }).unwrap();
    assert_ne!(a.manifest, other.manifest);
}

#[test]
fn manifest_round_trip() {
    let ds = generate_synthetic_dataset(&one_context(5, 0.25)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = write_manifest(&ds.manifest, dir.path()).unwrap();
    let loaded = load_manifest(&path).unwrap();
    assert_eq!(loaded.robots, ds.manifest.robots);
    assert_eq!(loaded.objects, ds.manifest.objects);
    assert_eq!(loaded.records, ds.manifest.records);
}
