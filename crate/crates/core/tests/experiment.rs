use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use inclusion_core::experiment::{
    cmd_sample, cmd_simulate, cmd_study, count_inversions, ExperimentConfig, Illumination, PathKind, Phantom, PRESETS,
};
use inclusion_core::mesh::MeshPreset;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn tiny(path: PathKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::preset(match path {
        PathKind::Star => "desk-star",
        PathKind::Level => "desk-level",
    })
    .unwrap();
    c.name = format!("tiny-{}", path.name());
    c.data_mesh = MeshPreset::Rings(10);
    c.inversion_mesh = MeshPreset::Rings(6);
    c.n_d = 12;
    c.noise_levels = vec![0.16, 0.04];
    c.q.truncate(2);
    c.step.truncate(2);
    if let Some(eps) = &mut c.eps {
        eps.truncate(2);
    }
    c.star.max_freq = 3;
    c.level.max_freq = 2;
    c.sampler.iterations = 200;
    c.sampler.burn_in = 100;
    c.sampler.subsample = 10;
    c.replicates = 2;
    c.phantom.smoothing_grid = 32;
    c
}

/// Every regular file below `dir` with its contents, keyed by relative path.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn shipped_configs_match_the_presets() {
    for name in PRESETS {
        let path = configs_dir().join(format!("{name}.json"));
        let loaded = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(loaded, ExperimentConfig::preset(name).unwrap(), "{name}");
    }
}

#[test]
fn unknown_preset_and_bad_configs_are_rejected() {
    assert!(ExperimentConfig::preset("nope").is_err());
    let mut c = tiny(PathKind::Star);
    c.noise_levels = vec![0.04, 0.16];
    assert!(c.validate().is_err());
    assert!(ExperimentConfig::from_json(r#"{"name": "x", "surprise": 1}"#).is_err());
}

#[test]
fn phantom_takes_three_values_on_the_data_mesh() {
    let mesh = MeshPreset::Data.build();
    let phantom = Phantom::new(0.1, 64).unwrap();
    let field = phantom.rasterize(&mesh);
    let values: BTreeSet<u64> = field.values.iter().map(|v| (v * 1e6).round() as u64).collect();
    assert_eq!(values.into_iter().collect::<Vec<_>>(), vec![100_000, 300_000, 500_000]);
}

#[test]
fn illumination_is_positive_on_the_boundary() {
    let mesh = MeshPreset::Desk.build();
    let light = Illumination::default();
    let min = mesh
        .boundary_vertices()
        .iter()
        .map(|&v| light.eval(mesh.vertices()[v]))
        .fold(f64::INFINITY, f64::min);
    assert!(min > 0.0);
}

#[test]
fn empty_noise_list_simulates_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(PathKind::Star);
    c.noise_levels.clear();
    c.q.clear();
    c.step.clear();
    assert!(cmd_simulate(&c, dir.path()).unwrap().is_empty());
}

#[test]
fn pipeline_outputs_are_byte_identical_across_runs() {
    for path in [PathKind::Star, PathKind::Level] {
        let c = tiny(path);
        let runs: Vec<_> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let files = cmd_simulate(&c, dir.path()).unwrap();
                assert_eq!(files.len(), 2);
                let a = cmd_sample(&c, 1, None, dir.path()).unwrap();
                let b = cmd_sample(&c, 1, Some(12345), dir.path()).unwrap();
                assert_ne!(a.record.states, b.record.states);
                let (rows, summary) = cmd_study(&c, 2, Some(dir.path())).unwrap();
                assert_eq!(rows.len(), 4);
                assert_eq!(summary.len(), 2);
                assert!(rows.iter().all(|r| r.l2_error >= 0.0));
                snapshot(dir.path())
            })
            .collect();
        assert!(runs[0].iter().any(|(p, _)| p.ends_with("study.csv")));
        assert!(runs[0].iter().any(|(p, _)| p.ends_with("posterior_mean.csv")));
        assert_eq!(runs[0], runs[1], "{path:?}");
    }
}

#[test]
fn sample_needs_simulated_data() {
    let dir = tempfile::tempdir().unwrap();
    assert!(cmd_sample(&tiny(PathKind::Star), 0, None, dir.path()).is_err());
}

#[test]
fn level_posterior_means_stay_in_the_material_range() {
    let (rows, _) = cmd_study(&tiny(PathKind::Level), 1, None).unwrap();
    for r in rows {
        assert!(r.mean_range.0 >= 0.1 - 1e-12 && r.mean_range.1 <= 0.5 + 1e-12, "{r:?}");
    }
}

#[test]
fn inversion_count() {
    assert_eq!(count_inversions(&[5.0, 4.0, 3.0]), 0);
    assert_eq!(count_inversions(&[5.0, 6.0, 3.0, 3.0]), 2);
}
