#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use brainreg::data::io::save_dataset;
use brainreg::data::{Dataset, DatasetKind, RoiPartition, VoxelGeometry};
use brainreg::sae::Hyperparameters;
use brainreg::simulation::{simulate_sae_mixed, standard_normal_design};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_brainreg")
}

pub fn toy_dataset() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("BRAINREG_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "brainreg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// File name → contents for every file in `dir`.
pub fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

pub fn lattice_dataset(x: DMatrix<f64>, y: DMatrix<f64>, areas: &[usize]) -> Dataset {
    let v = y.ncols();
    Dataset::new(
        x,
        y,
        VoxelGeometry::lattice(v, 5, 5),
        RoiPartition::blocks(areas).unwrap(),
        DatasetKind::Static,
    )
    .unwrap()
}

/// Responses exactly `Xβ`.
pub fn noiseless_dataset(rows: usize, features: usize, voxels: usize, seed: u64) -> Dataset {
    let x = gaussian(rows, features, seed);
    let beta = gaussian(features, voxels, seed + 1);
    let y = &x * beta;
    lattice_dataset(x, y, &[voxels])
}

/// Responses independent of the design.
pub fn noise_dataset(rows: usize, features: usize, voxels: usize, seed: u64) -> Dataset {
    lattice_dataset(gaussian(rows, features, seed), gaussian(rows, voxels, seed + 1), &[voxels])
}

/// Four areas of 25 voxels drawn from the hierarchical model (prior means
/// 1); voxels of the last two areas are pure noise.
pub fn mixed_dataset(seed: u64) -> Dataset {
    let part = RoiPartition::blocks(&[25; 4]).unwrap();
    let x = standard_normal_design(100, 8, seed);
    let noise: Vec<bool> = (0..100).map(|v| v >= 50).collect();
    simulate_sae_mixed(&x, &part, &Hyperparameters::default(), &noise, seed + 1)
        .unwrap()
        .0
}

pub fn save(dataset: &Dataset, dir: &Path) -> PathBuf {
    save_dataset(dataset, dir).unwrap();
    dir.to_path_buf()
}
