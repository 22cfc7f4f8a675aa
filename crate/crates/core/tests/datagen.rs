use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use imgcore::Image;
use lmdeblur::datagen::{desk_record_specs, generate_dataset, MotionKernel};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for sub in [dir.to_path_buf(), dir.join("images")] {
        for entry in fs::read_dir(&sub).unwrap() {
            let path = entry.unwrap().path();
            if path.is_file() {
                let digest = Sha256::digest(fs::read(&path).unwrap());
                let name = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(name, format!("{digest:x}"));
            }
        }
    }
    out
}

#[test]
fn generation_is_byte_identical_across_runs() {
    let specs = desk_record_specs(10, 48, 64, 5, 0.2);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&specs, a.path()).unwrap();
    generate_dataset(&specs, b.path()).unwrap();
    let (ha, hb) = (hashes(a.path()), hashes(b.path()));
    // manifest plus four images per record
    assert_eq!(ha.len(), 1 + 4 * 10);
    assert_eq!(ha, hb);
}

#[test]
fn different_seeds_give_different_data() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&desk_record_specs(2, 32, 32, 1, 0.5), a.path()).unwrap();
    generate_dataset(&desk_record_specs(2, 32, 32, 2, 0.5), b.path()).unwrap();
    assert_ne!(hashes(a.path()), hashes(b.path()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn motion_kernel_has_unit_mass(length in 1.0f32..15.0, angle in -4.0f32..4.0) {
        let k = MotionKernel::new(length, angle).unwrap();
        let mass: f64 = k.taps().iter().map(|&t| t as f64).sum();
        prop_assert!((mass - 1.0).abs() < 1e-5);
        prop_assert!(k.taps().iter().all(|&t| t >= 0.0));
    }

    #[test]
    fn convolution_keeps_constants_away_from_the_border(length in 1.0f32..9.0, angle in 0.0f32..3.2, v in 0.0f32..1.0) {
        let k = MotionKernel::new(length, angle).unwrap();
        let img = Image::filled(24, 24, 1, v);
        let out = k.convolve(&img);
        let r = k.radius();
        for y in r..24 - r {
            for x in r..24 - r {
                prop_assert!((out.get(y, x, 0) - v).abs() < 1e-5);
            }
        }
    }
}
