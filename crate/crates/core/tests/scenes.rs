use std::fs;
use std::path::{Path, PathBuf};

use facelight::scene::{load_light, FitJob, Scene};

fn scenes() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes")
}

const SCENES: [&str; 4] = ["sphere.json", "sphere_init.json", "specular.json", "head.json"];

#[test]
fn bundled_scenes_load_and_build() {
    for name in SCENES {
        let s = Scene::load(&scenes().join(name), true).unwrap_or_else(|e| panic!("{name}: {e}"));
        s.build_model().unwrap();
        assert!(!s.cameras().unwrap().is_empty(), "{name} has no cameras");
    }
    for name in ["light_studio.json", "light_key.json", "light_gray.json"] {
        load_light(&scenes().join(name)).unwrap();
    }
    let (job, base) = FitJob::load(&scenes().join("sphere_fit.json")).unwrap();
    let layout = job.prepare_layout(&base).unwrap();
    assert_eq!((layout.train.len(), layout.holdout.len()), (16, 4));
    assert!(layout.truth.is_some());
}

#[test]
fn load_save_load_is_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    for name in SCENES {
        let a = Scene::load(&scenes().join(name), true).unwrap();
        let p1 = dir.path().join("a.json");
        a.save(&p1).unwrap();
        let mut b = Scene::load(&p1, true).unwrap();
        b.base = a.base.clone();
        assert_eq!(a, b, "{name}");
        let p2 = dir.path().join("b.json");
        b.save(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap(), "{name}");
    }
}
