use std::path::Path;

use criterion::{criterion_group, criterion_main, Criterion};
use facelight::exec::ExecPolicy;
use facelight::optim::{FitConfig, Trainer, View};
use facelight::render::{render_image, RenderOptions};
use facelight::scene::{Scene, Split};

fn bundled(name: &str) -> Scene {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes").join(name);
    Scene::load(&path, true).expect("bundled scene")
}

fn policies() -> [(&'static str, ExecPolicy); 2] {
    [("sequential", ExecPolicy::SEQUENTIAL), ("parallel", ExecPolicy::default())]
}

fn render(c: &mut Criterion) {
    let scene = bundled("head.json");
    let model = scene.build_model().unwrap();
    let cam = scene.split_cameras(Split::Train).unwrap().remove(2).camera;
    let mut group = c.benchmark_group("render_head_128");
    group.sample_size(10);
    for (name, policy) in policies() {
        let opts = RenderOptions {
            policy,
            ..Default::default()
        };
        group.bench_function(name, |b| b.iter(|| render_image(&model, &cam, &opts).unwrap()));
    }
    group.finish();
}

fn fit_step(c: &mut Criterion) {
    let mut scene = bundled("sphere.json");
    for o in &mut scene.file.orbits {
        o.resolution = 64;
    }
    let truth = scene.build_model().unwrap();
    let opts = RenderOptions::default();
    let train: Vec<View> = scene
        .split_cameras(Split::Train)
        .unwrap()
        .into_iter()
        .map(|c| View {
            image: render_image(&truth, &c.camera, &opts).unwrap().image,
            camera: c.camera,
        })
        .collect();
    let init = bundled("sphere_init.json");
    let mut group = c.benchmark_group("fit_gradient_2048_rays");
    group.sample_size(10);
    for (name, policy) in policies() {
        let config = FitConfig {
            deterministic: policy.deterministic,
            parallel: policy.parallel,
            ..Default::default()
        };
        let tr = Trainer::new(init.build_model().unwrap(), config, train.clone(), Vec::new()).unwrap();
        group.bench_function(name, |b| b.iter(|| tr.loss_and_gradient(0).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, render, fit_step);
criterion_main!(benches);
