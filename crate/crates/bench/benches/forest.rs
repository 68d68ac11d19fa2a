use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ptz_slam::forest::{ExampleReservoir, ForestParams, PanTiltForest, TrainingExample};
use ptz_slam::sim::{presets, simulate, SimConfig};

fn keyframes() -> Vec<Vec<TrainingExample>> {
    let config: SimConfig = serde_json::from_value(presets::preset("reloc_3600").unwrap()).unwrap();
    let b = simulate(&config).unwrap();
    (0..10)
        .map(|k| {
            b.frames[k * 360]
                .observations
                .iter()
                .filter_map(|o| {
                    Some(TrainingExample {
                        descriptor: o.descriptor.clone(),
                        ray: b.scene.landmark(o.true_landmark_id?)?.ray,
                    })
                })
                .collect()
        })
        .collect()
}

fn online_vs_batch(c: &mut Criterion) {
    let kfs = keyframes();
    let params = ForestParams::default();
    let mut warm = PanTiltForest::new(params.clone());
    let mut reservoir = ExampleReservoir::default();
    for (k, ex) in kfs[..9].iter().enumerate() {
        warm.online_update(&mut reservoir, k as u64, ex).unwrap();
    }
    let all: Vec<TrainingExample> = kfs.concat();

    let mut group = c.benchmark_group("forest_tenth_keyframe");
    group.bench_function("online_update", |b| {
        b.iter_batched(
            || (warm.clone(), reservoir.clone()),
            |(mut f, mut r)| f.online_update(&mut r, 9, &kfs[9]).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.bench_function("batch_retrain", |b| {
        b.iter(|| PanTiltForest::train(&all, params.clone()))
    });
    group.finish();

    c.bench_function("forest_predict", |b| {
        b.iter(|| warm.predict(&all[17].descriptor))
    });
}

criterion_group!(benches, online_vs_batch);
criterion_main!(benches);
