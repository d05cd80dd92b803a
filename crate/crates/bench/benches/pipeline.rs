use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use ferroscope::anomap::{self, RenderOptions};
use ferroscope::imgrid::{self, TilePolicy};
use ferroscope::nets::{self, build_discriminator, build_generator, NetConfig};
use ferroscope::ocsvm::{self, FitParams};
use ferroscope::synthdata::{gen_normal, ClassCounts, CorpusConfig};
use ferroscope::trainer::{GanTrainer, TrainConfig};
use ferroscope::{FeatureVector, RawImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiles(n: usize) -> Vec<ferroscope::UnitImage> {
    gen_normal(&CorpusConfig::new(32, ClassCounts::default(), 1), n)
        .into_iter()
        .map(|t| t.tile)
        .collect()
}

fn networks(c: &mut Criterion) {
    let cfg = NetConfig::desk();
    let d = build_discriminator(&cfg, 1).unwrap();
    let batch = tiles(64);
    c.bench_function("discriminator features, 64 tiles", |b| {
        b.iter(|| nets::extract_features(&d, black_box(&batch)).unwrap())
    });
    let x = nets::tiles_to_tensor(&d, batch[..4].iter()).unwrap();
    c.bench_function("gan step, batch 4", |b| {
        b.iter_batched(
            || (build_generator(&cfg, 2).unwrap(), build_discriminator(&cfg, 3).unwrap()),
            |(mut g, mut d)| {
                let mut t = GanTrainer::new(&mut g, &mut d, &TrainConfig::gan()).unwrap();
                t.step(&x).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

fn svm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let feats: Vec<FeatureVector> = (0..512)
        .map(|_| FeatureVector {
            values: (0..64).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        })
        .collect();
    c.bench_function("ocsvm fit, 512 x 64", |b| {
        b.iter(|| ocsvm::fit(black_box(&feats), &FitParams::default()).unwrap())
    });
    let model = ocsvm::fit(&feats, &FitParams::default()).unwrap();
    c.bench_function("ocsvm decision", |b| b.iter(|| model.decision(black_box(&feats[7])).unwrap()));
}

fn imaging(c: &mut Criterion) {
    let img = RawImage::new(256, 1600, 1, (0..256 * 1600).map(|i| (i % 251) as u8).collect()).unwrap();
    c.bench_function("tile 256x1600 scale-up", |b| {
        b.iter(|| imgrid::tile(black_box(&img), "s", 256, TilePolicy::ScaleUp).unwrap())
    });
    let (grid, _) = imgrid::tile(&img, "s", 256, TilePolicy::ScaleUp).unwrap();
    let values: Vec<f64> = (0..grid.len()).map(|i| i as f64 / grid.len() as f64).collect();
    let map = anomap::build_map(&grid, &values, "s").unwrap();
    let opts = RenderOptions { alpha: 1.0, smooth: true };
    c.bench_function("render smooth heatmap 256x1792", |b| {
        b.iter(|| anomap::render(black_box(&map), &opts, None).unwrap())
    });
}

criterion_group!(benches, networks, svm, imaging);
criterion_main!(benches);
