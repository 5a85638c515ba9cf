use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use synprobe::data::LabeledExample;
use synprobe::exec::Exec;
use synprobe::intrinsic::spectral_profile;
use synprobe::model::{ModelConfig, Parameters, CLS, SEP};
use synprobe::train::{train_step, Adam, PgdConfig, TrainConfig, TrainMode};

fn setup() -> (Parameters, Vec<LabeledExample>) {
    let cfg = ModelConfig {
        n_layers: 4,
        n_heads: 4,
        d_model: 32,
        d_ff: 64,
        vocab_size: 60,
        max_len: 16,
        n_classes: 4,
    };
    let p = Parameters::init(cfg, 1).unwrap();
    let data = (0..16)
        .map(|i| {
            let mut ids = vec![CLS];
            ids.extend((0..8).map(|k| 5 + ((i * 11 + k * 7) % 55) as u32));
            ids.push(SEP);
            LabeledExample { ids, label: i % 4 }
        })
        .collect();
    (p, data)
}

fn bench(c: &mut Criterion) {
    let (p, data) = setup();
    let batch: Vec<&LabeledExample> = data.iter().collect();
    let cfg = TrainConfig {
        max_len: 16,
        ..Default::default()
    };
    let pgd = PgdConfig::with_alpha_fraction(0.05, 0.2, 3).unwrap();
    let mut g = c.benchmark_group("train_step");
    g.sample_size(10);
    for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        for (mode, pgd) in [(TrainMode::Vanilla, None), (TrainMode::Adversarial, Some(&pgd))] {
            g.bench_function(BenchmarkId::new(name, format!("{mode:?}")), |b| {
                b.iter(|| {
                    let mut q = p.clone();
                    let mut opt = Adam::new(&q);
                    train_step(&mut q, &mut opt, &batch, mode, pgd, 0, &cfg, exec).unwrap()
                })
            });
        }
    }
    g.finish();

    let mut g = c.benchmark_group("spectral_profile");
    g.sample_size(10);
    for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        g.bench_function(name, |b| b.iter(|| spectral_profile(&p, &data[..8], &[4], exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
