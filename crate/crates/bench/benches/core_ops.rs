use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selfmi::cpc::{infonce_loss, scores_from_units, unit_normalize_rows};
use selfmi::data::{labels, ModalitySample};
use selfmi::encoders::encode_batch;
use selfmi::model::{forward, ForwardOptions, TaskSet};
use selfmi::params::Session;
use selfmi::training::{run_training, total_loss, TrainConfig};
use selfmi::{MetricsReport, Tape, Tensor};
use selfmi_bench::{standard_data, standard_model};

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (a, b) = (random(&mut rng, 64, 64), random(&mut rng, 64, 64));
    c.bench_function("matmul_64_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let (x, y) = (t.leaf(a.clone(), true), t.leaf(b.clone(), true));
            let p = t.matmul(x, y).unwrap();
            let s = t.sum(p).unwrap();
            t.backward(s).unwrap();
            black_box(t.grad(x).map(|g| g[0]))
        })
    });
}

fn bench_lstm(c: &mut Criterion) {
    let data = standard_data(64);
    let (model, store) = standard_model(&data);
    let seqs: Vec<&Tensor> = data.train.iter().take(32).map(|s| &s.audio).collect();
    c.bench_function("lstm_audio_batch32_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut sess = Session::new(&store, true);
            let h = encode_batch(&mut sess, &model.encoders[1], model.lstms[1].as_ref(), &seqs).unwrap();
            let s = sess.tape.sum(h).unwrap();
            sess.tape.backward(s).unwrap();
            black_box(sess.gradients().len())
        })
    });
}

fn bench_infonce(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random(&mut rng, 128, 16), random(&mut rng, 128, 16));
    c.bench_function("infonce_128_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let (x, y) = (t.leaf(a.clone(), true), t.leaf(b.clone(), true));
            let ux = unit_normalize_rows(&mut t, x).unwrap();
            let uy = unit_normalize_rows(&mut t, y).unwrap();
            let s = scores_from_units(&mut t, ux, uy).unwrap();
            let l = infonce_loss(&mut t, s).unwrap();
            t.backward(l).unwrap();
            black_box(t.value(l).item())
        })
    });
}

fn bench_objective(c: &mut Criterion) {
    let data = standard_data(64);
    let (model, store) = standard_model(&data);
    let batch: Vec<&ModalitySample> = data.train.iter().take(32).collect();
    let y = labels(&data.train[..32]);
    c.bench_function("full_objective_batch32_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut sess = Session::new(&store, true);
            let opts = ForwardOptions {
                tasks: TaskSet::ALL,
                with_cpc: true,
                ..ForwardOptions::eval()
            };
            let out = forward(&mut sess, &model, &batch, opts).unwrap();
            let terms = total_loss(
                &mut sess.tape,
                out.y_m,
                &y,
                out.y_s,
                [Some(&y[..]); 3],
                out.cpc.as_ref(),
                0.1,
                None,
            )
            .unwrap();
            sess.tape.backward(terms.total).unwrap();
            black_box(sess.gradients().len())
        })
    });
}

fn bench_training(c: &mut Criterion) {
    let data = standard_data(200);
    let mut cfg = TrainConfig::new(2, 0);
    cfg.batch_size = 32;
    cfg.range = data.range;
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("two_epochs_200_samples", |bench| {
        bench.iter(|| black_box(run_training(&cfg, &data).unwrap().best_epoch))
    });
    group.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y: Vec<f64> = (0..600).map(|_| rng.random_range(-3.0..3.0)).collect();
    let p: Vec<f64> = y.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
    c.bench_function("metrics_600", |bench| {
        bench.iter_batched(
            || (p.clone(), y.clone()),
            |(p, y)| black_box(MetricsReport::evaluate(&p, &y).unwrap().mae),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(
    benches,
    bench_matmul,
    bench_lstm,
    bench_infonce,
    bench_objective,
    bench_training,
    bench_metrics
);
criterion_main!(benches);
