use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use pure_core::data::{
    sample_unlabeled, split_random, DatasetSplit, Interactions, RngStream, StreamLabel,
};
use pure_core::eval::{evaluate, Protocol};
use pure_core::model::{
    adam_step, disc_backward, gen_backward, sample_noise, AdamState, DiscRecord,
    DiscriminatorParams, GenRecord, GeneratorParams, LogTerm, Side, Slot,
};
use rand::Rng;

const USERS: usize = 943;
const ITEMS: usize = 1682;
const DIM: usize = 5;
const BATCH: usize = 128;

fn dataset() -> Interactions {
    let mut rng = RngStream::new(7, StreamLabel::Split);
    let pairs: Vec<(usize, usize)> = (0..55_000)
        .map(|_| (rng.random_range(0..USERS), rng.random_range(0..ITEMS)))
        .collect();
    Interactions::from_pairs(USERS, ITEMS, pairs).unwrap()
}

fn split(data: &Interactions) -> DatasetSplit {
    split_random(data, 0.8, &mut RngStream::new(7, StreamLabel::Split)).unwrap()
}

fn discriminator() -> DiscriminatorParams {
    DiscriminatorParams::init(USERS, ITEMS, DIM, &mut RngStream::new(7, StreamLabel::Init)).unwrap()
}

fn scoring(c: &mut Criterion) {
    let disc = discriminator();
    c.bench_function("score_all_items_one_user", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for i in 0..ITEMS {
                acc += disc.pair_logit(black_box(3), i);
            }
            acc
        })
    });
}

fn discriminator_step(c: &mut Criterion) {
    let data = dataset();
    let disc = discriminator();
    let mut rng = RngStream::new(7, StreamLabel::Unlabeled);
    let positives: Vec<(usize, usize)> = data.positives().take(BATCH).collect();
    let unlabeled = sample_unlabeled(&data, BATCH, &mut rng).unwrap();
    let records: Vec<DiscRecord<'_>> = positives
        .iter()
        .map(|&(u, i)| (u, i, LogTerm::LogD, -1e-4))
        .chain(
            unlabeled
                .iter()
                .map(|&(u, i)| (u, i, LogTerm::LogOneMinusD, -1.0)),
        )
        .map(|(u, i, term, coefficient)| DiscRecord {
            user: Slot::Real(u),
            item: Slot::Real(i),
            coefficient,
            term,
        })
        .collect();
    c.bench_function("disc_backward_batch", |b| {
        b.iter(|| disc_backward(black_box(&disc), black_box(&records)).unwrap())
    });

    let grad = disc_backward(&disc, &records).unwrap();
    c.bench_function("adam_step_discriminator", |b| {
        b.iter_batched(
            || (disc.clone(), AdamState::new(&disc)),
            |(mut p, mut s)| adam_step(&mut s, &mut p, &grad, 1e-3).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn generator_step(c: &mut Criterion) {
    let disc = discriminator();
    let mut rng = RngStream::new(7, StreamLabel::Init);
    let gen = GeneratorParams::init(DIM, 2 * DIM, &mut rng).unwrap();
    let mut noise_rng = RngStream::new(7, StreamLabel::Noise);
    let noise: Vec<_> = (0..BATCH)
        .map(|_| sample_noise(DIM, 0.01, &mut noise_rng).unwrap())
        .collect();
    let records: Vec<GenRecord<'_>> = noise
        .iter()
        .enumerate()
        .map(|(k, z)| GenRecord {
            noise: z.view(),
            partner: k % USERS,
            side: Side::Item,
            coefficient: -1.0,
            term: LogTerm::LogD,
        })
        .collect();
    c.bench_function("gen_backward_batch", |b| {
        b.iter(|| gen_backward(black_box(&gen), black_box(&disc), black_box(&records)).unwrap())
    });
}

fn evaluation(c: &mut Criterion) {
    let data = dataset();
    let split = split(&data);
    let disc = discriminator();
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    group.bench_function("full", |b| {
        b.iter(|| evaluate(&disc, &split, Protocol::Full, 1).unwrap())
    });
    group.bench_function("sampled_500", |b| {
        b.iter(|| evaluate(&disc, &split, Protocol::Sampled { pool_size: 500 }, 1).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    scoring,
    discriminator_step,
    generator_step,
    evaluation
);
criterion_main!(benches);
