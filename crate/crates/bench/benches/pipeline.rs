use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use decoyforge::decoygen::remediate_corpus;
use decoyforge::model::loss_and_gradient;
use decoyforge::text::QuestionIndex;
use decoyforge::{DecoyGenConfig, DecoySet, MlpParams, Mode, WupCache};
use decoyforge_bench::{training_batch, world};

fn topn(c: &mut Criterion) {
    let mut group = c.benchmark_group("topn");
    for images in [200usize, 1000] {
        let w = world(images);
        let index = QuestionIndex::new(&w.corpus, &w.table);
        group.bench_with_input(BenchmarkId::new("records", w.corpus.len()), &index, |b, index| {
            let mut q = 0;
            b.iter(|| {
                q = (q + 97) % w.corpus.len();
                black_box(index.topn(q, 100))
            })
        });
    }
    group.finish();
}

fn wup(c: &mut Criterion) {
    let w = world(10);
    let words: Vec<&String> = w.values.iter().flatten().collect();
    c.bench_function("wup_word/uncached", |b| {
        b.iter(|| {
            let mut s = 0.0;
            for a in &words {
                s += w.taxonomy.wup_word(a, words[0]);
            }
            black_box(s)
        })
    });
    let cache = WupCache::new(&w.taxonomy, WupCache::DEFAULT_CAPACITY);
    c.bench_function("wup_word/cached", |b| {
        b.iter(|| {
            let mut s = 0.0;
            for a in &words {
                s += cache.wup_word(a, words[0]);
            }
            black_box(s)
        })
    });
}

fn train_step(c: &mut Criterion) {
    let w = world(100);
    let mut group = c.benchmark_group("loss_and_gradient");
    for mode in [Mode::A, Mode::IQA] {
        let (data, batch) = training_batch(&w, mode, 100);
        let d_img = if mode.uses_image() { w.features.dim() } else { 0 };
        let params = MlpParams::init(mode, d_img, w.table.dim(), 256, 0);
        group.bench_function(mode.as_str(), |b| b.iter(|| black_box(loss_and_gradient(&params, &data, &batch))));
    }
    group.finish();
}

fn generate(c: &mut Criterion) {
    let w = world(100);
    let cfg = DecoyGenConfig::default();
    let mut group = c.benchmark_group("remediate");
    group.sample_size(10);
    group.bench_function("iou+qou/600", |b| {
        b.iter(|| black_box(remediate_corpus(&w.corpus, &w.table, &w.taxonomy, &cfg, DecoySet::IouQou).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, topn, wup, train_step, generate);
criterion_main!(benches);
