use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use melody_lstm::encode::{build_vocab, encode_sequence, EncodedSequence};
use melody_lstm::midi_io::write_smf;
use melody_lstm::model::{backward, forward, Architecture, ClassWeights, Mode, ModelParams};
use melody_lstm::par::{self, Execution};
use melody_lstm::preprocess::{preprocess_midi, PreprocessConfig};
use melody_lstm::synth::{self, SynthConfig};

fn modes() -> Vec<(&'static str, Execution)> {
    [
        Some(("sequential", Execution::Sequential)),
        #[cfg(feature = "parallel")]
        Some(("parallel", Execution::Parallel)),
    ]
    .into_iter()
    .flatten()
    .collect()
}

fn corpus(n: usize) -> Vec<Vec<u8>> {
    let cfg = SynthConfig { n_label0: n / 2, n_label1: n - n / 2, ..SynthConfig::default() };
    synth::generate(&cfg, Execution::Sequential)
        .iter()
        .map(|g| write_smf(&g.file).unwrap())
        .collect()
}

fn encoded(files: &[Vec<u8>]) -> Vec<EncodedSequence> {
    let cfg = PreprocessConfig::default();
    let seqs: Vec<_> = files.iter().map(|b| preprocess_midi(b, "b", &cfg).unwrap().sequence).collect();
    let vocab = build_vocab(&seqs, 0.25, 4.0).unwrap();
    seqs.iter()
        .enumerate()
        .map(|(i, q)| encode_sequence(q, &vocab).unwrap().with_label((i % 2) as u8))
        .collect()
}

fn bench(c: &mut Criterion) {
    let files = corpus(240);
    let seqs = encoded(&files);
    let params = ModelParams::init(&Architecture::new(seqs[0].dim), 1);
    let batch = &seqs[..32];
    let labels: Vec<u8> = batch.iter().map(|q| q.label.unwrap()).collect();
    let cfg = PreprocessConfig::default();

    let mut group = c.benchmark_group("batch_gradient_32");
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let (_, cache) = forward(batch, &params, Mode::Train, 3, exec).unwrap();
                backward(batch, &cache, &labels, ClassWeights::uniform(), &params, exec).unwrap()
            })
        });
    }
    group.finish();

    let mut group = c.benchmark_group("eval_forward_240");
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| forward(&seqs, &params, Mode::Eval, 0, exec).unwrap().0)
        });
    }
    group.finish();

    let mut group = c.benchmark_group("preprocess_240_files");
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::map_indexed(exec, &files, |_, bytes| preprocess_midi(bytes, "b", &cfg).unwrap().on_grid))
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench
}
criterion_main!(benches);
