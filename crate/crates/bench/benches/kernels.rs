use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use sapg_bench::{cartoon_image, deblur_model};
use sapg_core::prox::{prox_tv_iso, ProxCache};
use sapg_core::sampler::{myula_posterior_step, ChainState, KernelParams, LambdaRule};
use sapg_core::transforms::{CirculantBlur, LinearOperator, WaveletBasis};

fn bench_myula_step(c: &mut Criterion) {
    let (model, x0) = deblur_model(128, 128);
    let kernel =
        KernelParams::guideline_posterior(model.likelihood.lipschitz(), LambdaRule::Relaxed)
            .unwrap();
    c.bench_function("myula_step_tv_128", |b| {
        b.iter_batched(
            || ChainState::new(x0.clone(), 7, 1),
            |mut state| {
                myula_posterior_step(&model, &mut state, &[5.0], &kernel).unwrap();
                state
            },
            BatchSize::LargeInput,
        )
    });
}

fn bench_tv_prox(c: &mut Criterion) {
    let img = cartoon_image(128, 128);
    c.bench_function("tv_prox_25_iters_128", |b| {
        b.iter_batched(
            ProxCache::default,
            |mut cache| {
                prox_tv_iso(&img, 128, 128, 0.05, 25, Some(&mut cache.tv_dual)).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_blur_apply(c: &mut Criterion) {
    let img = cartoon_image(256, 256);
    let blur = CirculantBlur::uniform(9, 256, 256).unwrap();
    c.bench_function("circulant_blur_9x9_256", |b| b.iter(|| blur.apply(&img)));
}

fn bench_wavelet_analysis(c: &mut Criterion) {
    let img = cartoon_image(256, 256);
    let basis = WaveletBasis::undecimated_haar(256, 256, 3).unwrap();
    c.bench_function("undecimated_haar_analysis_256", |b| b.iter(|| basis.analysis(&img)));
}

criterion_group!(
    benches,
    bench_myula_step,
    bench_tv_prox,
    bench_blur_apply,
    bench_wavelet_analysis
);
criterion_main!(benches);
