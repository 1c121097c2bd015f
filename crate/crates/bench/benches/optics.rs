use criterion::{criterion_group, criterion_main, Criterion};
use lenscoder::e2e::slm_psf;
use lenscoder::grid::{ConvPlan, RealGrid};
use lenscoder::optics::{propagate, spherical_source, PropagationPlan, SourceSpec};
use lenscoder::simcam::Simulator;
use lenscoder_bench::{desk_config, square_scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bench_propagation(c: &mut Criterion) {
    let plan = PropagationPlan::new(192, 256, 1.5e-5, 4e-3, 532e-9).unwrap();
    let field = spherical_source(192, 256, 1.5e-5, &SourceSpec::new(0.4, 532e-9).unwrap());
    c.bench_function("blas_propagate_192x256", |b| b.iter(|| propagate(&field, &plan).unwrap()));
}

fn bench_psf(c: &mut Criterion) {
    let cfg = desk_config();
    let state = cfg.initial_slm();
    c.bench_function("slm_psf_rgb_95x127", |b| b.iter(|| slm_psf(&cfg, &state).unwrap()));
}

fn bench_convolution(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (h, w) = (95, 127);
    let kernel: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
    let scene = square_scene(h, w, 20);
    let plan = ConvPlan::new(h, w);
    let spec = plan.spectrum(&kernel);
    c.bench_function("fft_convolve_95x127", |b| b.iter(|| plan.convolve_with_spectrum(scene.plane(0), &spec)));

    let cfg = desk_config();
    let psf = RealGrid::from_vec(h, w, 1, kernel).unwrap();
    let sim = Simulator::new(cfg.sim.clone(), &psf).unwrap();
    c.bench_function("simulate_embedding_24x32", |b| {
        b.iter(|| sim.simulate_scene(&scene, None, &mut rng).unwrap())
    });
}

criterion_group!(benches, bench_propagation, bench_psf, bench_convolution);
criterion_main!(benches);
