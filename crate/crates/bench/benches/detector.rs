use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use num_complex::Complex64;

use cpi_scma::sim::{SimConfig, SimSystem, System};
use cpi_scma::MpaDetector;

fn system(kind: System, snr: f64) -> SimSystem {
    let mut cfg = SimConfig::reference(kind, 4, 2, vec![snr]);
    cfg.seed = 1;
    SimSystem::new(&cfg).unwrap()
}

fn mpa_slot(c: &mut Criterion) {
    let sys = system(System::CpiScma, 10.0);
    let det = MpaDetector::new(&sys.codebook, &sys.graph, sys.mpa).unwrap();
    let inputs = sys.draw_frame(0, 0).unwrap();
    let h: Vec<Complex64> = (0..6)
        .flat_map(|j| inputs.frame.channel.user_gains(j)[..4].to_vec())
        .collect();
    let y = &inputs.frame.chips[..4];
    c.bench_function("mpa_slot_augmented", |b| {
        b.iter(|| {
            det.run_slot(y, &h, inputs.frame.noise_var, sys.format.scale())
                .unwrap()
        })
    });
}

fn frames(c: &mut Criterion) {
    for (name, kind) in [
        ("detect_frame_cpi_4_2", System::CpiScma),
        ("detect_frame_baseline", System::CScma),
    ] {
        let sys = system(kind, 10.0);
        let det = sys.detector().unwrap();
        let mut next = 0u64;
        c.bench_function(name, |b| {
            b.iter_batched(
                || {
                    next += 1;
                    sys.draw_frame(0, next).unwrap()
                },
                |inputs| det.detect_frame(&inputs.frame).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
}

criterion_group!(benches, mpa_slot, frames);
criterion_main!(benches);
