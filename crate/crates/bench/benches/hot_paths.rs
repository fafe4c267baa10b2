use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use delta_core::baselines::{BaselineConfig, BaselineKind};
use delta_core::cr::{optimal_p_static, CycleMixture};
use delta_core::protocol::{DeltaConfig, DeltaContext, Variant};
use delta_core::sim::{run_episode, EpisodeConfig, ProtocolSpec};
use delta_core::smm::{build_model, default_psi_max};
use delta_core::{FeedbackModel, ModelVariant, SystemParams};

const SLOTS: u64 = 20_000;

fn episode(protocol: ProtocolSpec, feedback: FeedbackModel) -> EpisodeConfig {
    EpisodeConfig {
        slots: SLOTS,
        seed: 7,
        ..EpisodeConfig::new(SystemParams::symmetric(20, 0.5, 0.05).unwrap(), protocol, feedback)
    }
}

fn episodes(c: &mut Criterion) {
    let mut g = c.benchmark_group("episode_20k_slots");
    g.sample_size(10);
    let delta = ProtocolSpec::Delta(DeltaConfig::new(55.0, Variant::Delta));
    let plus = ProtocolSpec::Delta(DeltaConfig::new(55.0, Variant::DeltaPlus));
    let cases = [
        ("delta_ideal", episode(delta, FeedbackModel::Ideal)),
        ("delta_erasure", episode(delta, FeedbackModel::Erasure { prob: 0.1 })),
        ("delta_plus_ideal", episode(plus, FeedbackModel::Ideal)),
        ("maf", episode(ProtocolSpec::Baseline(BaselineConfig::polled(BaselineKind::Maf)), FeedbackModel::Ideal)),
        (
            "lzw",
            episode(
                ProtocolSpec::Baseline(BaselineConfig::new(BaselineKind::Lzw, 0.6, 0.2).unwrap()),
                FeedbackModel::Ideal,
            ),
        ),
    ];
    for (name, cfg) in cases {
        g.bench_function(name, |b| b.iter(|| run_episode(black_box(&cfg)).unwrap()));
    }
    g.finish();
}

fn bt_rules(c: &mut Criterion) {
    let params = SystemParams::symmetric(20, 0.5, 0.05).unwrap();
    let ctx = DeltaContext::new(&params, DeltaConfig::new(55.0, Variant::Delta), FeedbackModel::Ideal).unwrap();
    let psi: Vec<u32> = (0..20).map(|i| 3 + (i * 7) % 40).collect();
    c.bench_function("update_max_possible_aoii_n20", |b| {
        b.iter(|| ctx.update_max_possible_aoii(black_box(&psi), Some(3)))
    });
    c.bench_function("bt_transmits_n20", |b| b.iter(|| ctx.bt_transmits(black_box(5), black_box(12), &psi)));
}

fn models(c: &mut Criterion) {
    let mut g = c.benchmark_group("semi_markov");
    g.sample_size(10);
    for variant in [ModelVariant::Pessimistic, ModelVariant::Optimistic] {
        g.bench_function(format!("build_and_solve_n20_{}", variant.name()), |b| {
            b.iter(|| build_model(20, 0.025, 0.05, 55.0, default_psi_max(20), variant).unwrap().pi_zw().unwrap())
        });
    }
    g.finish();
    c.bench_function("cycle_mixture_cdf_n20", |b| {
        b.iter_batched(
            || CycleMixture::new(20, 0.025, 0.05, &optimal_p_static(20, 0.025, 0.05)).unwrap(),
            |m| m.cdf(160),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, episodes, bt_rules, models);
criterion_main!(benches);
