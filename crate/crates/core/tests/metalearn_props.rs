mod common;

use proptest::prelude::*;

use nettopo::autonet::{init_net, train, TrainConfig};
use nettopo::estimators::{MetaRecord, ModelState};
use nettopo::metalearn::{
    build_bank, meta_train, topo_loss_on, weighted_distance, BankEntry, MetaConfig, MetaRun, TopoBank,
};
use nettopo::synthdata::Generator;
use nettopo::topofeat::{characterize, ExtractionConfig, Family, GMode};

fn vectors(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-4.0f64..4.0, d), n)
}

fn bank_of(entries: Vec<Vec<f64>>, sigma: Vec<f64>, mask: Vec<bool>) -> TopoBank {
    TopoBank {
        layout_hash: "h".into(),
        current_task: "c".into(),
        entries: entries
            .into_iter()
            .map(|features| BankEntry {
                task_id: "o".into(),
                test_acc: 1.0,
                perf_gap: 0.0,
                features,
            })
            .collect(),
        sigma,
        mask,
    }
}

fn record(task: usize, test: f64, gap: f64, features: Vec<f64>) -> MetaRecord {
    MetaRecord {
        task_id: format!("t{task}"),
        arch_id: "a".into(),
        seed_id: 0,
        model_state: ModelState::Trained,
        train_acc: test + gap,
        test_acc: test,
        layout_hash: "h".into(),
        features,
    }
}

proptest! {
    #[test]
    fn weighted_distance_is_a_pseudometric(v in vectors(3, 5), sigma in prop::collection::vec(0.0f64..3.0, 5), mask in prop::collection::vec(any::<bool>(), 5)) {
        let bank = bank_of(vec![], sigma, mask);
        let d = |a: &[f64], b: &[f64]| weighted_distance(a, b, &bank).unwrap();
        prop_assert!(d(&v[0], &v[0]) == 0.0);
        prop_assert!((d(&v[0], &v[1]) - d(&v[1], &v[0])).abs() < 1e-12);
        prop_assert!(d(&v[0], &v[2]) <= d(&v[0], &v[1]) + d(&v[1], &v[2]) + 1e-12);
    }

    #[test]
    fn topo_loss_is_nonnegative_and_zero_on_a_bank_entry(entries in vectors(6, 4), pick in 0usize..6, sigma in prop::collection::vec(0.1f64..3.0, 4)) {
        let layout = std::sync::Arc::new(ExtractionConfig::default().layout_for(&[2, 2], GMode::Noph));
        let d = layout.len();
        let pad = |v: &[f64]| { let mut out = vec![0.0; d]; out[..4].copy_from_slice(v); out };
        let mut full_sigma = vec![0.0; d];
        full_sigma[..4].copy_from_slice(&sigma);
        let mut bank = bank_of(entries.iter().map(|e| pad(e)).collect(), full_sigma, vec![true; d]);
        bank.layout_hash = layout.hash().to_string();
        let config = MetaConfig { min_k: 1, families: Family::ALL.to_vec(), ..Default::default() };
        let subset: Vec<usize> = (0..6).collect();
        let t = nettopo::topofeat::TopoFeatureVector::new(pad(&entries[pick]), layout.clone()).unwrap();
        let tl = topo_loss_on(&t, &bank, &config, &subset).unwrap();
        prop_assert_eq!(tl.loss, 0.0);
        let shifted = nettopo::topofeat::TopoFeatureVector::new(t.values.iter().map(|v| v + 10.0).collect(), layout.clone()).unwrap();
        let tl = topo_loss_on(&shifted, &bank, &MetaConfig { min_k: 3, ..config }, &subset).unwrap();
        prop_assert!(tl.loss > 0.0);
    }

    #[test]
    fn gradient_stays_inside_optimized_families(seed in 0u64..200, fams in prop::sample::subsequence(Family::ALL.to_vec(), 1..4)) {
        let net = init_net(&[2, 4, 2], seed).unwrap();
        let (x, _) = common::batch(Generator::Moons, 16, seed);
        let config = ExtractionConfig { g_mode: GMode::Both, ..Default::default() };
        let t = characterize(&net, &x, &config).unwrap();
        let entries: Vec<Vec<f64>> = (1..4).map(|k| t.values.iter().map(|v| v + k as f64 * 0.1).collect()).collect();
        let mut bank = bank_of(entries, vec![1.0; t.len()], vec![true; t.len()]);
        bank.layout_hash = t.layout.hash().to_string();
        let meta = MetaConfig { min_k: 2, families: fams.clone(), ..Default::default() };
        let tl = topo_loss_on(&t, &bank, &meta, &[0, 1, 2]).unwrap();
        let allowed = t.layout.family_mask(&fams);
        for (g, ok) in tl.grad.iter().zip(allowed) {
            prop_assert!(ok || *g == 0.0);
        }
        prop_assert!(tl.grad.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn bank_admission_is_monotone(tests in prop::collection::vec(0.5f64..1.0, 12), gaps in prop::collection::vec(0.0f64..0.05, 12), feats in vectors(12, 3), lo in 0.5f64..0.9, step in 0.0f64..0.1) {
        let records: Vec<MetaRecord> = (0..12).map(|i| record(i % 4, tests[i], gaps[i], feats[i].clone())).collect();
        let size = |thr: f64| {
            let config = MetaConfig { test_threshold: thr, gap_threshold: 1.0, tau_corr: 0.0, ..Default::default() };
            build_bank(&records, "t0", &config).map_or(0, |b| b.len())
        };
        prop_assert!(size(lo + step) <= size(lo));
        let bank = build_bank(&records, "t0", &MetaConfig { test_threshold: 0.0, gap_threshold: 1.0, tau_corr: 0.0, ..Default::default() }).unwrap();
        prop_assert!(bank.entries.iter().all(|e| e.task_id != "t0"));
    }
}

#[test]
fn zero_lambda_reproduces_plain_training_bitwise() {
    let (x, y) = common::batch(Generator::Spirals, 40, 2);
    let extraction = ExtractionConfig::default();
    let probe = init_net(&[2, 8, 8, 2], 0).unwrap();
    let t = characterize(&probe, &x, &extraction).unwrap();
    let mut bank = bank_of(
        vec![t.values.iter().map(|v| v * 0.5).collect(); 6],
        vec![1.0; t.len()],
        vec![true; t.len()],
    );
    bank.layout_hash = t.layout.hash().to_string();
    let meta = MetaConfig {
        lambda: 0.0,
        ..Default::default()
    };
    let train_config = TrainConfig::full_batch(30);
    let mut a = init_net(&[2, 8, 8, 2], 7).unwrap();
    let mut b = a.clone();
    let run = MetaRun {
        bank: &bank,
        meta: &meta,
        extraction: &extraction,
        train: &train_config,
    };
    let losses = meta_train(&mut a, &x, &y, &run, 30).unwrap();
    train(&mut b, &x, &y, &train_config).unwrap();
    assert_eq!(a, b);
    assert!(losses.iter().all(|l| l.total.is_finite() && l.total == l.conv));
}
