use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use dpgm::data::{parse_sparse, BinaryDataset, BinaryRecord};
use dpgm::eval::{self, Semantics};
use dpgm::mixture::{self, DpgmConfig, MixtureModel};

fn two_modes(n: usize, seed: u64) -> BinaryDataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let bits = (0..10)
                .map(|j| (rng.random::<f64>() < if (j < 5) == (i % 2 == 0) { 0.8 } else { 0.05 }) as u8)
                .collect();
            BinaryRecord::possibly_empty(bits).unwrap()
        })
        .collect();
    BinaryDataset::new(10, records).unwrap()
}

fn config() -> DpgmConfig {
    DpgmConfig {
        seed: 5,
        k: 2,
        epochs: 3,
        hidden: 6,
        features: 60,
        batch_size: 40.0,
        eta: 0.05,
        ..DpgmConfig::default()
    }
}

#[test]
fn sparse_text_round_trips() {
    let data = two_modes(50, 1);
    let back = parse_sparse(data.to_sparse_string().as_bytes(), true).unwrap();
    assert_eq!(back.m(), data.m());
    assert_eq!(back.records(), data.records());
}

#[test]
fn saved_model_generates_like_the_trained_one() {
    let data = two_modes(400, 2);
    let trained = mixture::train(&data, &config(), None, &mut |_| {}).unwrap();
    let loaded = MixtureModel::from_json(&trained.model.to_json().unwrap()).unwrap();
    let a = mixture::generate(&trained.model, 50, 20, 9).unwrap();
    let b = mixture::generate(&loaded, 50, 20, 9).unwrap();
    assert_eq!(a.records(), b.records());
    assert_eq!(a.len(), 50);
}

#[test]
fn released_fields_are_consistent() {
    let data = two_modes(400, 3);
    let cfg = config();
    let trained = mixture::train(&data, &cfg, None, &mut |_| {}).unwrap();
    let model = &trained.model;
    assert_eq!(model.k(), 2);
    assert_eq!(model.m(), 10);
    assert_eq!(model.n_records, 400);
    assert_eq!(model.privacy.delta, 1.0 / 400.0);
    assert_eq!(model.privacy.t_s, cfg.sgd_steps_for(400));
    let eps = model.privacy.epsilon.unwrap();
    assert!(eps.is_finite() && eps > 0.0);
    assert!(model.weights.iter().all(|&w| w >= 0.0));
}

#[test]
fn evaluation_of_a_copy_is_exact() {
    let data = two_modes(300, 4);
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    for semantics in [Semantics::Any, Semantics::All] {
        let workload = eval::generate_workload(10, data.max_l1(), 50, semantics, &mut rng).unwrap();
        let report = eval::evaluate(&data, &data, &workload).unwrap();
        assert_eq!(report.subsets.len(), 5);
        assert!(report.subsets.iter().all(|s| s.mean_rel_err == 0.0));
    }
}
