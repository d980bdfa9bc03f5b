use dpacct_core::EdgeworthAccountant;
use dpacct_rgp::privatize::clip_in_place;
use dpacct_rgp::{
    per_sample_carrier_gradients, synthetic_clusters, train_nonprivate, train_private, CarrierPair, Head, ToyModel,
    TrainRunConfig,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_carriers(model: &ToyModel, rank: usize, seed: u64) -> Vec<CarrierPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model
        .layers()
        .iter()
        .map(|w| {
            let r = rank.min(w.nrows()).min(w.ncols());
            let l = DMatrix::from_fn(w.nrows(), r, |_, _| StandardNormal.sample(&mut rng));
            let rt = DMatrix::from_fn(w.ncols(), r, |_, _| StandardNormal.sample(&mut rng));
            CarrierPair::new(dpacct_rgp::gram_schmidt(&l).q, dpacct_rgp::gram_schmidt(&rt).q.transpose()).unwrap()
        })
        .collect()
}

#[test]
fn private_accuracy_close_to_nonprivate() {
    let data = synthetic_clusters(50_000, 20, 2, 3.0, 21).unwrap();
    let config = TrainRunConfig { seed: 21, ..TrainRunConfig::default() };
    let private = train_private(&config, &data, &EdgeworthAccountant::default()).unwrap();
    let baseline = train_nonprivate(&config, &data).unwrap();
    let gap = baseline.accuracy(&data) - private.model.accuracy(&data);
    assert!(gap <= 0.10, "gap {gap}");
    assert!(private.spent.unwrap().epsilon <= 8.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clipped_norms_respect_bound(seed in 0u64..1000, clip in 1e-3f64..10.0, rank in 1usize..4) {
        let data = synthetic_clusters(40, 6, 3, 2.0, seed).unwrap();
        let model = ToyModel::mlp(6, 5, 3, Head::Softmax, seed);
        let carriers = random_carriers(&model, rank, seed);
        let batch: Vec<usize> = (0..data.len()).collect();
        for mut g in per_sample_carrier_gradients(&model, &data, &batch, &carriers).unwrap() {
            clip_in_place(&mut g, clip);
            prop_assert!(g.norm() <= clip + 1e-12);
        }
    }
}
