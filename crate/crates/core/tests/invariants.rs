use cartforest::forest::ResampleMode;
use cartforest::prune::{objective, prune};
use cartforest::{Dataset, Forest, ForestConfig, Model, Mtry, PruneConfig, Tree, TreeConfig};
use proptest::prelude::*;

fn dataset() -> impl Strategy<Value = Dataset> {
    (1usize..5, 2usize..60).prop_flat_map(|(p, n)| {
        (
            prop::collection::vec(prop::collection::vec(0u8..8, n), p),
            prop::collection::vec(-5.0f64..5.0, n),
        )
            .prop_map(|(cols, y)| {
                let cols = cols
                    .into_iter()
                    .map(|c| c.into_iter().map(|v| f64::from(v) / 8.0).collect())
                    .collect();
                Dataset::from_columns(cols, y).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictions_stay_within_response_range(data in dataset(), depth in 0usize..6) {
        let tree = Tree::fit(&data, &TreeConfig::new(depth)).unwrap();
        let lo = data.response().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = data.response().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in tree.predict_rows(&data).unwrap() {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn deeper_trees_never_fit_worse(data in dataset(), depth in 1usize..6) {
        let tree = Tree::fit(&data, &TreeConfig::new(depth)).unwrap();
        let errs = tree.training_errors_by_depth(&data).unwrap();
        prop_assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        prop_assert!((errs[errs.len() - 1] - tree.training_error(&data).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn leaf_counts_respect_depth(data in dataset(), depth in 0usize..6) {
        let tree = Tree::fit(&data, &TreeConfig::new(depth)).unwrap();
        prop_assert!(tree.n_leaves() <= 1 << depth);
        prop_assert!(tree.n_leaves() <= data.n());
        prop_assert_eq!(tree.n_leaves(), tree.n_internal() + 1);
    }

    #[test]
    fn pruning_never_raises_the_objective(data in dataset(), depth in 1usize..5, alpha in 0.0f64..3.0) {
        let tree = Tree::fit(&data, &TreeConfig::new(depth)).unwrap();
        let cfg = PruneConfig::new(alpha).unwrap();
        let pruned = prune(&tree, &data, &cfg).unwrap();
        prop_assert!(pruned.n_leaves() <= tree.n_leaves());
        prop_assert!(objective(&pruned, &data, &cfg).unwrap() <= objective(&tree, &data, &cfg).unwrap() + 1e-12);
    }

    #[test]
    fn model_json_round_trips(data in dataset(), seed in any::<u64>()) {
        let forest = Forest::fit(&data, &ForestConfig::new(3, 4).with_seed(seed)).unwrap();
        let back = Model::from_json(&forest.to_json().unwrap()).unwrap();
        for x in data.rows() {
            prop_assert_eq!(back.predict(&x).unwrap().to_bits(), forest.predict(&x).unwrap().to_bits());
        }
    }

    #[test]
    fn single_unresampled_forest_is_the_tree(data in dataset(), depth in 0usize..5, seed in any::<u64>()) {
        let tree = Tree::fit(&data, &TreeConfig::new(depth)).unwrap();
        let cfg = ForestConfig::new(depth, 1)
            .with_mtry(Mtry::All)
            .with_resample(ResampleMode::None)
            .with_seed(seed);
        let forest = Forest::fit(&data, &cfg).unwrap();
        for x in data.rows() {
            prop_assert_eq!(forest.predict(&x).unwrap().to_bits(), tree.predict(&x).unwrap().to_bits());
        }
    }
}
