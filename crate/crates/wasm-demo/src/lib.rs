//! Browser bindings for the interactive demo page in `www/`.
//!
//! Each export takes plain numbers and returns a JSON string that the page
//! plots on a canvas. The `*_json` functions carry the logic and are what the
//! native tests exercise.

use cartforest::data::{generate_additive, ComponentFn, FeatureLaw};
use cartforest::verify::{check_training_bound, ModelFamily, TvMode};
use cartforest::{AdditiveModel, Forest, ForestConfig, Result, Tree, TreeConfig};
use serde_json::json;
use wasm_bindgen::prelude::*;

const GRID: usize = 200;

/// A ramp up near 0.3 followed by a tent peaking at 0.7.
fn curve_model() -> Result<AdditiveModel> {
    AdditiveModel::new(vec![ComponentFn::piecewise_linear(
        vec![0.0, 0.3, 0.31, 0.5, 0.7, 0.9, 1.0],
        vec![0.0, 0.0, 1.0, 1.0, 2.0, 1.0, 1.0],
    )?])
}

/// Fits a depth-`depth` tree to `n` noisy draws of a one-dimensional curve.
pub fn fit_curve_json(n: usize, depth: usize, noise_sd: f64, seed: u64) -> Result<String> {
    let g = curve_model()?;
    let data = generate_additive(&g, n, noise_sd, FeatureLaw::Uniform01, seed)?;
    let tree = Tree::fit(&data, &TreeConfig::new(depth))?;
    let grid: Vec<f64> = (0..=GRID).map(|i| i as f64 / GRID as f64).collect();
    let truth = grid.iter().map(|&x| g.eval(&[x])).collect::<Result<Vec<_>>>()?;
    let fit = grid.iter().map(|&x| tree.predict(&[x])).collect::<Result<Vec<_>>>()?;
    Ok(json!({
        "x": data.column(0),
        "y": data.response(),
        "grid": grid,
        "truth": truth,
        "fit": fit,
        "leaves": tree.n_leaves(),
        "train_mse": tree.training_error(&data)?,
    })
    .to_string())
}

/// Excess training risk by depth against `‖g‖²_TV/(K+3)` for the sparse
/// additive model in `p ≥ 3` dimensions.
pub fn bound_curve_json(n: usize, p: usize, noise_sd: f64, k_max: usize, seed: u64) -> Result<String> {
    let g = ModelFamily::SparseMixed.build(p)?;
    let data = generate_additive(&g, n, noise_sd, FeatureLaw::Uniform01, seed)?;
    let report = check_training_bound(&data, &g, k_max, TvMode::Analytic)?;
    Ok(serde_json::to_string(&report)?)
}

/// Held-out error of a single tree and of forests built from the first
/// `m = 1..=trees` trees of one ensemble.
pub fn forest_vs_tree_json(
    n: usize,
    p: usize,
    depth: usize,
    trees: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<String> {
    let g = ModelFamily::SparseMixed.build(p)?;
    let data = generate_additive(&g, n, noise_sd, FeatureLaw::Uniform01, seed)?;
    let test = generate_additive(&g, 1000, 0.0, FeatureLaw::Uniform01, seed ^ 0x9e37_79b9)?;
    let tree = Tree::fit(&data, &TreeConfig::new(depth))?;
    let forest = Forest::fit(&data, &ForestConfig::new(depth, trees).with_seed(seed))?;

    let mse = |pred: &[f64]| {
        pred.iter()
            .zip(test.response())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / pred.len() as f64
    };
    let mut sums = vec![0.0; test.n()];
    let mut by_trees = Vec::with_capacity(trees);
    for (m, t) in forest.trees().iter().enumerate() {
        for (s, v) in sums.iter_mut().zip(t.predict_rows(&test)?) {
            *s += v;
        }
        let avg: Vec<f64> = sums.iter().map(|s| s / (m + 1) as f64).collect();
        by_trees.push(mse(&avg));
    }
    Ok(json!({
        "tree_mse": mse(&tree.predict_rows(&test)?),
        "forest_mse": by_trees,
        "q": forest.q(),
    })
    .to_string())
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn fit_curve(n: usize, depth: usize, noise_sd: f64, seed: u32) -> std::result::Result<String, JsError> {
    js(fit_curve_json(n, depth, noise_sd, seed.into()))
}

#[wasm_bindgen]
pub fn bound_curve(n: usize, p: usize, noise_sd: f64, k_max: usize, seed: u32) -> std::result::Result<String, JsError> {
    js(bound_curve_json(n, p, noise_sd, k_max, seed.into()))
}

#[wasm_bindgen]
pub fn forest_vs_tree(
    n: usize,
    p: usize,
    depth: usize,
    trees: usize,
    noise_sd: f64,
    seed: u32,
) -> std::result::Result<String, JsError> {
    js(forest_vs_tree_json(n, p, depth, trees, noise_sd, seed.into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn fit_curve_shapes() {
        let v = parse(&fit_curve_json(300, 4, 0.1, 1).unwrap());
        assert_eq!(v["x"].as_array().unwrap().len(), 300);
        assert_eq!(v["fit"].as_array().unwrap().len(), GRID + 1);
        assert!(v["leaves"].as_u64().unwrap() <= 16);
    }

    #[test]
    fn bound_curve_has_no_violations() {
        let v = parse(&bound_curve_json(500, 5, 0.5, 8, 3).unwrap());
        let rows = v["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 9);
        assert!(rows.iter().all(|r| r["satisfied"] == true));
    }

    #[test]
    fn forest_curve_has_one_point_per_tree() {
        let v = parse(&forest_vs_tree_json(400, 6, 4, 20, 0.5, 2).unwrap());
        assert_eq!(v["forest_mse"].as_array().unwrap().len(), 20);
        assert!(v["tree_mse"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn bad_input_is_an_error() {
        assert!(bound_curve_json(100, 0, 0.5, 3, 1).is_err());
        assert!(fit_curve_json(0, 3, 0.5, 1).is_err());
    }
}
