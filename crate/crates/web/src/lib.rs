//! WebAssembly bindings for the static demo page in `www/`. Each export
//! returns a JSON string; the `*_json` functions hold the logic so they can
//! be tested natively.

use dcsm_core::bench::parse_scene;
use dcsm_core::config::RunConfig;
use dcsm_core::dcsm::{patch_labels, token_labels};
use dcsm_core::oracle::Layout;
use dcsm_core::train::Featurizer;
use dcsm_core::verify::verify_spatial_contradiction;
use dcsm_core::world::{tokenize, Clause};
use dcsm_core::Result;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn featurizer() -> Result<Featurizer> {
    RunConfig::default().featurizer()
}

/// Object and attribute names of the default world plus the grid side.
pub fn vocabulary_json() -> Result<String> {
    let f = featurizer()?;
    let terms: Vec<&str> = f.world.terms.iter().map(|t| t.text.as_str()).collect();
    Ok(json!({
        "objects": f.world.objects,
        "attributes": f.world.attributes,
        "terms": terms,
        "grid": f.encoder.cfg.grid,
    })
    .to_string())
}

/// Normalized map of one caption against one scene, with labels.
pub fn map_json(caption: &str, scene: &str, use_frs: bool, noise_seed: u64) -> Result<String> {
    let f = featurizer()?;
    let tokens = tokenize(&f.world, caption)?;
    Clause::from_tokens(&f.world, &tokens)?;
    let image = f.image(&parse_scene(&f.world, scene)?, noise_seed)?;
    let text = f.encoder.embed_text(&tokens)?;
    let map = f.map(&(tokens.clone(), text.clone()), &image, use_frs)?;
    Ok(json!({
        "rows": map.rows,
        "cols": map.cols,
        "values": map.values,
        "row_labels": token_labels(&f.world, &text, &tokens),
        "col_labels": patch_labels(&image),
    })
    .to_string())
}

/// Global EOS-CLS cosine of each caption (one per line) against a scene.
pub fn cosine_json(captions: &str, scene: &str, noise_seed: u64) -> Result<String> {
    let f = featurizer()?;
    let image = f.image(&parse_scene(&f.world, scene)?, noise_seed)?;
    let rows = captions
        .lines()
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(|c| {
            let tokens = tokenize(&f.world, c)?;
            Clause::from_tokens(&f.world, &tokens)?;
            let text = f.encoder.embed_text(&tokens)?;
            Ok(json!({ "caption": c, "cosine": f.encoder.eos(&text).cos(f.encoder.cls(&image))? }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(serde_json::Value::Array(rows).to_string())
}

/// Error-vector dot products for betas (b1, b2, 3 - b1 - b2).
pub fn spatial_json(b1: f64, b2: f64, delta: f64) -> Result<String> {
    let mut cfg = RunConfig::default();
    cfg.delta = delta;
    cfg.validate()?;
    let (world, space) = cfg.verify_space(Layout::Random)?;
    let cert = verify_spatial_contradiction(&world, &space, [b1, b2, 3.0 - b1 - b2])?;
    let pairs: Vec<_> = cert.pairs.iter().map(|p| json!({ "name": p.name, "analytic": p.analytic, "numeric": p.numeric })).collect();
    Ok(json!({ "pairs": pairs, "contradiction": cert.contradiction_reproduced }).to_string())
}

fn js<T>(r: Result<T>) -> std::result::Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn vocabulary() -> std::result::Result<String, JsError> {
    js(vocabulary_json())
}

#[wasm_bindgen]
pub fn dcsm_map(caption: &str, scene: &str, use_frs: bool, noise_seed: u32) -> std::result::Result<String, JsError> {
    js(map_json(caption, scene, use_frs, noise_seed as u64))
}

#[wasm_bindgen]
pub fn global_cosines(captions: &str, scene: &str, noise_seed: u32) -> std::result::Result<String, JsError> {
    js(cosine_json(captions, scene, noise_seed as u64))
}

#[wasm_bindgen]
pub fn spatial_contradiction(b1: f64, b2: f64, delta: f64) -> std::result::Result<String, JsError> {
    js(spatial_json(b1, b2, delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    const SCENE: &str = "attr00 obj00@0,0; attr01 obj01@2,2";

    #[test]
    fn map_has_labels_and_shape() {
        let v: Value = serde_json::from_str(&map_json("obj00 above obj01", SCENE, true, 0).unwrap()).unwrap();
        assert_eq!(v["rows"], 6);
        assert_eq!(v["cols"], 10);
        assert_eq!(v["values"].as_array().unwrap().len(), 60);
        assert_eq!(v["row_labels"][1], "above");
        assert_eq!(v["col_labels"][0], "cls");
    }

    #[test]
    fn swapped_bindings_tie_under_global_cosine() {
        let v: Value =
            serde_json::from_str(&cosine_json("attr00 obj00 and attr01 obj01\nattr01 obj00 and attr00 obj01\n", SCENE, 3).unwrap())
                .unwrap();
        let a = v[0]["cosine"].as_f64().unwrap();
        let b = v[1]["cosine"].as_f64().unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn spatial_values_and_errors() {
        let v: Value = serde_json::from_str(&spatial_json(1.0, 1.0, 0.02).unwrap()).unwrap();
        assert_eq!(v["contradiction"], true);
        assert!((v["pairs"][0]["numeric"].as_f64().unwrap() - 0.04).abs() < 1e-12);
        assert!(map_json("obj00 sideways obj01", SCENE, true, 0).is_err());
        assert!(spatial_json(1.0, 1.0, 2.0).is_err());
        assert!(vocabulary_json().unwrap().contains("obj15"));
    }
}
