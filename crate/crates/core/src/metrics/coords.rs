use std::sync::LazyLock;

use regex::Regex;

use crate::dataset::extract_tags;

pub const DEFAULT_MATCH_THRESHOLD_PX: f64 = 16.0;

static PAIR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\(\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*\)").unwrap()
});

/// Every `(x,y)` number pair in the text, then the centers of its
/// key-object tags.
pub fn coordinate_pairs(text: &str) -> Vec<(f64, f64)> {
    PAIR.captures_iter(text)
        .filter_map(|c| Some((c[1].parse().ok()?, c[2].parse().ok()?)))
        .chain(extract_tags(text).into_iter().map(|t| (t.center_x, t.center_y)))
        .collect()
}

/// Percentage of reference pairs with a predicted pair within `threshold`
/// pixels. `None` when the reference has no pairs.
pub fn match_score(prediction: &str, reference: &str, threshold: f64) -> Option<f64> {
    let refs = coordinate_pairs(reference);
    if refs.is_empty() {
        return None;
    }
    let preds = coordinate_pairs(prediction);
    let hit = refs
        .iter()
        .filter(|(rx, ry)| preds.iter().any(|(px, py)| (px - rx).hypot(py - ry) <= threshold))
        .count();
    Some(100.0 * hit as f64 / refs.len() as f64)
}
