//! Straightforward reference implementations used to cross-check the
//! library. Written for clarity, not speed.

use drivelm_core::dataset::{parse_keyobj_tag, KeyObjectTag};
use drivelm_core::depth::DepthRaster;

/// Tries every `<`..`>` span of the text and keeps the ones that parse.
pub fn extract_tags_brute(text: &str) -> Vec<KeyObjectTag> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    for i in 0..bytes.len() {
        if bytes[i] != b'<' {
            continue;
        }
        for j in i + 1..bytes.len() {
            if bytes[j] == b'>' {
                if let Ok(tag) = parse_keyobj_tag(&text[i..=j]) {
                    out.push(tag);
                }
            }
        }
    }
    out
}

/// Nearest-rank percentile by full sort.
pub fn percentile_by_sort(values: &[f32], p: f64) -> f32 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = (p / 100.0 * v.len() as f64).ceil() as usize;
    v[rank.max(1).min(v.len()) - 1]
}

/// Pixels whose unit square overlaps the open box interior.
pub fn bbox_pixels(raster: &DepthRaster, x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Vec<f32> {
    let mut out = Vec::new();
    for y in 0..raster.height {
        for x in 0..raster.width {
            let (fx, fy) = (x as f64, y as f64);
            if fx + 1.0 > x_min && fx < x_max && fy + 1.0 > y_min && fy < y_max {
                out.push(raster.get(x, y));
            }
        }
    }
    out
}

/// Pixels within `size / 2` (Chebyshev) of the rounded center.
pub fn window_pixels(raster: &DepthRaster, center: (f64, f64), size: usize) -> Vec<f32> {
    let cx = (center.0.round() as i64).min(raster.width as i64 - 1);
    let cy = (center.1.round() as i64).min(raster.height as i64 - 1);
    let half = (size / 2) as i64;
    let mut out = Vec::new();
    for y in 0..raster.height as i64 {
        for x in 0..raster.width as i64 {
            if (x - cx).abs() <= half && (y - cy).abs() <= half {
                out.push(raster.get(x as usize, y as usize));
            }
        }
    }
    out
}

fn ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
}

fn count(haystack: &[Vec<String>], needle: &[String]) -> usize {
    haystack.iter().filter(|g| g.as_slice() == needle).count()
}

/// Clipped matches and candidate total at order `n`, by linear scans.
pub fn clipped_precision(candidate: &[String], references: &[Vec<String>], n: usize) -> (usize, usize) {
    let cand = ngrams(candidate, n);
    let refs: Vec<Vec<Vec<String>>> = references.iter().map(|r| ngrams(r, n)).collect();
    let mut distinct: Vec<Vec<String>> = Vec::new();
    for g in &cand {
        if !distinct.contains(g) {
            distinct.push(g.clone());
        }
    }
    let matched = distinct
        .iter()
        .map(|g| {
            let max_ref = refs.iter().map(|r| count(r, g)).max().unwrap_or(0);
            count(&cand, g).min(max_ref)
        })
        .sum();
    (matched, cand.len())
}

/// Sentence BLEU-`n` without smoothing; orders beyond the candidate length
/// are dropped from the geometric mean.
pub fn bleu_brute(candidate: &[String], references: &[Vec<String>], n: usize) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let c = candidate.len();
    let r = references
        .iter()
        .map(Vec::len)
        .min_by(|a, b| a.abs_diff(c).cmp(&b.abs_diff(c)).then(a.cmp(b)))
        .unwrap();
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    let orders = n.min(c);
    let mut logs = 0.0;
    for k in 1..=orders {
        let (m, t) = clipped_precision(candidate, references, k);
        if m == 0 {
            return 0.0;
        }
        logs += (m as f64 / t as f64).ln();
    }
    bp * (logs / orders as f64).exp()
}

fn is_subsequence(needle: &[&String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == *n))
}

/// LCS length by enumerating every subsequence of `a` (keep `a` short).
pub fn lcs_brute(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16);
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if is_subsequence(&sub, b) {
            best = k;
        }
    }
    best
}

pub fn rouge_l_brute(candidate: &[String], references: &[Vec<String>], beta: f64) -> f64 {
    let mut best = 0.0f64;
    for r in references {
        let lcs = lcs_brute(candidate, r) as f64;
        if lcs == 0.0 {
            continue;
        }
        let p = lcs / candidate.len() as f64;
        let rec = lcs / r.len() as f64;
        let f = (1.0 + beta * beta) * p * rec / (rec + beta * beta * p);
        best = best.max(f);
    }
    best
}

/// CIDEr-D with IDF from the reference sets, clipped numerator, gaussian
/// length penalty and a factor of 10.
pub fn cider_brute(items: &[(Vec<String>, Vec<Vec<String>>)], sigma: f64) -> Vec<f64> {
    let docs = items.len() as f64;
    let df = |g: &[String]| -> f64 {
        let hits = items
            .iter()
            .filter(|(_, refs)| refs.iter().any(|r| ngrams(r, g.len()).iter().any(|x| x.as_slice() == g)))
            .count();
        (hits.max(1)) as f64
    };
    let vector = |tokens: &[String], n: usize| -> Vec<(Vec<String>, f64)> {
        let grams = ngrams(tokens, n);
        let mut out: Vec<(Vec<String>, f64)> = Vec::new();
        for g in &grams {
            if out.iter().any(|(h, _)| h == g) {
                continue;
            }
            let tf = count(&grams, g) as f64;
            out.push((g.clone(), tf * (docs.ln() - df(g).ln())));
        }
        out
    };
    let norm = |v: &[(Vec<String>, f64)]| v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    items
        .iter()
        .map(|(cand, refs)| {
            if refs.is_empty() {
                return 0.0;
            }
            let mut total = 0.0;
            for r in refs {
                let delta = cand.len() as f64 - r.len() as f64;
                let penalty = (-(delta * delta) / (2.0 * sigma * sigma)).exp();
                let mut sum = 0.0;
                for n in 1..=4 {
                    let vc = vector(cand, n);
                    let vr = vector(r, n);
                    let mut dot = 0.0;
                    for (g, wc) in &vc {
                        if let Some((_, wr)) = vr.iter().find(|(h, _)| h == g) {
                            dot += wc.min(*wr) * wr;
                        }
                    }
                    let (nc, nr) = (norm(&vc), norm(&vr));
                    if nc != 0.0 && nr != 0.0 {
                        dot /= nc * nr;
                    }
                    sum += dot * penalty;
                }
                total += sum / 4.0;
            }
            10.0 * total / refs.len() as f64
        })
        .collect()
}
