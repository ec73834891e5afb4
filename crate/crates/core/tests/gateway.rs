use std::sync::Arc;

use renewal_core::gateway::{
    CacheKey, CachedBackend, CountingBackend, EditParams, EditRequest, EvalContext, Evaluator, OracleParams,
    SyntheticOracle,
};
use renewal_core::metrics::Metric;
use renewal_core::synthetic::{self, half_mask, record_image, VocabSpec};

fn oracle() -> SyntheticOracle {
    let vocab = synthetic::vocabulary(&VocabSpec { words: 500, ..Default::default() }).unwrap();
    SyntheticOracle::new(Arc::new(vocab), OracleParams { noise_sigma: 0.05, ..Default::default() }).unwrap()
}

fn request(id: &str, trigger: &str, seed: u64) -> (EditRequest, EvalContext) {
    let req = EditRequest {
        image: record_image(id, 8, 8).unwrap(),
        mask: half_mask(8, 8).unwrap(),
        prompt: format!("{trigger} Park in a street"),
        seed,
        params: EditParams::default(),
    };
    (req, EvalContext::new(id, Some(trigger)))
}

#[test]
fn cache_replays_100_requests() {
    let dir = tempfile::tempdir().unwrap();
    let o = oracle();
    let words: Vec<String> = (0..100).map(|i| o.vocabulary().word(i * 5).to_string()).collect();
    let requests: Vec<_> = words.iter().enumerate().map(|(i, w)| request(&format!("rec{}", i % 7), w, i as u64)).collect();

    let cold = CachedBackend::new(CountingBackend::new(o.clone()), dir.path()).unwrap();
    let first: Vec<_> = requests.iter().map(|(r, c)| cold.edit_and_score(r, c).unwrap()).collect();
    assert_eq!(cold.inner().edit_calls(), 100);
    assert!(first.iter().all(|r| !r.cache_hit));

    let warm = CachedBackend::new(CountingBackend::new(o), dir.path()).unwrap();
    for ((r, c), expected) in requests.iter().zip(&first) {
        let got = warm.edit_and_score(r, c).unwrap();
        assert!(got.cache_hit);
        assert_eq!(got.scores, expected.scores);
        assert_eq!(got.edited_image, expected.edited_image);
        assert_eq!(got.model_id, expected.model_id);
    }
    assert_eq!(warm.inner().total_calls(), 0);
}

#[test]
fn cache_key_covers_every_field() {
    let (base, _) = request("a", "Lush", 1);
    let key = CacheKey::for_edit(&base);
    let variants = [
        EditRequest { seed: 2, ..base.clone() },
        EditRequest { prompt: "Lush Park in a street ".into(), ..base.clone() },
        EditRequest { params: EditParams { guidance_scale: 7.0, ..base.params }, ..base.clone() },
        EditRequest { params: EditParams { steps: 31, ..base.params }, ..base.clone() },
        EditRequest { image: record_image("b", 8, 8).unwrap(), ..base.clone() },
        EditRequest { mask: vec![0; 3], ..base.clone() },
    ];
    for v in &variants {
        assert_ne!(CacheKey::for_edit(v), key);
    }
    assert_eq!(CacheKey::for_edit(&base.clone()), key);
    assert_eq!(key.hex().len(), 64);
    assert_ne!(CacheKey::for_score(&base.image), key);
}

/// Kolmogorov-Smirnov test of the per-record base scores against the
/// uniform distribution on `[base_low, base_high]`.
#[test]
fn base_scores_are_uniform() {
    let o = oracle();
    let (lo, hi) = (o.params().base_low, o.params().base_high);
    for metric in Metric::ALL {
        let mut u: Vec<f64> = (0..2000).map(|i| (o.base(&format!("id-{i}"), metric) - lo) / (hi - lo)).collect();
        u.sort_by(f64::total_cmp);
        assert!(u.iter().all(|x| (0.0..=1.0).contains(x)));
        let n = u.len() as f64;
        let d = u
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
            .fold(0.0, f64::max);
        // 1% critical value
        let critical = 1.628 / n.sqrt();
        assert!(d < critical, "{metric:?}: D = {d}, critical {critical}");
    }
}

#[test]
fn oracle_scores_ignore_the_image() {
    let o = oracle();
    let (req, ctx) = request("same", "Beautiful", 3);
    let other = EditRequest { image: record_image("different", 8, 8).unwrap(), ..req.clone() };
    let a = o.edit_and_score(&req, &ctx).unwrap();
    let b = o.edit_and_score(&other, &ctx).unwrap();
    assert_eq!(a.scores, b.scores);
    assert_eq!(a.edited_image, req.image);
    assert!(o.edit_and_score(&req, &EvalContext::new("same", None)).is_err());
}
