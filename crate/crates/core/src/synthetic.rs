//! Seeded synthetic fixtures: structured vocabularies and tiny PNG records.
//!
//! Real word embeddings cluster along a low-dimensional manifold; the
//! generated vocabularies imitate that by placing words uniformly on a
//! 2-sphere and embedding the sphere in `dim` dimensions through a random
//! orthonormal map plus a little isotropic noise. Distances between words
//! then vary smoothly, which is what makes a Gaussian bump over them a
//! meaningful optimization landscape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::{EmbeddingError, EmbeddingVocabulary};
use crate::gateway::{raster, GatewayError};
use crate::seeds::derive_u64;

/// Words that must exist for the manual-prompt baseline.
pub const MANUAL_WORDS: [&str; 3] = ["Safe", "Beautiful", "Lively"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VocabSpec {
    pub words: usize,
    pub dim: usize,
    /// Standard deviation of the per-coordinate noise added before
    /// normalization.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for VocabSpec {
    fn default() -> Self {
        Self { words: 2000, dim: 16, jitter: 0.02, seed: 0 }
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Generates `spec.words` unit vectors. The first three entries are the
/// manual-prompt words; the rest are named `syn00000`, `syn00001`, ...
pub fn vocabulary(spec: &VocabSpec) -> Result<EmbeddingVocabulary, EmbeddingError> {
    assert!(spec.dim >= 3, "synthetic vocabularies need dim >= 3");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_u64(&[b"synthetic-vocab", &spec.seed.to_be_bytes()]));

    // orthonormal basis of a random 3-d subspace
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(3);
    while basis.len() < 3 {
        let mut v = gaussian_vec(&mut rng, spec.dim);
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }

    let names = MANUAL_WORDS
        .iter()
        .map(|s| s.to_string())
        .chain((0..).map(|i| format!("syn{i:05}")))
        .take(spec.words);
    let entries: Vec<(String, Vec<f64>)> = names
        .map(|name| {
            let mut p = gaussian_vec(&mut rng, 3);
            let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            p.iter_mut().for_each(|x| *x /= n);
            let mut v = vec![0.0; spec.dim];
            for (c, b) in p.iter().zip(&basis) {
                v.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
            }
            for x in v.iter_mut() {
                *x += spec.jitter * rng.sample::<f64, _>(StandardNormal);
            }
            (name, v)
        })
        .collect();
    EmbeddingVocabulary::from_entries(entries, true)
}

/// A small RGB image whose pixels depend on `record_id`, so distinct records
/// never share image bytes.
pub fn record_image(record_id: &str, width: u32, height: u32) -> Result<Vec<u8>, GatewayError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_u64(&[b"record-image", record_id.as_bytes()]));
    let pixels: Vec<u8> = (0..width * height * 3).map(|_| rng.gen()).collect();
    raster::encode_rgb(width, height, &pixels)
}

/// Single-channel mask with the lower half editable.
pub fn half_mask(width: u32, height: u32) -> Result<Vec<u8>, GatewayError> {
    let pixels: Vec<u8> = (0..height)
        .flat_map(|y| std::iter::repeat(if y >= height / 2 { 255 } else { 0 }).take(width as usize))
        .collect();
    raster::encode_luma(width, height, &pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_shape() {
        let v = vocabulary(&VocabSpec { words: 300, dim: 8, ..Default::default() }).unwrap();
        assert_eq!(v.len(), 300);
        assert_eq!(v.dim(), 8);
        assert!(v.contains("beautiful"));
        for i in 0..v.len() {
            let n: f64 = v.vector_at(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vocabulary_is_seeded() {
        let spec = VocabSpec { words: 50, ..Default::default() };
        let a = vocabulary(&spec).unwrap();
        let b = vocabulary(&spec).unwrap();
        assert_eq!(a.vector_at(17), b.vector_at(17));
        let c = vocabulary(&VocabSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.vector_at(17), c.vector_at(17));
    }

    #[test]
    fn fixture_rasters() {
        let img = record_image("a", 8, 6).unwrap();
        assert_ne!(img, record_image("b", 8, 6).unwrap());
        let info = raster::inspect(&half_mask(8, 6).unwrap()).unwrap();
        assert!(info.is_luma8());
        assert_eq!((info.width, info.height), (8, 6));
    }
}
