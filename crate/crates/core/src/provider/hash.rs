use sha2::{Digest, Sha256};

use super::{EmbeddingProvider, ProviderError};

/// Deterministic offline embedder.
///
/// Each lowercase alphanumeric word is hashed (SHA-256, seeded) to a signed
/// bucket; the bucket counts are L2-normalized. Texts sharing words get
/// positive cosine similarity, which is enough for meaningful retrieval in
/// tests. Texts without words, or whose buckets cancel out, fall back to a
/// dense hash of the whole text so the result is always a unit vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension, seed }
    }

    fn digest(&self, parts: &[&[u8]]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for p in parts {
            h.update(p);
        }
        h.finalize().into()
    }

    fn dense(&self, text: &str) -> Vec<f64> {
        (0..self.dimension)
            .map(|i| {
                let d = self.digest(&[b"dense\0", text.as_bytes(), &(i as u64).to_le_bytes()]);
                let x = u64::from_le_bytes(d[..8].try_into().unwrap());
                (x as f64 / u64::MAX as f64) * 2.0 - 1.0
            })
            .collect()
    }
}

fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

impl EmbeddingProvider for HashEmbedder {
    fn provider_tag(&self) -> String {
        format!("hash-v1:d{}:s{}", self.dimension, self.seed)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let lower = text.to_lowercase();
        let mut v = vec![0.0; self.dimension];
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            let d = self.digest(&[b"word\0", word.as_bytes()]);
            let bucket = (u64::from_le_bytes(d[..8].try_into().unwrap()) % self.dimension as u64) as usize;
            v[bucket] += if d[8] & 1 == 0 { 1.0 } else { -1.0 };
        }
        normalize(v)
            .or_else(|| normalize(self.dense(text)))
            .ok_or_else(|| ProviderError::Malformed("hash embedder produced a zero vector".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn unit_vectors_and_determinism() {
        let e = HashEmbedder::new(64, 7);
        for text in ["", "a", "a a", "free meal count", "!!!"] {
            let v = e.embed(text).unwrap();
            assert_eq!(v.len(), 64);
            assert!((norm(&v) - 1.0).abs() < 1e-12, "{text:?}");
            assert_eq!(v, e.embed(text).unwrap());
        }
    }

    #[test]
    fn seed_changes_vectors() {
        let a = HashEmbedder::new(32, 1).embed("county name").unwrap();
        let b = HashEmbedder::new(32, 2).embed("county name").unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn shared_words_raise_similarity() {
        let e = HashEmbedder::new(256, 0);
        let q = e.embed("average math score").unwrap();
        let near = e.embed("satscores. AvgScrMath: average scores in Math").unwrap();
        let far = e.embed("schools. Zip: Zip").unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        assert!(dot(&q, &near) > dot(&q, &far));
    }
}
