use std::hash::Hasher;

/// Maps text to a fixed-length vector. Implementations must be
/// deterministic and return finite values.
pub trait Embedder: Send + Sync {
    /// Identifier stored in model files so a reload can check compatibility.
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

pub const HASHING_EMBEDDER_ID: &str = "hashing-bow-v1";
pub const DEFAULT_EMBEDDING_DIM: usize = 384;

/// Signed feature hashing over lowercase word unigrams and bigrams,
/// L2-normalized. Empty text embeds to the zero vector.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    fn bucket(&self, token: &str) -> (usize, f64) {
        let mut h = fnv::FnvHasher::default();
        h.write(token.as_bytes());
        let v = h.finish();
        let sign = if v >> 63 == 0 { 1.0 } else { -1.0 };
        ((v % self.dim as u64) as usize, sign)
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_EMBEDDING_DIM)
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .map(|t| t.replace('\'', "").to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

impl Embedder for HashingEmbedder {
    fn id(&self) -> &str {
        HASHING_EMBEDDER_ID
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let toks = tokens(text);
        for t in &toks {
            let (i, s) = self.bucket(t);
            v[i] += s;
        }
        for pair in toks.windows(2) {
            let (i, s) = self.bucket(&format!("{} {}", pair[0], pair[1]));
            v[i] += 0.5 * s;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}
