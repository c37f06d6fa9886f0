/// Signed feature hashing of lower-cased alphanumeric tokens, L2
/// normalized. Used to turn raw text into fixed-size content vectors when
/// no pretrained embeddings are available.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedFeaturizer {
    pub dim: usize,
    pub seed: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub(crate) fn fnv1a(bytes: &[u8], init: u64) -> u64 {
    bytes.iter().fold(init, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub(crate) fn fnv1a_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a(bytes, FNV_OFFSET))
}

impl HashedFeaturizer {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "featurizer dimension must be positive");
        HashedFeaturizer { dim, seed }
    }

    pub fn featurize(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let init = fnv1a(&self.seed.to_le_bytes(), FNV_OFFSET);
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let h = fnv1a(token.to_lowercase().as_bytes(), init);
            let slot = (h % self.dim as u64) as usize;
            v[slot] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in v.iter_mut() {
                *x /= norm;
            }
        }
        v
    }
}
