use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::io::{read_file, write_file, ByteReader};
use crate::model::normalize;

pub const HEAD_MAGIC: &[u8; 4] = b"CSDH";
/// Weights only.
pub const HEAD_VERSION: u16 = 1;
/// Weights followed by `d_out` bias entries.
pub const HEAD_VERSION_WITH_BIAS: u16 = 2;

/// Linear map into style space; outputs are L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    d_in: usize,
    d_out: usize,
    /// Row-major `d_out × d_in`.
    weights: Vec<f64>,
    bias: Option<Vec<f64>>,
}

impl ProjectionHead {
    pub fn new(
        d_in: usize,
        d_out: usize,
        weights: Vec<f64>,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::validation("head dimensions must be positive"));
        }
        if weights.len() != d_in * d_out {
            return Err(Error::validation(format!(
                "{} weights for a {d_out}×{d_in} head",
                weights.len()
            )));
        }
        if bias.as_ref().is_some_and(|b| b.len() != d_out) {
            return Err(Error::validation("bias length must equal d_out"));
        }
        if weights
            .iter()
            .chain(bias.iter().flatten())
            .any(|w| !w.is_finite())
        {
            return Err(Error::validation("head has non-finite entries"));
        }
        Ok(Self {
            d_in,
            d_out,
            weights,
            bias,
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self::new(dim, dim, weights, None)
    }

    /// Weights uniform in `[−1/√d_in, 1/√d_in]`.
    pub fn uniform<R: Rng + ?Sized>(
        d_in: usize,
        d_out: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weights = (0..d_in * d_out)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        let bias = with_bias.then(|| (0..d_out).map(|_| rng.gen_range(-bound..=bound)).collect());
        Self::new(d_in, d_out, weights, bias)
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn bias_mut(&mut self) -> Option<&mut [f64]> {
        self.bias.as_deref_mut()
    }

    /// Pre-normalization output `W·x (+ b)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in {
            return Err(Error::validation(format!(
                "input has dimension {}, head expects {}",
                x.len(),
                self.d_in
            )));
        }
        Ok(self
            .weights
            .chunks_exact(self.d_in)
            .enumerate()
            .map(|(r, row)| {
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
                z + self.bias.as_ref().map_or(0.0, |b| b[r])
            })
            .collect())
    }

    /// Unit-norm style embedding of `x`.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        normalize(&self.project(x)?)
    }

    /// Adds `∂L/∂W = g·xᵀ` (and `∂L/∂b = g`) for one input into the
    /// accumulators.
    pub(crate) fn accumulate_grad(
        &self,
        x: &[f64],
        grad_z: &[f64],
        grad_w: &mut [f64],
        grad_b: Option<&mut [f64]>,
    ) {
        for (r, &g) in grad_z.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut grad_w[r * self.d_in..(r + 1) * self.d_in];
            for (acc, &v) in row.iter_mut().zip(x) {
                *acc += g * v;
            }
        }
        if let Some(gb) = grad_b {
            for (acc, &g) in gb.iter_mut().zip(grad_z) {
                *acc += g;
            }
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let d_in = u32::try_from(self.d_in).map_err(|_| Error::validation("d_in exceeds u32"))?;
        let d_out =
            u32::try_from(self.d_out).map_err(|_| Error::validation("d_out exceeds u32"))?;
        let version = if self.bias.is_some() {
            HEAD_VERSION_WITH_BIAS
        } else {
            HEAD_VERSION
        };
        let mut out = Vec::with_capacity(14 + 4 * (self.weights.len() + self.d_out));
        out.extend_from_slice(HEAD_MAGIC);
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&d_in.to_le_bytes());
        out.extend_from_slice(&d_out.to_le_bytes());
        for &w in self.weights.iter().chain(self.bias.iter().flatten()) {
            out.extend_from_slice(&(w as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4, "magic")?;
        if magic != HEAD_MAGIC {
            return Err(Error::format(
                0,
                format!("bad magic {magic:?}, expected \"CSDH\""),
            ));
        }
        let version = r.u16("version")?;
        if version != HEAD_VERSION && version != HEAD_VERSION_WITH_BIAS {
            return Err(Error::format(
                4,
                format!("unsupported head version {version}"),
            ));
        }
        let d_in = r.u32("d_in")? as usize;
        let d_out = r.u32("d_out")? as usize;
        if d_in == 0 || d_out == 0 {
            return Err(Error::format(6, "head dimensions must be positive"));
        }
        let weights = r.f32s(d_in * d_out, "weights")?;
        let bias = if version == HEAD_VERSION_WITH_BIAS {
            Some(r.f32s(d_out, "bias")?)
        } else {
            None
        };
        r.expect_end()?;
        Self::new(d_in, d_out, weights, bias)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_head_preserves_input() {
        let head = ProjectionHead::identity(3).unwrap();
        assert_eq!(
            head.project(&[0.5, -2.0, 1.0]).unwrap(),
            vec![0.5, -2.0, 1.0]
        );
        let e = head.embed(&[3.0, 0.0, 4.0]).unwrap();
        assert_eq!(e, vec![0.6, 0.0, 0.8]);
    }

    #[test]
    fn uniform_init_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = ProjectionHead::uniform(16, 4, false, &mut rng).unwrap();
        assert!(head.weights().iter().all(|w| w.abs() <= 0.25));
        assert!(head.bias().is_none());
    }

    #[test]
    fn head_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for bias in [false, true] {
            let head = ProjectionHead::uniform(5, 3, bias, &mut rng).unwrap();
            let bytes = head.encode().unwrap();
            assert_eq!(&bytes[..4], b"CSDH");
            let back = ProjectionHead::decode(&bytes).unwrap();
            assert_eq!(back.encode().unwrap(), bytes);
            assert_eq!(back.bias().is_some(), bias);
        }
    }

    #[test]
    fn truncated_head_file() {
        let head = ProjectionHead::identity(2).unwrap();
        let bytes = head.encode().unwrap();
        assert!(matches!(
            ProjectionHead::decode(&bytes[..bytes.len() - 1]),
            Err(Error::Format { offset: 14, .. })
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let head = ProjectionHead::identity(2).unwrap();
        assert!(head.project(&[1.0]).is_err());
        assert!(ProjectionHead::new(2, 2, vec![0.0; 3], None).is_err());
    }
}
