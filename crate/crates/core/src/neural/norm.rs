//! Running mean/variance standardization of network inputs.

/// Welford accumulator; `normalize` standardizes and clips to `[-CLIP, CLIP]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningNorm {
    pub count: f64,
    pub mean: Vec<f64>,
    /// Population variance.
    pub var: Vec<f64>,
}

const EPS: f64 = 1e-8;
const CLIP: f64 = 10.0;

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merge a batch of samples (parallel-variance combination).
    pub fn update<'a, I>(&mut self, samples: I)
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let dim = self.dim();
        let mut n = 0.0;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for x in samples {
            n += 1.0;
            for k in 0..dim {
                let d = x[k] - mean[k];
                mean[k] += d / n;
                m2[k] += d * (x[k] - mean[k]);
            }
        }
        if n == 0.0 {
            return;
        }
        let total = self.count + n;
        for k in 0..dim {
            let delta = mean[k] - self.mean[k];
            let m_a = self.var[k] * self.count;
            let m_b = m2[k];
            let m = m_a + m_b + delta * delta * self.count * n / total;
            self.mean[k] += delta * n / total;
            self.var[k] = m / total;
        }
        self.count = total;
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(v, (m, s2))| ((v - m) / (s2 + EPS).sqrt()).clamp(-CLIP, CLIP))
            .collect()
    }

    /// Extend to additional trailing inputs with identity statistics.
    pub fn extended(&self, dim: usize) -> Self {
        let mut out = self.clone();
        out.mean.resize(dim, 0.0);
        out.var.resize(dim, 1.0);
        out
    }
}
