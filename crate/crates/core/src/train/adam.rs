use super::TrainConfig;

/// Adam with bias correction, one moment buffer pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    epsilon: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Advances the step counter; call once before updating the tensors of a step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Updates parameter tensor `k` in place from its gradient.
    pub fn update(&mut self, k: usize, w: &mut [f32], g: &[f32]) {
        let c1 = 1.0 - (self.beta1 as f64).powi(self.t);
        let c2 = 1.0 - (self.beta2 as f64).powi(self.t);
        let (c1, c2) = (c1 as f32, c2 as f32);
        let (m, v) = (&mut self.m[k], &mut self.v[k]);
        for i in 0..w.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}
