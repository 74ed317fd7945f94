use super::graph::Network;

/// Adaptive-moment optimizer with the canonical defaults
/// (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u32,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

impl Adam {
    pub fn steps(&self) -> u32 {
        self.step
    }

    /// Applies one update with the accumulated gradients, then clears them.
    pub fn step(&mut self, net: &mut Network, lr: f64) {
        let mut params = net.params_mut();
        if self.first.len() != params.len() {
            self.first = params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - (self.beta1 as f64).powi(t);
        let bc2 = 1.0 - (self.beta2 as f64).powi(t);
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        for (k, (_, p)) in params.iter_mut().enumerate() {
            if !p.trainable() || p.grad.len() != p.value.len() {
                continue;
            }
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                p.value[i] -= step_size * m[i] / (v[i].sqrt() / bc2_sqrt + self.eps);
            }
            p.zero_grad();
        }
    }
}
