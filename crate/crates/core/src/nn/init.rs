use rand::Rng as _;

use crate::seeding::Rng;

pub fn fill_uniform(buf: &mut [f32], bound: f32, rng: &mut Rng) {
    for v in buf {
        *v = rng.random_range(-bound..=bound);
    }
}

/// He-uniform bound for ReLU-family layers.
pub fn he_bound(fan_in: usize) -> f32 {
    (6.0 / fan_in.max(1) as f32).sqrt()
}

/// Default bound for a freshly attached linear classifier.
pub fn linear_bound(fan_in: usize) -> f32 {
    1.0 / (fan_in.max(1) as f32).sqrt()
}
