//! AdamW with decoupled weight decay.
//!
//! Decay is multiplicative and applied before the moment update, so a zero
//! gradient still shrinks the parameter: p *= 1 - lr*wd. Moments carry the
//! standard bias correction.

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl AdamWConfig {
    pub fn new(lr: f32, weight_decay: f32) -> Self {
        AdamWConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }
}

/// Optimizer state. Slots are caller-defined stable indices (one per
/// parameter tensor); moments allocate lazily on first touch.
#[derive(Debug)]
pub struct AdamW {
    cfg: AdamWConfig,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, n_slots: usize) -> Self {
        AdamW { cfg, t: 0, m: vec![Vec::new(); n_slots], v: vec![Vec::new(); n_slots] }
    }

    pub fn config(&self) -> AdamWConfig {
        self.cfg
    }

    /// One optimizer step over `(slot, params, grads)` triples. Frozen
    /// parameters are simply not passed. Panics on slot or length mismatch.
    pub fn step(&mut self, items: &mut [(usize, &mut [f32], &[f32])]) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let decay = 1.0 - c.lr * c.weight_decay;
        for (slot, p, g) in items.iter_mut() {
            assert_eq!(p.len(), g.len(), "param/grad length mismatch in slot {slot}");
            let m = &mut self.m[*slot];
            let v = &mut self.v[*slot];
            if m.is_empty() {
                m.resize(p.len(), 0.0);
                v.resize(p.len(), 0.0);
            }
            assert_eq!(m.len(), p.len(), "slot {slot} reused with a different size");
            for i in 0..p.len() {
                p[i] *= decay;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }
}
