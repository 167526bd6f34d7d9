use super::params::ModelParams;

/// Adam with bias correction. Moment buffers mirror the parameter groups.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: ModelParams,
    v: ModelParams,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Groups whose name starts with any of `frozen` are left
    /// untouched, moments included.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, frozen: &[&str]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let g = grads.groups();
        let m = self.m.groups_mut();
        let v = self.v.groups_mut();
        for ((((name, p), (_, g)), (_, m)), (_, v)) in params.groups_mut().into_iter().zip(g).zip(m).zip(v) {
            if frozen.iter().any(|f| name.starts_with(f)) {
                continue;
            }
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
