/// Adam optimizer state for a flat parameter vector.
///
/// A step may touch the state in several disjoint ranges (for example a
/// network's weights and a separate scalar) between [`Adam::begin_step`]
/// calls; all ranges share the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Single-range step: `begin_step` followed by `update_range(0, ..)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.begin_step();
        self.update_range(0, params, grads);
    }

    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Applies the current step to `params`, whose moments live at
    /// `offset..offset + params.len()` in the optimizer state.
    pub fn update_range(&mut self, offset: usize, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert!(self.t > 0, "begin_step must precede update_range");
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = self.lr / bc1;
        let m = &mut self.m[offset..offset + params.len()];
        let v = &mut self.v[offset..offset + params.len()];
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= step * *m / ((*v / bc2).sqrt() + self.eps);
        }
    }
}
