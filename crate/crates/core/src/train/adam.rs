//! Adam over row-structured parameters: each row (one Gaussian, or the whole
//! decoder) has the same layout, and each column has its own learning rate.

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    stride: usize,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(stride: usize, rows: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-15, stride, step: 0, m: vec![0.0; stride * rows], v: vec![0.0; stride * rows] }
    }

    pub fn rows(&self) -> usize {
        self.m.len() / self.stride
    }

    /// One update; `lrs` holds one rate per column.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lrs: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        assert_eq!(lrs.len(), self.stride);
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, ((p, g), (m, v))) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())).enumerate() {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lrs[i % self.stride] * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Rebuilds the rows after a topology change: `origin[j]` names the old row
    /// whose moments row `j` inherits, or `None` for fresh zero moments.
    pub fn remap(&mut self, origin: &[Option<usize>]) {
        let s = self.stride;
        let mut m = vec![0.0; origin.len() * s];
        let mut v = vec![0.0; origin.len() * s];
        for (j, o) in origin.iter().enumerate() {
            if let Some(i) = *o {
                m[j * s..(j + 1) * s].copy_from_slice(&self.m[i * s..(i + 1) * s]);
                v[j * s..(j + 1) * s].copy_from_slice(&self.v[i * s..(i + 1) * s]);
            }
        }
        self.m = m;
        self.v = v;
    }
}
