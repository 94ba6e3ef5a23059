//! Fully connected Q estimator with rectifier hidden layers.
//!
//! All parameters live in one flat buffer so the optimizer and the checkpoint
//! writer can treat them uniformly. Layer `l` stores its weight matrix
//! (`out x in`, row-major) followed by its bias vector.

use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// One training sample for the TD loss: only `action`'s output is fitted.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub input: &'a [f64],
    pub action: usize,
    pub target: f64,
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least an input and an output layer");
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        }
    }

    /// He-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        for l in 0..net.depth() {
            let fan_in = net.sizes[l];
            let bound = (6.0 / fan_in as f64).sqrt();
            let (w, _) = net.range(l);
            for p in &mut net.params[w] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        net
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && params.len() == param_count(&sizes)).then_some(Self { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Index ranges of layer `l`'s weights and biases in the flat buffer.
    pub fn range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let offset = param_count(&self.sizes[..=l]);
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        (offset..offset + i * o, offset + i * o..offset + i * o + o)
    }

    fn affine(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let (wr, br) = self.range(l);
        let w = &self.params[wr];
        let b = &self.params[br];
        let n_in = self.sizes[l];
        b.iter()
            .enumerate()
            .map(|(j, bj)| bj + w[j * n_in..(j + 1) * n_in].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Activations of every layer, input first, output last.
    fn trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(x.len(), self.sizes[0], "input width");
        let mut acts = vec![x.to_vec()];
        for l in 0..self.depth() {
            let mut z = self.affine(l, acts.last().unwrap());
            if l + 1 < self.depth() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).pop().unwrap()
    }

    /// Mean squared TD error over the batch and its gradient.
    pub fn loss_and_grad(&self, batch: &[Sample<'_>]) -> (f64, Vec<f64>) {
        assert!(!batch.is_empty(), "empty batch");
        let scale = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for s in batch {
            let acts = self.trace(s.input);
            let q = acts.last().unwrap();
            let err = q[s.action] - s.target;
            loss += scale * err * err;

            let mut delta = vec![0.0; q.len()];
            delta[s.action] = 2.0 * scale * err;
            for l in (0..self.depth()).rev() {
                let (wr, br) = self.range(l);
                let input = &acts[l];
                let n_in = self.sizes[l];
                for (j, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    grad[br.start + j] += d;
                    let row = &mut grad[wr.start + j * n_in..wr.start + (j + 1) * n_in];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                if l == 0 {
                    break;
                }
                let w = &self.params[wr];
                let mut prev = vec![0.0; n_in];
                for (j, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    for (p, wj) in prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                        *p += d * wj;
                    }
                }
                // rectifier derivative, taken from the post-activation value
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        (loss, grad)
    }

    /// Loss only, for finite-difference checks.
    pub fn loss(&self, batch: &[Sample<'_>]) -> f64 {
        let scale = 1.0 / batch.len() as f64;
        batch
            .iter()
            .map(|s| {
                let e = self.forward(s.input)[s.action] - s.target;
                scale * e * e
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::substream;

    #[test]
    fn zero_weights_give_zero_q() {
        let net = Mlp::zeros(&[5, 128, 64, 7]);
        assert_eq!(net.forward(&[0.3, 0.1, 0.9, 0.5, 0.5]), vec![0.0; 7]);
    }

    #[test]
    fn doubling_output_layer_doubles_q() {
        let mut rng = substream(3, 0);
        let net = Mlp::new(&[5, 16, 8, 7], &mut rng);
        let x = [0.2, 0.4, 0.6, 0.8, 1.0];
        let q = net.forward(&x);
        let mut doubled = net.clone();
        let (w, _) = doubled.range(2);
        doubled.params_mut()[w].iter_mut().for_each(|p| *p *= 2.0);
        for (a, b) in q.iter().zip(doubled.forward(&x)) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_error_zero_gradient() {
        let mut rng = substream(4, 0);
        let net = Mlp::new(&[5, 16, 8, 7], &mut rng);
        let x = [0.5; 5];
        let q = net.forward(&x);
        let (loss, g) = net.loss_and_grad(&[Sample { input: &x, action: 2, target: q[2] }]);
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_sample_same_gradient() {
        let mut rng = substream(5, 0);
        let net = Mlp::new(&[5, 16, 8, 7], &mut rng);
        let x = [0.1, 0.7, 0.2, 0.0, 1.0];
        let s = Sample { input: &x, action: 4, target: 0.3 };
        let (_, once) = net.loss_and_grad(&[s]);
        let (_, twice) = net.loss_and_grad(&[s, s]);
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layout() {
        let net = Mlp::zeros(&[5, 128, 64, 7]);
        assert_eq!(net.params().len(), 5 * 128 + 128 + 128 * 64 + 64 + 64 * 7 + 7);
        let (w, b) = net.range(1);
        assert_eq!(w, 768..768 + 8192);
        assert_eq!(b.end - b.start, 64);
    }
}
