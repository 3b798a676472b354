//! Fully connected approximator with ELU hidden layers and a linear output.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Parameters are stored flat, layer by layer: the `out x in` weight matrix
/// (row major) followed by the `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    /// All-zero network; `hidden` empty gives a linear model.
    pub fn zeros(input: usize, hidden: &[usize]) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Mlp {
            sizes,
            params: vec![0.0; count],
        }
    }

    /// Uniform Glorot initialization with zero biases.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(input, hidden);
        let mut at = 0;
        for l in 0..net.sizes.len() - 1 {
            let (fan_in, fan_out) = (net.sizes[l], net.sizes[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for p in &mut net.params[at..at + fan_in * fan_out] {
                *p = dist.sample(rng);
            }
            at += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn from_params(input: usize, hidden: &[usize], params: Vec<f64>) -> Option<Self> {
        let mut net = Self::zeros(input, hidden);
        if params.len() != net.params.len() {
            return None;
        }
        net.params = params;
        Some(net)
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn hidden(&self) -> &[usize] {
        &self.sizes[1..self.sizes.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Pre-activations of every layer.
    fn run(&self, x: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(x.len(), self.sizes[0], "input width");
        let layers = self.sizes.len() - 1;
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(layers);
        let mut act: Vec<f64> = x.to_vec();
        let mut at = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[at..at + n_in * n_out];
            let b = &self.params[at + n_in * n_out..at + n_in * n_out + n_out];
            let z: Vec<f64> = (0..n_out)
                .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(&act).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            act = if l + 1 < layers { z.iter().map(|v| elu(*v)).collect() } else { z.clone() };
            pre.push(z);
            at += n_in * n_out + n_out;
        }
        pre
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        self.run(x).last().expect("at least one layer")[0]
    }

    /// Output and its gradient with respect to every parameter.
    pub fn gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let pre = self.run(x);
        let layers = self.sizes.len() - 1;
        let mut grad = vec![0.0; self.params.len()];
        let offsets: Vec<usize> = self
            .sizes
            .windows(2)
            .scan(0, |at, w| {
                let o = *at;
                *at += w[0] * w[1] + w[1];
                Some(o)
            })
            .collect();
        // delta holds d out / d pre-activation of the current layer
        let mut delta = vec![1.0];
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let at = offsets[l];
            let input: Vec<f64> = if l == 0 { x.to_vec() } else { pre[l - 1].iter().map(|v| elu(*v)).collect() };
            for o in 0..n_out {
                for i in 0..n_in {
                    grad[at + o * n_in + i] = delta[o] * input[i];
                }
                grad[at + n_in * n_out + o] = delta[o];
            }
            if l > 0 {
                let w = &self.params[at..at + n_in * n_out];
                delta = (0..n_in)
                    .map(|i| (0..n_out).map(|o| w[o * n_in + i] * delta[o]).sum::<f64>() * elu_grad(pre[l - 1][i]))
                    .collect();
            }
        }
        (pre[layers - 1][0], grad)
    }

    /// Gradient step `theta -= rate * scale * g`, with `g` clipped to `clip` in norm.
    pub(crate) fn step(&mut self, grad: &[f64], scale: f64, rate: f64, clip: f64) {
        let norm = (grad.iter().map(|g| g * g).sum::<f64>()).sqrt() * scale.abs();
        let shrink = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= rate * scale * shrink * g;
        }
    }

    /// Adam step on the loss gradient `scale * g`, clipped to `clip` in norm
    /// before it enters the moment estimates.
    pub(crate) fn adam_step(&mut self, moments: &mut Moments, grad: &[f64], scale: f64, rate: f64, clip: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        if moments.m.len() != self.params.len() {
            *moments = Moments {
                m: vec![0.0; self.params.len()],
                v: vec![0.0; self.params.len()],
                t: 0,
            };
        }
        let norm = (grad.iter().map(|g| g * g).sum::<f64>()).sqrt() * scale.abs();
        let shrink = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
        moments.t += 1;
        let c1 = 1.0 - B1.powi(moments.t);
        let c2 = 1.0 - B2.powi(moments.t);
        for (i, p) in self.params.iter_mut().enumerate() {
            let g = scale * shrink * grad[i];
            moments.m[i] = B1 * moments.m[i] + (1.0 - B1) * g;
            moments.v[i] = B2 * moments.v[i] + (1.0 - B2) * g * g;
            *p -= rate * (moments.m[i] / c1) / ((moments.v[i] / c2).sqrt() + EPS);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// First and second moment estimates of an Adam optimizer. Empty until the
/// first step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl fmt::Display for Mlp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        write!(f, "{} elu", sizes.join("-"))
    }
}
