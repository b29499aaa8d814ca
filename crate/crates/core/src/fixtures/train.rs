//! Full-batch gradient descent with softmax cross-entropy for dense/relu stacks.
//! Only used to produce fixture models.

use crate::metrics::softmax;

/// One dense layer of a trainable stack; relu follows every layer but the last.
#[derive(Debug, Clone)]
pub struct DenseParams {
    pub out_units: usize,
    pub in_units: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl DenseParams {
    fn apply(&self, x: &[f32]) -> Vec<f32> {
        (0..self.out_units)
            .map(|i| {
                let row = &self.weight[i * self.in_units..(i + 1) * self.in_units];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>() + self.bias[i]
            })
            .collect()
    }
}

/// Runs `epochs` full-batch steps of plain gradient descent on mean cross-entropy.
pub fn train(layers: &mut [DenseParams], inputs: &[Vec<f32>], labels: &[usize], learning_rate: f64, epochs: usize) {
    let n = inputs.len() as f64;
    for _ in 0..epochs {
        let mut grad_w: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.weight.len()]).collect();
        let mut grad_b: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.bias.len()]).collect();
        for (x, &label) in inputs.iter().zip(labels) {
            // pre-activations per layer; acts[k] is the input to layer k
            let mut acts = vec![x.clone()];
            let mut pre = Vec::with_capacity(layers.len());
            for (k, layer) in layers.iter().enumerate() {
                let z = layer.apply(&acts[k]);
                let a = if k + 1 < layers.len() {
                    z.iter().map(|v| v.max(0.0)).collect()
                } else {
                    z.clone()
                };
                pre.push(z);
                acts.push(a);
            }
            let mut delta: Vec<f64> = softmax(acts.last().expect("output"));
            delta[label] -= 1.0;
            for k in (0..layers.len()).rev() {
                let layer = &layers[k];
                let input = &acts[k];
                for i in 0..layer.out_units {
                    grad_b[k][i] += delta[i];
                    let row = &mut grad_w[k][i * layer.in_units..(i + 1) * layer.in_units];
                    for (g, &v) in row.iter_mut().zip(input) {
                        *g += delta[i] * f64::from(v);
                    }
                }
                if k > 0 {
                    let below = &pre[k - 1];
                    delta = (0..layer.in_units)
                        .map(|j| {
                            if below[j] <= 0.0 {
                                return 0.0;
                            }
                            (0..layer.out_units)
                                .map(|i| f64::from(layer.weight[i * layer.in_units + j]) * delta[i])
                                .sum()
                        })
                        .collect();
                }
            }
        }
        for (k, layer) in layers.iter_mut().enumerate() {
            for (w, g) in layer.weight.iter_mut().zip(&grad_w[k]) {
                *w -= (learning_rate * g / n) as f32;
            }
            for (b, g) in layer.bias.iter_mut().zip(&grad_b[k]) {
                *b -= (learning_rate * g / n) as f32;
            }
        }
    }
}
