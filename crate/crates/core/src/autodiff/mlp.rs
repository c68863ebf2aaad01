use rand::Rng;

use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::params::{ParamId, ParamStore};
use crate::autodiff::tensor::Tensor;
use crate::scalar::Real;

/// Fully connected network with rectifier activations on hidden layers and
/// a linear final layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers weights `"{prefix}.{i}.w"` / `"{prefix}.{i}.b"` in `store`.
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        widths: &[usize],
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let wid = store.add_uniform(format!("{prefix}.{i}.w"), &[w[0], w[1]], w[0], rng);
                let bid = store.add_uniform(format!("{prefix}.{i}.b"), &[w[1]], w[0], rng);
                (wid, bid)
            })
            .collect();
        Self {
            widths: widths.to_vec(),
            layers,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("widths")
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// `Σ (wᵢ·wᵢ₊₁ + wᵢ₊₁)`.
    pub fn parameter_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = g.param(store, w);
            let bv = g.param(store, b);
            h = g.linear(h, wv, bv);
            if i < last {
                h = g.relu(h);
            }
        }
        h
    }

    /// Graph-free evaluation with identical arithmetic.
    pub fn forward_values<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(store.get(w)).add_row(store.get(b));
            if i < last {
                h = h.map(|v| v.max(T::zero()));
            }
        }
        h
    }

    pub fn zero_weights<T: Real>(&self, store: &mut ParamStore<T>) {
        for &(w, b) in &self.layers {
            store.get_mut(w).data_mut().iter_mut().for_each(|v| *v = T::zero());
            store.get_mut(b).data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parameter_count_matches_store() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let mlp = Mlp::new(&mut store, "m", &[5, 7, 3], &mut rng);
        assert_eq!(mlp.parameter_count(), 5 * 7 + 7 + 7 * 3 + 3);
        assert_eq!(store.scalar_count(), mlp.parameter_count());
    }

    #[test]
    fn graph_and_value_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let mlp = Mlp::new(&mut store, "m", &[4, 6, 2], &mut rng);
        let x = Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = mlp.forward(&mut g, &store, xv);
        assert_eq!(g.value(y), &mlp.forward_values(&store, &x));
    }

    #[test]
    fn two_linear_layers_compose_to_product_matrix() {
        // With no hidden activation (1-layer MLPs chained) the composition is x·(W1·W2) + (b1·W2 + b2).
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::<f64>::new();
        let a = Mlp::new(&mut store, "a", &[3, 4], &mut rng);
        let b = Mlp::new(&mut store, "b", &[4, 2], &mut rng);
        let x = Tensor::matrix(2, 3, vec![0.3, -1.2, 2.0, 0.5, 0.25, -0.75]);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let h = a.forward(&mut g, &store, xv);
        let y = b.forward(&mut g, &store, h);
        let (w1, b1) = a.layers()[0];
        let (w2, b2) = b.layers()[0];
        let w = store.get(w1).matmul(store.get(w2));
        let bias = Tensor::matrix(1, 4, store.get(b1).data().to_vec())
            .matmul(store.get(w2))
            .add_row(store.get(b2));
        let expect = x.matmul(&w).add_row(&Tensor::vector(bias.data()));
        for (p, q) in g.value(y).data().iter().zip(expect.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
