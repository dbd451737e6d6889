//! Row-sparse optimizers. Only rows present in the gradient with at least one
//! nonzero entry are read or written.

use serde::{Deserialize, Serialize};

use crate::loss::SparseGrad;
use crate::model::EmbeddingStore;
use crate::scalar::Scalar;

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

fn nonzero<T: Scalar>(g: &[T]) -> bool {
    g.iter().any(|x| !x.is_zero())
}

/// Moments for one matrix, with a step counter per row.
#[derive(Clone, Debug)]
struct RowMoments<T> {
    width: usize,
    m: Vec<T>,
    v: Vec<T>,
    steps: Vec<u32>,
}

impl<T: Scalar> RowMoments<T> {
    fn new(rows: usize, width: usize) -> Self {
        RowMoments {
            width,
            m: vec![T::zero(); rows * width],
            v: vec![T::zero(); rows * width],
            steps: vec![0; rows],
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn update(&mut self, row: usize, param: &mut [T], grad: &[T], lr: T, b1: T, b2: T, eps: T) {
        self.steps[row] += 1;
        let t = self.steps[row] as i32;
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let range = row * self.width..(row + 1) * self.width;
        let (m, v) = (&mut self.m[range.clone()], &mut self.v[range]);
        for i in 0..self.width {
            let g = grad[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Lazy Adam: moments and bias-correction counters advance only for touched
/// rows; untouched rows and their moments stay as they are.
#[derive(Clone, Debug)]
pub struct SparseAdam<T> {
    beta1: T,
    beta2: T,
    eps: T,
    entities: RowMoments<T>,
    relations: RowMoments<T>,
}

impl<T: Scalar> SparseAdam<T> {
    pub fn new(store: &EmbeddingStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        SparseAdam {
            beta1: T::lit(beta1),
            beta2: T::lit(beta2),
            eps: T::lit(eps),
            entities: RowMoments::new(store.entity_count(), store.entity_width()),
            relations: RowMoments::new(store.relation_count(), store.relation_width()),
        }
    }

    pub fn step(&mut self, store: &mut EmbeddingStore<T>, grad: &SparseGrad<T>, lr: T) {
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (row, g) in grad.entities().filter(|(_, g)| nonzero(g)) {
            self.entities
                .update(row, store.entity_mut(row), g, lr, b1, b2, eps);
        }
        for (row, g) in grad.relations().filter(|(_, g)| nonzero(g)) {
            self.relations
                .update(row, store.relation_mut(row), g, lr, b1, b2, eps);
        }
    }
}

/// One lazy-Adam update; see [`SparseAdam`].
pub fn sparse_adam_step<T: Scalar>(
    state: &mut SparseAdam<T>,
    store: &mut EmbeddingStore<T>,
    grad: &SparseGrad<T>,
    lr: T,
) {
    state.step(store, grad, lr);
}

#[derive(Clone, Debug)]
pub enum Optimizer<T> {
    Sgd,
    Adam(SparseAdam<T>),
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, store: &EmbeddingStore<T>) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam { beta1, beta2, eps } => {
                Optimizer::Adam(SparseAdam::new(store, beta1, beta2, eps))
            }
        }
    }

    pub fn step(&mut self, store: &mut EmbeddingStore<T>, grad: &SparseGrad<T>, lr: T) {
        match self {
            Optimizer::Sgd => {
                for (row, g) in grad.entities().filter(|(_, g)| nonzero(g)) {
                    for (p, &x) in store.entity_mut(row).iter_mut().zip(g) {
                        *p -= lr * x;
                    }
                }
                for (row, g) in grad.relations().filter(|(_, g)| nonzero(g)) {
                    for (p, &x) in store.relation_mut(row).iter_mut().zip(g) {
                        *p -= lr * x;
                    }
                }
            }
            Optimizer::Adam(adam) => adam.step(store, grad, lr),
        }
    }
}
