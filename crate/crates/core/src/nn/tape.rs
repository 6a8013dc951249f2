//! Reverse-mode autodiff tape over vector-valued nodes.
//!
//! Forward calls append nodes; [`Tape::backward`] walks them in reverse,
//! propagating adjoints and accumulating parameter gradients into the
//! [`ParamStore`]. One tape per sample; tapes are cheap to build and drop.

use super::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Affine { w: ParamId, b: ParamId, x: NodeId },
    Elu { x: NodeId },
    Concat { xs: Vec<NodeId> },
    MeanStack { xs: Vec<NodeId> },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    AddScalar { x: NodeId },
    Exp { x: NodeId },
    Clamp { x: NodeId, lo: f64, hi: f64 },
    Min2 { a: NodeId, b: NodeId },
    Sum { x: NodeId },
    Mean { x: NodeId },
}

#[derive(Debug)]
struct Node {
    values: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn len(&self, id: NodeId) -> usize {
        self.nodes[id.0].values.len()
    }

    fn push(&mut self, values: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { values, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, values: Vec<f64>) -> NodeId {
        self.push(values, Op::Input)
    }

    pub fn input_slice(&mut self, values: &[f64]) -> NodeId {
        self.input(values.to_vec())
    }

    /// Parameter leaf; backward accumulates into its gradient buffer.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.value(id).data.clone(), Op::Param(id))
    }

    /// y = W·x + b with W stored row-major as [out, in].
    pub fn affine(&mut self, store: &ParamStore, w: ParamId, b: ParamId, x: NodeId) -> NodeId {
        let wt = store.value(w);
        let bt = store.value(b);
        let xv = &self.nodes[x.0].values;
        let (out, inp) = (wt.shape[0], wt.shape[1]);
        assert_eq!(xv.len(), inp, "affine input width");
        assert_eq!(bt.len(), out, "affine bias width");
        let wd = &wt.data;
        let mut y = Vec::with_capacity(out);
        for j in 0..out {
            let row = &wd[j * inp..(j + 1) * inp];
            let mut s = bt.data[j];
            for i in 0..inp {
                s += row[i] * xv[i];
            }
            y.push(s);
        }
        self.push(y, Op::Affine { w, b, x })
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, x: NodeId) -> NodeId {
        let y: Vec<f64> = self.nodes[x.0]
            .values
            .iter()
            .map(|&v| if v > 0.0 { v } else { v.exp() - 1.0 })
            .collect();
        self.push(y, Op::Elu { x })
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> NodeId {
        let mut y = Vec::new();
        for &x in xs {
            y.extend_from_slice(&self.nodes[x.0].values);
        }
        self.push(y, Op::Concat { xs: xs.to_vec() })
    }

    /// Elementwise mean of equal-length nodes.
    pub fn mean_stack(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let n = self.nodes[xs[0].0].values.len();
        let mut y = vec![0.0; n];
        for &x in xs {
            let v = &self.nodes[x.0].values;
            assert_eq!(v.len(), n, "mean_stack width");
            for i in 0..n {
                y[i] += v[i];
            }
        }
        let k = xs.len() as f64;
        y.iter_mut().for_each(|v| *v /= k);
        self.push(y, Op::MeanStack { xs: xs.to_vec() })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = self.zip(a, b, |x, y| x + y);
        self.push(y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = self.zip(a, b, |x, y| x - y);
        self.push(y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = self.zip(a, b, |x, y| x * y);
        self.push(y, Op::Mul { a, b })
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        assert_eq!(av.len(), bv.len(), "elementwise width");
        av.iter().zip(bv.iter()).map(|(&x, &y)| f(x, y)).collect()
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let y: Vec<f64> = self.nodes[x.0].values.iter().map(|&v| v * c).collect();
        self.push(y, Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let y: Vec<f64> = self.nodes[x.0].values.iter().map(|&v| v + c).collect();
        self.push(y, Op::AddScalar { x })
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let y: Vec<f64> = self.nodes[x.0].values.iter().map(|&v| v.exp()).collect();
        self.push(y, Op::Exp { x })
    }

    /// Elementwise clamp; gradient is zero outside (lo, hi).
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let y: Vec<f64> = self.nodes[x.0].values.iter().map(|&v| v.clamp(lo, hi)).collect();
        self.push(y, Op::Clamp { x, lo, hi })
    }

    /// Elementwise minimum; the gradient follows the selected branch (ties go
    /// to `a`).
    pub fn min2(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = self.zip(a, b, f64::min);
        self.push(y, Op::Min2 { a, b })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].values.iter().sum();
        self.push(vec![s], Op::Sum { x })
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].values;
        let s: f64 = v.iter().sum::<f64>() / v.len() as f64;
        self.push(vec![s], Op::Mean { x })
    }

    /// Scalar value of a length-1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].values.len(), 1);
        self.nodes[id.0].values[0]
    }

    /// Reverse pass from a scalar `loss` node, seeding its adjoint with
    /// `seed`. Parameter gradients accumulate into `store` (on top of
    /// whatever is already there, so minibatch accumulation is a loop of
    /// backward calls).
    pub fn backward(&self, loss: NodeId, seed: f64, store: &mut ParamStore) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract("backward: node not on this tape".into()));
        }
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::Contract("backward: loss must be scalar".into()));
        }
        let mut adj: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.values.len()])
            .collect();
        adj[loss.0][0] = seed;

        for idx in (0..=loss.0).rev() {
            let dy = std::mem::take(&mut adj[idx]);
            if dy.iter().all(|&g| g == 0.0) {
                continue;
            }
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(p) => {
                    let g = store.grad_mut(*p);
                    for (gi, di) in g.data.iter_mut().zip(dy.iter()) {
                        *gi += di;
                    }
                }
                Op::Affine { w, b, x } => {
                    let inp = store.value(*w).shape[1];
                    let out = dy.len();
                    // dx = Wᵀ·dy (reads W before grads are touched)
                    {
                        let wd = &store.value(*w).data;
                        let dx = &mut adj[x.0];
                        for j in 0..out {
                            let row = &wd[j * inp..(j + 1) * inp];
                            let d = dy[j];
                            if d != 0.0 {
                                for i in 0..inp {
                                    dx[i] += row[i] * d;
                                }
                            }
                        }
                    }
                    let xv = &self.nodes[x.0].values;
                    {
                        let gw = &mut store.grad_mut(*w).data;
                        for j in 0..out {
                            let d = dy[j];
                            if d != 0.0 {
                                let row = &mut gw[j * inp..(j + 1) * inp];
                                for i in 0..inp {
                                    row[i] += d * xv[i];
                                }
                            }
                        }
                    }
                    let gb = &mut store.grad_mut(*b).data;
                    for j in 0..out {
                        gb[j] += dy[j];
                    }
                }
                Op::Elu { x } => {
                    let yv = &self.nodes[idx].values;
                    let xv = &self.nodes[x.0].values;
                    let dx = &mut adj[x.0];
                    for i in 0..dy.len() {
                        let d = if xv[i] > 0.0 { 1.0 } else { yv[i] + 1.0 };
                        dx[i] += dy[i] * d;
                    }
                }
                Op::Concat { xs } => {
                    let mut off = 0;
                    for &x in xs {
                        let n = self.nodes[x.0].values.len();
                        let dx = &mut adj[x.0];
                        for i in 0..n {
                            dx[i] += dy[off + i];
                        }
                        off += n;
                    }
                }
                Op::MeanStack { xs } => {
                    let k = xs.len() as f64;
                    for &x in xs {
                        let dx = &mut adj[x.0];
                        for i in 0..dy.len() {
                            dx[i] += dy[i] / k;
                        }
                    }
                }
                Op::Add { a, b } => {
                    for (t, s) in [(*a, 1.0), (*b, 1.0)] {
                        let dx = &mut adj[t.0];
                        for i in 0..dy.len() {
                            dx[i] += dy[i] * s;
                        }
                    }
                }
                Op::Sub { a, b } => {
                    for (t, s) in [(*a, 1.0), (*b, -1.0)] {
                        let dx = &mut adj[t.0];
                        for i in 0..dy.len() {
                            dx[i] += dy[i] * s;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (ai, bi) = (a.0, b.0);
                    for i in 0..dy.len() {
                        let av = self.nodes[ai].values[i];
                        let bv = self.nodes[bi].values[i];
                        adj[ai][i] += dy[i] * bv;
                        adj[bi][i] += dy[i] * av;
                    }
                }
                Op::Scale { x, c } => {
                    let dx = &mut adj[x.0];
                    for i in 0..dy.len() {
                        dx[i] += dy[i] * c;
                    }
                }
                Op::AddScalar { x } => {
                    let dx = &mut adj[x.0];
                    for i in 0..dy.len() {
                        dx[i] += dy[i];
                    }
                }
                Op::Exp { x } => {
                    let yv = &self.nodes[idx].values;
                    let dx = &mut adj[x.0];
                    for i in 0..dy.len() {
                        dx[i] += dy[i] * yv[i];
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = &self.nodes[x.0].values;
                    let dx = &mut adj[x.0];
                    for i in 0..dy.len() {
                        if xv[i] > *lo && xv[i] < *hi {
                            dx[i] += dy[i];
                        }
                    }
                }
                Op::Min2 { a, b } => {
                    let (ai, bi) = (a.0, b.0);
                    for i in 0..dy.len() {
                        let av = self.nodes[ai].values[i];
                        let bv = self.nodes[bi].values[i];
                        if av <= bv {
                            adj[ai][i] += dy[i];
                        } else {
                            adj[bi][i] += dy[i];
                        }
                    }
                }
                Op::Sum { x } => {
                    let dx = &mut adj[x.0];
                    for g in dx.iter_mut() {
                        *g += dy[0];
                    }
                }
                Op::Mean { x } => {
                    let n = self.nodes[x.0].values.len() as f64;
                    let dx = &mut adj[x.0];
                    for g in dx.iter_mut() {
                        *g += dy[0] / n;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn linear_gradient_is_input() {
        // loss = sum(w ⊙ x) → dL/dw = x
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap());
        let mut tape = Tape::new();
        let wn = tape.param(&store, w);
        let xn = tape.input(vec![1.0, 2.0, 3.0]);
        let prod = tape.mul(wn, xn);
        let loss = tape.sum(prod);
        tape.backward(loss, 1.0, &mut store).unwrap();
        assert_eq!(store.grad(w).data, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn mse_at_target_has_zero_grad() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_vec(&[2], vec![1.5, -0.5]).unwrap());
        let mut tape = Tape::new();
        let wn = tape.param(&store, w);
        let target = tape.input(vec![1.5, -0.5]);
        let d = tape.sub(wn, target);
        let sq = tape.mul(d, d);
        let loss = tape.mean(sq);
        tape.backward(loss, 1.0, &mut store).unwrap();
        assert!(store.grad(w).data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_rejects_vector_loss() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.input(vec![1.0, 2.0]);
        assert!(tape.backward(x, 1.0, &mut store).is_err());
    }

    #[test]
    fn clamp_gradient_masks_outside() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_vec(&[3], vec![0.5, 1.5, -2.0]).unwrap());
        let mut tape = Tape::new();
        let wn = tape.param(&store, w);
        let c = tape.clamp(wn, -1.0, 1.0);
        let loss = tape.sum(c);
        tape.backward(loss, 1.0, &mut store).unwrap();
        assert_eq!(store.grad(w).data, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn elu_values() {
        let mut tape = Tape::new();
        let x = tape.input(vec![-1.0, 0.0, 2.0]);
        let y = tape.elu(x);
        let v = tape.values(y);
        assert!((v[0] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert!((v[0] + 0.6321205588285577).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
        assert_eq!(v[2], 2.0);
    }
}
