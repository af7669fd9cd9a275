//! The recording tape: eager forward evaluation, one reverse sweep for
//! gradients.
//!
//! Shapes are `rows × cols` with the batch on rows. The op set is
//! closed (see the module docs); every network and loss in the crate
//! is a composition of these ops, so gradient correctness reduces to
//! the per-op rules below, each checked against finite differences.
//!
//! Conventions that matter for correctness:
//!
//! * `relu` has subgradient 0 at exactly 0 (measure-zero event;
//!   standard convention).
//! * `max(a, b)` routes gradient to `a` on ties, mirroring
//!   `max(x, 0) = relu(x)`.
//! * `add` broadcasts a `1 × n` right operand over the batch rows of an
//!   `m × n` left operand — the bias pattern. All other binary ops
//!   require exactly matching shapes.
//!
//! Misuse (shape mismatch, backpropagating from a non-scalar) is a
//! programming error and panics; numeric trouble (non-finite loss) is
//! detected where it is actionable, in the training loop.

use ndarray::{Array2, Axis};

/// Dense 2-D `f64` tensor, batch on rows.
pub type Tensor = Array2<f64>;

/// Index of a node on the tape.
pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Expr {
    /// Data leaf: inputs and constants. No gradient is collected.
    Leaf,
    /// Parameter leaf: gradient is accumulated into slot `usize`.
    Param(usize),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Cos(NodeId),
    Mean(NodeId),
    Square(NodeId),
    Abs(NodeId),
    Max(NodeId, NodeId),
    Scale(NodeId, f64),
}

/// Recording tape. Values are computed eagerly as nodes are pushed;
/// `backward` replays the record in reverse.
pub struct Tape {
    exprs: Vec<Expr>,
    vals: Vec<Tensor>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            exprs: Vec::new(),
            vals: Vec::new(),
        }
    }

    fn push(&mut self, e: Expr, v: Tensor) -> NodeId {
        self.exprs.push(e);
        self.vals.push(v);
        self.vals.len() - 1
    }

    /// Computed value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.vals[id]
    }

    /// Scalar value of a `1 × 1` node (e.g. a loss).
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = &self.vals[id];
        assert_eq!(v.dim(), (1, 1), "scalar() on node of shape {:?}", v.dim());
        v[(0, 0)]
    }

    /// Data input: participates in the forward pass, no gradient kept.
    pub fn input(&mut self, v: Tensor) -> NodeId {
        self.push(Expr::Leaf, v)
    }

    /// Constant: same as input; named separately for readability.
    pub fn constant(&mut self, v: Tensor) -> NodeId {
        self.push(Expr::Leaf, v)
    }

    /// Parameter leaf; `backward` accumulates its gradient into `slot`.
    pub fn param(&mut self, slot: usize, v: &Tensor) -> NodeId {
        self.push(Expr::Param(slot), v.clone())
    }

    /// Matrix product `(m×k)·(k×n) → m×n`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ak) = self.vals[a].dim();
        let (bk, bc) = self.vals[b].dim();
        assert_eq!(
            ak, bk,
            "matmul inner dims: ({ar}×{ak}) · ({bk}×{bc})"
        );
        let v = self.vals[a].dot(&self.vals[b]);
        self.push(Expr::MatMul(a, b), v)
    }

    /// Elementwise sum; `b` may be a `1 × n` row broadcast over the
    /// rows of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.vals[a].dim();
        let (br, bc) = self.vals[b].dim();
        assert!(
            (ar, ac) == (br, bc) || (br == 1 && bc == ac),
            "add shapes: ({ar}×{ac}) + ({br}×{bc})"
        );
        let v = if br == 1 && ar != 1 {
            &self.vals[a] + &self.vals[b].row(0)
        } else {
            &self.vals[a] + &self.vals[b]
        };
        self.push(Expr::Add(a, b), v)
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.vals[a].dim(),
            self.vals[b].dim(),
            "mul shape mismatch"
        );
        let v = &self.vals[a] * &self.vals[b];
        self.push(Expr::Mul(a, b), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.vals[a].mapv(|x| x.max(0.0));
        self.push(Expr::Relu(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.vals[a].mapv(f64::tanh);
        self.push(Expr::Tanh(a), v)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let v = self.vals[a].mapv(f64::cos);
        self.push(Expr::Cos(a), v)
    }

    /// Mean of all entries, `→ 1 × 1`.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.vals[a].len() as f64;
        let v = Tensor::from_elem((1, 1), self.vals[a].sum() / n);
        self.push(Expr::Mean(a), v)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.vals[a].mapv(|x| x * x);
        self.push(Expr::Square(a), v)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.vals[a].mapv(f64::abs);
        self.push(Expr::Abs(a), v)
    }

    /// Elementwise maximum of two same-shape tensors.
    pub fn max(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.vals[a].dim(),
            self.vals[b].dim(),
            "max shape mismatch"
        );
        let mut v = self.vals[a].clone();
        v.zip_mut_with(&self.vals[b], |x, &y| *x = x.max(y));
        self.push(Expr::Max(a, b), v)
    }

    /// Scalar multiple `c · a`.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.vals[a].mapv(|x| c * x);
        self.push(Expr::Scale(a, c), v)
    }

    /// Reverse sweep from scalar node `out`; returns one gradient per
    /// parameter slot in `0..n_slots` (zeros for untouched slots, with
    /// shape `1 × 1` when the slot never appeared on this tape).
    pub fn backward(&self, out: NodeId, n_slots: usize) -> Vec<Tensor> {
        assert_eq!(
            self.vals[out].dim(),
            (1, 1),
            "backward requires a scalar output; got {:?}",
            self.vals[out].dim()
        );
        let mut adj: Vec<Option<Tensor>> = vec![None; self.vals.len()];
        adj[out] = Some(Tensor::from_elem((1, 1), 1.0));

        let mut grads: Vec<Option<Tensor>> = vec![None; n_slots];

        for id in (0..=out).rev() {
            let g = match adj[id].take() {
                Some(g) => g,
                None => continue,
            };
            match self.exprs[id] {
                Expr::Leaf => {}
                Expr::Param(slot) => {
                    assert!(slot < n_slots, "param slot {slot} out of range");
                    match &mut grads[slot] {
                        Some(acc) => *acc += &g,
                        dst @ None => *dst = Some(g),
                    }
                }
                Expr::MatMul(a, b) => {
                    let ga = g.dot(&self.vals[b].t());
                    let gb = self.vals[a].t().dot(&g);
                    accumulate(&mut adj[a], ga);
                    accumulate(&mut adj[b], gb);
                }
                Expr::Add(a, b) => {
                    let (ar, _) = self.vals[a].dim();
                    let (br, _) = self.vals[b].dim();
                    if br == 1 && ar != 1 {
                        // Bias broadcast: fold the batch dimension.
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut adj[b], gb);
                    } else {
                        accumulate(&mut adj[b], g.clone());
                    }
                    accumulate(&mut adj[a], g);
                }
                Expr::Mul(a, b) => {
                    let ga = &g * &self.vals[b];
                    let gb = &g * &self.vals[a];
                    accumulate(&mut adj[a], ga);
                    accumulate(&mut adj[b], gb);
                }
                Expr::Relu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&self.vals[a], |gx, &x| {
                        if x <= 0.0 {
                            *gx = 0.0;
                        }
                    });
                    accumulate(&mut adj[a], ga);
                }
                Expr::Tanh(a) => {
                    // d tanh = 1 − tanh²; the node value is tanh(a).
                    let mut ga = g;
                    ga.zip_mut_with(&self.vals[id], |gx, &t| *gx *= 1.0 - t * t);
                    accumulate(&mut adj[a], ga);
                }
                Expr::Cos(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&self.vals[a], |gx, &x| *gx *= -x.sin());
                    accumulate(&mut adj[a], ga);
                }
                Expr::Mean(a) => {
                    let n = self.vals[a].len() as f64;
                    let ga = Tensor::from_elem(self.vals[a].dim(), g[(0, 0)] / n);
                    accumulate(&mut adj[a], ga);
                }
                Expr::Square(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&self.vals[a], |gx, &x| *gx *= 2.0 * x);
                    accumulate(&mut adj[a], ga);
                }
                Expr::Abs(a) => {
                    // sign(0) = 0, matching the relu-at-0 convention.
                    let mut ga = g;
                    ga.zip_mut_with(&self.vals[a], |gx, &x| *gx *= sign(x));
                    accumulate(&mut adj[a], ga);
                }
                Expr::Max(a, b) => {
                    // Ties route to `a`, so max(x, const 0) matches relu.
                    let mut ga = g.clone();
                    let mut gb = g;
                    ga.zip_mut_with(
                        &(&self.vals[a] - &self.vals[b]),
                        |gx, &d| {
                            if d < 0.0 {
                                *gx = 0.0;
                            }
                        },
                    );
                    gb.zip_mut_with(
                        &(&self.vals[a] - &self.vals[b]),
                        |gx, &d| {
                            if d >= 0.0 {
                                *gx = 0.0;
                            }
                        },
                    );
                    accumulate(&mut adj[a], ga);
                    accumulate(&mut adj[b], gb);
                }
                Expr::Scale(a, c) => {
                    accumulate(&mut adj[a], g.mapv(|x| c * x));
                }
            }
        }

        grads
            .into_iter()
            .enumerate()
            .map(|(slot, g)| g.unwrap_or_else(|| zero_like_slot(slot)))
            .collect()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate(dst: &mut Option<Tensor>, g: Tensor) {
    match dst {
        Some(acc) => *acc += &g,
        None => *dst = Some(g),
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Placeholder gradient for a parameter slot that never appeared on
/// the tape. Callers that index gradients by slot should treat it as
/// zero; the `1 × 1` shape is only a sentinel.
fn zero_like_slot(_slot: usize) -> Tensor {
    Tensor::zeros((1, 1))
}

/// Central finite-difference gradient of `f` with respect to every
/// entry of every parameter tensor: `(f(x+h) − f(x−h)) / 2h`.
///
/// The oracle against which `backward` is verified (rel. tol 1e−4 in
/// the acceptance suite). `f` must be deterministic.
pub fn central_difference<F>(f: F, params: &[Tensor], h: f64) -> Vec<Tensor>
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut work: Vec<Tensor> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut g = Tensor::zeros(params[pi].dim());
        for idx in 0..params[pi].len() {
            let (r, c) = (idx / params[pi].ncols(), idx % params[pi].ncols());
            let orig = work[pi][(r, c)];
            work[pi][(r, c)] = orig + h;
            let up = f(&work);
            work[pi][(r, c)] = orig - h;
            let dn = f(&work);
            work[pi][(r, c)] = orig;
            g[(r, c)] = (up - dn) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn square_value_and_gradient() {
        // d(x²)/dx at x = 3 → 6
        let mut t = Tape::new();
        let x = t.param(0, &array![[3.0]]);
        let y = t.square(x);
        let l = t.mean(y);
        assert_eq!(t.scalar(l), 9.0);
        let g = t.backward(l, 1);
        assert_eq!(g[0], array![[6.0]]);
    }

    #[test]
    fn relu_negative_branch() {
        let mut t = Tape::new();
        let x = t.param(0, &array![[-2.0]]);
        let y = t.relu(x);
        let l = t.mean(y);
        assert_eq!(t.scalar(l), 0.0, "relu(−2) = 0");
        let g = t.backward(l, 1);
        assert_eq!(g[0], array![[0.0]], "inactive unit gets zero gradient");
    }

    #[test]
    fn identity_matmul() {
        let mut t = Tape::new();
        let x = t.input(array![[1.0, 2.0]]);
        let w = t.param(0, &array![[1.0, 0.0], [0.0, 1.0]]);
        let y = t.matmul(x, w);
        assert_eq!(t.value(y), &array![[1.0, 2.0]]);
    }

    #[test]
    fn broadcast_bias_gradient_sums_over_batch() {
        // loss = mean(x + b) with x: 3×2, b: 1×2 ⇒ ∂loss/∂b = 3/6 per entry.
        let mut t = Tape::new();
        let x = t.input(Tensor::zeros((3, 2)));
        let b = t.param(0, &array![[1.0, -1.0]]);
        let s = t.add(x, b);
        let l = t.mean(s);
        let g = t.backward(l, 1);
        assert_eq!(g[0], array![[0.5, 0.5]]);
    }

    #[test]
    fn max_tie_routes_to_first_operand() {
        let mut t = Tape::new();
        let a = t.param(0, &array![[1.0]]);
        let b = t.param(1, &array![[1.0]]);
        let m = t.max(a, b);
        let l = t.mean(m);
        let g = t.backward(l, 2);
        assert_eq!(g[0], array![[1.0]]);
        assert_eq!(g[1], array![[0.0]]);
    }

    #[test]
    fn mean_spreads_gradient() {
        let mut t = Tape::new();
        let x = t.param(0, &array![[1.0, 2.0], [3.0, 4.0]]);
        let l = t.mean(x);
        assert_eq!(t.scalar(l), 2.5);
        let g = t.backward(l, 1);
        assert_eq!(g[0], Tensor::from_elem((2, 2), 0.25));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // l = mean(x·x + x) ⇒ dl/dx = 2x + 1
        let mut t = Tape::new();
        let x = t.param(0, &array![[3.0]]);
        let xx = t.mul(x, x);
        let s = t.add(xx, x);
        let l = t.mean(s);
        let g = t.backward(l, 1);
        assert_eq!(g[0], array![[7.0]]);
    }

    #[test]
    fn composite_matches_finite_differences() {
        // A miniature network-shaped composite touching most ops.
        let w1 = array![[0.3, -0.2], [0.5, 0.1]];
        let b1 = array![[0.05, -0.07]];
        let w2 = array![[0.4], [-0.6]];
        let x = array![[0.9, -1.3], [0.2, 0.8], [-0.5, 0.4]];
        let params = vec![w1, b1, w2];

        let eval = |p: &[Tensor]| -> (Tape, NodeId) {
            let mut t = Tape::new();
            let xi = t.input(x.clone());
            let w1 = t.param(0, &p[0]);
            let b1 = t.param(1, &p[1]);
            let w2 = t.param(2, &p[2]);
            let h = t.matmul(xi, w1);
            let h = t.add(h, b1);
            let h = t.tanh(h);
            let c = t.cos(h);
            let m = t.mul(h, c);
            let o = t.matmul(m, w2);
            let o = t.abs(o);
            let o = t.square(o);
            let o = t.scale(o, 0.7);
            let l = t.mean(o);
            (t, l)
        };

        let (t, l) = eval(&params);
        let auto = t.backward(l, 3);
        let fd = central_difference(|p| {
            let (t, l) = eval(p);
            t.scalar(l)
        }, &params, 1e-6);

        for (a, f) in auto.iter().zip(fd.iter()) {
            for (x, y) in a.iter().zip(f.iter()) {
                assert_relative_eq!(x, y, max_relative = 1e-6, epsilon = 1e-10);
            }
        }
    }

    #[test]
    #[should_panic(expected = "matmul inner dims")]
    fn matmul_shape_mismatch_panics() {
        let mut t = Tape::new();
        let a = t.input(Tensor::zeros((2, 3)));
        let b = t.input(Tensor::zeros((2, 3)));
        let _ = t.matmul(a, b);
    }

    #[test]
    #[should_panic(expected = "backward requires a scalar output")]
    fn backward_from_non_scalar_panics() {
        let mut t = Tape::new();
        let x = t.param(0, &Tensor::zeros((2, 2)));
        let y = t.relu(x);
        let _ = t.backward(y, 1);
    }

    #[test]
    fn forward_is_pure() {
        let build = || {
            let mut t = Tape::new();
            let x = t.input(array![[0.25, -0.5]]);
            let c = t.cos(x);
            let l = t.mean(c);
            t.scalar(l)
        };
        assert_eq!(build(), build());
    }
}
