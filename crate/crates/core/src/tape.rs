//! Reverse-mode automatic differentiation over a flat parameter vector.
//!
//! A [`Tape`] is opened against one parameter slice and records a forward
//! computation as a sequence of nodes whose values live in a pooled buffer
//! (no per-node allocation in steady state: `clear` keeps capacity).
//! [`Tape::backward_scaled`] walks the nodes in reverse and accumulates
//! `d(loss)/d(params)` into a caller-owned gradient buffer.
//!
//! The op vocabulary is deliberately small — affine layers, the pointwise
//! nonlinearities the networks use, softmax/log-softmax, and the reductions
//! the training losses need. Every op is validated against central finite
//! differences in the test suites.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
enum Op<T: Scalar> {
    /// Constant input; receives no gradient.
    Value,
    /// View of `params[off .. off + len]`.
    Params { off: usize },
    /// `y = W x + b` with `W` row-major at `params[w..]` and `b` at `params[b..]`.
    Affine { x: usize, w: usize, b: usize, cols: usize },
    Tanh { x: usize },
    Sigmoid { x: usize },
    Exp { x: usize },
    Log { x: usize },
    Square { x: usize },
    Softmax { x: usize },
    LogSoftmax { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    /// Pointwise `a * x + b`; values are computed at build time, so the
    /// node only keeps the slope the backward pass needs.
    AxPlusB { x: usize, a: T },
    /// Vector times a length-1 node.
    ScalarMul { x: usize, s: usize },
    Gather { x: usize, i: usize },
    Sum { x: usize },
    /// Pointwise minimum; ties take the gradient of the first argument.
    Min { a: usize, b: usize },
    /// Pointwise clamp; the gradient is zero outside the open interval.
    Clamp { x: usize, lo: T, hi: T },
}

#[derive(Clone, Copy)]
struct Node<T: Scalar> {
    op: Op<T>,
    off: usize,
    len: usize,
}

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

pub struct Tape<'p, T: Scalar> {
    params: &'p [T],
    nodes: Vec<Node<T>>,
    vals: Vec<T>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p [T]) -> Self {
        Tape { params, nodes: Vec::new(), vals: Vec::new() }
    }

    /// Drops all nodes but keeps buffer capacity for the next sample.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.vals.clear();
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].len
    }

    pub fn value(&self, v: Var) -> &[T] {
        let n = &self.nodes[v.0];
        &self.vals[n.off..n.off + n.len]
    }

    pub fn scalar(&self, v: Var) -> T {
        debug_assert_eq!(self.len_of(v), 1);
        self.vals[self.nodes[v.0].off]
    }

    fn push(&mut self, op: Op<T>, len: usize) -> (Var, usize) {
        let off = self.vals.len();
        self.vals.resize(off + len, T::zero());
        self.nodes.push(Node { op, off, len });
        (Var(self.nodes.len() - 1), off)
    }

    pub fn constant(&mut self, v: &[T]) -> Var {
        let (var, off) = self.push(Op::Value, v.len());
        self.vals[off..off + v.len()].copy_from_slice(v);
        var
    }

    pub fn scalar_constant(&mut self, v: T) -> Var {
        self.constant(&[v])
    }

    /// Exposes `params[off .. off + len]` as a differentiable node.
    pub fn param_slice(&mut self, off: usize, len: usize) -> Var {
        assert!(off + len <= self.params.len(), "param slice out of range");
        let (var, voff) = self.push(Op::Params { off }, len);
        let src = &self.params[off..off + len];
        self.vals[voff..voff + len].copy_from_slice(src);
        var
    }

    /// `W x + b`, where `W` is `rows x cols` row-major at `params[w_off..]`
    /// and `b` is `rows` long at `params[b_off..]`.
    pub fn affine(&mut self, x: Var, w_off: usize, b_off: usize, rows: usize, cols: usize) -> Var {
        assert_eq!(self.len_of(x), cols, "affine input width mismatch");
        let xn = self.nodes[x.0];
        let (var, off) = self.push(Op::Affine { x: x.0, w: w_off, b: b_off, cols }, rows);
        for i in 0..rows {
            let mut acc = self.params[b_off + i];
            let row = &self.params[w_off + i * cols..w_off + (i + 1) * cols];
            let xs = &self.vals[xn.off..xn.off + cols];
            for (wij, xj) in row.iter().zip(xs) {
                acc = acc + *wij * *xj;
            }
            self.vals[off + i] = acc;
        }
        var
    }

    fn unary(&mut self, op: Op<T>, x: Var, f: impl Fn(T) -> T) -> Var {
        let xn = self.nodes[x.0];
        let (var, off) = self.push(op, xn.len);
        for k in 0..xn.len {
            self.vals[off + k] = f(self.vals[xn.off + k]);
        }
        var
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Op::Tanh { x: x.0 }, x, |v| v.tanh())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Op::Sigmoid { x: x.0 }, x, |v| sigmoid(v))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Op::Exp { x: x.0 }, x, |v| v.exp())
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(Op::Log { x: x.0 }, x, |v| v.ln())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(Op::Square { x: x.0 }, x, |v| v * v)
    }

    pub fn ax_plus_b(&mut self, x: Var, a: T, b: T) -> Var {
        self.unary(Op::AxPlusB { x: x.0, a }, x, |v| a * v + b)
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(Op::Clamp { x: x.0, lo, hi }, x, |v| {
            if v < lo {
                lo
            } else if v > hi {
                hi
            } else {
                v
            }
        })
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let xn = self.nodes[x.0];
        let (var, off) = self.push(Op::Softmax { x: x.0 }, xn.len);
        let xs = self.vals[xn.off..xn.off + xn.len].to_vec();
        write_softmax(&xs, &mut self.vals[off..off + xn.len]);
        var
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xn = self.nodes[x.0];
        let (var, off) = self.push(Op::LogSoftmax { x: x.0 }, xn.len);
        let xs = self.vals[xn.off..xn.off + xn.len].to_vec();
        let m = xs.iter().cloned().fold(T::neg_infinity(), T::max);
        let lse = xs.iter().map(|v| (*v - m).exp()).fold(T::zero(), |a, b| a + b).ln();
        for (k, v) in xs.iter().enumerate() {
            self.vals[off + k] = *v - m - lse;
        }
        var
    }

    fn binary(&mut self, op: Op<T>, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Var {
        assert_eq!(self.len_of(a), self.len_of(b), "binary op length mismatch");
        let an = self.nodes[a.0];
        let bn = self.nodes[b.0];
        let (var, off) = self.push(op, an.len);
        for k in 0..an.len {
            self.vals[off + k] = f(self.vals[an.off + k], self.vals[bn.off + k]);
        }
        var
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Add { a: a.0, b: b.0 }, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Sub { a: a.0, b: b.0 }, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Mul { a: a.0, b: b.0 }, a, b, |x, y| x * y)
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Min { a: a.0, b: b.0 }, a, b, |x, y| if x <= y { x } else { y })
    }

    /// Vector `x` scaled by the length-1 node `s`.
    pub fn scalar_mul(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.len_of(s), 1, "scale factor must be a scalar node");
        let xn = self.nodes[x.0];
        let sv = self.scalar(s);
        let (var, off) = self.push(Op::ScalarMul { x: x.0, s: s.0 }, xn.len);
        for k in 0..xn.len {
            self.vals[off + k] = self.vals[xn.off + k] * sv;
        }
        var
    }

    pub fn gather(&mut self, x: Var, i: usize) -> Var {
        assert!(i < self.len_of(x), "gather index out of range");
        let xn = self.nodes[x.0];
        let (var, off) = self.push(Op::Gather { x: x.0, i }, 1);
        self.vals[off] = self.vals[xn.off + i];
        var
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let xn = self.nodes[x.0];
        let (var, off) = self.push(Op::Sum { x: x.0 }, 1);
        let mut acc = T::zero();
        for k in 0..xn.len {
            acc += self.vals[xn.off + k];
        }
        self.vals[off] = acc;
        var
    }

    /// Accumulates `seed * d(loss)/d(params)` into `grad`.
    ///
    /// `loss` must be a length-1 node. `grad` must match the parameter slice
    /// the tape was opened with; it is added to, not overwritten, so a batch
    /// gradient can be accumulated across samples.
    pub fn backward_scaled(&self, loss: Var, seed: T, grad: &mut [T]) {
        assert_eq!(self.len_of(loss), 1, "loss must be scalar");
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size mismatch");
        let mut g = vec![T::zero(); self.vals.len()];
        g[self.nodes[loss.0].off] = seed;
        for id in (0..=loss.0).rev() {
            let node = self.nodes[id];
            // Parents were pushed before this node, so their slots live
            // strictly below `node.off`; split keeps borrows disjoint.
            let (gp, gc) = g.split_at_mut(node.off);
            let go = &gc[..node.len];
            match node.op {
                Op::Value => {}
                Op::Params { off } => {
                    for k in 0..node.len {
                        grad[off + k] += go[k];
                    }
                }
                Op::Affine { x, w, b, cols } => {
                    let xn = self.nodes[x];
                    for i in 0..node.len {
                        let gi = go[i];
                        if gi == T::zero() {
                            continue;
                        }
                        grad[b + i] += gi;
                        let row = &self.params[w + i * cols..w + (i + 1) * cols];
                        for j in 0..cols {
                            grad[w + i * cols + j] += gi * self.vals[xn.off + j];
                            gp[xn.off + j] += gi * row[j];
                        }
                    }
                }
                Op::Tanh { x } => {
                    let xo = self.nodes[x].off;
                    for k in 0..node.len {
                        let y = self.vals[node.off + k];
                        gp[xo + k] += go[k] * (T::one() - y * y);
                    }
                }
                Op::Sigmoid { x } => {
                    let xo = self.nodes[x].off;
                    for k in 0..node.len {
                        let y = self.vals[node.off + k];
                        gp[xo + k] += go[k] * y * (T::one() - y);
                    }
                }
                Op::Exp { x } => {
                    let xo = self.nodes[x].off;
                    for k in 0..node.len {
                        gp[xo + k] += go[k] * self.vals[node.off + k];
                    }
                }
                Op::Log { x } => {
                    let xo = self.nodes[x].off;
                    for k in 0..node.len {
                        gp[xo + k] += go[k] / self.vals[xo + k];
                    }
                }
                Op::Square { x } => {
                    let xo = self.nodes[x].off;
                    for k in 0..node.len {
                        gp[xo + k] += go[k] * fl2::<T>() * self.vals[xo + k];
                    }
                }
                Op::Softmax { x } => {
                    let xo = self.nodes[x].off;
                    let mut dot = T::zero();
                    for k in 0..node.len {
                        dot += go[k] * self.vals[node.off + k];
                    }
                    for k in 0..node.len {
                        let p = self.vals[node.off + k];
                        gp[xo + k] += p * (go[k] - dot);
                    }
                }
                Op::LogSoftmax { x } => {
                    let xo = self.nodes[x].off;
                    let mut gsum = T::zero();
                    for k in 0..node.len {
                        gsum += go[k];
                    }
                    for k in 0..node.len {
                        let p = self.vals[node.off + k].exp();
                        gp[xo + k] += go[k] - p * gsum;
                    }
                }
                Op::Add { a, b } => {
                    let (ao, bo) = (self.nodes[a].off, self.nodes[b].off);
                    for k in 0..node.len {
                        gp[ao + k] += go[k];
                        gp[bo + k] += go[k];
                    }
                }
                Op::Sub { a, b } => {
                    let (ao, bo) = (self.nodes[a].off, self.nodes[b].off);
                    for k in 0..node.len {
                        gp[ao + k] += go[k];
                        gp[bo + k] -= go[k];
                    }
                }
                Op::Mul { a, b } => {
                    let (ao, bo) = (self.nodes[a].off, self.nodes[b].off);
                    for k in 0..node.len {
                        gp[ao + k] += go[k] * self.vals[bo + k];
                        gp[bo + k] += go[k] * self.vals[ao + k];
                    }
                }
                Op::AxPlusB { x, a } => {
                    let xo = self.nodes[x].off;
                    for k in 0..node.len {
                        gp[xo + k] += go[k] * a;
                    }
                }
                Op::ScalarMul { x, s } => {
                    let (xo, so) = (self.nodes[x].off, self.nodes[s].off);
                    let sv = self.vals[so];
                    let mut ds = T::zero();
                    for k in 0..node.len {
                        gp[xo + k] += go[k] * sv;
                        ds += go[k] * self.vals[xo + k];
                    }
                    gp[so] += ds;
                }
                Op::Gather { x, i } => {
                    gp[self.nodes[x].off + i] += go[0];
                }
                Op::Sum { x } => {
                    let xn = self.nodes[x];
                    for k in 0..xn.len {
                        gp[xn.off + k] += go[0];
                    }
                }
                Op::Min { a, b } => {
                    let (ao, bo) = (self.nodes[a].off, self.nodes[b].off);
                    for k in 0..node.len {
                        if self.vals[ao + k] <= self.vals[bo + k] {
                            gp[ao + k] += go[k];
                        } else {
                            gp[bo + k] += go[k];
                        }
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let xo = self.nodes[x].off;
                    for k in 0..node.len {
                        let v = self.vals[xo + k];
                        if v > lo && v < hi {
                            gp[xo + k] += go[k];
                        }
                    }
                }
            }
        }
    }

    pub fn backward(&self, loss: Var, grad: &mut [T]) {
        self.backward_scaled(loss, T::one(), grad);
    }
}

fn fl2<T: Scalar>() -> T {
    T::one() + T::one()
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    // Split on sign to avoid overflow in exp for large |v|.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Writes `softmax(xs)` into `out` using the max-shift for stability.
pub fn write_softmax<T: Scalar>(xs: &[T], out: &mut [T]) {
    let m = xs.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, v) in out.iter_mut().zip(xs) {
        *o = (*v - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference gradient of `f` with respect to `params`.
    fn fd_grad(params: &[f64], f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut g = vec![0.0; params.len()];
        let mut p = params.to_vec();
        for i in 0..p.len() {
            let h = 1e-5 * p[i].abs().max(1.0);
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            g[i] = (up - down) / (2.0 * h);
        }
        g
    }

    fn assert_grads_close(analytic: &[f64], numeric: &[f64]) {
        for (a, n) in analytic.iter().zip(numeric) {
            let denom = a.abs().max(n.abs()).max(1e-6);
            assert!(
                ((a - n) / denom).abs() < 1e-6,
                "gradient mismatch: analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn affine_tanh_chain_matches_finite_differences() {
        // y = sum(tanh(W x + b)) with a 3x4 layer.
        let params: Vec<f64> =
            (0..16).map(|i| 0.1 * (i as f64) - 0.7).collect();
        let x = [0.3, -0.2, 0.8, 0.05];
        let eval = |p: &[f64]| {
            let mut tape = Tape::new(p);
            let xv = tape.constant(&x);
            let h = tape.affine(xv, 0, 12, 3, 4);
            let t = tape.tanh(h);
            let s = tape.sum(t);
            tape.scalar(s)
        };
        let mut tape = Tape::new(&params);
        let xv = tape.constant(&x);
        let h = tape.affine(xv, 0, 12, 3, 4);
        let t = tape.tanh(h);
        let s = tape.sum(t);
        let mut grad = vec![0.0; params.len()];
        tape.backward(s, &mut grad);
        assert_grads_close(&grad, &fd_grad(&params, &eval));
    }

    #[test]
    fn softmax_log_paths_match_finite_differences() {
        // loss = -log_softmax(Wx+b)[1] + sum(softmax(Wx+b) * log(softmax clamped))
        let params: Vec<f64> = (0..12).map(|i| 0.07 * (i as f64) - 0.3).collect();
        let x = [0.9, -0.4, 0.2];
        let eval = |p: &[f64]| {
            let mut tape = Tape::new(p);
            let xv = tape.constant(&x);
            let z = tape.affine(xv, 0, 9, 3, 3);
            let lp = tape.log_softmax(z);
            let picked = tape.gather(lp, 1);
            let probs = tape.softmax(z);
            let cl = tape.clamp(probs, 1e-12, 1.0);
            let lg = tape.log(cl);
            let ent_terms = tape.mul(probs, lg);
            let ent = tape.sum(ent_terms);
            let neg = tape.ax_plus_b(picked, -1.0, 0.0);
            let loss = tape.add(neg, ent);
            tape.scalar(loss)
        };
        let mut grad = vec![0.0; params.len()];
        {
            let mut tape = Tape::new(&params);
            let xv = tape.constant(&x);
            let z = tape.affine(xv, 0, 9, 3, 3);
            let lp = tape.log_softmax(z);
            let picked = tape.gather(lp, 1);
            let probs = tape.softmax(z);
            let cl = tape.clamp(probs, 1e-12, 1.0);
            let lg = tape.log(cl);
            let ent_terms = tape.mul(probs, lg);
            let ent = tape.sum(ent_terms);
            let neg = tape.ax_plus_b(picked, -1.0, 0.0);
            let loss = tape.add(neg, ent);
            tape.backward(loss, &mut grad);
        }
        assert_grads_close(&grad, &fd_grad(&params, &eval));
    }

    #[test]
    fn min_exp_square_scalar_mul_match_finite_differences() {
        // Exercises the remaining ops: ratio-style exp, min with a clamped
        // branch, square, sub, scalar_mul and param_slice.
        let params = [0.4, -0.3, 0.9];
        let eval = |p: &[f64]| {
            let mut tape = Tape::new(p);
            let w = tape.param_slice(0, 3);
            let a = tape.gather(w, 0);
            let b = tape.gather(w, 1);
            let c = tape.gather(w, 2);
            let d = tape.sub(a, b);
            let r = tape.exp(d);
            let clipped = tape.clamp(r, 0.8, 1.2);
            let scaled = tape.ax_plus_b(r, 1.7, 0.0);
            let scaled_clip = tape.ax_plus_b(clipped, 1.7, 0.0);
            let m = tape.min(scaled, scaled_clip);
            let sq = tape.square(c);
            let sig = tape.sigmoid(sq);
            let prod = tape.scalar_mul(m, sig);
            let loss = tape.sum(prod);
            tape.scalar(loss)
        };
        let mut grad = vec![0.0; 3];
        {
            let mut tape = Tape::new(&params);
            let w = tape.param_slice(0, 3);
            let a = tape.gather(w, 0);
            let b = tape.gather(w, 1);
            let c = tape.gather(w, 2);
            let d = tape.sub(a, b);
            let r = tape.exp(d);
            let clipped = tape.clamp(r, 0.8, 1.2);
            let scaled = tape.ax_plus_b(r, 1.7, 0.0);
            let scaled_clip = tape.ax_plus_b(clipped, 1.7, 0.0);
            let m = tape.min(scaled, scaled_clip);
            let sq = tape.square(c);
            let sig = tape.sigmoid(sq);
            let prod = tape.scalar_mul(m, sig);
            let loss = tape.sum(prod);
            tape.backward(loss, &mut grad);
        }
        assert_grads_close(&grad, &fd_grad(&params, &eval));
    }

    #[test]
    fn clear_reuses_buffers() {
        let params = [1.0f64, 2.0];
        let mut tape = Tape::new(&params);
        let v = tape.constant(&[3.0]);
        let _ = tape.square(v);
        tape.clear();
        let w = tape.param_slice(0, 2);
        let s = tape.sum(w);
        assert_eq!(tape.scalar(s), 3.0);
    }

    #[test]
    fn softmax_sums_to_one() {
        let params: [f64; 0] = [];
        let mut tape = Tape::new(&params);
        let x = tape.constant(&[2.0, -1.0, 0.5, 30.0]);
        let p = tape.softmax(x);
        let total: f64 = tape.value(p).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
