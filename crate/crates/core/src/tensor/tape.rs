use super::{matmul_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Matmul(Var, Var),
    Transpose(Var),
    RowMean(Var),
    ColMean(Var),
    /// Row reduction by max/min; saves the chosen column of every row.
    RowPick(Var, Vec<usize>),
    /// Column reduction by max/min; saves the chosen row of every column.
    ColPick(Var, Vec<usize>),
    BroadcastRow(Var),
    BroadcastCol(Var),
    Concat(Vec<Var>),
    Log(Var),
    Silu(Var),
    Softmax(Var, f64),
    RmsNorm {
        x: Var,
        gain: Var,
        inv_rms: Vec<f64>,
    },
    Linear(Var, Var, Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of a computation. Nodes are created in topological
/// order, so the backward pass is a single reverse sweep.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but yields zeros of the right shape.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = tape.value(v).shape();
            Tensor::zeros(r, c)
        })
    }
}

fn mismatch(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::ShapeMismatch(format!("{op}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.all_finite(), "non-finite output from {op:?}");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    fn zip(&self, op: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(op, x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.rows(), x.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("add", a, b, |p, q| p + q)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("sub", a, b, |p, q| p - q)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("mul", a, b, |p, q| p * q)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| c * x);
        self.push(t, Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.value(a).matmul(self.value(b))?;
        Ok(self.push(t, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        self.push(t, Op::Transpose(a))
    }

    /// `r × c → r × 1`.
    pub fn row_mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.cols() as f64;
        let data = (0..x.rows()).map(|r| x.row(r).iter().sum::<f64>() / c).collect();
        let t = Tensor {
            rows: x.rows(),
            cols: 1,
            data,
        };
        self.push(t, Op::RowMean(a))
    }

    /// `r × c → 1 × c`.
    pub fn col_mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() == 0 {
            return Err(Error::ShapeMismatch("col_mean of an empty tensor".into()));
        }
        let mut data = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for (s, v) in data.iter_mut().zip(x.row(r)) {
                *s += v;
            }
        }
        let n = x.rows() as f64;
        data.iter_mut().for_each(|s| *s /= n);
        let t = Tensor {
            rows: 1,
            cols: x.cols(),
            data,
        };
        Ok(self.push(t, Op::ColMean(a)))
    }

    fn row_pick(&mut self, a: Var, better: fn(f64, f64) -> bool) -> Var {
        let x = self.value(a);
        let mut idx = Vec::with_capacity(x.rows());
        let mut data = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mut best = 0;
            for c in 1..row.len() {
                if better(row[c], row[best]) {
                    best = c;
                }
            }
            idx.push(best);
            data.push(row[best]);
        }
        let t = Tensor {
            rows: x.rows(),
            cols: 1,
            data,
        };
        self.push(t, Op::RowPick(a, idx))
    }

    fn col_pick(&mut self, a: Var, better: fn(f64, f64) -> bool) -> Var {
        let x = self.value(a);
        let mut idx = vec![0; x.cols()];
        for r in 1..x.rows() {
            for c in 0..x.cols() {
                if better(x.get(r, c), x.get(idx[c], c)) {
                    idx[c] = r;
                }
            }
        }
        let data = idx.iter().enumerate().map(|(c, &r)| x.get(r, c)).collect();
        let t = Tensor {
            rows: 1,
            cols: x.cols(),
            data,
        };
        self.push(t, Op::ColPick(a, idx))
    }

    /// Per-row maximum; the gradient flows to the first maximal entry.
    pub fn row_max(&mut self, a: Var) -> Var {
        self.row_pick(a, |p, q| p > q)
    }

    pub fn row_min(&mut self, a: Var) -> Var {
        self.row_pick(a, |p, q| p < q)
    }

    pub fn col_max(&mut self, a: Var) -> Var {
        self.col_pick(a, |p, q| p > q)
    }

    pub fn col_min(&mut self, a: Var) -> Var {
        self.col_pick(a, |p, q| p < q)
    }

    /// Repeats a `1 × c` row `rows` times.
    pub fn broadcast_row(&mut self, a: Var, rows: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rows() != 1 {
            return Err(mismatch("broadcast_row", x.shape(), (1, x.cols())));
        }
        let t = Tensor {
            rows,
            cols: x.cols(),
            data: x.data().repeat(rows),
        };
        Ok(self.push(t, Op::BroadcastRow(a)))
    }

    /// Repeats an `r × 1` column `cols` times.
    pub fn broadcast_col(&mut self, a: Var, cols: usize) -> Result<Var> {
        let x = self.value(a);
        if x.cols() != 1 {
            return Err(mismatch("broadcast_col", x.shape(), (x.rows(), 1)));
        }
        let data = x.data().iter().flat_map(|&v| std::iter::repeat_n(v, cols)).collect();
        let t = Tensor {
            rows: x.rows(),
            cols,
            data,
        };
        Ok(self.push(t, Op::BroadcastCol(a)))
    }

    /// Joins tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::ShapeMismatch("concat of zero tensors".into()))?;
        let rows = self.value(*first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(mismatch("concat_cols", self.shape(*first), self.shape(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor { rows, cols, data };
        Ok(self.push(t, Op::Concat(parts.to_vec())))
    }

    /// Natural log; every input entry must be positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Some(v) = x.data().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument(format!("log of nonpositive value {v}")));
        }
        let t = x.map(f64::ln);
        Ok(self.push(t, Op::Log(a)))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x * sigmoid(x));
        self.push(t, Op::Silu(a))
    }

    /// Row-wise `softmax(x / tau)`, shifted by the row max before `exp`.
    pub fn softmax_rows(&mut self, a: Var, tau: f64) -> Result<Var> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "softmax temperature must be > 0 (got {tau})"
            )));
        }
        let x = self.value(a);
        let mut t = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let hi = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let out = &mut t.data[r * x.cols()..(r + 1) * x.cols()];
            let mut sum = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = ((v - hi) / tau).exp();
                sum += *o;
            }
            out.iter_mut().for_each(|o| *o /= sum);
        }
        Ok(self.push(t, Op::Softmax(a, tau)))
    }

    /// `x / sqrt(mean(x²) + eps) ⊙ gain` per row; `gain` is `1 × c`.
    pub fn rmsnorm_rows(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let (xv, g) = (self.value(x), self.value(gain));
        if g.shape() != (1, xv.cols()) {
            return Err(mismatch("rmsnorm_rows gain", g.shape(), (1, xv.cols())));
        }
        let c = xv.cols();
        let mut t = Tensor::zeros(xv.rows(), c);
        let mut inv_rms = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let ms = row.iter().map(|v| v * v).sum::<f64>() / c as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            for j in 0..c {
                t.data[r * c + j] = row[j] * inv * g.data()[j];
            }
            inv_rms.push(inv);
        }
        Ok(self.push(t, Op::RmsNorm { x, gain, inv_rms }))
    }

    /// `x · w + b` with `b` (`1 × out`) added to every row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let mut t = self.value(x).matmul(self.value(w))?;
        let bias = self.value(b);
        if bias.shape() != (1, t.cols()) {
            return Err(mismatch("linear bias", bias.shape(), (1, t.cols())));
        }
        let c = t.cols();
        for r in 0..t.rows() {
            for (o, v) in t.data[r * c..(r + 1) * c].iter_mut().zip(bias.data()) {
                *o += v;
            }
        }
        Ok(self.push(t, Op::Linear(x, w, b)))
    }

    /// Reverse sweep from a `1 × 1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(Error::ShapeMismatch(format!("loss must be 1x1, got {r}x{c}")));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(idx, &g, &mut adj);
            adj[idx] = Some(g);
        }
        adj.resize(self.nodes.len(), None);
        Ok(Gradients { grads: adj })
    }

    fn slot<'a>(&self, adj: &'a mut [Option<Tensor>], v: Var) -> &'a mut [f64] {
        let (r, c) = self.shape(v);
        adj[v.0].get_or_insert_with(|| Tensor::zeros(r, c)).data_mut()
    }

    fn propagate(&self, idx: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_into(self.slot(adj, *a), gd, 1.0);
                add_into(self.slot(adj, *b), gd, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(self.slot(adj, *a), gd, 1.0);
                add_into(self.slot(adj, *b), gd, -1.0);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                for ((s, gi), bi) in self.slot(adj, *a).iter_mut().zip(gd).zip(bv) {
                    *s += gi * bi;
                }
                for ((s, gi), ai) in self.slot(adj, *b).iter_mut().zip(gd).zip(av) {
                    *s += gi * ai;
                }
            }
            Op::Scale(a, c) => add_into(self.slot(adj, *a), gd, *c),
            Op::Matmul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (r, k, c) = (av.rows(), av.cols(), bv.cols());
                let bt = bv.transpose();
                matmul_acc(self.slot(adj, *a), gd, bt.data(), r, c, k);
                let at = av.transpose();
                matmul_acc(self.slot(adj, *b), at.data(), gd, k, r, c);
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                add_into(self.slot(adj, *a), gt.data(), 1.0);
            }
            Op::RowMean(a) => {
                let (_, c) = self.shape(*a);
                let s = self.slot(adj, *a);
                for (r, gr) in gd.iter().enumerate() {
                    s[r * c..(r + 1) * c].iter_mut().for_each(|v| *v += gr / c as f64);
                }
            }
            Op::ColMean(a) => {
                let (rows, c) = self.shape(*a);
                let s = self.slot(adj, *a);
                for r in 0..rows {
                    for j in 0..c {
                        s[r * c + j] += gd[j] / rows as f64;
                    }
                }
            }
            Op::RowPick(a, pick) => {
                let (_, c) = self.shape(*a);
                let s = self.slot(adj, *a);
                for (r, &j) in pick.iter().enumerate() {
                    s[r * c + j] += gd[r];
                }
            }
            Op::ColPick(a, pick) => {
                let (_, c) = self.shape(*a);
                let s = self.slot(adj, *a);
                for (j, &r) in pick.iter().enumerate() {
                    s[r * c + j] += gd[j];
                }
            }
            Op::BroadcastRow(a) => {
                let c = g.cols();
                let s = self.slot(adj, *a);
                for r in 0..g.rows() {
                    add_into(s, &gd[r * c..(r + 1) * c], 1.0);
                }
            }
            Op::BroadcastCol(a) => {
                let s = self.slot(adj, *a);
                for r in 0..g.rows() {
                    s[r] += g.row(r).iter().sum::<f64>();
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (_, pc) = self.shape(p);
                    let s = self.slot(adj, p);
                    for r in 0..g.rows() {
                        add_into(&mut s[r * pc..(r + 1) * pc], &g.row(r)[offset..offset + pc], 1.0);
                    }
                    offset += pc;
                }
            }
            Op::Log(a) => {
                let av = self.value(*a).data();
                for ((s, gi), x) in self.slot(adj, *a).iter_mut().zip(gd).zip(av) {
                    *s += gi / x;
                }
            }
            Op::Silu(a) => {
                let av = self.value(*a).data();
                for ((s, gi), &x) in self.slot(adj, *a).iter_mut().zip(gd).zip(av) {
                    let sg = sigmoid(x);
                    *s += gi * sg * (1.0 + x * (1.0 - sg));
                }
            }
            Op::Softmax(a, tau) => {
                let y = &node.value;
                let c = y.cols();
                let s = self.slot(adj, *a);
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        s[r * c + j] += yr[j] * (gr[j] - dot) / tau;
                    }
                }
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (xv, gv) = (self.value(*x), self.value(*gain).data());
                let c = xv.cols();
                let mut dgain = vec![0.0; c];
                let mut dx = vec![0.0; xv.len()];
                for r in 0..xv.rows() {
                    let (row, gr, inv) = (xv.row(r), g.row(r), inv_rms[r]);
                    let mut proj = 0.0;
                    for j in 0..c {
                        let xhat = row[j] * inv;
                        dgain[j] += gr[j] * xhat;
                        proj += gr[j] * gv[j] * xhat;
                    }
                    proj /= c as f64;
                    for j in 0..c {
                        dx[r * c + j] = (gr[j] * gv[j] - row[j] * inv * proj) * inv;
                    }
                }
                add_into(self.slot(adj, *x), &dx, 1.0);
                add_into(self.slot(adj, *gain), &dgain, 1.0);
            }
            Op::Linear(x, w, b) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (r, k, c) = (xv.rows(), xv.cols(), wv.cols());
                let wt = wv.transpose();
                matmul_acc(self.slot(adj, *x), gd, wt.data(), r, c, k);
                let xt = xv.transpose();
                matmul_acc(self.slot(adj, *w), xt.data(), gd, k, r, c);
                let s = self.slot(adj, *b);
                for i in 0..r {
                    add_into(s, g.row(i), 1.0);
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}
