use super::params::{BlockIdx, ModelParams};
use crate::envy::discretize;
use crate::error::{Error, Result};
use crate::model::{DiscreteAllocation, FractionalAllocation, Instance};
use crate::rng::Prng;
use crate::tensor::{Tape, Tensor, Var};

/// Identifies one of the self-attention blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelfBlock {
    /// Agent tower, layer `l < L`.
    Agent(usize),
    /// Item tower, layer `l < L`.
    Item(usize),
    /// Item refinement after fusion, layer `l < K`.
    Out(usize),
}

/// A FairFormer forward pass recorded on a tape. Every parameter is a leaf
/// in layout order, so `params[i]` carries the gradient of tensor `i`.
pub(crate) struct Graph<'a> {
    pub tape: Tape,
    pub params: Vec<Var>,
    model: &'a ModelParams,
    dropout: Option<Prng>,
}

impl<'a> Graph<'a> {
    /// `dropout_seed` switches dropout on (when the config rate is positive).
    pub fn new(model: &'a ModelParams, dropout_seed: Option<u64>) -> Self {
        let mut tape = Tape::new();
        let params = model.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let dropout = dropout_seed.filter(|_| model.config.dropout > 0.0).map(Prng::new);
        Self {
            tape,
            params,
            model,
            dropout,
        }
    }

    fn p(&self, i: usize) -> Var {
        self.params[i]
    }

    fn norm(&mut self, x: Var, gain: usize) -> Result<Var> {
        let g = self.p(gain);
        self.tape.rmsnorm_rows(x, g, self.model.config.norm_eps)
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`.
    fn drop(&mut self, x: Var) -> Result<Var> {
        let Some(rng) = self.dropout.as_mut() else { return Ok(x) };
        let rate = self.model.config.dropout;
        let (r, c) = self.tape.value(x).shape();
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..r * c)
            .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
            .collect();
        let mask = self.tape.leaf(Tensor::new(r, c, mask)?);
        self.tape.mul(x, mask)
    }

    pub fn input(&mut self, inst: &Instance) -> Result<Var> {
        Ok(self.tape.leaf(Tensor::new(inst.m(), inst.n(), inst.values().to_vec())?))
    }

    /// Agent and item tokens from the valuation leaf `v` (`m × n`).
    ///
    /// Each entry `(k, i)` has features `[V(k,i), mean/max/min of row k,
    /// mean/max/min of column i]`, mapped by one shared linear layer and
    /// averaged over items (agent tokens) or agents (item tokens). The
    /// layer is affine, so averaging the features first gives the same
    /// tokens without materializing the `m × n × d` entry embeddings.
    pub fn embed(&mut self, v: Var) -> Result<(Var, Var)> {
        let (m, n) = self.tape.value(v).shape();
        let t = &mut self.tape;
        let (rmean, rmax, rmin) = (t.row_mean(v), t.row_max(v), t.row_min(v));
        let (cmean, cmax, cmin) = (t.col_mean(v)?, t.col_max(v), t.col_min(v));

        let over_rows = |t: &mut Tape, col: Var| -> Result<Var> {
            let s = t.col_mean(col)?;
            t.broadcast_row(s, n)
        };
        let agent_parts = [
            t.transpose(cmean),
            over_rows(t, rmean)?,
            over_rows(t, rmax)?,
            over_rows(t, rmin)?,
            t.transpose(cmean),
            t.transpose(cmax),
            t.transpose(cmin),
        ];
        let over_cols = |t: &mut Tape, row: Var| -> Result<Var> {
            let s = t.row_mean(row);
            t.broadcast_row(s, m)
        };
        let item_parts = [
            rmean,
            rmean,
            rmax,
            rmin,
            over_cols(t, cmean)?,
            over_cols(t, cmax)?,
            over_cols(t, cmin)?,
        ];
        let agent_feat = t.concat_cols(&agent_parts)?;
        let item_feat = t.concat_cols(&item_parts)?;
        let (w, b) = (self.p(self.model.layout.exch_w), self.p(self.model.layout.exch_b));
        let agents = self.tape.linear(agent_feat, w, b)?;
        let items = self.tape.linear(item_feat, w, b)?;
        Ok((agents, items))
    }

    /// Unmasked multi-head scaled dot-product attention of `q` over `kv`,
    /// both already normalized.
    fn mha(&mut self, b: &BlockIdx, q: Var, kv: Var) -> Result<Var> {
        let scale = 1.0 / (self.model.config.head_dim() as f64).sqrt();
        let mut heads = Vec::with_capacity(b.wq.len());
        for h in 0..b.wq.len() {
            let qh = self.tape.matmul(q, self.p(b.wq[h]))?;
            let kh = self.tape.matmul(kv, self.p(b.wk[h]))?;
            let vh = self.tape.matmul(kv, self.p(b.wv[h]))?;
            let kt = self.tape.transpose(kh);
            let logits = self.tape.matmul(qh, kt)?;
            let logits = self.tape.scale(logits, scale);
            let attn = self.tape.softmax_rows(logits, 1.0)?;
            let attn = self.drop(attn)?;
            heads.push(self.tape.matmul(attn, vh)?);
        }
        let cat = self.tape.concat_cols(&heads)?;
        self.tape.matmul(cat, self.p(b.wo))
    }

    fn glu(&mut self, b: &BlockIdx, x: Var) -> Result<Var> {
        let gate = self.tape.matmul(x, self.p(b.w_gate))?;
        let gate = self.tape.silu(gate);
        let up = self.tape.matmul(x, self.p(b.w_up))?;
        let h = self.tape.mul(gate, up)?;
        let out = self.tape.matmul(h, self.p(b.w_down))?;
        self.drop(out)
    }

    fn feed_forward(&mut self, b: &BlockIdx, xhat: Var) -> Result<Var> {
        let n = self.norm(xhat, b.norm_ff)?;
        let f = self.glu(b, n)?;
        self.tape.add(xhat, f)
    }

    pub fn self_block(&mut self, b: &BlockIdx, x: Var) -> Result<Var> {
        let n = self.norm(x, b.norm_q)?;
        let a = self.mha(b, n, n)?;
        let xhat = self.tape.add(x, a)?;
        self.feed_forward(b, xhat)
    }

    pub fn cross_block(&mut self, b: &BlockIdx, q: Var, kv: Var) -> Result<Var> {
        let qn = self.norm(q, b.norm_q)?;
        let kvn = self.norm(kv, b.norm_kv.expect("cross block has a key/value norm"))?;
        let a = self.mha(b, qn, kvn)?;
        let xhat = self.tape.add(q, a)?;
        self.feed_forward(b, xhat)
    }

    /// Score matrix `S = D + α·V` (`m × n`) for the valuation leaf `v`.
    pub fn scores(&mut self, v: Var) -> Result<Var> {
        let model = self.model;
        let layout = &model.layout;
        let (mut agents, mut items) = self.embed(v)?;
        for l in 0..layout.agent_blocks.len() {
            agents = self.self_block(&layout.agent_blocks[l], agents)?;
            items = self.self_block(&layout.item_blocks[l], items)?;
        }
        let mut z = self.cross_block(&layout.cross, items, agents)?;
        for b in &layout.out_blocks {
            z = self.self_block(b, z)?;
        }
        let z = self.norm(z, layout.final_norm)?;
        let ht = self.tape.transpose(agents);
        let d = self.tape.matmul(z, ht)?;
        let (m, n) = self.tape.value(v).shape();
        let alpha = self.tape.broadcast_row(self.p(layout.alpha), m)?;
        let alpha = self.tape.broadcast_col(alpha, n)?;
        let residual = self.tape.mul(alpha, v)?;
        self.tape.add(d, residual)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0 (got {tau})")));
    }
    Ok(())
}

/// Initial agent (`n × d`) and item (`m × d`) tokens.
pub fn exchangeable_embed(inst: &Instance, params: &ModelParams) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new(params, None);
    let v = g.input(inst)?;
    let (a, i) = g.embed(v)?;
    Ok((g.tape.value(a).clone(), g.tape.value(i).clone()))
}

/// One pre-norm self-attention + GLU block applied to the token rows of `x`.
pub fn ff_self_attn(x: &Tensor, params: &ModelParams, block: SelfBlock) -> Result<Tensor> {
    let layout = &params.layout;
    let b = match block {
        SelfBlock::Agent(l) => layout.agent_blocks.get(l),
        SelfBlock::Item(l) => layout.item_blocks.get(l),
        SelfBlock::Out(l) => layout.out_blocks.get(l),
    }
    .ok_or_else(|| Error::InvalidArgument(format!("no block {block:?}")))?;
    check_width(x, params)?;
    let mut g = Graph::new(params, None);
    let xv = g.tape.leaf(x.clone());
    let y = g.self_block(b, xv)?;
    Ok(g.tape.value(y).clone())
}

/// The fusion block: item tokens `queries` attend to agent tokens `keyvals`.
pub fn ff_cross_attn(queries: &Tensor, keyvals: &Tensor, params: &ModelParams) -> Result<Tensor> {
    check_width(queries, params)?;
    check_width(keyvals, params)?;
    let mut g = Graph::new(params, None);
    let q = g.tape.leaf(queries.clone());
    let kv = g.tape.leaf(keyvals.clone());
    let y = g.cross_block(&params.layout.cross, q, kv)?;
    Ok(g.tape.value(y).clone())
}

fn check_width(x: &Tensor, params: &ModelParams) -> Result<()> {
    if x.cols() != params.config.d_model {
        return Err(Error::ShapeMismatch(format!(
            "tokens have width {}, model width is {}",
            x.cols(),
            params.config.d_model
        )));
    }
    Ok(())
}

/// Inference pass (dropout off): fractional allocation `softmax(S / tau)`
/// and the score matrix `S`, both `m × n`.
pub fn forward(inst: &Instance, params: &ModelParams, tau: f64) -> Result<(FractionalAllocation, Tensor)> {
    check_tau(tau)?;
    let mut g = Graph::new(params, None);
    let v = g.input(inst)?;
    let s = g.scores(v)?;
    let p = g.tape.softmax_rows(s, tau)?;
    let frac = FractionalAllocation::new(inst.n(), inst.m(), g.tape.value(p).data().to_vec())?;
    Ok((frac, g.tape.value(s).clone()))
}

/// Row-wise argmax of the model's allocation. The argmax of `softmax(S/τ)`
/// equals that of `S` for every `τ > 0`, so the final temperature is used.
pub fn allocate(inst: &Instance, params: &ModelParams) -> Result<DiscreteAllocation> {
    let (frac, _) = forward(inst, params, params.config.tau_t)?;
    Ok(discretize(&frac))
}
