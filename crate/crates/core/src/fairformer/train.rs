use rayon::prelude::*;

use super::config::ModelConfig;
use super::model::Graph;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::gen::{Distribution, GenSpec, DEFAULT_CORRELATION, DEFAULT_PARETO_ALPHA};
use crate::model::{FractionalAllocation, Instance};
use crate::rng::Prng;
use crate::tensor::{Tape, Tensor, Var};
use crate::welfare::utilities;

/// Geometric annealing `τ(t) = τ0 · (τT / τ0)^(t / T)`.
pub fn tau_schedule(step: usize, config: &ModelConfig) -> f64 {
    let horizon = config.train_steps;
    if horizon == 0 {
        return config.tau0;
    }
    let frac = step.min(horizon) as f64 / horizon as f64;
    config.tau0 * (config.tau_t / config.tau0).powf(frac)
}

/// Negative mean log-utility `−(1/B) Σ_r (1/n_r) Σ_i ln(u_i^r + eps)`.
pub fn nw_loss(insts: &[Instance], fracs: &[FractionalAllocation], eps_util: f64) -> Result<f64> {
    if insts.is_empty() || insts.len() != fracs.len() {
        return Err(Error::InvalidArgument(format!(
            "need a nonempty batch with one allocation per instance (got {} and {})",
            insts.len(),
            fracs.len()
        )));
    }
    let mut total = 0.0;
    for (inst, frac) in insts.iter().zip(fracs) {
        let u = utilities(inst, frac)?;
        total += u.0.iter().map(|x| (x + eps_util).ln()).sum::<f64>() / inst.n() as f64;
    }
    Ok(-total / insts.len() as f64)
}

/// Tape form of the single-instance term `−(1/n) Σ_i ln(u_i + eps)` for
/// allocation probabilities `p` and valuations `v` (both `m × n`).
pub(crate) fn instance_loss(tape: &mut Tape, p: Var, v: Var, eps_util: f64) -> Result<Var> {
    let (m, n) = tape.value(v).shape();
    let weighted = tape.mul(p, v)?;
    let mean = tape.col_mean(weighted)?;
    let u = tape.scale(mean, m as f64);
    let shift = tape.leaf(Tensor::full(1, n, eps_util));
    let shifted = tape.add(u, shift)?;
    let logs = tape.log(shifted)?;
    let avg = tape.row_mean(logs);
    Ok(tape.scale(avg, -1.0))
}

/// Loss and parameter gradients for one instance at temperature `tau`.
pub(crate) fn instance_grad(
    params: &ModelParams,
    inst: &Instance,
    tau: f64,
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new(params, dropout_seed);
    let v = g.input(inst)?;
    let s = g.scores(v)?;
    let p = g.tape.softmax_rows(s, tau)?;
    let loss = instance_loss(&mut g.tape, p, v, params.config.eps_util)?;
    let grads = g.tape.backward(loss)?;
    let value = g.tape.value(loss).item()?;
    Ok((
        value,
        g.params.iter().map(|&pv| grads.get_or_zeros(&g.tape, pv)).collect(),
    ))
}

/// Batch loss at `tau` without dropout; used by gradient checks and tests.
pub fn batch_loss(params: &ModelParams, batch: &[Instance], tau: f64) -> Result<f64> {
    let mut total = 0.0;
    for inst in batch {
        let mut g = Graph::new(params, None);
        let v = g.input(inst)?;
        let s = g.scores(v)?;
        let p = g.tape.softmax_rows(s, tau)?;
        let l = instance_loss(&mut g.tape, p, v, params.config.eps_util)?;
        total += g.tape.value(l).item()?;
    }
    Ok(total / batch.len() as f64)
}

/// Mean loss and summed-then-averaged gradients over a batch. Instances
/// run in parallel; the reduction walks them in batch order.
pub fn batch_grad(
    params: &ModelParams,
    batch: &[Instance],
    tau: f64,
    dropout_seeds: Option<&[u64]>,
) -> Result<(f64, Vec<Tensor>)> {
    let parts: Vec<(f64, Vec<Tensor>)> = batch
        .par_iter()
        .enumerate()
        .map(|(r, inst)| instance_grad(params, inst, tau, dropout_seeds.map(|s| s[r])))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads: Vec<Tensor> = params
        .tensors
        .iter()
        .map(|t| Tensor::zeros(t.rows(), t.cols()))
        .collect();
    for (l, g) in &parts {
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(g) {
            acc.add_assign(gi);
        }
    }
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|x| *x *= scale);
    }
    Ok((loss * scale, grads))
}

/// Adaptive-moment optimizer with decoupled weight decay. Decay applies to
/// weight matrices only, not to norm gains, biases or the residual scale.
#[derive(Clone, Debug)]
pub struct AdamW {
    lr: f64,
    betas: (f64, f64),
    eps: f64,
    weight_decay: f64,
    step: u32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(config: &ModelConfig, params: &ModelParams) -> Self {
        let zeros = || {
            params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            lr: config.lr,
            betas: config.adam_betas,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &[Tensor]) {
        self.step += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let decay = if params.layout.decays(i) {
                self.weight_decay
            } else {
                0.0
            };
            let p = params.tensors[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + decay * p[j]);
            }
        }
    }
}

/// Draws training instances: a size from `sizes` uniformly, then a fresh
/// instance of `dist` with a seed taken from the trainer's stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampler {
    pub dist: Distribution,
    pub sizes: Vec<(usize, usize)>,
    pub alpha: f64,
    pub lambda: f64,
}

impl Sampler {
    pub fn fixed(dist: Distribution, n: usize, m: usize) -> Self {
        Self {
            dist,
            sizes: vec![(n, m)],
            alpha: DEFAULT_PARETO_ALPHA,
            lambda: DEFAULT_CORRELATION,
        }
    }

    /// Every `(n, m)` from the two lists with `m >= n`.
    pub fn multi_config(dist: Distribution, ns: &[usize], ms: &[usize]) -> Result<Self> {
        let sizes: Vec<_> = ns
            .iter()
            .flat_map(|&n| ms.iter().filter(move |&&m| m >= n).map(move |&m| (n, m)))
            .collect();
        if sizes.is_empty() {
            return Err(Error::InvalidArgument("no (n, m) pair with m >= n".into()));
        }
        Ok(Self {
            sizes,
            ..Self::fixed(dist, 1, 1)
        })
    }

    pub fn sample(&self, rng: &mut Prng) -> Result<Instance> {
        let (n, m) = self.sizes[rng.next_below(self.sizes.len())];
        let spec = GenSpec {
            alpha: self.alpha,
            lambda: self.lambda,
            ..GenSpec::new(self.dist, n, m, rng.fork())
        };
        spec.generate()
    }
}

/// Final parameters and the per-step training loss.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub losses: Vec<f64>,
}

/// Trains from a fresh initialization. `sampler` receives the trainer's
/// stream, seeded from `config.seed`, so a run is a pure function of
/// `(config, sampler)`.
pub fn train<F>(config: &ModelConfig, sampler: F) -> Result<TrainOutcome>
where
    F: FnMut(&mut Prng) -> Result<Instance>,
{
    let params = ModelParams::init(config)?;
    train_from(params, sampler)
}

/// Continues training `params` under their own config.
pub fn train_from<F>(mut params: ModelParams, mut sampler: F) -> Result<TrainOutcome>
where
    F: FnMut(&mut Prng) -> Result<Instance>,
{
    let config = params.config.clone();
    config.validate()?;
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut rng = Prng::new(config.seed);
    let mut opt = AdamW::new(&config, &params);
    let mut losses = Vec::with_capacity(config.train_steps);
    for step in 0..config.train_steps {
        let batch = (0..config.batch_size)
            .map(|_| sampler(&mut rng))
            .collect::<Result<Vec<_>>>()?;
        let seeds: Vec<u64> = (0..config.batch_size).map(|_| rng.fork()).collect();
        let tau = tau_schedule(step, &config);
        let (loss, grads) = match batch_grad(&params, &batch, tau, Some(&seeds)) {
            Ok(r) => r,
            Err(e) => {
                return Err(Error::Diverged {
                    step,
                    detail: e.to_string(),
                })
            }
        };
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("loss is {loss} at tau {tau:.4}"),
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
            return Err(Error::Diverged {
                step,
                detail: format!("non-finite gradient for `{}` at tau {tau:.4}", params.name(i)),
            });
        }
        opt.update(&mut params, &grads);
        if step % 100 == 0 || step + 1 == config.train_steps {
            log::info!("step {step:>5}  tau {tau:.4}  loss {loss:.6}");
        }
        losses.push(loss);
    }
    Ok(TrainOutcome { params, losses })
}
