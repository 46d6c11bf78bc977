use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;

/// Number of per-entry exchangeable features.
pub const FEATURES: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
struct Slot {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
    decay: bool,
}

/// Parameter indices of one attention block.
#[derive(Clone, Debug)]
pub(crate) struct BlockIdx {
    pub norm_q: usize,
    /// Separate key/value norm; cross-attention only.
    pub norm_kv: Option<usize>,
    pub wq: Vec<usize>,
    pub wk: Vec<usize>,
    pub wv: Vec<usize>,
    pub wo: usize,
    pub norm_ff: usize,
    pub w_gate: usize,
    pub w_up: usize,
    pub w_down: usize,
}

/// Where every parameter lives in the flat tensor list. A pure function of
/// the architecture fields of [`ModelConfig`].
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    slots: Vec<Slot>,
    pub exch_w: usize,
    pub exch_b: usize,
    pub agent_blocks: Vec<BlockIdx>,
    pub item_blocks: Vec<BlockIdx>,
    pub cross: BlockIdx,
    pub out_blocks: Vec<BlockIdx>,
    pub final_norm: usize,
    pub alpha: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut slots = Vec::new();
        let mut add = |name: String, rows: usize, cols: usize, init: Init, decay: bool| {
            slots.push(Slot {
                name,
                rows,
                cols,
                init,
                decay,
            });
            slots.len() - 1
        };
        let (d, dk, g) = (cfg.d_model, cfg.head_dim(), cfg.glu_hidden());
        let exch_w = add("exch.w".into(), FEATURES, d, Init::Normal, true);
        let exch_b = add("exch.b".into(), 1, d, Init::Zeros, false);
        let mut block = |prefix: String, cross: bool| {
            let norm_q = add(format!("{prefix}.norm_q"), 1, d, Init::Ones, false);
            let norm_kv = cross.then(|| add(format!("{prefix}.norm_kv"), 1, d, Init::Ones, false));
            let mut heads = |tag: &str| -> Vec<usize> {
                (0..cfg.heads)
                    .map(|h| add(format!("{prefix}.w{tag}.{h}"), d, dk, Init::Normal, true))
                    .collect()
            };
            let wq = heads("q");
            let wk = heads("k");
            let wv = heads("v");
            BlockIdx {
                norm_q,
                norm_kv,
                wq,
                wk,
                wv,
                wo: add(format!("{prefix}.wo"), d, d, Init::Zeros, true),
                norm_ff: add(format!("{prefix}.norm_ff"), 1, d, Init::Ones, false),
                w_gate: add(format!("{prefix}.glu.gate"), d, g, Init::Normal, true),
                w_up: add(format!("{prefix}.glu.up"), d, g, Init::Normal, true),
                w_down: add(format!("{prefix}.glu.down"), g, d, Init::Zeros, true),
            }
        };
        let agent_blocks = (0..cfg.enc_layers)
            .map(|l| block(format!("agent.{l}"), false))
            .collect();
        let item_blocks = (0..cfg.enc_layers).map(|l| block(format!("item.{l}"), false)).collect();
        let cross = block("cross".into(), true);
        let out_blocks = (0..cfg.out_layers).map(|l| block(format!("out.{l}"), false)).collect();
        let final_norm = add("final_norm".into(), 1, d, Init::Ones, false);
        let alpha = add("residual_scale".into(), 1, 1, Init::Ones, false);
        Self {
            slots,
            exch_w,
            exch_b,
            agent_blocks,
            item_blocks,
            cross,
            out_blocks,
            final_norm,
            alpha,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.slots[i].name
    }

    pub fn shape(&self, i: usize) -> (usize, usize) {
        (self.slots[i].rows, self.slots[i].cols)
    }

    pub fn decays(&self, i: usize) -> bool {
        self.slots[i].decay
    }
}

/// All trainable tensors of a FairFormer, with the config that shaped them.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub(crate) config: ModelConfig,
    pub(crate) layout: Layout,
    pub(crate) tensors: Vec<Tensor>,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tensors == other.tensors
    }
}

impl ModelParams {
    /// Normal weights with standard deviation `1/sqrt(d)`; attention and GLU
    /// output projections start at zero so every block is the identity;
    /// norm gains and the residual scale start at one.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut rng = Prng::new(config.seed ^ 0x5EED_1417);
        let std = 1.0 / (config.d_model as f64).sqrt();
        let tensors = layout
            .slots
            .iter()
            .map(|s| match s.init {
                Init::Zeros => Tensor::zeros(s.rows, s.cols),
                Init::Ones => Tensor::full(s.rows, s.cols, 1.0),
                Init::Normal => {
                    let data = (0..s.rows * s.cols).map(|_| std * rng.next_gaussian()).collect();
                    Tensor::new(s.rows, s.cols, data).expect("slot shape")
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            layout,
            tensors,
        })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against the layout implied by `config`.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        if named.len() != layout.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                named.len()
            )));
        }
        let mut tensors = Vec::with_capacity(named.len());
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != layout.name(i) {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {i} is `{name}`, expected `{}`",
                    layout.name(i)
                )));
            }
            if t.shape() != layout.shape(i) {
                let (r, c) = layout.shape(i);
                return Err(Error::ShapeMismatch(format!(
                    "`{name}` is {}x{}, expected {r}x{c}",
                    t.rows(),
                    t.cols()
                )));
            }
            tensors.push(t);
        }
        Ok(Self {
            config: config.clone(),
            layout,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        self.layout.name(i)
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Index of a tensor by name.
    pub fn find(&self, name: &str) -> Option<usize> {
        (0..self.layout.len()).find(|&i| self.layout.name(i) == name)
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn residual_scale(&self) -> f64 {
        self.tensors[self.layout.alpha].data()[0]
    }

    pub fn set_residual_scale(&mut self, alpha: f64) {
        self.tensors[self.layout.alpha].data_mut()[0] = alpha;
    }

    /// Zeroes the final item-norm gain, which makes the bilinear term vanish.
    pub fn zero_compatibility(&mut self) {
        let i = self.layout.final_norm;
        self.tensors[i].data_mut().fill(0.0);
    }

    /// Draws every tensor (gains and output projections included) from a
    /// normal distribution; used to test properties for arbitrary weights.
    pub fn randomize(&mut self, seed: u64, std: f64) {
        let mut rng = Prng::new(seed);
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = std * rng.next_gaussian();
            }
        }
    }
}
