use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    /// Self-attention layers per tower before fusion (`L`).
    pub enc_layers: usize,
    /// Item self-attention layers after fusion (`K`).
    pub out_layers: usize,
    pub dropout: f64,
    /// GLU hidden width; `0` means `ceil(8d / 3)`.
    pub glu_width: usize,
    pub tau0: f64,
    pub tau_t: f64,
    pub train_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Shift inside `ln(u + eps_util)` in the training loss.
    pub eps_util: f64,
    pub norm_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            heads: 4,
            enc_layers: 1,
            out_layers: 1,
            dropout: 0.0,
            glu_width: 0,
            tau0: 1.0,
            tau_t: 0.05,
            train_steps: 2000,
            batch_size: 32,
            lr: 3e-4,
            weight_decay: 0.01,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            eps_util: 1e-8,
            norm_eps: 1e-6,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Named presets: `tiny`, `small_10x20`, `medium_30x60`.
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        let cfg = match name {
            "tiny" => Self {
                d_model: 32,
                heads: 4,
                enc_layers: 1,
                out_layers: 1,
                ..base
            },
            "small_10x20" => Self {
                d_model: 256,
                heads: 8,
                enc_layers: 1,
                out_layers: 2,
                dropout: 0.0,
                ..base
            },
            "medium_30x60" => Self {
                d_model: 128,
                heads: 8,
                enc_layers: 3,
                out_layers: 2,
                dropout: 0.099,
                ..base
            },
            other => return Err(Error::InvalidArgument(format!("unknown preset `{other}`"))),
        };
        Ok(cfg)
    }

    pub fn glu_hidden(&self) -> usize {
        if self.glu_width > 0 {
            self.glu_width
        } else {
            (8 * self.d_model).div_ceil(3)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            ));
        }
        if !(self.tau_t > 0.0 && self.tau0 >= self.tau_t) {
            return bad(format!("need tau0 >= tau_t > 0 (got {} and {})", self.tau0, self.tau_t));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1) (got {})", self.dropout));
        }
        if self.lr < 0.0 || self.weight_decay < 0.0 || self.adam_eps <= 0.0 || self.eps_util < 0.0 {
            return bad("optimizer settings must be nonnegative (adam_eps positive)".into());
        }
        if !(0.0..1.0).contains(&self.adam_betas.0) || !(0.0..1.0).contains(&self.adam_betas.1) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let s = ModelConfig::preset("small_10x20").unwrap();
        assert_eq!(
            (s.d_model, s.heads, s.enc_layers, s.out_layers, s.dropout),
            (256, 8, 1, 2, 0.0)
        );
        let m = ModelConfig::preset("medium_30x60").unwrap();
        assert_eq!(
            (m.d_model, m.heads, m.enc_layers, m.out_layers, m.dropout),
            (128, 8, 3, 2, 0.099)
        );
        assert_eq!(m.glu_hidden(), 342);
        let t = ModelConfig::preset("tiny").unwrap();
        assert_eq!((t.d_model, t.heads, t.enc_layers, t.out_layers), (32, 4, 1, 1));
        assert_eq!(t.glu_hidden(), 86);
        assert!(ModelConfig::preset("huge").is_err());
        for c in [s, m, t] {
            c.validate().unwrap();
        }
    }

    #[test]
    fn validation() {
        let ok = ModelConfig::default();
        assert!(ModelConfig { heads: 5, ..ok.clone() }.validate().is_err());
        assert!(ModelConfig {
            tau0: 0.01,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            dropout: 1.0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            tau0: 0.05,
            tau_t: 0.05,
            ..ok
        }
        .validate()
        .is_ok());
    }
}
