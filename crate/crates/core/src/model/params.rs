use crate::error::{Error, Result};
use crate::memory::AttnWeights;
use crate::numerics::{Rng, Scalar, Tape, Tensor, Var};

use super::ModelConfig;

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

#[derive(Clone, Copy)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

fn layout(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, hd) = (c.d_model, c.n_heads * c.d_head);
    let mut out = vec![
        ("embedding".to_string(), vec![c.vocab_size, d], Init::Normal),
        ("u".to_string(), vec![c.n_heads, c.d_head], Init::Zeros),
        ("v_pos".to_string(), vec![c.n_heads, c.d_head], Init::Zeros),
        ("v_neg".to_string(), vec![c.n_heads, c.d_head], Init::Zeros),
    ];
    for l in 0..c.n_layers {
        let p = |n: &str| format!("layers.{l}.{n}");
        out.extend([
            (p("w_q"), vec![d, hd], Init::Normal),
            (p("w_ke"), vec![d, hd], Init::Normal),
            (p("w_v"), vec![d, hd], Init::Normal),
            (p("w_kr"), vec![d, hd], Init::Normal),
            (p("w_o"), vec![hd, d], Init::Normal),
            (p("ln_a.gain"), vec![d], Init::Ones),
            (p("ln_a.bias"), vec![d], Init::Zeros),
            (p("ff1.w"), vec![d, c.d_ff], Init::Normal),
            (p("ff1.b"), vec![c.d_ff], Init::Zeros),
            (p("ff2.w"), vec![c.d_ff, d], Init::Normal),
            (p("ff2.b"), vec![d], Init::Zeros),
            (p("ln_b.gain"), vec![d], Init::Ones),
            (p("ln_b.bias"), vec![d], Init::Zeros),
        ]);
    }
    out
}

const PER_LAYER: usize = 13;
const GLOBAL: usize = 4;

impl<T: Scalar> Params<T> {
    /// Weights from `N(0, init_std)`, biases zero, gains one.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in layout(config) {
            let n: usize = shape.iter().product();
            let data: Vec<T> = match init {
                Init::Normal => (0..n).map(|_| T::of(rng.normal(0.0, config.init_std))).collect(),
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Self { names, tensors })
    }

    /// Checks that names and shapes are exactly those `config` implies.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let want = layout(config);
        if want.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                want.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape, _), (n, t)) in want.iter().zip(self.names.iter().zip(&self.tensors)) {
            if name != n || shape.as_slice() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter `{n}` {:?} does not match expected `{name}` {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.shape().to_vec()).collect()
    }

    /// Places every tensor on `tape`, as leaves when `trainable`, else as constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let all: Vec<Var> = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound::from_vars(all)
    }
}

/// Per-layer handles on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub attn: AttnWeights,
    pub w_kr: Var,
    pub w_o: Var,
    pub ln_a: (Var, Var),
    pub ff1: (Var, Var),
    pub ff2: (Var, Var),
    pub ln_b: (Var, Var),
}

/// Handles of every parameter on a tape, in [`Params`] order.
#[derive(Clone, Debug)]
pub struct Bound {
    pub all: Vec<Var>,
    pub embedding: Var,
    pub u: Var,
    pub v_pos: Var,
    pub v_neg: Var,
    pub layers: Vec<LayerVars>,
}

impl Bound {
    /// Regroups handles created in [`Params`] order.
    pub fn from_vars(all: Vec<Var>) -> Self {
        let layers = all[GLOBAL..]
            .chunks(PER_LAYER)
            .map(|c| LayerVars {
                attn: AttnWeights {
                    w_q: c[0],
                    w_ke: c[1],
                    w_v: c[2],
                },
                w_kr: c[3],
                w_o: c[4],
                ln_a: (c[5], c[6]),
                ff1: (c[7], c[8]),
                ff2: (c[9], c[10]),
                ln_b: (c[11], c[12]),
            })
            .collect();
        Self {
            embedding: all[0],
            u: all[1],
            v_pos: all[2],
            v_neg: all[3],
            layers,
            all,
        }
    }
}
