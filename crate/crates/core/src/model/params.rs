use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::config::{Aggregator, Mixer, StampConfig};
use crate::error::Result;
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Affine map `x·weight + bias`; `weight` is stored `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: Option<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gate<P> {
    /// Temporal (`T→T`) and spatial (`S→S`) maps.
    CrissCross {
        temporal: Linear<P>,
        spatial: Linear<P>,
    },
    /// One map over all `S·T` tokens.
    Basic { tokens: Linear<P> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block<P> {
    pub norm_gain: P,
    pub norm_bias: P,
    pub up: Linear<P>,
    pub gate: Gate<P>,
    pub down: Linear<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolHead<P> {
    pub proj: Linear<P>,
    /// `[Q, d]`, one query per row.
    pub queries: P,
}

/// Every trainable table of the adapter.
///
/// Generic over the storage so the same layout carries tensors, tape
/// handles, gradients and optimizer moments. Tables appear in the canonical
/// order given by [`StampParams::named`].
#[derive(Clone, Debug, PartialEq)]
pub struct StampParams<P> {
    pub reduce: P,
    pub token_pe: Option<P>,
    pub spatial_pe: Option<P>,
    pub temporal_pe: Option<P>,
    pub blocks: Vec<Block<P>>,
    pub heads: Vec<PoolHead<P>>,
    pub out: Linear<P>,
}

impl<P> Linear<P> {
    fn map<Q>(&self, prefix: &str, f: &mut dyn FnMut(&str, &P) -> Q) -> Linear<Q> {
        Linear {
            weight: f(&format!("{prefix}.weight"), &self.weight),
            bias: self.bias.as_ref().map(|b| f(&format!("{prefix}.bias"), b)),
        }
    }
}

impl<P> StampParams<P> {
    /// Structure-preserving map; `f` sees tables in canonical order.
    pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> StampParams<Q> {
        let f: &mut dyn FnMut(&str, &P) -> Q = &mut f;
        let reduce = f("reduce.weight", &self.reduce);
        let token_pe = self.token_pe.as_ref().map(|p| f("pe.token", p));
        let spatial_pe = self.spatial_pe.as_ref().map(|p| f("pe.spatial", p));
        let temporal_pe = self.temporal_pe.as_ref().map(|p| f("pe.temporal", p));
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let pre = format!("blocks.{i}");
                let norm_gain = f(&format!("{pre}.norm.gain"), &b.norm_gain);
                let norm_bias = f(&format!("{pre}.norm.bias"), &b.norm_bias);
                let up = b.up.map(&format!("{pre}.up"), f);
                let gate = match &b.gate {
                    Gate::CrissCross { temporal, spatial } => Gate::CrissCross {
                        temporal: temporal.map(&format!("{pre}.gate_temporal"), f),
                        spatial: spatial.map(&format!("{pre}.gate_spatial"), f),
                    },
                    Gate::Basic { tokens } => Gate::Basic {
                        tokens: tokens.map(&format!("{pre}.gate_tokens"), f),
                    },
                };
                let down = b.down.map(&format!("{pre}.down"), f);
                Block {
                    norm_gain,
                    norm_bias,
                    up,
                    gate,
                    down,
                }
            })
            .collect();
        let heads = self
            .heads
            .iter()
            .enumerate()
            .map(|(a, h)| PoolHead {
                proj: h.proj.map(&format!("heads.{a}.proj"), f),
                queries: f(&format!("heads.{a}.queries"), &h.queries),
            })
            .collect();
        let out = self.out.map("out", f);
        StampParams {
            reduce,
            token_pe,
            spatial_pe,
            temporal_pe,
            blocks,
            heads,
            out,
        }
    }

    /// Tables in canonical order.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut names = Vec::new();
        self.map(|name, _| names.push(name.to_string()));
        names.into_iter().zip(self.refs()).collect()
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut P)> {
        let mut names = Vec::new();
        self.map(|name, _| names.push(name.to_string()));
        names.into_iter().zip(self.refs_mut()).collect()
    }

    fn refs(&self) -> Vec<&P> {
        let mut v = vec![&self.reduce];
        v.extend(self.token_pe.iter());
        v.extend(self.spatial_pe.iter());
        v.extend(self.temporal_pe.iter());
        for b in &self.blocks {
            v.push(&b.norm_gain);
            v.push(&b.norm_bias);
            push_linear(&mut v, &b.up);
            match &b.gate {
                Gate::CrissCross { temporal, spatial } => {
                    push_linear(&mut v, temporal);
                    push_linear(&mut v, spatial);
                }
                Gate::Basic { tokens } => push_linear(&mut v, tokens),
            }
            push_linear(&mut v, &b.down);
        }
        for h in &self.heads {
            push_linear(&mut v, &h.proj);
            v.push(&h.queries);
        }
        push_linear(&mut v, &self.out);
        v
    }

    fn refs_mut(&mut self) -> Vec<&mut P> {
        let mut v = vec![&mut self.reduce];
        v.extend(self.token_pe.iter_mut());
        v.extend(self.spatial_pe.iter_mut());
        v.extend(self.temporal_pe.iter_mut());
        for b in &mut self.blocks {
            v.push(&mut b.norm_gain);
            v.push(&mut b.norm_bias);
            push_linear_mut(&mut v, &mut b.up);
            match &mut b.gate {
                Gate::CrissCross { temporal, spatial } => {
                    push_linear_mut(&mut v, temporal);
                    push_linear_mut(&mut v, spatial);
                }
                Gate::Basic { tokens } => push_linear_mut(&mut v, tokens),
            }
            push_linear_mut(&mut v, &mut b.down);
        }
        for h in &mut self.heads {
            push_linear_mut(&mut v, &mut h.proj);
            v.push(&mut h.queries);
        }
        push_linear_mut(&mut v, &mut self.out);
        v
    }

    /// Builds a same-layout set from tables given in canonical order.
    pub fn with_values<Q>(&self, values: Vec<Q>) -> Option<StampParams<Q>> {
        let expected = self.refs().len();
        if values.len() != expected {
            return None;
        }
        let mut it = values.into_iter();
        Some(self.map(|_, _| it.next().expect("length checked")))
    }
}

fn push_linear<'a, P>(v: &mut Vec<&'a P>, l: &'a Linear<P>) {
    v.push(&l.weight);
    v.extend(l.bias.iter());
}

fn push_linear_mut<'a, P>(v: &mut Vec<&'a mut P>, l: &'a mut Linear<P>) {
    v.push(&mut l.weight);
    v.extend(l.bias.iter_mut());
}

impl<F: Scalar> StampParams<Tensor<F>> {
    /// Records every table as a trainable leaf of `g`.
    pub fn register(&self, g: &mut Graph<F>) -> StampParams<Var> {
        self.map(|_, t| g.param(t.clone()))
    }

    /// Records every table as a constant (inference only).
    pub fn register_frozen(&self, g: &mut Graph<F>) -> StampParams<Var> {
        self.map(|_, t| g.constant(t.clone()))
    }

    pub fn count(&self) -> usize {
        self.refs().iter().map(|t| t.len()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> StampParams<Tensor<G>> {
        self.map(|_, t| t.cast())
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_, t| Tensor::zeros(t.shape()))
    }

    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.named()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect()
    }

    /// Fresh parameters for `config`, drawn deterministically from `seed`.
    ///
    /// Linear weights are uniform in `±sqrt(1/fan_in)` with zero biases,
    /// positional tables are `N(0, 0.02²)`, gating maps have std 1e-6
    /// with unit bias, and layer norms start at gain 1, bias 0.
    pub fn init(config: &StampConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config;
        let d_model = c.model_dim;

        let mut uniform = |shape: &[usize], fan_in: usize| -> Tensor<F> {
            let bound = (1.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let n = shape.iter().product();
            let data = (0..n)
                .map(|_| F::from_f64c(dist.sample(&mut rng)))
                .collect();
            Tensor::new(shape.to_vec(), data).expect("shape")
        };
        // Uniform draws first, in table order; normal draws use a second stream.
        let mut normal_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut normal = |shape: &[usize], std: f64| -> Tensor<F> {
            let dist = Normal::new(0.0, std).expect("positive std");
            let n = shape.iter().product();
            let data = (0..n)
                .map(|_| F::from_f64c(dist.sample(&mut normal_rng)))
                .collect();
            Tensor::new(shape.to_vec(), data).expect("shape")
        };
        let linear = |w: Tensor<F>, out: usize| Linear {
            weight: w,
            bias: Some(Tensor::zeros(&[out])),
        };

        let reduce = uniform(&[c.embed_dim, d_model], c.embed_dim);
        let token_pe = c
            .pe_mode
            .has_token()
            .then(|| normal(&[c.spatial, c.temporal, d_model], 0.02));
        let (spatial_pe, temporal_pe) = if c.pe_mode.has_spatial_temporal() {
            (
                Some(normal(&[c.spatial, d_model], 0.02)),
                Some(normal(&[c.temporal, d_model], 0.02)),
            )
        } else {
            (None, None)
        };

        let gate_linear = |n: usize, normal: &mut dyn FnMut(&[usize], f64) -> Tensor<F>| Linear {
            weight: normal(&[n, n], 1e-6),
            bias: Some(Tensor::full(&[n], F::one())),
        };
        let mut blocks = Vec::new();
        if c.mixer != Mixer::None {
            for _ in 0..c.depth {
                let up = linear(uniform(&[d_model, c.hidden], d_model), c.hidden);
                let (gate, down_in) = match c.mixer {
                    Mixer::CrissCrossGmlp => (
                        Gate::CrissCross {
                            temporal: gate_linear(c.temporal, &mut normal),
                            spatial: gate_linear(c.spatial, &mut normal),
                        },
                        c.hidden,
                    ),
                    Mixer::BasicGmlp => (
                        Gate::Basic {
                            tokens: gate_linear(c.tokens(), &mut normal),
                        },
                        c.hidden / 2,
                    ),
                    Mixer::None => unreachable!(),
                };
                let down = linear(uniform(&[down_in, d_model], down_in), d_model);
                blocks.push(Block {
                    norm_gain: Tensor::full(&[d_model], F::one()),
                    norm_bias: Tensor::zeros(&[d_model]),
                    up,
                    gate,
                    down,
                });
            }
        }
        let mut heads = Vec::new();
        if c.aggregator == Aggregator::Mhap {
            let hd = c.head_dim();
            for _ in 0..c.heads {
                heads.push(PoolHead {
                    proj: linear(uniform(&[d_model, hd], d_model), hd),
                    queries: uniform(&[c.queries, hd], hd),
                });
            }
        }
        let out = linear(uniform(&[d_model, c.n_classes], d_model), c.n_classes);
        Ok(StampParams {
            reduce,
            token_pe,
            spatial_pe,
            temporal_pe,
            blocks,
            heads,
            out,
        })
    }
}

/// Closed-form count of trainable scalars for `config`.
pub fn param_count(config: &StampConfig) -> usize {
    let c = config;
    let d = c.model_dim;
    let mut total = c.embed_dim * d;
    if c.pe_mode.has_token() {
        total += c.spatial * c.temporal * d;
    }
    if c.pe_mode.has_spatial_temporal() {
        total += (c.spatial + c.temporal) * d;
    }
    let block = match c.mixer {
        Mixer::None => 0,
        Mixer::CrissCrossGmlp => {
            2 * d
                + (d * c.hidden + c.hidden)
                + (c.temporal * c.temporal + c.temporal)
                + (c.spatial * c.spatial + c.spatial)
                + (c.hidden * d + d)
        }
        Mixer::BasicGmlp => {
            let n = c.tokens();
            2 * d + (d * c.hidden + c.hidden) + (n * n + n) + (c.hidden / 2 * d + d)
        }
    };
    total += c.depth * block;
    if c.aggregator == Aggregator::Mhap {
        let hd = c.head_dim();
        total += c.heads * (d * hd + hd + c.queries * hd);
    }
    total + d * c.n_classes + c.n_classes
}
