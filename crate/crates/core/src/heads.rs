//! Model heads: temporal aggregation + a fully-connected classifier.
//!
//! Segmented heads map a T×D sequence to C logits; continuous heads map it
//! to T×C per-frame logits. Parameter shapes are a deterministic function of
//! the [`HeadConfig`], which makes parameter counting exact and checkpoints
//! self-describing.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::filters::{
    apply_subevents_continuous, apply_subevents_segmented, build_cauchy_filters,
    build_gaussian_filters, super_event_representation, SubEventFilterBank, SuperEventFilterBank,
};
use crate::tensor::{
    broadcast_concat_rows, concat, softmax_rows, Activation, Padding, PoolKind, Tape, Tensor,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Segmented,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    MeanPool,
    MaxPool,
    Pyramid,
    TemporalConv,
    SubEvents,
    Bilstm,
    PerFrame,
    SuperEvents,
    SubSuper,
}

impl HeadKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "mean_pool" => Self::MeanPool,
            "max_pool" => Self::MaxPool,
            "pyramid" => Self::Pyramid,
            "temporal_conv" => Self::TemporalConv,
            "sub_events" => Self::SubEvents,
            "bilstm" => Self::Bilstm,
            "per_frame" => Self::PerFrame,
            "super_events" => Self::SuperEvents,
            "sub_super" => Self::SubSuper,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::MeanPool => "mean_pool",
            Self::MaxPool => "max_pool",
            Self::Pyramid => "pyramid",
            Self::TemporalConv => "temporal_conv",
            Self::SubEvents => "sub_events",
            Self::Bilstm => "bilstm",
            Self::PerFrame => "per_frame",
            Self::SuperEvents => "super_events",
            Self::SubSuper => "sub_super",
        }
    }

    /// Heads only defined for per-frame detection.
    pub fn continuous_only(&self) -> bool {
        matches!(self, Self::PerFrame | Self::SuperEvents | Self::SubSuper)
    }
}

/// Declarative description of one aggregation head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadConfig {
    pub mode: Mode,
    pub kind: HeadKind,
    /// Feature dimension of the input sequences.
    pub d: usize,
    /// Number of output classes (1 for regression).
    pub c: usize,
    /// Window / kernel length for windowed and convolutional heads.
    pub l: usize,
    /// Pyramid level divisors, level-major.
    pub pyramid_levels: Vec<usize>,
    /// Number of sub-event or super-event filters.
    pub m: usize,
    /// Gaussians per sub-event filter.
    pub n: usize,
    /// LSTM hidden size per direction.
    pub hidden: usize,
}

impl HeadConfig {
    pub fn new(mode: Mode, kind: HeadKind, d: usize, c: usize) -> Self {
        Self {
            mode,
            kind,
            d,
            c,
            l: match (mode, kind) {
                (Mode::Segmented, HeadKind::TemporalConv) => 8,
                _ => 16,
            },
            pyramid_levels: match mode {
                Mode::Segmented => vec![1, 2, 4],
                Mode::Continuous => vec![2, 4, 8],
            },
            m: 3,
            n: 3,
            hidden: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.c == 0 {
            return Err(Error::Config(format!(
                "feature dim and class count must be positive, got D={}, C={}",
                self.d, self.c
            )));
        }
        if self.kind.continuous_only() && self.mode == Mode::Segmented {
            return Err(Error::Config(format!(
                "head '{}' is only defined in continuous mode",
                self.kind.name()
            )));
        }
        if self.mode == Mode::Continuous && self.kind == HeadKind::Bilstm {
            return Err(Error::Config(
                "bilstm head is only defined in segmented mode".into(),
            ));
        }
        if self.kind == HeadKind::SubEvents || self.kind == HeadKind::SubSuper {
            if self.n < 2 {
                return Err(Error::Config(format!(
                    "sub-event banks need N >= 2 gaussians, got {}",
                    self.n
                )));
            }
        }
        if self.kind == HeadKind::Pyramid && self.pyramid_levels.is_empty() {
            return Err(Error::Config("pyramid head needs at least one level".into()));
        }
        Ok(())
    }

    fn pyramid_k(&self) -> usize {
        self.pyramid_levels.iter().sum()
    }

    /// Parameter names and shapes, in the order they are stored.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let (d, c, l, m, n, h) = (self.d, self.c, self.l, self.m, self.n, self.hidden);
        let classifier = |input: usize| {
            vec![
                ("classifier.weight".to_string(), vec![input, c]),
                ("classifier.bias".to_string(), vec![c]),
            ]
        };
        let sub_bank = || {
            vec![
                ("subevents.centers".to_string(), vec![m]),
                ("subevents.strides".to_string(), vec![m]),
                ("subevents.widths".to_string(), vec![m]),
            ]
        };
        let super_bank = || {
            vec![
                ("superevents.centers".to_string(), vec![m]),
                ("superevents.widths".to_string(), vec![m]),
                ("superevents.attention".to_string(), vec![c, m]),
            ]
        };
        match (self.mode, self.kind) {
            (_, HeadKind::MeanPool) | (_, HeadKind::MaxPool) => classifier(d),
            (_, HeadKind::Pyramid) => classifier(self.pyramid_k() * d),
            (_, HeadKind::TemporalConv) => {
                let mut p = vec![("conv.kernel".to_string(), vec![l, d, d])];
                p.extend(classifier(d));
                p
            }
            (Mode::Segmented, HeadKind::SubEvents) => {
                let mut p = sub_bank();
                p.extend(classifier(m * n * d));
                p
            }
            (Mode::Continuous, HeadKind::SubEvents) => {
                let mut p = sub_bank();
                p.extend(classifier(m * n * d));
                p
            }
            (_, HeadKind::Bilstm) => vec![
                ("lstm.fwd.weight".to_string(), vec![d + h, 4 * h]),
                ("lstm.fwd.bias".to_string(), vec![4 * h]),
                ("lstm.bwd.weight".to_string(), vec![d + h, 4 * h]),
                ("lstm.bwd.bias".to_string(), vec![4 * h]),
                ("classifier.weight".to_string(), vec![2 * h, c]),
                ("classifier.bias".to_string(), vec![c]),
            ],
            (_, HeadKind::PerFrame) => classifier(d),
            (_, HeadKind::SuperEvents) => {
                let mut p = super_bank();
                p.extend(classifier(d + c * d));
                p
            }
            (_, HeadKind::SubSuper) => {
                let mut p = sub_bank();
                p.extend(super_bank());
                p.extend(classifier(m * n * d + c * d));
                p
            }
        }
    }
}

/// Exact count of learnable scalars for a head configuration.
pub fn count_parameters(config: &HeadConfig) -> usize {
    config
        .param_specs()
        .iter()
        .map(|(_, shape)| shape.iter().product::<usize>())
        .sum()
}

/// A named learnable parameter.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// A head configuration plus its learnable parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: HeadConfig,
    pub params: Vec<Param>,
}

impl Model {
    /// Seeded initialization. Linear layers draw uniform(-1/sqrt(fan_in),
    /// 1/sqrt(fan_in)); filter-bank parameters follow their bank defaults.
    pub fn new(config: HeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sub = SubEventFilterBank::init(config.m, config.n, &mut rng);
        let sup = SuperEventFilterBank::init(config.m, config.c, &mut rng);
        let params = config
            .param_specs()
            .into_iter()
            .map(|(name, shape)| {
                let count: usize = shape.iter().product();
                let data = match name.as_str() {
                    "subevents.centers" => sub.centers.clone(),
                    "subevents.strides" => sub.strides.clone(),
                    "subevents.widths" => sub.widths.clone(),
                    "superevents.centers" => sup.centers.clone(),
                    "superevents.widths" => sup.widths.clone(),
                    "superevents.attention" => sup.attention.clone(),
                    _ if name.ends_with(".bias") => vec![0.0; count],
                    _ => {
                        // fan_in = all but the trailing output dimension
                        let fan_in: usize =
                            shape[..shape.len() - 1].iter().product::<usize>().max(1);
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        (0..count).map(|_| rng.gen_range(-bound..bound)).collect()
                    }
                };
                Param { name, shape, data }
            })
            .collect();
        Ok(Self { config, params })
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Bind every parameter as a gradient leaf on `tape`, in storage order.
    pub fn bind(&self, tape: &Tape) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.shape.clone(), p.data.clone()))
            .collect()
    }

    /// Run the head on a T×D input already recorded on the same tape as
    /// `leaves` (as produced by [`Model::bind`]). Returns C logits in
    /// segmented mode and T×C logits in continuous mode.
    pub fn forward(&self, leaves: &[Tensor], v: &Tensor) -> Result<Tensor> {
        let by_name = |name: &str| -> &Tensor {
            let idx = self
                .params
                .iter()
                .position(|p| p.name == name)
                .expect("parameter present by construction");
            &leaves[idx]
        };
        let classify = |x: &Tensor| -> Result<Tensor> {
            Ok(x.linear(by_name("classifier.weight"), by_name("classifier.bias"))?)
        };
        let t = v.shape()[0];
        let cfg = &self.config;
        let logits = match (cfg.mode, cfg.kind) {
            (Mode::Segmented, HeadKind::MeanPool) => classify(&v.pool_time(PoolKind::Mean)?)?,
            (Mode::Segmented, HeadKind::MaxPool) => classify(&v.pool_time(PoolKind::Max)?)?,
            (Mode::Segmented, HeadKind::Pyramid) => {
                let pooled = v.pyramid_pool(&cfg.pyramid_levels)?;
                classify(&pooled.reshape(vec![cfg.pyramid_k() * cfg.d])?)?
            }
            (Mode::Segmented, HeadKind::TemporalConv) => {
                let conv = v.conv1d_temporal(by_name("conv.kernel"), Padding::Valid)?;
                classify(&conv.pool_time(PoolKind::Max)?)?
            }
            (Mode::Segmented, HeadKind::SubEvents) => {
                let filters = build_gaussian_filters(
                    by_name("subevents.centers"),
                    by_name("subevents.strides"),
                    by_name("subevents.widths"),
                    cfg.n,
                    t,
                )?;
                let pooled = apply_subevents_segmented(&filters, v)?;
                classify(&pooled.reshape(vec![cfg.m * cfg.n * cfg.d])?)?
            }
            (Mode::Segmented, HeadKind::Bilstm) => {
                let fwd = lstm_direction(
                    v,
                    by_name("lstm.fwd.weight"),
                    by_name("lstm.fwd.bias"),
                    cfg.hidden,
                    false,
                )?;
                let bwd = lstm_direction(
                    v,
                    by_name("lstm.bwd.weight"),
                    by_name("lstm.bwd.bias"),
                    cfg.hidden,
                    true,
                )?;
                classify(&concat(&[&fwd, &bwd])?)?
            }
            (Mode::Continuous, HeadKind::PerFrame) => classify(v)?,
            (Mode::Continuous, HeadKind::MaxPool) => classify(&v.sliding_max_pool(cfg.l)?)?,
            (Mode::Continuous, HeadKind::Pyramid) => {
                classify(&v.sliding_pyramid_pool(cfg.l, &cfg.pyramid_levels)?)?
            }
            (Mode::Continuous, HeadKind::TemporalConv) => {
                let conv = v.conv1d_temporal(by_name("conv.kernel"), Padding::SameReplicate)?;
                classify(&conv)?
            }
            (Mode::Continuous, HeadKind::SubEvents) => {
                let filters = build_gaussian_filters(
                    by_name("subevents.centers"),
                    by_name("subevents.strides"),
                    by_name("subevents.widths"),
                    cfg.n,
                    cfg.l,
                )?;
                classify(&apply_subevents_continuous(&filters, v)?)?
            }
            (Mode::Continuous, HeadKind::SuperEvents) => {
                let context = self.super_event_context(
                    by_name("superevents.centers"),
                    by_name("superevents.widths"),
                    by_name("superevents.attention"),
                    v,
                    t,
                )?;
                classify(&broadcast_concat_rows(v, &context)?)?
            }
            (Mode::Continuous, HeadKind::SubSuper) => {
                let filters = build_gaussian_filters(
                    by_name("subevents.centers"),
                    by_name("subevents.strides"),
                    by_name("subevents.widths"),
                    cfg.n,
                    cfg.l,
                )?;
                let sub = apply_subevents_continuous(&filters, v)?;
                let context = self.super_event_context(
                    by_name("superevents.centers"),
                    by_name("superevents.widths"),
                    by_name("superevents.attention"),
                    v,
                    t,
                )?;
                classify(&broadcast_concat_rows(&sub, &context)?)?
            }
            (mode, kind) => {
                return Err(Error::Config(format!(
                    "head '{}' is not defined in {:?} mode",
                    kind.name(),
                    mode
                )))
            }
        };
        Ok(logits)
    }

    fn super_event_context(
        &self,
        centers: &Tensor,
        widths: &Tensor,
        attention_logits: &Tensor,
        v: &Tensor,
        t: usize,
    ) -> Result<Tensor> {
        let filters = build_cauchy_filters(centers, widths, t)?;
        let attention = softmax_rows(attention_logits)?;
        let summary = super_event_representation(&filters, &attention, v)?;
        Ok(summary.reshape(vec![self.config.c * self.config.d])?)
    }

    /// Materialized filter rows for export, or None if this head has no
    /// filter bank. Each row sums to 1 over time.
    pub fn filter_rows(&self, t: usize) -> Result<Option<Vec<FilterRow>>> {
        let mut rows = Vec::new();
        if let (Some(gc), Some(gs), Some(gw)) = (
            self.param("subevents.centers"),
            self.param("subevents.strides"),
            self.param("subevents.widths"),
        ) {
            let len = if self.config.mode == Mode::Continuous {
                self.config.l
            } else {
                t
            };
            let bank = SubEventFilterBank {
                m: self.config.m,
                n: self.config.n,
                centers: gc.data.clone(),
                strides: gs.data.clone(),
                widths: gw.data.clone(),
            };
            let data = bank.materialize(len)?;
            for fm in 0..self.config.m {
                for i in 0..self.config.n {
                    let base = (fm * self.config.n + i) * len;
                    rows.push(FilterRow {
                        filter_index: fm,
                        gaussian_index: i,
                        weights: data[base..base + len].to_vec(),
                    });
                }
            }
        }
        if let (Some(sc), Some(sw)) = (
            self.param("superevents.centers"),
            self.param("superevents.widths"),
        ) {
            let bank = SuperEventFilterBank {
                m: self.config.m,
                c: self.config.c,
                centers: sc.data.clone(),
                widths: sw.data.clone(),
                attention: vec![],
            };
            let data = bank.materialize(t)?; // T x M, column-major filters
            let offset = rows.len();
            for fm in 0..self.config.m {
                let weights = (0..t).map(|ti| data[ti * self.config.m + fm]).collect();
                rows.push(FilterRow {
                    filter_index: offset + fm,
                    gaussian_index: 0,
                    weights,
                });
            }
        }
        Ok(if rows.is_empty() { None } else { Some(rows) })
    }
}

/// One exported filter curve.
pub struct FilterRow {
    pub filter_index: usize,
    pub gaussian_index: usize,
    pub weights: Vec<f64>,
}

/// One direction of an LSTM over a T×D input; returns the final hidden state.
fn lstm_direction(
    v: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    hidden: usize,
    reverse: bool,
) -> Result<Tensor> {
    let t = v.shape()[0];
    let tape = v.tape().clone();
    let mut h = tape.constant(vec![hidden], vec![0.0; hidden]);
    let mut c = tape.constant(vec![hidden], vec![0.0; hidden]);
    let order: Vec<usize> = if reverse {
        (0..t).rev().collect()
    } else {
        (0..t).collect()
    };
    for ti in order {
        let x = v.row(ti)?;
        let gates = concat(&[&x, &h])?.linear(weight, bias)?;
        let i_gate = gates.slice(0, hidden)?.activation(Activation::Sigmoid);
        let f_gate = gates.slice(hidden, hidden)?.activation(Activation::Sigmoid);
        let g_gate = gates.slice(2 * hidden, hidden)?.activation(Activation::Tanh);
        let o_gate = gates.slice(3 * hidden, hidden)?.activation(Activation::Sigmoid);
        c = f_gate.mul(&c)?.add(&i_gate.mul(&g_gate)?)?;
        h = o_gate.mul(&c.activation(Activation::Tanh))?;
    }
    Ok(h)
}
