//! The graph-attention spatial operator.
//!
//! Two graph layers turn a state field `u` into first- and second-derivative
//! estimates, and a small core network maps `[u, ∇u, ℍ(u)]` to `u_t`:
//!
//! * layer 1: per edge `γ = att1(δx)`, message `γ̃ ⊙ δũ`, reduced over in-edges;
//! * layer 2: per edge `β = att2(δx)`, message `β̃ ⊙ δ∇ũ`, reduced over in-edges;
//! * core: one hidden layer with leaky ReLU.
//!
//! The attention nets only see relative offsets and the messages only see
//! state differences, so a trained model can be evaluated on any grid.

mod attention;
mod checkpoint;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use attention::{monomial_exponents, monomial_features, taylor_eval};
pub use checkpoint::{load_checkpoint, save_checkpoint};

use crate::error::{Error, Result};
use crate::graph::{BoundaryMask, GridGraph};
use crate::integrator::System;
use crate::params::{BoundParams, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Reduce, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttentionKind {
    #[default]
    Fnn,
    Taylor,
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fnn" => Ok(AttentionKind::Fnn),
            "taylor" => Ok(AttentionKind::Taylor),
            other => Err(Error::config(format!(
                "unknown attention kind {other:?} (expected fnn|taylor)"
            ))),
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionKind::Fnn => "fnn",
            AttentionKind::Taylor => "taylor",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub ndim: usize,
    pub attention: AttentionKind,
    pub attention_hidden: usize,
    pub core_hidden: usize,
    /// Total monomial degree for Taylor attention.
    pub taylor_degree: usize,
    pub slope: f64,
    pub layer1_reduce: Reduce,
    pub layer2_reduce: Reduce,
    /// Attention nets receive `δx / offset_scale`.
    pub offset_scale: f64,
}

impl ModelConfig {
    /// Hidden widths 32/32/32 in 1-D and 32/32/64 in 2-D.
    pub fn new(ndim: usize) -> Result<Self> {
        let core_hidden = match ndim {
            1 => 32,
            2 => 64,
            other => return Err(Error::config(format!("unsupported ndim {other}"))),
        };
        Ok(ModelConfig {
            ndim,
            attention: AttentionKind::Fnn,
            attention_hidden: 32,
            core_hidden,
            taylor_degree: 3,
            slope: LEAKY_SLOPE,
            layer1_reduce: Reduce::Mean,
            layer2_reduce: Reduce::Mean,
            offset_scale: 1.0,
        })
    }

    pub fn with_attention(mut self, kind: AttentionKind) -> Self {
        self.attention = kind;
        self
    }

    pub fn with_offset_scale(mut self, scale: f64) -> Self {
        self.offset_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.ndim) {
            return Err(Error::config(format!("unsupported ndim {}", self.ndim)));
        }
        if self.attention_hidden == 0 || self.core_hidden == 0 {
            return Err(Error::config("hidden widths must be positive"));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::config(format!("leaky slope {} outside (0,1)", self.slope)));
        }
        if !(self.offset_scale.is_finite() && self.offset_scale > 0.0) {
            return Err(Error::config("offset_scale must be positive"));
        }
        Ok(())
    }

    /// Layer-1 attention outputs (and layer-1 output width): `ndim²`.
    pub fn grad_width(&self) -> usize {
        self.ndim * self.ndim
    }

    /// Layer-2 attention outputs (and layer-2 output width): `ndim³`.
    pub fn hess_width(&self) -> usize {
        self.ndim * self.ndim * self.ndim
    }

    pub fn core_input_width(&self) -> usize {
        self.ndim + self.grad_width() + self.hess_width()
    }

    pub fn taylor_terms(&self) -> usize {
        monomial_exponents(self.ndim, self.taylor_degree).len()
    }
}

/// Column maps realising the replication rules as gathers.
///
/// Layer 1 output channel `c` is `γ[att[c]] · δu[state[c]]`; layer 2 output
/// channel `c` is `β[att[c]] · δ(∇u)[grad[c]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMaps {
    pub layer1_att: Arc<[usize]>,
    pub layer1_state: Arc<[usize]>,
    pub layer2_att: Arc<[usize]>,
    pub layer2_grad: Arc<[usize]>,
}

impl IndexMaps {
    pub fn for_ndim(ndim: usize) -> Self {
        match ndim {
            1 => IndexMaps {
                layer1_att: Arc::from([0usize]),
                layer1_state: Arc::from([0usize]),
                layer2_att: Arc::from([0usize]),
                layer2_grad: Arc::from([0usize]),
            },
            // γ = [γux, γuy, γvx, γvy] fills γ̃ = [[γux, γvx], [γuy, γvy]];
            // δũ = [[δu, δu], [δv, δv]]; output is the 2×2 message row-major.
            // β = [βuxx, βuxy, βuyx, βuyy, βvxx, βvxy, βvyx, βvyy] fills
            // β̃ = [[βuxx, βuxy, βvxx, βvxy], [βuyx, βuyy, βvyx, βvyy]];
            // δ∇ũ duplicates each entry of the 2×2 gradient along its row.
            _ => IndexMaps {
                layer1_att: Arc::from([0usize, 2, 1, 3]),
                layer1_state: Arc::from([0usize, 0, 1, 1]),
                layer2_att: Arc::from([0usize, 1, 4, 5, 2, 3, 6, 7]),
                layer2_grad: Arc::from([0usize, 0, 1, 1, 2, 2, 3, 3]),
            },
        }
    }
}

/// A graph plus everything derived from it that the model consumes.
#[derive(Clone, Debug)]
pub struct Domain {
    graph: GridGraph,
    offsets: Tensor,
    mask: Option<BoundaryMask>,
}

impl Domain {
    pub fn new(graph: GridGraph) -> Self {
        let offsets = graph.edge_offsets();
        Domain {
            graph,
            offsets,
            mask: None,
        }
    }

    /// Remove incoming edges of `boundary` and clamp their dynamics to zero.
    pub fn with_dirichlet(graph: &GridGraph, boundary: &[usize]) -> Result<Self> {
        let (graph, mask) = graph.apply_dirichlet_mask(boundary)?;
        let offsets = graph.edge_offsets();
        Ok(Domain {
            graph,
            offsets,
            mask: Some(mask).filter(|m| !m.is_empty()),
        })
    }

    pub fn graph(&self) -> &GridGraph {
        &self.graph
    }

    pub fn offsets(&self) -> &Tensor {
        &self.offsets
    }

    pub fn mask(&self) -> Option<&BoundaryMask> {
        self.mask.as_ref()
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn ndim(&self) -> usize {
        self.graph.ndim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradeModel {
    config: ModelConfig,
    params: ParamSet,
    maps: IndexMaps,
    seed: u64,
}

/// Parameters and per-edge attention outputs recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub params: BoundParams,
    pub gamma: Var,
    pub beta: Var,
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let s = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-s, s).expect("valid bounds");
    let len = shape.iter().product();
    let data = (0..len).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape, data).expect("shape matches")
}

impl GradeModel {
    /// Fresh parameters drawn uniformly from `[-1/√fan_in, 1/√fan_in]`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let d = config.ndim;
        let blocks = [("att1", config.grad_width()), ("att2", config.hess_width())];
        for (block, out) in blocks {
            match config.attention {
                AttentionKind::Fnn => {
                    let h = config.attention_hidden;
                    params.insert(format!("{block}.w1"), uniform_tensor(&mut rng, vec![h, d], d))?;
                    params.insert(format!("{block}.b1"), uniform_tensor(&mut rng, vec![h], d))?;
                    params.insert(format!("{block}.w2"), uniform_tensor(&mut rng, vec![out, h], h))?;
                    params.insert(format!("{block}.b2"), uniform_tensor(&mut rng, vec![out], h))?;
                }
                AttentionKind::Taylor => {
                    let q = config.taylor_terms();
                    params.insert(format!("{block}.w"), uniform_tensor(&mut rng, vec![out, q], q))?;
                }
            }
        }
        let (cin, ch) = (config.core_input_width(), config.core_hidden);
        params.insert("core.w1", uniform_tensor(&mut rng, vec![ch, cin], cin))?;
        params.insert("core.b1", uniform_tensor(&mut rng, vec![ch], cin))?;
        params.insert("core.w2", uniform_tensor(&mut rng, vec![d, ch], ch))?;
        params.insert("core.b2", uniform_tensor(&mut rng, vec![d], ch))?;
        Ok(GradeModel {
            maps: IndexMaps::for_ndim(d),
            config,
            params,
            seed,
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, params: ParamSet, seed: u64) -> Result<Self> {
        config.validate()?;
        let reference = GradeModel::init(config.clone(), seed)?;
        let mismatch = reference.params.len() != params.len()
            || reference
                .params
                .iter()
                .zip(params.iter())
                .any(|((na, ta), (nb, tb))| na != nb || ta.shape() != tb.shape());
        if mismatch {
            return Err(Error::Format(
                "parameter layout does not match the model configuration".into(),
            ));
        }
        Ok(GradeModel {
            maps: IndexMaps::for_ndim(config.ndim),
            config,
            params,
            seed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn maps(&self) -> &IndexMaps {
        &self.maps
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// `(input, hidden, output)` widths of the att1, att2 and core blocks.
    /// Taylor attention reports `(Q, 0, out)`.
    pub fn layer_widths(&self) -> [(usize, usize, usize); 3] {
        let c = &self.config;
        let att = |out| match c.attention {
            AttentionKind::Fnn => (c.ndim, c.attention_hidden, out),
            AttentionKind::Taylor => (c.taylor_terms(), 0, out),
        };
        [
            att(c.grad_width()),
            att(c.hess_width()),
            (c.core_input_width(), c.core_hidden, c.ndim),
        ]
    }

    fn check_domain(&self, domain: &Domain) -> Result<()> {
        if domain.ndim() != self.config.ndim {
            return Err(Error::shape(
                "model",
                format!("model is {}-D, graph is {}-D", self.config.ndim, domain.ndim()),
            ));
        }
        Ok(())
    }

    fn scaled_offsets(&self, domain: &Domain) -> Tensor {
        tensor::scale(domain.offsets(), 1.0 / self.config.offset_scale)
    }

    /// Record parameters and evaluate both attention nets for every edge.
    pub fn bind(&self, tape: &mut Tape, domain: &Domain) -> Result<BoundModel> {
        self.check_domain(domain)?;
        let params = self.params.bind(tape);
        let scaled = self.scaled_offsets(domain);
        let (gamma, beta) = match self.config.attention {
            AttentionKind::Fnn => {
                let x = tape.constant(scaled);
                let mut net = |base: usize| -> Result<Var> {
                    let h = tape.linear(x, params.var(base), Some(params.var(base + 1)))?;
                    let h = tape.leaky_relu(h, self.config.slope);
                    tape.linear(h, params.var(base + 2), Some(params.var(base + 3)))
                };
                (net(0)?, net(4)?)
            }
            AttentionKind::Taylor => {
                let feats = monomial_features(&scaled, self.config.taylor_degree)?;
                let x = tape.constant(feats);
                let g = tape.linear(x, params.var(0), None)?;
                let b = tape.linear(x, params.var(1), None)?;
                (g, b)
            }
        };
        Ok(BoundModel {
            params,
            gamma,
            beta,
        })
    }

    fn core_offset(&self) -> usize {
        match self.config.attention {
            AttentionKind::Fnn => 8,
            AttentionKind::Taylor => 2,
        }
    }

    /// Layer 1 on the tape: `∇u` estimate, `n × ndim²`.
    pub fn layer1_var(&self, tape: &mut Tape, bm: &BoundModel, domain: &Domain, u: Var) -> Result<Var> {
        edge_layer(
            tape,
            domain,
            u,
            bm.gamma,
            &self.maps.layer1_att,
            &self.maps.layer1_state,
            self.config.layer1_reduce,
        )
    }

    /// Layer 2 on the tape: `ℍ(u)` estimate, `n × ndim³`.
    pub fn layer2_var(&self, tape: &mut Tape, bm: &BoundModel, domain: &Domain, grad: Var) -> Result<Var> {
        edge_layer(
            tape,
            domain,
            grad,
            bm.beta,
            &self.maps.layer2_att,
            &self.maps.layer2_grad,
            self.config.layer2_reduce,
        )
    }

    /// `u_t = core([u, ∇u, ℍ(u)])` with clamped rows forced to zero.
    pub fn dynamics_var(&self, tape: &mut Tape, bm: &BoundModel, domain: &Domain, u: Var) -> Result<Var> {
        let shape = tape.value(u).shape().to_vec();
        if shape != [domain.n_nodes(), self.config.ndim] {
            return Err(Error::shape(
                "dynamics",
                format!("state {shape:?} on {} nodes, ndim {}", domain.n_nodes(), self.config.ndim),
            ));
        }
        let grad = self.layer1_var(tape, bm, domain, u)?;
        let hess = self.layer2_var(tape, bm, domain, grad)?;
        let h = tape.concat_cols(&[u, grad, hess])?;
        let off = self.core_offset();
        let p = &bm.params;
        let z = tape.linear(h, p.var(off), Some(p.var(off + 1)))?;
        let z = tape.leaky_relu(z, self.config.slope);
        let out = tape.linear(z, p.var(off + 2), Some(p.var(off + 3)))?;
        match domain.mask() {
            Some(mask) => {
                let mut keep = Tensor::filled(shape, 1.0);
                crate::integrator::clamp_rows(&mut keep, mask);
                let keep = tape.constant(keep);
                tape.mul(out, keep)
            }
            None => Ok(out),
        }
    }

    /// Per-edge attention outputs `(γ, β)`.
    pub fn attention(&self, domain: &Domain) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let bm = self.bind(&mut tape, domain)?;
        Ok((tape.value(bm.gamma).clone(), tape.value(bm.beta).clone()))
    }

    pub fn graph_layer1(&self, domain: &Domain, u: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bm = self.bind(&mut tape, domain)?;
        let uv = tape.constant(u.clone());
        let out = self.layer1_var(&mut tape, &bm, domain, uv)?;
        Ok(tape.value(out).clone())
    }

    pub fn graph_layer2(&self, domain: &Domain, grad: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bm = self.bind(&mut tape, domain)?;
        let gv = tape.constant(grad.clone());
        let out = self.layer2_var(&mut tape, &bm, domain, gv)?;
        Ok(tape.value(out).clone())
    }

    pub fn dynamics(&self, domain: &Domain, u: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bm = self.bind(&mut tape, domain)?;
        let uv = tape.constant(u.clone());
        let out = self.dynamics_var(&mut tape, &bm, domain, uv)?;
        Ok(tape.value(out).clone())
    }

    /// Tape-free system for inference rollouts; attention is evaluated once.
    pub fn system<'a>(&'a self, domain: &'a Domain) -> Result<ModelSystem<'a>> {
        let (gamma, beta) = self.attention(domain)?;
        Ok(ModelSystem {
            model: self,
            domain,
            gamma,
            beta,
        })
    }
}

/// One graph layer: gather per-edge attention and differences through the
/// column maps, multiply, reduce onto target nodes.
fn edge_layer(
    tape: &mut Tape,
    domain: &Domain,
    x: Var,
    att: Var,
    att_cols: &Arc<[usize]>,
    x_cols: &Arc<[usize]>,
    reduce: Reduce,
) -> Result<Var> {
    let g = domain.graph();
    let diff = tape.edge_diff(x, g.targets(), g.sources())?;
    let identity = |cols: &Arc<[usize]>, width: usize| {
        cols.len() == width && cols.iter().enumerate().all(|(i, &c)| i == c)
    };
    let a = if identity(att_cols, tape.value(att).cols()) {
        att
    } else {
        tape.select_cols(att, att_cols)?
    };
    let d = if identity(x_cols, tape.value(diff).cols()) {
        diff
    } else {
        tape.select_cols(diff, x_cols)?
    };
    let msg = tape.mul(a, d)?;
    tape.segment_reduce(msg, g.targets(), g.n_nodes(), reduce)
}

/// Layer 1 with externally supplied per-edge attention `γ` (`E × ndim²`).
pub fn graph_layer1_with(domain: &Domain, u: &Tensor, gamma: &Tensor, reduce: Reduce) -> Result<Tensor> {
    let maps = IndexMaps::for_ndim(domain.ndim());
    let mut tape = Tape::new();
    let (uv, gv) = (tape.constant(u.clone()), tape.constant(gamma.clone()));
    let out = edge_layer(&mut tape, domain, uv, gv, &maps.layer1_att, &maps.layer1_state, reduce)?;
    Ok(tape.value(out).clone())
}

/// Layer 2 with externally supplied per-edge attention `β` (`E × ndim³`).
pub fn graph_layer2_with(domain: &Domain, grad: &Tensor, beta: &Tensor, reduce: Reduce) -> Result<Tensor> {
    let maps = IndexMaps::for_ndim(domain.ndim());
    let mut tape = Tape::new();
    let (xv, bv) = (tape.constant(grad.clone()), tape.constant(beta.clone()));
    let out = edge_layer(&mut tape, domain, xv, bv, &maps.layer2_att, &maps.layer2_grad, reduce)?;
    Ok(tape.value(out).clone())
}

/// Inference-only dynamics with cached attention outputs.
pub struct ModelSystem<'a> {
    model: &'a GradeModel,
    domain: &'a Domain,
    gamma: Tensor,
    beta: Tensor,
}

impl System for ModelSystem<'_> {
    type State = Tensor;

    fn eval(&mut self, u: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = BoundParams::constants(self.model.params(), &mut tape);
        let bm = BoundModel {
            params,
            gamma: tape.constant(self.gamma.clone()),
            beta: tape.constant(self.beta.clone()),
        };
        let uv = tape.constant(u.clone());
        let out = self.model.dynamics_var(&mut tape, &bm, self.domain, uv)?;
        Ok(tape.value(out).clone())
    }

    fn combine(&mut self, base: &Tensor, terms: &[(f64, &Tensor)]) -> Result<Tensor> {
        let mut out = base.clone();
        for (c, t) in terms {
            out.axpy(*c, t)?;
        }
        out.check_finite("stage update")
    }
}

/// Training-time system: states are tape variables so every stage is recorded.
pub struct TapeSystem<'a> {
    pub tape: &'a mut Tape,
    pub model: &'a GradeModel,
    pub bound: &'a BoundModel,
    pub domain: &'a Domain,
}

impl System for TapeSystem<'_> {
    type State = Var;

    fn eval(&mut self, u: &Var) -> Result<Var> {
        self.model.dynamics_var(self.tape, self.bound, self.domain, *u)
    }

    fn combine(&mut self, base: &Var, terms: &[(f64, &Var)]) -> Result<Var> {
        let mut acc = *base;
        for (c, t) in terms {
            acc = self.tape.add_scaled(acc, **t, *c)?;
        }
        Ok(acc)
    }
}
