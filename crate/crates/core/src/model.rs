//! The five networks trained by the objective: encoder `f`, projector `g`,
//! Gaussian heads `q_mu` / `q_logvar`, and decoder `r`.
//!
//! All of them are small MLPs (relu on hidden layers, identity output). The
//! heads and the decoder consume the encoder output `h`.

use crate::tensor::{rng_normal, Element, Rng, Tape, Tensor, TensorError, Var};

/// Log-variance outputs are clamped into `[-LOGVAR_CLAMP, LOGVAR_CLAMP]`.
pub const LOGVAR_CLAMP: f64 = 10.0;

/// Layer widths of one MLP, input first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub widths: Vec<usize>,
}

impl LayerSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self, TensorError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(TensorError::InvalidArgument(format!(
                "layer widths must have at least one layer and be positive, got {widths:?}"
            )));
        }
        Ok(Self { widths })
    }
}

/// Sizes of every network in a bundle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub repr_dim: usize,
    pub proj_hidden: Vec<usize>,
    pub proj_dim: usize,
    pub decoder_hidden: Vec<usize>,
}

impl ModelDims {
    /// Encoder D -> 256 -> 256 -> 128, projector 128 -> 64, decoder 128 -> 256 -> D.
    pub fn standard(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![256, 256],
            repr_dim: 128,
            proj_hidden: Vec::new(),
            proj_dim: 64,
            decoder_hidden: vec![256],
        }
    }

    fn chain(input: usize, hidden: &[usize], output: usize) -> Result<LayerSpec, TensorError> {
        let mut w = vec![input];
        w.extend_from_slice(hidden);
        w.push(output);
        LayerSpec::new(w)
    }

    /// Small network used by gradient checks: D -> 8 -> 6, projector 6 -> 4,
    /// decoder 6 -> 8 -> D.
    pub fn tiny(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![8],
            repr_dim: 6,
            proj_hidden: Vec::new(),
            proj_dim: 4,
            decoder_hidden: vec![8],
        }
    }

    /// Number of parameter tensors in a bundle of these dimensions.
    pub fn param_tensor_count(&self) -> usize {
        2 * (self.hidden.len() + self.proj_hidden.len() + self.decoder_hidden.len() + 5)
    }

    /// Reassembles tape handles given in canonical parameter order (see
    /// [`ModelBundle::named_params`]).
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundBundle, TensorError> {
        if vars.len() != self.param_tensor_count() {
            return Err(TensorError::InvalidArgument(format!(
                "expected {} parameter handles, got {}",
                self.param_tensor_count(),
                vars.len()
            )));
        }
        let mut it = vars.chunks(2).map(|c| LinearVars {
            weight: c[0],
            bias: c[1],
        });
        let mut take = |n: usize| it.by_ref().take(n).collect::<Vec<_>>();
        let f = take(self.hidden.len() + 1);
        let g = take(self.proj_hidden.len() + 1);
        let q_mu = take(1)[0];
        let q_logvar = take(1)[0];
        let r = take(self.decoder_hidden.len() + 1);
        Ok(BoundBundle {
            input_dim: self.input_dim,
            repr_dim: self.repr_dim,
            f,
            g,
            q_mu,
            q_logvar,
            r,
        })
    }

    pub fn encoder(&self) -> Result<LayerSpec, TensorError> {
        Self::chain(self.input_dim, &self.hidden, self.repr_dim)
    }

    pub fn projector(&self) -> Result<LayerSpec, TensorError> {
        Self::chain(self.repr_dim, &self.proj_hidden, self.proj_dim)
    }

    pub fn decoder(&self) -> Result<LayerSpec, TensorError> {
        Self::chain(self.repr_dim, &self.decoder_hidden, self.input_dim)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `fan_in x fan_out`
    pub weight: Tensor<T>,
    /// `1 x fan_out`
    pub bias: Tensor<T>,
}

impl<T: Element> Linear<T> {
    /// He-normal weights, zero bias.
    pub fn init(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Result<Self, TensorError> {
        let std = (2.0 / fan_in as f64).sqrt();
        Ok(Self {
            weight: rng_normal(rng, vec![fan_in, fan_out], 0.0, std)?,
            bias: Tensor::zeros(vec![1, fan_out]),
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

impl<T: Element> Mlp<T> {
    pub fn init(rng: &mut Rng, spec: &LayerSpec) -> Result<Self, TensorError> {
        let layers = spec
            .widths
            .windows(2)
            .map(|w| Linear::init(rng, w[0], w[1]))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers })
    }
}

/// Parameters of all five networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle<T> {
    pub dims: ModelDims,
    pub f: Mlp<T>,
    pub g: Mlp<T>,
    pub q_mu: Linear<T>,
    pub q_logvar: Linear<T>,
    pub r: Mlp<T>,
}

/// Tape handles for one layer.
#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

/// A bundle's parameters registered on a tape.
#[derive(Clone, Debug)]
pub struct BoundBundle {
    pub input_dim: usize,
    pub repr_dim: usize,
    pub f: Vec<LinearVars>,
    pub g: Vec<LinearVars>,
    pub q_mu: LinearVars,
    pub q_logvar: LinearVars,
    pub r: Vec<LinearVars>,
}

impl BoundBundle {
    /// Handles in the same order as [`ModelBundle::named_params`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        let mut push = |l: &LinearVars| {
            out.push(l.weight);
            out.push(l.bias);
        };
        self.f.iter().for_each(&mut push);
        self.g.iter().for_each(&mut push);
        push(&self.q_mu);
        push(&self.q_logvar);
        self.r.iter().for_each(&mut push);
        out
    }
}

impl<T: Element> ModelBundle<T> {
    /// Draws a fresh bundle. Networks are initialized in the order
    /// f, g, q_mu, q_logvar, r from a single stream.
    pub fn init(rng: &mut Rng, dims: ModelDims) -> Result<Self, TensorError> {
        let f = Mlp::init(rng, &dims.encoder()?)?;
        let g = Mlp::init(rng, &dims.projector()?)?;
        let q_mu = Linear::init(rng, dims.repr_dim, dims.repr_dim)?;
        let q_logvar = Linear::init(rng, dims.repr_dim, dims.repr_dim)?;
        let r = Mlp::init(rng, &dims.decoder()?)?;
        let bundle = Self {
            dims,
            f,
            g,
            q_mu,
            q_logvar,
            r,
        };
        bundle.check_dims()?;
        Ok(bundle)
    }

    /// Verifies the dimension chain: f ends where g, the heads and r begin,
    /// and r ends where f begins.
    pub fn check_dims(&self) -> Result<(), TensorError> {
        let bad = |what: &str| {
            Err(TensorError::InvalidArgument(format!(
                "inconsistent model dimensions: {what}"
            )))
        };
        let chain_ok = |m: &Mlp<T>, input: usize, output: usize| {
            !m.layers.is_empty()
                && m.layers[0].fan_in() == input
                && m.layers.last().map(Linear::fan_out) == Some(output)
                && m.layers.windows(2).all(|w| w[0].fan_out() == w[1].fan_in())
                && m.layers.iter().all(|l| l.bias.shape() == [1, l.fan_out()])
        };
        let (d, h) = (self.dims.input_dim, self.dims.repr_dim);
        if !chain_ok(&self.f, d, h) {
            return bad("encoder");
        }
        if !chain_ok(&self.g, h, self.dims.proj_dim) {
            return bad("projector");
        }
        for head in [&self.q_mu, &self.q_logvar] {
            if head.weight.shape() != [h, h] || head.bias.shape() != [1, h] {
                return bad("gaussian head");
            }
        }
        if !chain_ok(&self.r, h, d) {
            return bad("decoder");
        }
        Ok(())
    }

    /// Parameters in canonical order, named `<net>.<layer>.<weight|bias>`.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        push_mlp_params("f", &self.f, &mut out);
        push_mlp_params("g", &self.g, &mut out);
        out.push(("q_mu.0.weight".into(), &self.q_mu.weight));
        out.push(("q_mu.0.bias".into(), &self.q_mu.bias));
        out.push(("q_logvar.0.weight".into(), &self.q_logvar.weight));
        out.push(("q_logvar.0.bias".into(), &self.q_logvar.bias));
        push_mlp_params("r", &self.r, &mut out);
        out
    }

    /// Mutable parameters in the same order as [`Self::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in self.f.layers.iter_mut().chain(self.g.layers.iter_mut()) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.q_mu.weight);
        out.push(&mut self.q_mu.bias);
        out.push(&mut self.q_logvar.weight);
        out.push(&mut self.q_logvar.bias);
        for l in self.r.layers.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    /// Whether the parameter at `index` (canonical order) belongs to the
    /// encoder or projector.
    pub fn is_backbone_param(&self, index: usize) -> bool {
        index < 2 * (self.f.layers.len() + self.g.layers.len())
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named_params().iter().all(|(_, t)| t.all_finite())
    }

    /// Registers every parameter on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundBundle {
        let mut bind_linear = |l: &Linear<T>| LinearVars {
            weight: tape.leaf(l.weight.clone(), trainable),
            bias: tape.leaf(l.bias.clone(), trainable),
        };
        let f = self.f.layers.iter().map(&mut bind_linear).collect();
        let g = self.g.layers.iter().map(&mut bind_linear).collect();
        let q_mu = bind_linear(&self.q_mu);
        let q_logvar = bind_linear(&self.q_logvar);
        let r = self.r.layers.iter().map(&mut bind_linear).collect();
        BoundBundle {
            input_dim: self.dims.input_dim,
            repr_dim: self.dims.repr_dim,
            f,
            g,
            q_mu,
            q_logvar,
            r,
        }
    }

    /// Rebuilds a bundle from named tensors (as produced by
    /// [`Self::named_params`]).
    pub fn from_named(
        dims: ModelDims,
        mut lookup: impl FnMut(&str) -> Option<Tensor<T>>,
    ) -> Result<Self, TensorError> {
        let mut take = |name: String| {
            lookup(&name)
                .ok_or_else(|| TensorError::InvalidArgument(format!("missing parameter {name}")))
        };
        let mut mlp = |net: &str, layers: usize| -> Result<Mlp<T>, TensorError> {
            let layers = (0..layers)
                .map(|i| {
                    Ok(Linear {
                        weight: take(format!("{net}.{i}.weight"))?,
                        bias: take(format!("{net}.{i}.bias"))?,
                    })
                })
                .collect::<Result<_, TensorError>>()?;
            Ok(Mlp { layers })
        };
        let f = mlp("f", dims.hidden.len() + 1)?;
        let g = mlp("g", dims.proj_hidden.len() + 1)?;
        let q_mu = mlp("q_mu", 1)?.layers.remove(0);
        let q_logvar = mlp("q_logvar", 1)?.layers.remove(0);
        let r = mlp("r", dims.decoder_hidden.len() + 1)?;
        let bundle = Self {
            dims,
            f,
            g,
            q_mu,
            q_logvar,
            r,
        };
        bundle.check_dims()?;
        Ok(bundle)
    }
}

fn push_mlp_params<'a, T>(net: &str, m: &'a Mlp<T>, out: &mut Vec<(String, &'a Tensor<T>)>) {
    for (i, l) in m.layers.iter().enumerate() {
        out.push((format!("{net}.{i}.weight"), &l.weight));
        out.push((format!("{net}.{i}.bias"), &l.bias));
    }
}

fn check_width<T: Element>(
    tape: &Tape<T>,
    x: Var,
    expected: usize,
    op: &'static str,
) -> Result<(), TensorError> {
    let shape = tape.value(x).shape();
    if shape.len() != 2 || shape[1] != expected {
        return Err(TensorError::Shape {
            op,
            lhs: shape.to_vec(),
            rhs: vec![expected],
        });
    }
    Ok(())
}

fn mlp_forward<T: Element>(
    tape: &mut Tape<T>,
    layers: &[LinearVars],
    mut x: Var,
) -> Result<Var, TensorError> {
    for (i, l) in layers.iter().enumerate() {
        x = tape.linear(x, l.weight, l.bias)?;
        if i + 1 < layers.len() {
            x = tape.relu(x)?;
        }
    }
    Ok(x)
}

/// `h = f(v)`.
pub fn encode<T: Element>(tape: &mut Tape<T>, b: &BoundBundle, v: Var) -> Result<Var, TensorError> {
    check_width(tape, v, b.input_dim, "encode")?;
    mlp_forward(tape, &b.f, v)
}

/// `z = g(h)`.
pub fn project<T: Element>(tape: &mut Tape<T>, b: &BoundBundle, h: Var) -> Result<Var, TensorError> {
    check_width(tape, h, b.repr_dim, "project")?;
    mlp_forward(tape, &b.g, h)
}

/// `(mu, logvar)` of the per-sample Gaussian; logvar is clamped to
/// `[-LOGVAR_CLAMP, LOGVAR_CLAMP]`.
pub fn gaussian_heads<T: Element>(
    tape: &mut Tape<T>,
    b: &BoundBundle,
    h: Var,
) -> Result<(Var, Var), TensorError> {
    check_width(tape, h, b.repr_dim, "gaussian_heads")?;
    let mu = tape.linear(h, b.q_mu.weight, b.q_mu.bias)?;
    let raw = tape.linear(h, b.q_logvar.weight, b.q_logvar.bias)?;
    let logvar = tape.clamp(raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)?;
    Ok((mu, logvar))
}

/// `v_hat = r(h)`.
pub fn decode<T: Element>(tape: &mut Tape<T>, b: &BoundBundle, h: Var) -> Result<Var, TensorError> {
    check_width(tape, h, b.repr_dim, "decode")?;
    mlp_forward(tape, &b.r, h)
}
