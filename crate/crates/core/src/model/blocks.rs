use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Scalar, Tape, Tensor, Var};

use super::config::token_grid;
use super::cost::Trace;
use super::layers::{Builder, ConvBlock, ResidualBlock, Stage, StageMode, Transformer, VitBlock};
use super::params::{Bound, Materialize, ParamTable};

#[derive(Debug, Clone)]
enum Net {
    Residual(ResidualBlock),
    Combined(Stage),
    Conv(ConvBlock),
    Vit(Box<(VitBlock, Transformer)>),
}

/// Transformer geometry for a standalone transformer block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VitSpec {
    pub channels: usize,
    /// Input extent the position embeddings are sized for.
    pub input_hw: (usize, usize),
    pub token_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_dim: usize,
}

/// One generator building block with its own parameters.
#[derive(Debug, Clone)]
pub struct Block<T: Scalar = f32> {
    net: Net,
    params: ParamTable<T>,
}

impl<T: Scalar> Block<T> {
    fn build(
        seed: u64,
        f: impl FnOnce(&mut Builder<Materialize<T>>) -> Result<Net>,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamTable::new();
        let net = f(&mut Builder::new(&mut Materialize {
            table: &mut params,
            rng: &mut rng,
        }))?;
        Ok(Self { net, params })
    }

    /// `y = x + ReLU(IN(Conv3×3 x))`.
    pub fn residual(channels: usize, seed: u64) -> Result<Self> {
        Self::build(seed, |b| {
            Ok(Net::Residual(ResidualBlock::keep(b, "block", channels)?))
        })
    }

    /// `count` residual blocks; `Down` doubles channels and halves extents, `Up` the reverse.
    pub fn combined(mode: StageMode, channels: usize, count: usize, seed: u64) -> Result<Self> {
        Self::build(seed, |b| {
            Ok(Net::Combined(Stage::new(
                b, "stage", mode, channels, count,
            )?))
        })
    }

    /// `y = x + Conv(ReLU(IN(Conv x)))`.
    pub fn conv_block(channels: usize, seed: u64) -> Result<Self> {
        Self::build(seed, |b| {
            Ok(Net::Conv(ConvBlock::new(b, "block", channels)?))
        })
    }

    /// Transformer block with a private encoder stack.
    pub fn vit(spec: VitSpec, seed: u64) -> Result<Self> {
        Self::build(seed, |b| {
            let (gh, gw) = token_grid(spec.input_hw);
            let tx = Transformer::new(
                b,
                "transformer",
                gh * gw,
                spec.token_dim,
                spec.layers,
                spec.heads,
                spec.mlp_dim,
            )?;
            let vit = VitBlock::new(b, "vit", spec.channels, spec.token_dim)?;
            Ok(Net::Vit(Box::new((vit, tx))))
        })
    }

    pub fn params(&self) -> &ParamTable<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamTable<T> {
        &mut self.params
    }

    pub fn forward<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.forward_traced(p, x, &mut Trace::off())
    }

    pub fn forward_traced<'t>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        trace: &mut Trace,
    ) -> Result<Var<'t, T>> {
        match &self.net {
            Net::Residual(b) => b.forward(p, x),
            Net::Combined(s) => s.forward(p, x),
            Net::Conv(b) => b.forward(p, x),
            Net::Vit(v) => v.0.forward(p, &v.1, x, "vit", trace),
        }
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::inference();
        let p = self.params.bind(&tape, false);
        Ok((*self.forward(&p, tape.constant(x.clone()))?.value()).clone())
    }
}
