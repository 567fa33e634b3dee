//! The generator: a residual encoder, an 11-layer bottleneck in which two
//! layers are transformer blocks sharing one encoder stack, and a mirrored
//! residual decoder ending in `tanh`.
//!
//! Layout, for `base` channels and `rb` blocks per combined block:
//!
//! ```text
//! stem     7×7 conv in→base, IN, ReLU
//! encoder  [keep ×(rb−1), down]  [keep ×(rb−1), down]  [keep ×rb]      base → 4·base, H → H/4
//! bottle   conv blocks, transformer blocks at `vit_positions`          4·base, H/4
//! decoder  [keep ×rb]  [up, keep ×(rb−1)]  [up, keep ×(rb−1)]          4·base → base, H/4 → H
//! head     tanh(7×7 conv base→out + 1×1 projection)
//! ```

mod blocks;
mod config;
mod cost;
mod layers;
mod params;

pub use blocks::{Block, VitSpec};
pub(crate) use config::parse_usize;
pub use config::{ModelConfig, MODEL_KEYS};
pub use cost::{conv_flops, conv_param_count, FlopBreakdown, Trace, TraceEntry};
pub use layers::StageMode;
pub use params::{Bound, Init, ParamId, ParamLayout, ParamTable};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

use cost::Walker;
use layers::{
    BottleneckLayer, Builder, Conv, ConvBlock, ConvNormRelu, Stage, Transformer, VitBlock,
};
use params::{Materialize, ParamSink};

/// Block counts of an instantiated graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepthAudit {
    /// Encoder/decoder residual blocks plus bottleneck conv blocks.
    pub residual_blocks: usize,
    pub vit_blocks: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub bottleneck_conv_blocks: usize,
}

#[derive(Debug, Clone)]
struct Architecture {
    stem: ConvNormRelu,
    encoder: Vec<Stage>,
    bottleneck: Vec<BottleneckLayer>,
    transformer: Transformer,
    decoder: Vec<Stage>,
    head: Conv,
    head_skip: Conv,
}

const HEAD_GAIN: f64 = 0.05;

const ENCODER: [StageMode; 3] = [StageMode::Down, StageMode::Down, StageMode::Keep];
const DECODER: [StageMode; 3] = [StageMode::Keep, StageMode::Up, StageMode::Up];

impl Architecture {
    fn build<S: ParamSink>(cfg: &ModelConfig, sink: &mut S) -> Result<Self> {
        cfg.validate()?;
        let mut b = Builder::new(sink);
        let base = cfg.base_channels;
        let stem_conv = Conv::new(&mut b, "stem.conv", (cfg.in_channels, base), 7, 1, 3)?;
        let stem = ConvNormRelu::new(stem_conv, "stem.norm", &mut b)?;

        let mut ch = base;
        let mut encoder = Vec::new();
        for (i, mode) in ENCODER.into_iter().enumerate() {
            encoder.push(Stage::new(
                &mut b,
                &format!("encoder{i}"),
                mode,
                ch,
                cfg.rb_per_combined,
            )?);
            if mode == StageMode::Down {
                ch *= 2;
            }
        }

        let mut bottleneck = Vec::new();
        let mut transformer = None;
        let mut first_vit: Option<String> = None;
        for pos in 1..=cfg.bottleneck_layers {
            let name = format!("bottleneck{pos}");
            if cfg.is_vit_position(pos) {
                let tx_name = format!("{name}.transformer");
                match &first_vit {
                    None => {
                        transformer = Some(Transformer::new(
                            &mut b,
                            &tx_name,
                            cfg.num_tokens(),
                            cfg.token_dim,
                            cfg.tx_layers,
                            cfg.tx_heads,
                            cfg.tx_mlp_dim,
                        )?);
                        first_vit = Some(tx_name);
                    }
                    Some(owner) => b.alias_prefix(owner, &tx_name)?,
                }
                bottleneck.push(BottleneckLayer::Vit(VitBlock::new(
                    &mut b,
                    &name,
                    ch,
                    cfg.token_dim,
                )?));
            } else {
                bottleneck.push(BottleneckLayer::Conv(ConvBlock::new(&mut b, &name, ch)?));
            }
        }
        let transformer = transformer.expect("validated config has a transformer position");

        let mut decoder = Vec::new();
        for (i, mode) in DECODER.into_iter().enumerate() {
            decoder.push(Stage::new(
                &mut b,
                &format!("decoder{i}"),
                mode,
                ch,
                cfg.rb_per_combined,
            )?);
            if mode == StageMode::Up {
                ch /= 2;
            }
        }
        // The decoder output is O(10) after the residual stack; keep tanh unsaturated at init.
        let small = |fan_in| Init::ScaledUniform {
            fan_in,
            gain: HEAD_GAIN,
        };
        let head = Conv::with_init(
            &mut b,
            "head.conv",
            (ch, cfg.out_channels),
            7,
            1,
            3,
            small(ch * 49),
        )?;
        let head_skip = Conv::with_init(
            &mut b,
            "head.skip",
            (ch, cfg.out_channels),
            1,
            1,
            0,
            small(ch),
        )?;
        Ok(Self {
            stem,
            encoder,
            bottleneck,
            transformer,
            decoder,
            head,
            head_skip,
        })
    }

    fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        trace: &mut Trace,
    ) -> Result<Var<'t, T>> {
        trace.note("input", &x.shape());
        let mut h = self.stem.forward(p, x)?;
        trace.note("stem", &h.shape());
        for (i, stage) in self.encoder.iter().enumerate() {
            h = stage.forward(p, h)?;
            trace.note(&format!("encoder{i}"), &h.shape());
        }
        for i in 0..self.bottleneck.len() {
            h = self.bottleneck_layer(p, i, h, trace)?;
        }
        trace.note("bottleneck", &h.shape());
        for (i, stage) in self.decoder.iter().enumerate() {
            h = stage.forward(p, h)?;
            trace.note(&format!("decoder{i}"), &h.shape());
        }
        let y = self
            .head
            .forward(p, h)?
            .add(self.head_skip.forward(p, h)?)?
            .tanh();
        trace.note("output", &y.shape());
        Ok(y)
    }

    fn bottleneck_layer<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        index: usize,
        x: Var<'t, T>,
        trace: &mut Trace,
    ) -> Result<Var<'t, T>> {
        match &self.bottleneck[index] {
            BottleneckLayer::Conv(blk) => blk.forward(p, x),
            BottleneckLayer::Vit(blk) => blk.forward(
                p,
                &self.transformer,
                x,
                &format!("bottleneck{}", index + 1),
                trace,
            ),
        }
    }

    fn walk(&self, w: &mut Walker, shape: [usize; 4]) -> Result<[usize; 4]> {
        w.trace.note("input", &shape);
        let mut s = self.stem.walk(w, shape)?;
        w.trace.note("stem", &s);
        for (i, stage) in self.encoder.iter().enumerate() {
            s = stage.walk(w, s)?;
            w.trace.note(&format!("encoder{i}"), &s);
        }
        for (i, layer) in self.bottleneck.iter().enumerate() {
            s = match layer {
                BottleneckLayer::Conv(blk) => blk.walk(w, s)?,
                BottleneckLayer::Vit(blk) => {
                    blk.walk(w, &self.transformer, s, &format!("bottleneck{}", i + 1))?
                }
            };
        }
        w.trace.note("bottleneck", &s);
        for (i, stage) in self.decoder.iter().enumerate() {
            s = stage.walk(w, s)?;
            w.trace.note(&format!("decoder{i}"), &s);
        }
        let out = self.head.walk(w, s)?;
        self.head_skip.walk(w, s)?;
        w.elementwise(2, &out);
        w.trace.note("output", &out);
        Ok(out)
    }

    fn audit(&self) -> DepthAudit {
        let blocks = |stages: &[Stage]| stages.iter().map(|s| s.blocks.len()).sum::<usize>();
        let (encoder_blocks, decoder_blocks) = (blocks(&self.encoder), blocks(&self.decoder));
        let vit_blocks = self
            .bottleneck
            .iter()
            .filter(|l| matches!(l, BottleneckLayer::Vit(_)))
            .count();
        let bottleneck_conv_blocks = self.bottleneck.len() - vit_blocks;
        DepthAudit {
            residual_blocks: encoder_blocks + decoder_blocks + bottleneck_conv_blocks,
            vit_blocks,
            encoder_blocks,
            decoder_blocks,
            bottleneck_conv_blocks,
        }
    }
}

/// Generator network with its parameters.
#[derive(Debug, Clone)]
pub struct Generator<T: Scalar = f32> {
    cfg: ModelConfig,
    arch: Architecture,
    params: ParamTable<T>,
}

impl<T: Scalar> Generator<T> {
    /// Builds and initializes from a seeded stream; equal seeds give equal weights.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamTable::new();
        let arch = Architecture::build(
            cfg,
            &mut Materialize {
                table: &mut params,
                rng: &mut rng,
            },
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            arch,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamTable<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamTable<T> {
        &mut self.params
    }

    pub fn audit(&self) -> DepthAudit {
        self.arch.audit()
    }

    /// `x` is `B×in_channels×H×W` with `H`, `W` divisible by 4; the result is `B×out×H×W`.
    pub fn forward<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.forward_traced(p, x, &mut Trace::off())
    }

    pub fn forward_traced<'t>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        trace: &mut Trace,
    ) -> Result<Var<'t, T>> {
        self.check_input(&x.shape())?;
        let y = self.arch.forward(p, x, trace)?;
        if !y.value().all_finite() {
            return Err(Error::Numeric("non-finite generator output".into()));
        }
        Ok(y)
    }

    /// The bottleneck alone, on a `B×4·base×h×w` latent.
    pub fn bottleneck_forward<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        (0..self.arch.bottleneck.len()).try_fold(x, |h, i| {
            self.arch.bottleneck_layer(p, i, h, &mut Trace::off())
        })
    }

    /// One bottleneck layer, by 1-based position.
    pub fn bottleneck_layer_forward<'t>(
        &self,
        p: &Bound<'t, T>,
        position: usize,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        if position == 0 || position > self.arch.bottleneck.len() {
            return Err(Error::Contract(format!(
                "no bottleneck layer at position {position}"
            )));
        }
        self.arch
            .bottleneck_layer(p, position - 1, x, &mut Trace::off())
    }

    /// Inference without gradient bookkeeping.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::inference();
        let p = self.params.bind(&tape, false);
        let y = self.forward(&p, tape.constant(x.clone()))?;
        Ok((*y.value()).clone())
    }

    /// Same network and weights in another precision.
    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        Generator {
            cfg: self.cfg.clone(),
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        match *shape {
            [_, c, h, w] if c == self.cfg.in_channels => {
                if h % 4 != 0 || w % 4 != 0 {
                    return Err(Error::dim(format!(
                        "input extents {h}×{w} must be divisible by 4"
                    )));
                }
                Ok(())
            }
            _ => Err(Error::dim(format!(
                "expected B×{}×H×W input, got {shape:?}",
                self.cfg.in_channels
            ))),
        }
    }
}

/// Parameter names, shapes and sharing for `cfg`, without allocating weights.
pub fn param_layout(cfg: &ModelConfig) -> Result<ParamLayout> {
    let mut layout = ParamLayout::default();
    Architecture::build(cfg, &mut layout)?;
    Ok(layout)
}

/// Learnable scalars, shared tensors counted once.
pub fn count_params(cfg: &ModelConfig) -> Result<usize> {
    Ok(param_layout(cfg)?.element_count())
}

/// Analytic forward cost at the configured input size.
pub fn flop_breakdown(cfg: &ModelConfig, batch: usize) -> Result<FlopBreakdown> {
    Ok(walk(cfg, batch)?.flops)
}

/// Total analytic forward FLOPs; see [`FlopBreakdown`] for the counting rules.
pub fn count_flops(cfg: &ModelConfig, batch: usize) -> Result<u64> {
    Ok(flop_breakdown(cfg, batch)?.total())
}

/// Activation shapes at each checkpoint, derived from layer geometry alone.
pub fn shape_trace(cfg: &ModelConfig, batch: usize) -> Result<Vec<TraceEntry>> {
    Ok(walk(cfg, batch)?.trace.into_entries())
}

/// Block counts of the graph `cfg` describes.
pub fn depth_audit(cfg: &ModelConfig) -> Result<DepthAudit> {
    Ok(Architecture::build(cfg, &mut ParamLayout::default())?.audit())
}

fn walk(cfg: &ModelConfig, batch: usize) -> Result<Walker> {
    if batch == 0 {
        return Err(Error::Contract("batch must be at least 1".into()));
    }
    let arch = Architecture::build(cfg, &mut ParamLayout::default())?;
    let mut w = Walker::new();
    let (h, wd) = cfg.input_hw;
    arch.walk(&mut w, [batch, cfg.in_channels, h, wd])?;
    Ok(w)
}
