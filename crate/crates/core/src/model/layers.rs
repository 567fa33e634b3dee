use crate::attention::{multi_head_attention, AttentionConfig, MhaWeights};
use crate::error::{Error, Result};
use crate::tensor::ops::{concat_channels, conv_out_extent};
use crate::tensor::{Scalar, Var};

use super::cost::{conv_flops, Trace, Walker};
use super::params::{Bound, Init, ParamId, ParamSink};

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Records declarations so shared sub-networks can be aliased under new names.
pub(crate) struct Builder<'a, S: ParamSink> {
    sink: &'a mut S,
    log: Vec<(String, ParamId)>,
}

impl<'a, S: ParamSink> Builder<'a, S> {
    pub fn new(sink: &'a mut S) -> Self {
        Self {
            sink,
            log: Vec::new(),
        }
    }

    fn param(&mut self, name: String, shape: &[usize], init: Init) -> Result<ParamId> {
        let id = self.sink.param(&name, shape, init)?;
        self.log.push((name, id));
        Ok(id)
    }

    /// Re-registers everything declared under `from` under `to` as aliases.
    pub fn alias_prefix(&mut self, from: &str, to: &str) -> Result<()> {
        let shared: Vec<_> = self
            .log
            .iter()
            .filter_map(|(n, id)| {
                n.strip_prefix(from)
                    .map(|rest| (format!("{to}{rest}"), *id))
            })
            .collect();
        for (name, id) in shared {
            self.sink.alias(&name, id)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    weight: ParamId,
    bias: ParamId,
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    /// `Some(output_pad)` for a transposed convolution.
    transposed: Option<usize>,
}

impl Conv {
    pub fn new<S: ParamSink>(
        b: &mut Builder<S>,
        name: &str,
        io: (usize, usize),
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let fan_in = io.0 * kernel * kernel;
        Self::with_init(b, name, io, kernel, stride, pad, Init::HeUniform { fan_in })
    }

    pub fn with_init<S: ParamSink>(
        b: &mut Builder<S>,
        name: &str,
        (cin, cout): (usize, usize),
        kernel: usize,
        stride: usize,
        pad: usize,
        init: Init,
    ) -> Result<Self> {
        let weight = b.param(format!("{name}.weight"), &[cout, cin, kernel, kernel], init)?;
        let bias = b.param(format!("{name}.bias"), &[cout], Init::Zeros)?;
        Ok(Self {
            weight,
            bias,
            cin,
            cout,
            kernel,
            stride,
            pad,
            transposed: None,
        })
    }

    pub fn transposed<S: ParamSink>(
        b: &mut Builder<S>,
        name: &str,
        (cin, cout): (usize, usize),
        kernel: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Self> {
        // Each output pixel sees at most cin·⌈k/s⌉² inputs.
        let taps = kernel.div_ceil(stride);
        let fan_in = cin * taps * taps;
        let weight = b.param(
            format!("{name}.weight"),
            &[cin, cout, kernel, kernel],
            Init::HeUniform { fan_in },
        )?;
        let bias = b.param(format!("{name}.bias"), &[cout], Init::Zeros)?;
        Ok(Self {
            weight,
            bias,
            cin,
            cout,
            kernel,
            stride,
            pad,
            transposed: Some(output_pad),
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (w, b) = (p.var(self.weight), Some(p.var(self.bias)));
        match self.transposed {
            None => x.conv2d(w, b, self.stride, self.pad),
            Some(op) => x.conv_transpose2d(w, b, self.stride, self.pad, op),
        }
    }

    fn out_extent(&self, n: usize) -> Result<usize> {
        let out = match self.transposed {
            None => conv_out_extent(n, self.kernel, self.stride, self.pad),
            Some(op) => ((n - 1) * self.stride + self.kernel + op).checked_sub(2 * self.pad),
        };
        out.filter(|&o| o >= 1).ok_or_else(|| {
            Error::dim(format!(
                "extent {n} too small for kernel {} stride {} pad {}",
                self.kernel, self.stride, self.pad
            ))
        })
    }

    pub fn walk(&self, w: &mut Walker, [b, c, h, wd]: [usize; 4]) -> Result<[usize; 4]> {
        if c != self.cin {
            return Err(Error::dim(format!(
                "conv expects {} channels, got {c}",
                self.cin
            )));
        }
        let (ho, wo) = (self.out_extent(h)?, self.out_extent(wd)?);
        // A transposed conv scatters k²·Cout products per input pixel.
        let positions = if self.transposed.is_some() {
            h * wd
        } else {
            ho * wo
        };
        w.flops.conv += conv_flops(self.cin, self.cout, self.kernel, positions, b);
        Ok([b, self.cout, ho, wo])
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    weight: ParamId,
    bias: ParamId,
    fan_in: usize,
    fan_out: usize,
}

impl Linear {
    fn new<S: ParamSink>(
        b: &mut Builder<S>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Self> {
        let weight = b.param(
            format!("{name}.weight"),
            &[fan_in, fan_out],
            Init::XavierUniform { fan_in, fan_out },
        )?;
        let bias = b.param(format!("{name}.bias"), &[fan_out], Init::Zeros)?;
        Ok(Self {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.linear(p.var(self.weight), Some(p.var(self.bias)))
    }

    fn flops(&self, rows: usize) -> u64 {
        2 * (self.fan_in * self.fan_out) as u64 * rows as u64
    }
}

/// Affine parameters of an instance or layer norm.
#[derive(Debug, Clone)]
pub(crate) struct Norm {
    weight: ParamId,
    bias: ParamId,
}

impl Norm {
    fn new<S: ParamSink>(b: &mut Builder<S>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: b.param(format!("{name}.weight"), &[channels], Init::Ones)?,
            bias: b.param(format!("{name}.bias"), &[channels], Init::Zeros)?,
        })
    }

    fn instance<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.instance_norm(p.var(self.weight), p.var(self.bias), NORM_EPS)
    }

    fn layer<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(p.var(self.weight), p.var(self.bias), NORM_EPS)
    }
}

/// Conv → IN → ReLU.
#[derive(Debug, Clone)]
pub(crate) struct ConvNormRelu {
    conv: Conv,
    norm: Norm,
}

impl ConvNormRelu {
    pub fn new(conv: Conv, norm_name: &str, b: &mut Builder<impl ParamSink>) -> Result<Self> {
        let norm = Norm::new(b, norm_name, conv.cout)?;
        Ok(Self { conv, norm })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.norm.instance(p, self.conv.forward(p, x)?)?.relu())
    }

    pub fn walk(&self, w: &mut Walker, shape: [usize; 4]) -> Result<[usize; 4]> {
        let out = self.conv.walk(w, shape)?;
        w.elementwise(2, &out);
        Ok(out)
    }
}

/// `y = skip(x) + ReLU(IN(Conv x))`, with `skip` the identity unless a
/// projection is needed.
#[derive(Debug, Clone)]
pub(crate) struct ResidualBlock {
    branch: ConvNormRelu,
    skip: Option<Conv>,
}

impl ResidualBlock {
    pub fn keep<S: ParamSink>(b: &mut Builder<S>, name: &str, ch: usize) -> Result<Self> {
        let conv = Conv::new(b, &format!("{name}.conv"), (ch, ch), 3, 1, 1)?;
        Ok(Self {
            branch: ConvNormRelu::new(conv, &format!("{name}.norm"), b)?,
            skip: None,
        })
    }

    /// Stride-2 conv doubling channels, strided 1×1 projection skip.
    pub fn down<S: ParamSink>(b: &mut Builder<S>, name: &str, ch: usize) -> Result<Self> {
        let conv = Conv::new(b, &format!("{name}.conv"), (ch, 2 * ch), 3, 2, 1)?;
        let branch = ConvNormRelu::new(conv, &format!("{name}.norm"), b)?;
        let skip = Conv::new(b, &format!("{name}.skip"), (ch, 2 * ch), 1, 2, 0)?;
        Ok(Self {
            branch,
            skip: Some(skip),
        })
    }

    /// Stride-2 transposed conv halving channels, transposed 1×1 projection skip.
    pub fn up<S: ParamSink>(b: &mut Builder<S>, name: &str, ch: usize) -> Result<Self> {
        let conv = Conv::transposed(b, &format!("{name}.conv"), (ch, ch / 2), 3, 2, 1, 1)?;
        let branch = ConvNormRelu::new(conv, &format!("{name}.norm"), b)?;
        let skip = Conv::transposed(b, &format!("{name}.skip"), (ch, ch / 2), 1, 2, 0, 1)?;
        Ok(Self {
            branch,
            skip: Some(skip),
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let branch = self.branch.forward(p, x)?;
        let skip = match &self.skip {
            Some(proj) => proj.forward(p, x)?,
            None => x,
        };
        skip.add(branch)
    }

    pub fn walk(&self, w: &mut Walker, shape: [usize; 4]) -> Result<[usize; 4]> {
        let out = self.branch.walk(w, shape)?;
        if let Some(proj) = &self.skip {
            proj.walk(w, shape)?;
        }
        w.elementwise(1, &out);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageMode {
    Keep,
    Down,
    Up,
}

/// A combined block: `rb_per_combined` residual blocks at one resolution level.
#[derive(Debug, Clone)]
pub(crate) struct Stage {
    mode: StageMode,
    pub blocks: Vec<ResidualBlock>,
}

impl Stage {
    /// Encoder stages resample in their last block, decoder stages in their first.
    pub fn new<S: ParamSink>(
        b: &mut Builder<S>,
        name: &str,
        mode: StageMode,
        ch: usize,
        count: usize,
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(count);
        for i in 0..count {
            let n = format!("{name}.block{i}");
            let block = match mode {
                StageMode::Down if i + 1 == count => ResidualBlock::down(b, &n, ch)?,
                StageMode::Up if i == 0 => ResidualBlock::up(b, &n, ch)?,
                StageMode::Up => ResidualBlock::keep(b, &n, ch / 2)?,
                _ => ResidualBlock::keep(b, &n, ch)?,
            };
            blocks.push(block);
        }
        Ok(Self { mode, blocks })
    }

    fn check(&self, [_, _, h, w]: [usize; 4]) -> Result<()> {
        if self.mode == StageMode::Down && (h % 2 == 1 || w % 2 == 1) {
            return Err(Error::dim(format!(
                "downsampling stage needs even extents, got {h}×{w}"
            )));
        }
        Ok(())
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.len() == 4 {
            self.check([s[0], s[1], s[2], s[3]])?;
        }
        self.blocks.iter().try_fold(x, |h, blk| blk.forward(p, h))
    }

    pub fn walk(&self, w: &mut Walker, shape: [usize; 4]) -> Result<[usize; 4]> {
        self.check(shape)?;
        self.blocks.iter().try_fold(shape, |s, blk| blk.walk(w, s))
    }
}

/// `y = x + Conv(ReLU(IN(Conv x)))`.
#[derive(Debug, Clone)]
pub(crate) struct ConvBlock {
    first: ConvNormRelu,
    second: Conv,
}

impl ConvBlock {
    pub fn new<S: ParamSink>(b: &mut Builder<S>, name: &str, ch: usize) -> Result<Self> {
        let conv = Conv::new(b, &format!("{name}.conv1"), (ch, ch), 3, 1, 1)?;
        let first = ConvNormRelu::new(conv, &format!("{name}.norm"), b)?;
        let second = Conv::new(b, &format!("{name}.conv2"), (ch, ch), 3, 1, 1)?;
        Ok(Self { first, second })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.second.forward(p, self.first.forward(p, x)?)?;
        x.add(h)
    }

    pub fn walk(&self, w: &mut Walker, shape: [usize; 4]) -> Result<[usize; 4]> {
        let mid = self.first.walk(w, shape)?;
        let out = self.second.walk(w, mid)?;
        w.elementwise(1, &out);
        Ok(out)
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    ln1: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: Norm,
    fc1: Linear,
    fc2: Linear,
}

/// Pre-norm transformer encoder with learned position embeddings.
#[derive(Debug, Clone)]
pub(crate) struct Transformer {
    pos: ParamId,
    max_tokens: usize,
    dim: usize,
    layers: Vec<EncoderLayer>,
    final_norm: Norm,
    attn: AttentionConfig,
}

impl Transformer {
    pub fn new<S: ParamSink>(
        b: &mut Builder<S>,
        name: &str,
        max_tokens: usize,
        dim: usize,
        depth: usize,
        heads: usize,
        mlp: usize,
    ) -> Result<Self> {
        let pos = b.param(
            format!("{name}.pos_embed"),
            &[max_tokens, dim],
            Init::Uniform { bound: 0.02 },
        )?;
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let n = format!("{name}.layer{l}");
            layers.push(EncoderLayer {
                ln1: Norm::new(b, &format!("{n}.ln1"), dim)?,
                q: Linear::new(b, &format!("{n}.attn.q"), dim, dim)?,
                k: Linear::new(b, &format!("{n}.attn.k"), dim, dim)?,
                v: Linear::new(b, &format!("{n}.attn.v"), dim, dim)?,
                o: Linear::new(b, &format!("{n}.attn.o"), dim, dim)?,
                ln2: Norm::new(b, &format!("{n}.ln2"), dim)?,
                fc1: Linear::new(b, &format!("{n}.mlp.fc1"), dim, mlp)?,
                fc2: Linear::new(b, &format!("{n}.mlp.fc2"), mlp, dim)?,
            });
        }
        let final_norm = Norm::new(b, &format!("{name}.final_norm"), dim)?;
        let attn = AttentionConfig::for_model_dim(dim, heads)?;
        Ok(Self {
            pos,
            max_tokens,
            dim,
            layers,
            final_norm,
            attn,
        })
    }

    fn check_tokens(&self, tokens: usize) -> Result<()> {
        if tokens > self.max_tokens {
            return Err(Error::Config(format!(
                "{tokens} tokens exceed the position-embedding length {}",
                self.max_tokens
            )));
        }
        Ok(())
    }

    /// `x` is `B×T×D`.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let tokens = x.shape()[1];
        self.check_tokens(tokens)?;
        let mut h = x.add_broadcast(p.var(self.pos).narrow_leading(tokens)?)?;
        for layer in &self.layers {
            let w = MhaWeights {
                wq: p.var(layer.q.weight),
                bq: Some(p.var(layer.q.bias)),
                wk: p.var(layer.k.weight),
                bk: Some(p.var(layer.k.bias)),
                wv: p.var(layer.v.weight),
                bv: Some(p.var(layer.v.bias)),
                wo: p.var(layer.o.weight),
                bo: Some(p.var(layer.o.bias)),
            };
            let a = multi_head_attention(layer.ln1.layer(p, h)?, &w, self.attn)?;
            h = h.add(a)?;
            let m = layer.fc1.forward(p, layer.ln2.layer(p, h)?)?.gelu();
            h = h.add(layer.fc2.forward(p, m)?)?;
        }
        self.final_norm.layer(p, h)
    }

    pub fn walk(&self, w: &mut Walker, batch: usize, tokens: usize) -> Result<()> {
        self.check_tokens(tokens)?;
        let rows = batch * tokens;
        let act = [rows, self.dim];
        w.elementwise(1, &act);
        for layer in &self.layers {
            for lin in [
                &layer.q, &layer.k, &layer.v, &layer.o, &layer.fc1, &layer.fc2,
            ] {
                w.flops.linear += lin.flops(rows);
            }
            // Scores and weighted sum: 2·T²·d each, per head.
            let heads = self.attn.num_heads as u64;
            let d = self.attn.head_dim as u64;
            w.flops.attention += 2 * 2 * (tokens * tokens) as u64 * d * heads * batch as u64;
            // LN, residual add (twice), GELU over the MLP width, softmax over scores.
            w.elementwise(4, &act);
            w.elementwise(1, &[rows, layer.fc1.fan_out]);
            w.elementwise(1, &[batch * self.attn.num_heads, tokens, tokens]);
        }
        w.elementwise(1, &act);
        Ok(())
    }
}

/// Token-grid transformer block with resize-back, channel compression and a residual skip.
#[derive(Debug, Clone)]
pub(crate) struct VitBlock {
    down1: ConvNormRelu,
    embed: Conv,
    up1: ConvNormRelu,
    up2: ConvNormRelu,
    compress: Conv,
}

impl VitBlock {
    pub fn new<S: ParamSink>(
        b: &mut Builder<S>,
        name: &str,
        ch: usize,
        dim: usize,
    ) -> Result<Self> {
        let c =
            |b: &mut Builder<S>, n: &str, io, s| Conv::new(b, &format!("{name}.{n}"), io, 3, s, 1);
        let t = |b: &mut Builder<S>, n: &str, io| {
            Conv::transposed(b, &format!("{name}.{n}"), io, 3, 2, 1, 1)
        };
        let down1 = c(b, "down1", (ch, 2 * ch), 2)?;
        let down1 = ConvNormRelu::new(down1, &format!("{name}.down1_norm"), b)?;
        let embed = c(b, "embed", (2 * ch, dim), 2)?;
        let up1 = t(b, "up1", (dim, 2 * ch))?;
        let up1 = ConvNormRelu::new(up1, &format!("{name}.up1_norm"), b)?;
        let up2 = t(b, "up2", (2 * ch, ch))?;
        let up2 = ConvNormRelu::new(up2, &format!("{name}.up2_norm"), b)?;
        let compress = Conv::new(b, &format!("{name}.compress"), (2 * ch, ch), 1, 1, 0)?;
        Ok(Self {
            down1,
            embed,
            up1,
            up2,
            compress,
        })
    }

    fn check_input(h: usize, w: usize) -> Result<()> {
        if h < 4 || w < 4 {
            return Err(Error::dim(format!(
                "transformer block needs ≥ 4×4 input, got {h}×{w}"
            )));
        }
        Ok(())
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        tx: &Transformer,
        x: Var<'t, T>,
        label: &str,
        trace: &mut Trace,
    ) -> Result<Var<'t, T>> {
        let s = x.shape();
        let (h, w) = (s[2], s[3]);
        Self::check_input(h, w)?;
        let e = self.embed.forward(p, self.down1.forward(p, x)?)?;
        let es = e.shape();
        let (b, d, gh, gw) = (es[0], es[1], es[2], es[3]);
        trace.note(&format!("{label}.grid"), &es);
        let tokens = e.reshape(&[b, d, gh * gw])?.transpose_last2()?;
        trace.note(&format!("{label}.tokens"), &tokens.shape());
        let out = tx.forward(p, tokens)?;
        let grid = out.transpose_last2()?.reshape(&[b, d, gh, gw])?;
        let u = self.up2.forward(p, self.up1.forward(p, grid)?)?;
        trace.note(&format!("{label}.upsampled"), &u.shape());
        let r = u.bilinear_resize(h, w)?;
        trace.note(&format!("{label}.resized"), &r.shape());
        let c = self.compress.forward(p, concat_channels(&[x, r])?)?;
        x.add(c)
    }

    pub fn walk(
        &self,
        w: &mut Walker,
        tx: &Transformer,
        shape: [usize; 4],
        label: &str,
    ) -> Result<[usize; 4]> {
        let [b, c, h, wd] = shape;
        Self::check_input(h, wd)?;
        let d1 = self.down1.walk(w, shape)?;
        let e = self.embed.walk(w, d1)?;
        w.trace.note(&format!("{label}.grid"), &e);
        let tokens = e[2] * e[3];
        w.trace.note(&format!("{label}.tokens"), &[b, tokens, e[1]]);
        tx.walk(w, b, tokens)?;
        let u1 = self.up1.walk(w, e)?;
        let u = self.up2.walk(w, u1)?;
        w.trace.note(&format!("{label}.upsampled"), &u);
        let r = [b, u[1], h, wd];
        w.elementwise(1, &r);
        w.trace.note(&format!("{label}.resized"), &r);
        let out = self.compress.walk(w, [b, 2 * c, h, wd])?;
        w.elementwise(1, &out);
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub(crate) enum BottleneckLayer {
    Conv(ConvBlock),
    Vit(VitBlock),
}
