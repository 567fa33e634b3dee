use crate::error::{Error, Result};

/// Generator hyper-parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    /// Residual blocks per combined block of the encoder and decoder.
    pub rb_per_combined: usize,
    pub bottleneck_layers: usize,
    /// 1-based bottleneck indices that hold transformer blocks.
    pub vit_positions: (usize, usize),
    pub token_dim: usize,
    pub tx_layers: usize,
    pub tx_heads: usize,
    pub tx_mlp_dim: usize,
    pub input_hw: (usize, usize),
}

impl ModelConfig {
    /// 64 base channels, 768-wide 12-layer transformer, 120×120 input.
    pub fn full() -> Self {
        Self {
            in_channels: 2,
            out_channels: 1,
            base_channels: 64,
            rb_per_combined: 3,
            bottleneck_layers: 11,
            vit_positions: (4, 8),
            token_dim: 768,
            tx_layers: 12,
            tx_heads: 12,
            tx_mlp_dim: 3072,
            input_hw: (120, 120),
        }
    }

    /// Laptop-scale profile: 16 base channels, 96-wide 2-layer transformer, 64×64 input.
    pub fn desk() -> Self {
        Self {
            base_channels: 16,
            token_dim: 96,
            tx_layers: 2,
            tx_heads: 4,
            tx_mlp_dim: 192,
            input_hw: (64, 64),
            ..Self::full()
        }
    }

    /// Smallest profile that still exercises every block type; used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            base_channels: 4,
            token_dim: 16,
            tx_layers: 1,
            tx_heads: 2,
            tx_mlp_dim: 32,
            input_hw: (16, 16),
            ..Self::full()
        }
    }

    pub fn with_rb(mut self, rb_per_combined: usize) -> Self {
        self.rb_per_combined = rb_per_combined;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 || self.out_channels == 0 || self.base_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.rb_per_combined == 0 {
            return bad("rb_per_combined must be at least 1".into());
        }
        let (a, b) = self.vit_positions;
        let n = self.bottleneck_layers;
        if a == b || !(1..=n).contains(&a) || !(1..=n).contains(&b) {
            return bad(format!(
                "vit_positions ({a}, {b}) must be distinct and within [1, {n}]"
            ));
        }
        if self.tx_layers == 0 || self.tx_heads == 0 || self.tx_mlp_dim == 0 {
            return bad("transformer depth, heads and MLP width must be positive".into());
        }
        if self.token_dim == 0 || self.token_dim % self.tx_heads != 0 {
            return bad(format!(
                "token_dim {} is not divisible by tx_heads {}",
                self.token_dim, self.tx_heads
            ));
        }
        let (h, w) = self.input_hw;
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return bad(format!("input {h}×{w} must be positive and divisible by 4"));
        }
        if h / 4 < 4 || w / 4 < 4 {
            return bad(format!(
                "input {h}×{w} leaves a bottleneck smaller than 4×4"
            ));
        }
        Ok(())
    }

    /// Channel width through the bottleneck.
    pub fn latent_channels(&self) -> usize {
        4 * self.base_channels
    }

    /// Latent extent after the two stride-2 encoder stages.
    pub fn latent_hw(&self) -> (usize, usize) {
        (self.input_hw.0 / 4, self.input_hw.1 / 4)
    }

    /// Token grid of the transformer blocks for the configured input.
    pub fn token_grid(&self) -> (usize, usize) {
        token_grid(self.latent_hw())
    }

    pub fn num_tokens(&self) -> usize {
        let (a, b) = self.token_grid();
        a * b
    }

    pub fn residual_block_count(&self) -> usize {
        6 * self.rb_per_combined + self.bottleneck_layers - 2
    }

    /// `true` for the 1-based bottleneck positions holding a transformer block.
    pub fn is_vit_position(&self, position: usize) -> bool {
        position == self.vit_positions.0 || position == self.vit_positions.1
    }
}

/// Keys accepted by [`ModelConfig::set`], in [`ModelConfig::entries`] order.
pub const MODEL_KEYS: [&str; 11] = [
    "in_channels",
    "out_channels",
    "base_channels",
    "rb_per_combined",
    "bottleneck_layers",
    "vit_positions",
    "token_dim",
    "tx_layers",
    "tx_heads",
    "tx_mlp_dim",
    "input_hw",
];

impl ModelConfig {
    /// `key = value` form; [`set`](Self::set) parses every entry back.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let pair = |(a, b): (usize, usize)| format!("{a},{b}");
        let v = [
            self.in_channels.to_string(),
            self.out_channels.to_string(),
            self.base_channels.to_string(),
            self.rb_per_combined.to_string(),
            self.bottleneck_layers.to_string(),
            pair(self.vit_positions),
            self.token_dim.to_string(),
            self.tx_layers.to_string(),
            self.tx_heads.to_string(),
            self.tx_mlp_dim.to_string(),
            pair(self.input_hw),
        ];
        MODEL_KEYS.into_iter().zip(v).collect()
    }

    /// Returns `Ok(false)` for keys that are not model keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let int = |v: &str| parse_usize(key, v);
        match key {
            "in_channels" => self.in_channels = int(value)?,
            "out_channels" => self.out_channels = int(value)?,
            "base_channels" => self.base_channels = int(value)?,
            "rb_per_combined" => self.rb_per_combined = int(value)?,
            "bottleneck_layers" => self.bottleneck_layers = int(value)?,
            "vit_positions" => self.vit_positions = parse_pair(key, value)?,
            "token_dim" => self.token_dim = int(value)?,
            "tx_layers" => self.tx_layers = int(value)?,
            "tx_heads" => self.tx_heads = int(value)?,
            "tx_mlp_dim" => self.tx_mlp_dim = int(value)?,
            "input_hw" => self.input_hw = parse_pair(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

pub(crate) fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: {v:?} is not a non-negative integer")))
}

fn parse_pair(key: &str, v: &str) -> Result<(usize, usize)> {
    match v
        .split(',')
        .map(|p| parse_usize(key, p))
        .collect::<Result<Vec<_>>>()?[..]
    {
        [a, b] => Ok((a, b)),
        _ => Err(Error::Config(format!(
            "{key}: {v:?} is not a pair like 4,8"
        ))),
    }
}

/// Two ceil-mode halvings.
pub(crate) fn token_grid((h, w): (usize, usize)) -> (usize, usize) {
    let half = |v: usize| v.div_ceil(2);
    (half(half(h)), half(half(w)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_round_trip() {
        let src = ModelConfig::desk().with_rb(2);
        let mut dst = ModelConfig::full();
        for (k, v) in src.entries() {
            assert!(dst.set(k, &v).unwrap());
        }
        assert_eq!(dst, src);
        assert!(!dst.set("lr", "1").unwrap());
        assert!(dst.set("input_hw", "64").is_err());
        assert!(dst.set("token_dim", "-3").is_err());
    }

    #[test]
    fn profiles_validate() {
        for cfg in [
            ModelConfig::full(),
            ModelConfig::desk(),
            ModelConfig::tiny(),
        ] {
            cfg.validate().unwrap();
        }
        assert_eq!(ModelConfig::full().residual_block_count(), 27);
        assert_eq!(ModelConfig::full().token_grid(), (8, 8));
        assert_eq!(ModelConfig::desk().token_grid(), (4, 4));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ModelConfig::desk();
        c.vit_positions = (3, 3);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.vit_positions = (0, 4);
        assert!(c.validate().is_err());
        c.vit_positions = (4, 12);
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.input_hw = (62, 64);
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.token_dim = 95;
        assert!(c.validate().is_err());
        assert!(ModelConfig::desk().with_rb(0).validate().is_err());
    }
}
