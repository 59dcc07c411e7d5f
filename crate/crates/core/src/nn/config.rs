use std::fmt;
use std::str::FromStr;

use super::NnError;

/// Which backbone blocks carry an adapter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdapterBlocks {
    All,
    List(Vec<usize>),
}

impl AdapterBlocks {
    pub fn indices(&self, n_blocks: usize) -> Vec<usize> {
        match self {
            AdapterBlocks::All => (0..n_blocks).collect(),
            AdapterBlocks::List(v) => v.clone(),
        }
    }
}

impl fmt::Display for AdapterBlocks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdapterBlocks::All => f.write_str("all"),
            AdapterBlocks::List(v) => {
                let parts: Vec<String> = v.iter().map(|i| i.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl FromStr for AdapterBlocks {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "all" {
            return Ok(AdapterBlocks::All);
        }
        if s.is_empty() || s == "none" {
            return Ok(AdapterBlocks::List(Vec::new()));
        }
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad block index `{p}`")))
            .collect::<Result<Vec<_>, _>>()
            .map(AdapterBlocks::List)
    }
}

/// Where the adapter output joins the residual stream of a hooked block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookPosition {
    /// After self-attention, before the FFN.
    PostAttention,
    /// After the FFN residual.
    PostBlock,
}

impl fmt::Display for HookPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HookPosition::PostAttention => "post_attention",
            HookPosition::PostBlock => "post_block",
        })
    }
}

impl FromStr for HookPosition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "post_attention" => Ok(HookPosition::PostAttention),
            "post_block" => Ok(HookPosition::PostBlock),
            other => Err(format!("unknown hook position `{other}`")),
        }
    }
}

/// Architecture hyperparameters shared by the backbone, encoder and adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Feature width F.
    pub feature_dim: usize,
    /// Backbone depth L.
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ffn_multiplier: usize,
    pub d_max: usize,
    /// Fixed at 6.
    pub n_relations: usize,
    /// Fixed at 2.
    pub n_encoder_units: usize,
    /// Octaves of the sinusoidal joint / position features.
    pub freq_bands: usize,
    /// Sinusoid pairs in the timestep embedding.
    pub time_freqs: usize,
    /// Latent grid side D_l.
    pub latent_res: usize,
    /// Latent channels C.
    pub latent_channels: usize,
    /// Number of category labels K (the null label is extra).
    pub n_labels: usize,
    pub adapter_blocks: AdapterBlocks,
    pub hook_position: HookPosition,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            n_blocks: 4,
            n_heads: 4,
            ffn_multiplier: 4,
            d_max: 5,
            n_relations: 6,
            n_encoder_units: 2,
            freq_bands: 4,
            time_freqs: 16,
            latent_res: 8,
            latent_channels: 4,
            n_labels: 4,
            adapter_blocks: AdapterBlocks::All,
            hook_position: HookPosition::PostAttention,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// The full-scale configuration the parameter budget is quoted for.
    pub fn full_scale() -> Self {
        Self {
            feature_dim: 1024,
            n_blocks: 24,
            n_heads: 16,
            ..Self::default()
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.latent_res.pow(3)
    }

    pub fn hooked_blocks(&self) -> Vec<usize> {
        self.adapter_blocks.indices(self.n_blocks)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("n_blocks", self.n_blocks),
            ("n_heads", self.n_heads),
            ("ffn_multiplier", self.ffn_multiplier),
            ("d_max", self.d_max),
            ("freq_bands", self.freq_bands),
            ("time_freqs", self.time_freqs),
            ("latent_res", self.latent_res),
            ("latent_channels", self.latent_channels),
            ("n_labels", self.n_labels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(NnError::Config(format!("{name} must be positive")));
            }
        }
        if self.feature_dim % self.n_heads != 0 {
            return Err(NnError::Config(format!(
                "feature_dim {} not divisible by n_heads {}",
                self.feature_dim, self.n_heads
            )));
        }
        if self.n_relations != 6 {
            return Err(NnError::Config("n_relations is fixed at 6".into()));
        }
        if self.n_encoder_units != 2 {
            return Err(NnError::Config("n_encoder_units is fixed at 2".into()));
        }
        if 6 * self.freq_bands > self.feature_dim {
            return Err(NnError::Config(format!(
                "joint features need 6 * freq_bands = {} <= feature_dim {}",
                6 * self.freq_bands,
                self.feature_dim
            )));
        }
        for b in self.hooked_blocks() {
            if b >= self.n_blocks {
                return Err(NnError::Config(format!("adapter block {b} >= n_blocks {}", self.n_blocks)));
            }
        }
        if !(self.ln_eps > 0.0) {
            return Err(NnError::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }

    /// `key=value` lines, one per field.
    pub fn to_text(&self) -> String {
        format!(
            "feature_dim={}\nn_blocks={}\nn_heads={}\nffn_multiplier={}\nd_max={}\nn_relations={}\n\
             n_encoder_units={}\nfreq_bands={}\ntime_freqs={}\nlatent_res={}\nlatent_channels={}\n\
             n_labels={}\nadapter_blocks={}\nhook_position={}\nln_eps={}\n",
            self.feature_dim,
            self.n_blocks,
            self.n_heads,
            self.ffn_multiplier,
            self.d_max,
            self.n_relations,
            self.n_encoder_units,
            self.freq_bands,
            self.time_freqs,
            self.latent_res,
            self.latent_channels,
            self.n_labels,
            self.adapter_blocks,
            self.hook_position,
            self.ln_eps
        )
    }

    /// Applies one `key=value` setting. Returns `Ok(false)` for keys that are
    /// not model fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, NnError> {
        fn num<V: FromStr>(key: &str, value: &str) -> Result<V, NnError> {
            value
                .trim()
                .parse()
                .map_err(|_| NnError::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "feature_dim" => self.feature_dim = num(key, value)?,
            "n_blocks" => self.n_blocks = num(key, value)?,
            "n_heads" => self.n_heads = num(key, value)?,
            "ffn_multiplier" => self.ffn_multiplier = num(key, value)?,
            "d_max" => self.d_max = num(key, value)?,
            "n_relations" => self.n_relations = num(key, value)?,
            "n_encoder_units" => self.n_encoder_units = num(key, value)?,
            "freq_bands" => self.freq_bands = num(key, value)?,
            "time_freqs" => self.time_freqs = num(key, value)?,
            "latent_res" => self.latent_res = num(key, value)?,
            "latent_channels" => self.latent_channels = num(key, value)?,
            "n_labels" => self.n_labels = num(key, value)?,
            "adapter_blocks" => self.adapter_blocks = value.parse().map_err(NnError::Config)?,
            "hook_position" => self.hook_position = value.parse().map_err(NnError::Config)?,
            "ln_eps" => self.ln_eps = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_text(text: &str) -> Result<Self, NnError> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| NnError::Config(format!("expected key=value, got `{line}`")))?;
            if !cfg.set(k.trim(), v.trim())? {
                return Err(NnError::Config(format!("unknown key `{}`", k.trim())));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = ModelConfig::default();
        cfg.adapter_blocks = AdapterBlocks::List(vec![0, 2]);
        cfg.hook_position = HookPosition::PostBlock;
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            n_heads: 5,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
