//! Closed-form trainable-parameter accounting for the encoder and adapter.

use std::fmt;

use super::config::ModelConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamRow {
    pub layer: &'static str,
    pub units: usize,
    pub per_unit: usize,
}

impl ParamRow {
    pub fn total(&self) -> usize {
        self.units * self.per_unit
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamAccounting {
    pub rows: Vec<ParamRow>,
    /// Distance and relation codebooks of one attention unit, included in
    /// the topology-aware attention row.
    pub codebook_per_unit: usize,
}

impl ParamAccounting {
    pub fn total(&self) -> usize {
        self.rows.iter().map(ParamRow::total).sum()
    }

    pub fn row(&self, layer: &str) -> Option<&ParamRow> {
        self.rows.iter().find(|r| r.layer == layer)
    }

    /// Trainable parameters that live in the skeleton encoder.
    pub fn encoder_total(&self) -> usize {
        self.rows.iter().take(3).map(ParamRow::total).sum()
    }
}

fn thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

impl fmt::Display for ParamAccounting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<26} {:>6} {:>14} {:>14}", "layer", "count", "params/unit", "total")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<26} {:>6} {:>14} {:>14}",
                r.layer,
                format!("x{}", r.units),
                thousands(r.per_unit),
                thousands(r.total())
            )?;
        }
        writeln!(f, "{:<26} {:>6} {:>14} {:>14}", "Total Trainable", "", "", thousands(self.total()))?;
        write!(
            f,
            "{:<26} {:>6} {:>14}",
            "(codebooks per unit)",
            "",
            thousands(self.codebook_per_unit)
        )
    }
}

/// Trainable parameter breakdown for a configuration. Every linear map
/// carries a bias.
pub fn count_params(cfg: &ModelConfig) -> ParamAccounting {
    let f = cfg.feature_dim;
    let hidden = cfg.ffn_multiplier * f;
    let linear = f * f + f;
    let codebook = (cfg.d_max + 1 + cfg.n_relations) * 3 * f;
    let norm = 2 * f;
    let hooked = cfg.hooked_blocks().len();
    let rows = vec![
        ParamRow {
            layer: "Topology-Aware Attention",
            units: cfg.n_encoder_units,
            per_unit: 4 * linear + codebook,
        },
        ParamRow {
            layer: "Feed-Forward Network",
            units: cfg.n_encoder_units,
            per_unit: f * hidden + hidden + hidden * f + f,
        },
        ParamRow {
            layer: "LayerNorms (Encoder)",
            units: 2 * cfg.n_encoder_units,
            per_unit: norm,
        },
        ParamRow {
            layer: "Skeletal Cross-Attention",
            units: hooked,
            per_unit: 4 * linear,
        },
        ParamRow {
            layer: "Zero-Initialized Linear",
            units: hooked,
            per_unit: linear,
        },
        ParamRow {
            layer: "LayerNorms (Adapter)",
            units: 2 * hooked,
            per_unit: norm,
        },
    ];
    ParamAccounting {
        rows,
        codebook_per_unit: codebook,
    }
}
