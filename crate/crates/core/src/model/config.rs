//! Model configuration with Tiny/Small/Normal presets.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{FlamesError, Result};
use crate::hippo::SignConvention;
use crate::model::readout::ReadoutSelect;
use crate::neuron::{DendriteConfig, TickMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Tiny,
    Small,
    Normal,
}

impl std::str::FromStr for Variant {
    type Err = FlamesError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Self::Tiny),
            "small" => Ok(Self::Small),
            "normal" => Ok(Self::Normal),
            other => Err(FlamesError::invalid("variant", format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvMode {
    #[default]
    Recurrent,
    Fft,
}

impl std::str::FromStr for ConvMode {
    type Err = FlamesError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recurrent" => Ok(Self::Recurrent),
            "fft" => Ok(Self::Fft),
            other => Err(FlamesError::invalid("mode", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub dendrite_branches: usize,
    pub conv_filters: usize,
    pub readout_width: usize,
    pub num_ssm_blocks: usize,
    /// Event-pool window `p`.
    pub pool_factor: usize,
    pub order: usize,
    pub alpha0: f64,
    pub taylor_order: usize,
    pub rank: usize,
    pub v_th: f64,
    pub mode: ConvMode,
    pub no_dendrite: bool,
    pub no_sa_hippo: bool,
    pub dt_grid: f64,
    pub readout: ReadoutSelect,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_soma: f64,
    pub shared_weights: bool,
    pub tick_mode: TickMode,
    pub sign_convention: SignConvention,
    pub substep_radius: Option<f64>,
}

impl ModelConfig {
    pub fn preset(variant: Variant) -> Self {
        let (branches, filters, width, order, rank) = match variant {
            Variant::Tiny => (16, 32, 256, 16, 4),
            Variant::Small => (32, 64, 512, 32, 8),
            Variant::Normal => (64, 128, 1024, 64, 16),
        };
        Self {
            variant,
            dendrite_branches: branches,
            conv_filters: filters,
            readout_width: width,
            num_ssm_blocks: 2,
            pool_factor: 8,
            order,
            alpha0: 1.0,
            taylor_order: 8,
            rank,
            v_th: 0.5,
            mode: ConvMode::Recurrent,
            no_dendrite: false,
            no_sa_hippo: false,
            dt_grid: 1e-3,
            readout: ReadoutSelect::Final,
            tau_min: 1e-3,
            tau_max: 1.0,
            tau_soma: 0.02,
            shared_weights: false,
            tick_mode: TickMode::Elapsed,
            sign_convention: SignConvention::Diagonal,
            substep_radius: Some(0.5),
        }
    }

    /// Parses a JSON object. `variant` (default tiny) picks the preset and
    /// every other key overrides one field.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let Value::Object(overrides) = value else {
            return Err(FlamesError::invalid("config", "expected a JSON object"));
        };
        let variant = match overrides.get("variant") {
            None => Variant::Tiny,
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| FlamesError::invalid("variant", e.to_string()))?,
        };
        Self::preset(variant).with_overrides(&overrides)
    }

    pub fn with_overrides(&self, overrides: &Map<String, Value>) -> Result<Self> {
        let Value::Object(base) = serde_json::to_value(self)? else {
            unreachable!("config serializes to an object")
        };
        for key in overrides.keys() {
            if !base.contains_key(key) {
                return Err(FlamesError::invalid(key.as_str(), "unknown field"));
            }
        }
        let mut merged = base.clone();
        for (k, v) in overrides {
            merged.insert(k.clone(), v.clone());
        }
        let cfg: Self = match serde_json::from_value(Value::Object(merged)) {
            Ok(cfg) => cfg,
            Err(e) => {
                // locate the offending key so the error can name it
                for (k, v) in overrides {
                    let mut single = base.clone();
                    single.insert(k.clone(), v.clone());
                    if let Err(inner) = serde_json::from_value::<Self>(Value::Object(single)) {
                        return Err(FlamesError::invalid(k.as_str(), inner.to_string()));
                    }
                }
                return Err(FlamesError::invalid("config", e.to_string()));
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dendrite_branches", self.dendrite_branches),
            ("conv_filters", self.conv_filters),
            ("readout_width", self.readout_width),
            ("num_ssm_blocks", self.num_ssm_blocks),
            ("pool_factor", self.pool_factor),
            ("order", self.order),
            ("taylor_order", self.taylor_order),
            ("rank", self.rank),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(FlamesError::invalid(name, "must be at least 1"));
            }
        }
        if self.rank > self.order {
            return Err(FlamesError::invalid("rank", "must not exceed order"));
        }
        if !(self.alpha0 >= 0.0 && self.alpha0.is_finite()) {
            return Err(FlamesError::invalid("alpha0", "must be finite and non-negative"));
        }
        if !(self.dt_grid > 0.0 && self.dt_grid.is_finite()) {
            return Err(FlamesError::invalid("dt_grid", "must be positive and finite"));
        }
        if let Some(r) = self.substep_radius {
            if !(r > 0.0) {
                return Err(FlamesError::invalid("substep_radius", "must be positive"));
            }
        }
        self.dendrite().validate()
    }

    /// Effective decay rate after the `no_sa_hippo` switch.
    pub fn effective_alpha0(&self) -> f64 {
        if self.no_sa_hippo {
            0.0
        } else {
            self.alpha0
        }
    }

    /// Dendrite settings after the `no_dendrite` switch.
    pub fn dendrite(&self) -> DendriteConfig {
        let full = DendriteConfig {
            branches: self.dendrite_branches,
            tau_min: self.tau_min,
            tau_max: self.tau_max,
            tau_soma: self.tau_soma,
            v_th: self.v_th,
            radius: 1,
            shared_weights: self.shared_weights,
            tick_mode: self.tick_mode,
        };
        if self.no_dendrite {
            full.single_tau()
        } else {
            full
        }
    }
}
