//! TOML system descriptions.
//!
//! ```toml
//! Q = 10
//! S_max = 2
//! xi_kind = "exp2minus1"      # or: xi = [0.0, 1.0, 3.0]
//!
//! [arrival]
//! alphas = [0.4, 0.3, 0.3]
//!
//! [channel]
//! kind = "uniform"            # or "piecewise"
//! h_min = 0.5
//! h_max = 10.0
//! # piecewise only: [upper_edge, density] per piece, edges increasing
//! # table = [[2.0, 0.2], [10.0, 0.0875]]
//! ```
//!
//! The name `paper_iv` selects the built-in setup instead of a file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{exp2_minus_one, ArrivalModel, ChannelDensity, ChannelModel, ModelError, SystemConfig};

pub const BUILTIN: &str = "paper_iv";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{0}")]
    Syntax(#[from] toml::de::Error),
    #[error("field `{field}`: {msg}")]
    Field { field: &'static str, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(rename = "Q")]
    q: usize,
    #[serde(rename = "S_max")]
    s_max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    xi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    xi_kind: Option<String>,
    arrival: RawArrival,
    channel: RawChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArrival {
    alphas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    kind: String,
    h_min: f64,
    h_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    table: Option<Vec<[f64; 2]>>,
}

fn field(field: &'static str, msg: impl ToString) -> ConfigError {
    ConfigError::Field {
        field,
        msg: msg.to_string(),
    }
}

fn model_field(e: &ModelError) -> &'static str {
    match e {
        ModelError::EmptyArrivals | ModelError::BadProbability(_) | ModelError::ProbabilitySum(_) => "arrival.alphas",
        ModelError::NonPositiveHMin => "channel.h_min",
        ModelError::EmptyChannelRange => "channel.h_max",
        ModelError::BadDensityTable(_) | ModelError::NegativeDensity(_) | ModelError::DensityMass(_) => {
            "channel.table"
        }
        ModelError::RateBelowArrivals => "S_max",
        ModelError::BufferBelowArrivals => "Q",
        ModelError::XiLength { .. } | ModelError::NegativeIdleCost | ModelError::XiNotIncreasing(_) => "xi",
        ModelError::ZeroBins | ModelError::EmptyBin(_) => "channel",
    }
}

/// Parses and validates a TOML description.
pub fn parse_config(text: &str) -> Result<SystemConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text)?;
    let xi = match (raw.xi, raw.xi_kind.as_deref()) {
        (Some(xi), None) => xi,
        (None, Some("exp2minus1")) => exp2_minus_one(raw.s_max),
        (None, Some(other)) => return Err(field("xi_kind", format!("unknown kind {other:?}"))),
        (None, None) => return Err(field("xi", "give either xi or xi_kind")),
        (Some(_), Some(_)) => return Err(field("xi", "give only one of xi and xi_kind")),
    };
    let ch = raw.channel;
    let channel = match (ch.kind.as_str(), ch.table) {
        ("uniform", None) => ChannelModel::uniform(ch.h_min, ch.h_max),
        ("uniform", Some(_)) => return Err(field("channel.table", "not used by a uniform channel")),
        ("piecewise", Some(table)) => {
            let mut edges = vec![ch.h_min];
            edges.extend(table.iter().map(|r| r[0]));
            if edges.last() != Some(&ch.h_max) {
                return Err(field("channel.table", "last upper edge must equal h_max"));
            }
            ChannelModel::piecewise(edges, table.iter().map(|r| r[1]).collect())
        }
        ("piecewise", None) => return Err(field("channel.table", "required for a piecewise channel")),
        (other, _) => return Err(field("channel.kind", format!("unknown kind {other:?}"))),
    };
    let cfg = SystemConfig {
        arrival: ArrivalModel::new(raw.arrival.alphas),
        channel,
        buffer: raw.q,
        max_rate: raw.s_max,
        xi,
    };
    cfg.validate().map_err(|e| field(model_field(&e), e))?;
    Ok(cfg)
}

/// `paper_iv` or a path to a TOML file.
pub fn load_config(name_or_path: &str) -> Result<SystemConfig, ConfigError> {
    if name_or_path == BUILTIN {
        return Ok(SystemConfig::paper_iv());
    }
    let text = fs::read_to_string(Path::new(name_or_path)).map_err(|source| ConfigError::Read {
        path: name_or_path.to_string(),
        source,
    })?;
    parse_config(&text)
}

/// Canonical TOML for a configuration; parses back to the same value.
pub fn config_to_toml(cfg: &SystemConfig) -> String {
    let (kind, table) = match &cfg.channel.density {
        ChannelDensity::Uniform => ("uniform", None),
        ChannelDensity::PiecewiseConstant { edges, values } => (
            "piecewise",
            Some(edges[1..].iter().zip(values).map(|(&e, &v)| [e, v]).collect()),
        ),
    };
    let raw = RawConfig {
        q: cfg.buffer,
        s_max: cfg.max_rate,
        xi: Some(cfg.xi.clone()),
        xi_kind: None,
        arrival: RawArrival {
            alphas: cfg.arrival.alphas.clone(),
        },
        channel: RawChannel {
            kind: kind.into(),
            h_min: cfg.channel.h_min,
            h_max: cfg.channel.h_max,
            table,
        },
    };
    toml::to_string(&raw).expect("config serializes")
}
