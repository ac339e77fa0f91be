//! Architecture descriptions and their parameter / FLOP accounting.

mod archspec;
mod cost;

pub use archspec::{
    parse_archspec, ArchSpec, ConvEntry, Entry, Geometry, InceptionEntry, PoolEntry, SpecPoolKind,
};
pub use cost::{count_flops, count_params, gsm_gate_params, report, CostReport, CostRow};

/// BN-Inception with one GSM per Inception block, 8 frames at 224×224.
pub const BN_INCEPTION_GSM_SPEC: &str = include_str!("../../specs/bn_inception_gsm.spec");
/// InceptionV3 with one GSM per Inception block, 8 frames at 229×229.
pub const INCEPTION_V3_GSM_SPEC: &str = include_str!("../../specs/inception_v3_gsm.spec");
