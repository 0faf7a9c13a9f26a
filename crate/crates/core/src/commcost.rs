//! Optimizer-induced communication volume under sharded (FSDP-style) training.
//!
//! The model counts logical elements crossing a collective, per matrix and
//! per step. Low-rank methods exchange the two factors once, `(m + n)·r`
//! elements; a full-matrix spectral method needs one extra all-gather plus
//! one reduce-scatter of the `m × n` momentum, `2·m·n` elements. The base
//! weight all-gather / gradient reduce-scatter is common to both and only
//! counted when `include_base` is set. World size does not enter the
//! per-matrix volume.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardedLayerShape {
    pub m: usize,
    pub n: usize,
    pub rank: usize,
    pub dtype_bytes: usize,
    pub world_size: usize,
}

impl ShardedLayerShape {
    pub fn new(m: usize, n: usize, rank: usize, dtype_bytes: usize, world_size: usize) -> Result<Self> {
        let shape = Self {
            m,
            n,
            rank,
            dtype_bytes,
            world_size,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::Validation("m and n must be positive".into()));
        }
        let max = self.m.min(self.n);
        if self.rank == 0 || self.rank > max {
            return Err(Error::range("rank", self.rank, 1, max));
        }
        if ![2, 4, 8].contains(&self.dtype_bytes) {
            return Err(Error::Validation(format!(
                "dtype_bytes = {} not in {{2, 4, 8}}",
                self.dtype_bytes
            )));
        }
        if self.world_size == 0 {
            return Err(Error::Validation("world_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommMethod {
    Lowrank,
    FullrankExtra,
}

impl CommMethod {
    pub fn name(self) -> &'static str {
        match self {
            CommMethod::Lowrank => "lowrank",
            CommMethod::FullrankExtra => "fullrank_extra",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Volume {
    pub elements: u64,
    pub bytes: u64,
}

/// Per-step optimizer traffic for one matrix.
pub fn per_step_volume(shape: &ShardedLayerShape, method: CommMethod) -> Result<Volume> {
    shape.validate()?;
    let (m, n, r) = (shape.m as u64, shape.n as u64, shape.rank as u64);
    let elements = match method {
        CommMethod::Lowrank => (m + n) * r,
        CommMethod::FullrankExtra => 2 * m * n,
    };
    Ok(Volume {
        elements,
        bytes: elements * shape.dtype_bytes as u64,
    })
}

/// Base weight all-gather plus gradient reduce-scatter, shared by all methods.
pub fn base_volume(shape: &ShardedLayerShape) -> Volume {
    let elements = 2 * shape.m as u64 * shape.n as u64;
    Volume {
        elements,
        bytes: elements * shape.dtype_bytes as u64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub layer: String,
    pub method: String,
    pub elements: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub rows: Vec<VolumeRow>,
    pub total: Volume,
}

/// Sums per-layer volumes; the last row is the total.
pub fn model_volume_report(
    layers: &[(String, ShardedLayerShape, CommMethod)],
    include_base: bool,
) -> Result<VolumeReport> {
    let mut rows = Vec::with_capacity(layers.len() + 1);
    let mut total = Volume {
        elements: 0,
        bytes: 0,
    };
    for (name, shape, method) in layers {
        let mut v = per_step_volume(shape, *method)?;
        if include_base {
            let b = base_volume(shape);
            v.elements += b.elements;
            v.bytes += b.bytes;
        }
        total.elements += v.elements;
        total.bytes += v.bytes;
        rows.push(VolumeRow {
            layer: name.clone(),
            method: method.name().to_string(),
            elements: v.elements,
            bytes: v.bytes,
        });
    }
    rows.push(VolumeRow {
        layer: "total".into(),
        method: "-".into(),
        elements: total.elements,
        bytes: total.bytes,
    });
    Ok(VolumeReport { rows, total })
}

/// Writes `layer,method,elements,bytes` rows.
pub fn write_report_csv<W: std::io::Write>(report: &VolumeReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
