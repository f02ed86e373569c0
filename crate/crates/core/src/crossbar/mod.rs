//! Functional fixed-point model of the analog crossbar datapath.
//!
//! Conductances are modelled as exact integer levels. A signed weight is
//! stored either across a positive/negative pair of arrays (dual storage) or
//! in a single array whose most significant slice is offset by a constant
//! bias level that a constant-term column cancels at readout (single
//! storage). Inputs are streamed bit-serially through the DACs, each bit-line
//! read passes through a saturating ADC, and Shift&Add merges cell slices and
//! input steps back into the full-precision product.

mod array;
mod quant;
mod tiled;
mod units;

pub use array::{dual_single_equiv_check, mvm, mvm_with_stats, CellPlane, MvmStats, Planes, ProgrammedArray};
pub use quant::{quantize, quantize_with_scale, QuantizedTensor};
pub use tiled::TiledMatrix;
pub use units::{adc_read, max_pool4, shift_add};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrossbarError {
    #[error("bit width {bits} outside supported range {min}..={max}")]
    InvalidBits { bits: u32, min: u32, max: u32 },
    #[error("invalid crossbar geometry: {0}")]
    InvalidGeometry(String),
    #[error("weight matrix {rows}x{cols} (physical columns {phys_cols}) does not fit a {max_rows}x{max_cols} crossbar")]
    ExceedsGeometry {
        rows: usize,
        cols: usize,
        phys_cols: usize,
        max_rows: usize,
        max_cols: usize,
    },
    #[error("value {value} outside programmable range [{min}, {max}]")]
    OutOfRange { value: i64, min: i64, max: i64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("expected a 2-D weight matrix, got dims {0:?}")]
    NotAMatrix(Vec<usize>),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("crossbar inputs must be symmetric (zero_point 0), got {0}")]
    AsymmetricInput(i64),
}

/// Which physical storage scheme holds signed weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageMode {
    /// Positive and negative arrays; `g+ - g-` is the weight.
    Dual,
    /// One array plus a constant-term bias column.
    Single,
}

impl StorageMode {
    /// Physical arrays needed per logical array.
    pub fn arrays_per_matrix(self) -> usize {
        match self {
            StorageMode::Dual => 2,
            StorageMode::Single => 1,
        }
    }
}

impl std::fmt::Display for StorageMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StorageMode::Dual => "dual",
            StorageMode::Single => "single",
        })
    }
}

/// Physical parameters of one crossbar and its converters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossbarGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Bits stored per memristor cell.
    pub cell_bits: u32,
    /// Cells in one row that together hold a weight (bit slicing).
    pub cells_per_weight: u32,
    pub adc_bits: u32,
    /// Input bits applied per DAC step.
    pub dac_bits: u32,
}

impl Default for CrossbarGeometry {
    fn default() -> Self {
        Self {
            rows: 128,
            cols: 128,
            cell_bits: 4,
            cells_per_weight: 2,
            adc_bits: 8,
            dac_bits: 1,
        }
    }
}

impl CrossbarGeometry {
    pub fn weight_bits(&self) -> u32 {
        self.cell_bits * self.cells_per_weight
    }

    pub fn max_level(&self) -> u64 {
        (1u64 << self.cell_bits) - 1
    }

    /// ADC full-scale code, `2^adc_bits - 1`.
    pub fn adc_full_scale(&self) -> i64 {
        ((1u128 << self.adc_bits) - 1).min(i64::MAX as u128) as i64
    }

    /// Largest bit-line sum a single DAC step can produce on a full array.
    pub fn worst_case_bitline_sum(&self) -> u64 {
        self.rows as u64 * ((1u64 << self.dac_bits) - 1) * self.max_level()
    }

    /// Same geometry with an ADC wide enough that no read can saturate.
    pub fn with_lossless_adc(mut self) -> Self {
        let worst = self.worst_case_bitline_sum();
        self.adc_bits = (64 - worst.leading_zeros()).max(1);
        self
    }

    pub fn validate(&self) -> Result<(), CrossbarError> {
        let bad = |msg: &str| Err(CrossbarError::InvalidGeometry(msg.to_string()));
        if self.rows == 0 || self.cols == 0 {
            return bad("rows and cols must be >= 1");
        }
        if !(1..=8).contains(&self.cell_bits) {
            return bad("cell_bits must be in 1..=8");
        }
        if self.cells_per_weight == 0 || self.weight_bits() > 16 {
            return bad("cells_per_weight must be >= 1 with weight_bits <= 16");
        }
        if self.cells_per_weight as usize > self.cols {
            return bad("cells_per_weight exceeds physical columns");
        }
        if !(1..=48).contains(&self.adc_bits) {
            return bad("adc_bits must be in 1..=48");
        }
        if !(1..=16).contains(&self.dac_bits) {
            return bad("dac_bits must be in 1..=16");
        }
        Ok(())
    }

    /// Signed range of a programmable quantized weight.
    pub fn weight_range(&self) -> (i64, i64) {
        let wb = self.weight_bits();
        (-(1i64 << (wb - 1)), (1i64 << (wb - 1)) - 1)
    }

    /// Logical output columns that fit in one physical array.
    pub fn logical_cols(&self) -> usize {
        self.cols / self.cells_per_weight as usize
    }
}
