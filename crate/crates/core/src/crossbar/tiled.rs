use super::array::{mvm_with_stats, MvmStats, ProgrammedArray};
use super::quant::QuantizedTensor;
use super::{CrossbarError, CrossbarGeometry, StorageMode};

#[derive(Debug, Clone)]
struct Tile {
    row0: usize,
    col0: usize,
    array: ProgrammedArray,
}

/// A weight matrix larger than one crossbar, split into geometry-sized
/// tiles whose partial products are summed digitally.
#[derive(Debug, Clone)]
pub struct TiledMatrix {
    pub rows: usize,
    pub cols: usize,
    pub mode: StorageMode,
    pub scale: f64,
    tiles: Vec<Tile>,
}

impl TiledMatrix {
    pub fn program(weights: &QuantizedTensor, geom: &CrossbarGeometry, mode: StorageMode) -> Result<Self, CrossbarError> {
        geom.validate()?;
        let (rows, cols) = weights.matrix_shape()?;
        let tile_cols = geom.logical_cols();
        if tile_cols == 0 {
            return Err(CrossbarError::InvalidGeometry(
                "cells_per_weight exceeds physical columns".into(),
            ));
        }
        let mut tiles = Vec::new();
        for row0 in (0..rows).step_by(geom.rows) {
            let tr = geom.rows.min(rows - row0);
            for col0 in (0..cols).step_by(tile_cols) {
                let tc = tile_cols.min(cols - col0);
                let mut vals = Vec::with_capacity(tr * tc);
                for r in row0..row0 + tr {
                    vals.extend_from_slice(&weights.values[r * cols + col0..r * cols + col0 + tc]);
                }
                let sub = QuantizedTensor {
                    dims: vec![tr, tc],
                    values: vals,
                    ..weights.clone()
                };
                tiles.push(Tile {
                    row0,
                    col0,
                    array: ProgrammedArray::program(&sub, geom, mode)?,
                });
            }
        }
        Ok(Self {
            rows,
            cols,
            mode,
            scale: weights.scale,
            tiles,
        })
    }

    /// Physical crossbars occupied, counting both arrays of a dual pair.
    pub fn crossbar_count(&self) -> usize {
        self.tiles.len() * self.mode.arrays_per_matrix()
    }

    pub fn mvm(&self, input: &QuantizedTensor) -> Result<QuantizedTensor, CrossbarError> {
        self.mvm_with_stats(input).map(|(y, _)| y)
    }

    pub fn mvm_with_stats(&self, input: &QuantizedTensor) -> Result<(QuantizedTensor, MvmStats), CrossbarError> {
        if input.len() != self.rows {
            return Err(CrossbarError::DimensionMismatch {
                expected: self.rows,
                found: input.len(),
            });
        }
        let mut out = vec![0i64; self.cols];
        let mut stats = MvmStats {
            saturated_reads: 0,
            clip_bound: vec![0; self.cols],
        };
        let mut bits = input.bits;
        for tile in &self.tiles {
            let seg = QuantizedTensor {
                dims: vec![tile.array.rows],
                values: input.values[tile.row0..tile.row0 + tile.array.rows].to_vec(),
                ..input.clone()
            };
            let (y, s) = mvm_with_stats(&tile.array, &seg)?;
            for (k, v) in y.values.iter().enumerate() {
                out[tile.col0 + k] += v;
                stats.clip_bound[tile.col0 + k] += s.clip_bound[k];
            }
            stats.saturated_reads += s.saturated_reads;
            bits = bits.max(y.bits);
        }
        let y = QuantizedTensor {
            dims: vec![self.cols],
            values: out,
            scale: input.scale * self.scale,
            zero_point: 0,
            bits: (bits + 8).min(62),
        };
        Ok((y, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tiles_cover_large_matrix_exactly() {
        let geom = CrossbarGeometry {
            rows: 8,
            cols: 8,
            ..CrossbarGeometry::default()
        }
        .with_lossless_adc();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (rows, cols) = (19, 11);
        let w: Vec<i64> = (0..rows * cols).map(|_| rng.gen_range(-128..=127)).collect();
        let x: Vec<i64> = (0..rows).map(|_| rng.gen_range(-500..=500)).collect();
        let wq = QuantizedTensor::from_ints(vec![rows, cols], w.clone(), 0.5, 8).unwrap();
        let xq = QuantizedTensor::from_ints(vec![rows], x.clone(), 2.0, 16).unwrap();
        for mode in [StorageMode::Dual, StorageMode::Single] {
            let t = TiledMatrix::program(&wq, &geom, mode).unwrap();
            // ceil(19/8) * ceil(22/8)
            assert_eq!(t.crossbar_count(), 3 * 3 * mode.arrays_per_matrix());
            let y = t.mvm(&xq).unwrap();
            assert_eq!(y.scale, 1.0);
            for j in 0..cols {
                let exact: i64 = (0..rows).map(|i| x[i] * w[i * cols + j]).sum();
                assert_eq!(y.values[j], exact);
            }
        }
    }
}
