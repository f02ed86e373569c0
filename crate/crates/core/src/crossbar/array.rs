use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::quant::QuantizedTensor;
use super::units::{adc_read, shift_add};
use super::{CrossbarError, CrossbarGeometry, StorageMode};

/// Physical conductance levels of one array, row-major over physical columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellPlane {
    pub rows: usize,
    pub cols: usize,
    pub levels: Vec<u16>,
}

impl CellPlane {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            levels: vec![0; rows * cols],
        }
    }

    #[inline]
    pub fn level(&self, row: usize, col: usize) -> u16 {
        self.levels[row * self.cols + col]
    }

    fn set(&mut self, row: usize, col: usize, level: u16) {
        self.levels[row * self.cols + col] = level;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Planes {
    Dual { positive: CellPlane, negative: CellPlane },
    /// `bias_level` is the level of the constant-term column; it is
    /// subtracted (per unit of input) from the most significant slice of
    /// every weight before the ADC.
    Single { cells: CellPlane, bias_level: u16 },
}

/// A logical weight matrix programmed into crossbar cells.
///
/// Logical row `i` is word line `i`. Logical column `j` occupies physical
/// columns `j*cpw .. (j+1)*cpw`, most significant slice first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgrammedArray {
    pub geom: CrossbarGeometry,
    pub rows: usize,
    pub cols: usize,
    /// Real value of one integer weight step.
    pub scale: f64,
    pub planes: Planes,
}

impl ProgrammedArray {
    pub fn program(
        weights: &QuantizedTensor,
        geom: &CrossbarGeometry,
        mode: StorageMode,
    ) -> Result<Self, CrossbarError> {
        match mode {
            StorageMode::Dual => Self::program_dual(weights, geom),
            StorageMode::Single => Self::program_single(weights, geom),
        }
    }

    /// Splits each weight by sign into a positive and a negative array.
    /// Each array holds the magnitude, bit-sliced across `cells_per_weight`
    /// unsigned cells; at most one of the two cells at a position is nonzero.
    pub fn program_dual(weights: &QuantizedTensor, geom: &CrossbarGeometry) -> Result<Self, CrossbarError> {
        let (rows, cols) = check_fit(weights, geom)?;
        let cpw = geom.cells_per_weight as usize;
        let mut positive = CellPlane::zeros(rows, cols * cpw);
        let mut negative = CellPlane::zeros(rows, cols * cpw);
        for r in 0..rows {
            for c in 0..cols {
                let w = weights.values[r * cols + c];
                let plane = if w >= 0 { &mut positive } else { &mut negative };
                let magnitude = w.unsigned_abs();
                for s in 0..cpw {
                    plane.set(r, phys_col(c, s, cpw), slice(magnitude, s, geom.cell_bits));
                }
            }
        }
        Ok(Self {
            geom: *geom,
            rows,
            cols,
            scale: weights.scale,
            planes: Planes::Dual { positive, negative },
        })
    }

    /// Stores signed weights in one array.
    ///
    /// The weight is written in offset binary: the lower slices are the plain
    /// two's-complement digits and the top slice is its signed digit plus
    /// `bias_level = 2^(cell_bits-1)`. Every level therefore lies in
    /// `[0, 2^cell_bits - 1]`.
    pub fn program_single(weights: &QuantizedTensor, geom: &CrossbarGeometry) -> Result<Self, CrossbarError> {
        let (rows, cols) = check_fit(weights, geom)?;
        let cpw = geom.cells_per_weight as usize;
        let wb = geom.weight_bits();
        let bias = 1u16 << (geom.cell_bits - 1);
        let mut cells = CellPlane::zeros(rows, cols * cpw);
        for r in 0..rows {
            for c in 0..cols {
                let w = weights.values[r * cols + c];
                let unsigned = (w as u64) & low_mask(wb);
                for s in 0..cpw {
                    let mut level = slice(unsigned, s, geom.cell_bits);
                    if s == cpw - 1 {
                        // flip the sign bit of the top digit == add bias to its signed value
                        level ^= bias;
                    }
                    cells.set(r, phys_col(c, s, cpw), level);
                }
            }
        }
        Ok(Self {
            geom: *geom,
            rows,
            cols,
            scale: weights.scale,
            planes: Planes::Single { cells, bias_level: bias },
        })
    }

    pub fn mode(&self) -> StorageMode {
        match self.planes {
            Planes::Dual { .. } => StorageMode::Dual,
            Planes::Single { .. } => StorageMode::Single,
        }
    }

    /// Signed integer weight of logical cell `(row, col)` as read back from
    /// the programmed levels.
    pub fn weight(&self, row: usize, col: usize) -> i64 {
        let cpw = self.geom.cells_per_weight as usize;
        let cb = self.geom.cell_bits;
        (0..cpw).rev().fold(0i64, |acc, s| {
            let pc = phys_col(col, s, cpw);
            shift_add(acc, self.slice_value(row, pc, s == cpw - 1), cb)
        })
    }

    /// Integer weights recovered from the cells, row-major.
    pub fn reconstruct(&self) -> Vec<i64> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(self.weight(r, c));
            }
        }
        out
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.reconstruct().into_iter().map(|w| w as f64 * self.scale).collect()
    }

    /// Effective signed contribution of one physical cell.
    fn slice_value(&self, row: usize, pcol: usize, top: bool) -> i64 {
        match &self.planes {
            Planes::Dual { positive, negative } => {
                positive.level(row, pcol) as i64 - negative.level(row, pcol) as i64
            }
            Planes::Single { cells, bias_level } => {
                let level = cells.level(row, pcol) as i64;
                if top {
                    level - *bias_level as i64
                } else {
                    level
                }
            }
        }
    }

    /// Text dump of the cell levels, one line per word line.
    pub fn hex_dump(&self) -> String {
        let mut out = String::new();
        let mut dump = |name: &str, plane: &CellPlane| {
            let _ = writeln!(out, "# {name} {}x{}", plane.rows, plane.cols);
            for r in 0..plane.rows {
                let line: Vec<String> = (0..plane.cols).map(|c| format!("{:x}", plane.level(r, c))).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        };
        match &self.planes {
            Planes::Dual { positive, negative } => {
                dump("positive", positive);
                dump("negative", negative);
            }
            Planes::Single { cells, bias_level } => {
                dump(&format!("single bias={bias_level:x}"), cells);
            }
        }
        out
    }
}

/// Saturation bookkeeping from one bit-serial MVM.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MvmStats {
    /// ADC reads that clipped.
    pub saturated_reads: usize,
    /// Per output, an upper bound on `|exact - computed|` from clipping.
    pub clip_bound: Vec<u64>,
}

/// Bit-serial matrix-vector product `y[j] = sum_i x[i] * w[i][j]`.
pub fn mvm(array: &ProgrammedArray, input: &QuantizedTensor) -> Result<QuantizedTensor, CrossbarError> {
    mvm_with_stats(array, input).map(|(y, _)| y)
}

/// [`mvm`] that also reports ADC saturation.
///
/// Inputs are streamed least-significant bit first, `dac_bits` per step.
/// The two's-complement sign bit is streamed as its own step and weighted
/// by `-2^(bits-1)`. Each step reads every physical column through the ADC;
/// Shift&Add then merges the slices of a weight and the input steps.
pub fn mvm_with_stats(
    array: &ProgrammedArray,
    input: &QuantizedTensor,
) -> Result<(QuantizedTensor, MvmStats), CrossbarError> {
    if input.len() != array.rows {
        return Err(CrossbarError::DimensionMismatch {
            expected: array.rows,
            found: input.len(),
        });
    }
    if input.zero_point != 0 {
        return Err(CrossbarError::AsymmetricInput(input.zero_point));
    }
    let geom = &array.geom;
    let bits = input.bits;
    let cpw = geom.cells_per_weight as usize;
    let cb = geom.cell_bits;
    let full_scale = geom.adc_full_scale();
    let unsigned: Vec<u64> = input.values.iter().map(|&x| (x as u64) & low_mask(bits)).collect();

    let mut out = vec![0i64; array.cols];
    let mut stats = MvmStats {
        saturated_reads: 0,
        clip_bound: vec![0; array.cols],
    };
    let mut chunk = vec![0u64; array.rows];
    let mut column = vec![0i64; array.cols * cpw];

    // (bit position, width, negative weight)
    let mut steps = Vec::new();
    let mut pos = 0;
    while pos < bits - 1 {
        let width = geom.dac_bits.min(bits - 1 - pos);
        steps.push((pos, width, false));
        pos += width;
    }
    steps.push((bits - 1, 1, true));

    for (pos, width, negative) in steps {
        let mut active = 0u64;
        for (c, &u) in chunk.iter_mut().zip(&unsigned) {
            *c = (u >> pos) & low_mask(width);
            active += *c;
        }
        if active == 0 {
            continue;
        }
        bitline_sums(array, &chunk, &mut column);
        for j in 0..array.cols {
            let mut merged = 0i64;
            let mut clipped = 0u64;
            for s in (0..cpw).rev() {
                let (code, lost) = adc_read(column[phys_col(j, s, cpw)], full_scale);
                if lost > 0 {
                    stats.saturated_reads += 1;
                }
                merged = shift_add(merged, code, cb);
                clipped = clipped.saturating_add(lost << (cb * s as u32));
            }
            let contribution = merged << pos;
            out[j] += if negative { -contribution } else { contribution };
            stats.clip_bound[j] = stats.clip_bound[j].saturating_add(clipped << pos);
        }
    }

    let rows_bits = usize::BITS - array.rows.saturating_sub(1).leading_zeros();
    let out_bits = (bits + geom.weight_bits() + rows_bits + 1).min(62);
    let y = QuantizedTensor {
        dims: vec![array.cols],
        values: out,
        scale: input.scale * array.scale,
        zero_point: 0,
        bits: out_bits,
    };
    Ok((y, stats))
}

/// Analog bit-line values for one input step, pre-ADC, per physical column.
fn bitline_sums(array: &ProgrammedArray, chunk: &[u64], column: &mut [i64]) {
    column.iter_mut().for_each(|v| *v = 0);
    let accumulate = |plane: &CellPlane, sign: i64, column: &mut [i64]| {
        for (r, &x) in chunk.iter().enumerate() {
            if x == 0 {
                continue;
            }
            let row = &plane.levels[r * plane.cols..(r + 1) * plane.cols];
            for (acc, &level) in column.iter_mut().zip(row) {
                *acc += sign * x as i64 * level as i64;
            }
        }
    };
    match &array.planes {
        Planes::Dual { positive, negative } => {
            accumulate(positive, 1, column);
            accumulate(negative, -1, column);
        }
        Planes::Single { cells, bias_level } => {
            accumulate(cells, 1, column);
            let cpw = array.geom.cells_per_weight as usize;
            let offset = *bias_level as i64 * chunk.iter().sum::<u64>() as i64;
            for j in 0..array.cols {
                column[phys_col(j, cpw - 1, cpw)] -= offset;
            }
        }
    }
}

/// True iff single-array and dual-array storage of `weights` give the same
/// MVM result for `input` under `geom`. Saturating ADCs may make this false.
pub fn dual_single_equiv_check(
    weights: &QuantizedTensor,
    input: &QuantizedTensor,
    geom: &CrossbarGeometry,
) -> Result<bool, CrossbarError> {
    let dual = ProgrammedArray::program_dual(weights, geom)?;
    let single = ProgrammedArray::program_single(weights, geom)?;
    Ok(mvm(&dual, input)?.values == mvm(&single, input)?.values)
}

fn check_fit(weights: &QuantizedTensor, geom: &CrossbarGeometry) -> Result<(usize, usize), CrossbarError> {
    geom.validate()?;
    let (rows, cols) = weights.matrix_shape()?;
    let phys_cols = cols * geom.cells_per_weight as usize;
    if rows > geom.rows || phys_cols > geom.cols || rows == 0 || cols == 0 {
        return Err(CrossbarError::ExceedsGeometry {
            rows,
            cols,
            phys_cols,
            max_rows: geom.rows,
            max_cols: geom.cols,
        });
    }
    let (min, max) = geom.weight_range();
    if let Some(&value) = weights.values.iter().find(|&&w| w < min || w > max) {
        return Err(CrossbarError::OutOfRange { value, min, max });
    }
    Ok((rows, cols))
}

#[inline]
fn phys_col(col: usize, slice: usize, cpw: usize) -> usize {
    col * cpw + (cpw - 1 - slice)
}

#[inline]
fn slice(value: u64, s: usize, cell_bits: u32) -> u16 {
    ((value >> (cell_bits as usize * s)) & low_mask(cell_bits)) as u16
}

#[inline]
fn low_mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom1() -> CrossbarGeometry {
        CrossbarGeometry {
            rows: 4,
            cols: 4,
            cell_bits: 4,
            cells_per_weight: 1,
            adc_bits: 16,
            dac_bits: 1,
        }
    }

    fn mat(rows: usize, cols: usize, v: Vec<i64>, bits: u32) -> QuantizedTensor {
        QuantizedTensor::from_ints(vec![rows, cols], v, 1.0, bits).unwrap()
    }

    fn levels(a: &ProgrammedArray) -> (Vec<u16>, Vec<u16>) {
        match &a.planes {
            Planes::Dual { positive, negative } => (positive.levels.clone(), negative.levels.clone()),
            Planes::Single { cells, .. } => (cells.levels.clone(), vec![]),
        }
    }

    #[test]
    fn dual_sign_rule() {
        let a = ProgrammedArray::program_dual(&mat(1, 2, vec![5, -3], 4), &geom1()).unwrap();
        let (p, n) = levels(&a);
        assert_eq!(p, vec![5, 0]);
        assert_eq!(n, vec![0, 3]);
    }

    #[test]
    fn single_levels_at_range_edges() {
        let a = ProgrammedArray::program_single(&mat(1, 3, vec![-8, 0, 7], 4), &geom1()).unwrap();
        let (cells, _) = levels(&a);
        assert_eq!(cells, vec![0, 8, 15]);
        match a.planes {
            Planes::Single { bias_level, .. } => assert_eq!(bias_level, 8),
            _ => unreachable!(),
        }
    }

    #[test]
    fn single_rejects_out_of_range() {
        let w = mat(1, 1, vec![8], 6);
        assert!(matches!(
            ProgrammedArray::program_single(&w, &geom1()),
            Err(CrossbarError::OutOfRange { .. })
        ));
        assert!(ProgrammedArray::program_dual(&w, &geom1()).is_err());
    }

    #[test]
    fn rejects_oversized_matrix() {
        let w = mat(5, 1, vec![0; 5], 4);
        assert!(matches!(
            ProgrammedArray::program_dual(&w, &geom1()),
            Err(CrossbarError::ExceedsGeometry { .. })
        ));
    }

    #[test]
    fn reconstruction_is_exact_for_sliced_weights() {
        let geom = CrossbarGeometry {
            rows: 8,
            cols: 16,
            ..CrossbarGeometry::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<i64> = (0..64).map(|_| rng.gen_range(-128..=127)).collect();
        let w = mat(8, 8, vals.clone(), 8);
        for mode in [StorageMode::Dual, StorageMode::Single] {
            let a = ProgrammedArray::program(&w, &geom, mode).unwrap();
            assert_eq!(a.reconstruct(), vals);
        }
        let dual = ProgrammedArray::program_dual(&w, &geom).unwrap();
        if let Planes::Dual { positive, negative } = &dual.planes {
            for (p, n) in positive.levels.iter().zip(&negative.levels) {
                assert!(*p == 0 || *n == 0);
            }
        }
    }

    #[test]
    fn identity_passes_vector_through() {
        let g = geom1();
        let w = mat(4, 4, vec![1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1], 4);
        let x = QuantizedTensor::from_ints(vec![4], vec![-5, 0, 7, 12], 1.0, 8).unwrap();
        for mode in [StorageMode::Dual, StorageMode::Single] {
            let a = ProgrammedArray::program(&w, &g, mode).unwrap();
            assert_eq!(mvm(&a, &x).unwrap().values, vec![-5, 0, 7, 12]);
        }
    }

    #[test]
    fn zero_weights_cancel_in_single_mode() {
        let g = geom1();
        let a = ProgrammedArray::program_single(&mat(4, 4, vec![0; 16], 4), &g).unwrap();
        let x = QuantizedTensor::from_ints(vec![4], vec![127, -128, 55, -1], 1.0, 8).unwrap();
        assert_eq!(mvm(&a, &x).unwrap().values, vec![0; 4]);
    }

    #[test]
    fn mvm_dimension_mismatch() {
        let a = ProgrammedArray::program_dual(&mat(2, 2, vec![1, 2, 3, 4], 4), &geom1()).unwrap();
        let x = QuantizedTensor::from_ints(vec![3], vec![1, 2, 3], 1.0, 8).unwrap();
        assert!(matches!(mvm(&a, &x), Err(CrossbarError::DimensionMismatch { .. })));
    }

    #[test]
    fn multi_bit_dac_matches_single_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = CrossbarGeometry {
            rows: 16,
            cols: 32,
            adc_bits: 24,
            ..CrossbarGeometry::default()
        };
        for dac_bits in [1, 2, 3, 4] {
            let geom = CrossbarGeometry { dac_bits, ..base };
            let vals: Vec<i64> = (0..256).map(|_| rng.gen_range(-128..=127)).collect();
            let w = mat(16, 16, vals.clone(), 8);
            let xs: Vec<i64> = (0..16).map(|_| rng.gen_range(-32768..=32767)).collect();
            let x = QuantizedTensor::from_ints(vec![16], xs.clone(), 1.0, 16).unwrap();
            let a = ProgrammedArray::program_single(&w, &geom).unwrap();
            let y = mvm(&a, &x).unwrap();
            for j in 0..16 {
                let exact: i64 = (0..16).map(|i| xs[i] * vals[i * 16 + j]).sum();
                assert_eq!(y.values[j], exact, "dac_bits={dac_bits}");
            }
        }
    }

    #[test]
    fn hex_dump_lists_every_row() {
        let a = ProgrammedArray::program_single(&mat(2, 1, vec![-1, 3], 4), &geom1()).unwrap();
        let dump = a.hex_dump();
        assert_eq!(dump, "# single bias=8 2x1\n7\nb\n");
    }
}
