use std::sync::Arc;

use num_complex::Complex64;
use rustfft::Fft;

use super::Grid;

/// Scratch buffers reused across multidimensional transforms.
pub struct FftWorkspace {
    lines: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl FftWorkspace {
    pub fn new(grid: &Grid) -> Self {
        let n = grid.points_per_axis();
        let block = if grid.dim() > 1 { grid.len() / n * n } else { 0 };
        let scratch_len = grid
            .0
            .forward
            .get_inplace_scratch_len()
            .max(grid.0.inverse.get_inplace_scratch_len());
        Self {
            lines: vec![Complex64::default(); block],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }
}

// Axis `a` of a row-major `[n; d]` array: for every outer index the
// `n x inner` block is transposed so the axis becomes contiguous.
pub(super) fn transform(
    grid: &Grid,
    data: &mut [Complex64],
    ws: &mut FftWorkspace,
    plan: &Arc<dyn Fft<f64>>,
    scale: f64,
) {
    let n = grid.points_per_axis();
    let d = grid.dim();
    assert_eq!(data.len(), grid.len());
    if ws.scratch.len() < plan.get_inplace_scratch_len() {
        ws.scratch.resize(plan.get_inplace_scratch_len(), Complex64::default());
    }
    for a in 0..d {
        let inner = n.pow((d - 1 - a) as u32);
        if inner == 1 {
            plan.process_with_scratch(data, &mut ws.scratch);
            continue;
        }
        let block_len = n * inner;
        if ws.lines.len() < block_len {
            ws.lines.resize(block_len, Complex64::default());
        }
        for block in data.chunks_exact_mut(block_len) {
            let lines = &mut ws.lines[..block_len];
            for j in 0..n {
                let row = &block[j * inner..(j + 1) * inner];
                for (i, z) in row.iter().enumerate() {
                    lines[i * n + j] = *z;
                }
            }
            plan.process_with_scratch(lines, &mut ws.scratch);
            for j in 0..n {
                let row = &mut block[j * inner..(j + 1) * inner];
                for (i, z) in row.iter_mut().enumerate() {
                    *z = lines[i * n + j];
                }
            }
        }
    }
    if scale != 1.0 {
        for z in data.iter_mut() {
            *z *= scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::Grid;
    use num_complex::Complex64;

    // Direct O(N^2) DFT along every axis as an independent check.
    fn naive_dft(grid: &Grid, f: &[Complex64]) -> Vec<Complex64> {
        let n = grid.points_per_axis();
        let total = grid.len();
        (0..total)
            .map(|kidx| {
                let km = grid.multi_index(kidx);
                let mut s = Complex64::new(0.0, 0.0);
                for (xidx, v) in f.iter().enumerate() {
                    let xm = grid.multi_index(xidx);
                    let mut phase = 0.0;
                    for a in 0..grid.dim() {
                        phase += (km[a] * xm[a]) as f64 / n as f64;
                    }
                    s += v * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * phase);
                }
                s
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_in_every_dimension() {
        for dim in 1..=3 {
            let g = Grid::new(dim, 8, 3.0).unwrap();
            let f: Vec<Complex64> = (0..g.len())
                .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
                .collect();
            let mut fast = f.clone();
            let mut ws = g.workspace();
            g.fft_forward(&mut fast, &mut ws);
            let slow = naive_dft(&g, &f);
            let err: f64 = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-11, "dim {dim}: {err}");
            g.fft_inverse(&mut fast, &mut ws);
            let back: f64 = fast.iter().zip(&f).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(back < 1e-13, "dim {dim}: {back}");
        }
    }
}
