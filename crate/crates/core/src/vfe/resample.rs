use ndarray::Array2;

use crate::error::{Error, Result};

/// Bilinear resampling between token grids as a sparse linear map.
///
/// Grid cells are treated as pixels with half-pixel centres; source
/// coordinates are clamped to the grid edge. Each target token is a convex
/// combination of at most four source tokens, so constant fields map to
/// themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearMap {
    source: (usize, usize),
    target: (usize, usize),
    taps: Vec<[(usize, f64); 4]>,
}

fn axis_taps(src: usize, dst: usize, i: usize) -> [(usize, f64); 2] {
    let pos = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(src - 1);
    let t = pos - lo as f64;
    [(lo, 1.0 - t), (hi, t)]
}

impl BilinearMap {
    pub fn new(source: (usize, usize), target: (usize, usize)) -> Result<Self> {
        if source.0 == 0 || source.1 == 0 || target.0 == 0 || target.1 == 0 {
            return Err(Error::Dimension(format!(
                "cannot resample grid {source:?} to {target:?}"
            )));
        }
        let mut taps = Vec::with_capacity(target.0 * target.1);
        for r in 0..target.0 {
            let ry = axis_taps(source.0, target.0, r);
            for c in 0..target.1 {
                let cx = axis_taps(source.1, target.1, c);
                let mut t = [(0, 0.0); 4];
                for (a, &(sy, wy)) in ry.iter().enumerate() {
                    for (b, &(sx, wx)) in cx.iter().enumerate() {
                        t[a * 2 + b] = (sy * source.1 + sx, wy * wx);
                    }
                }
                taps.push(t);
            }
        }
        Ok(BilinearMap {
            source,
            target,
            taps,
        })
    }

    pub fn source(&self) -> (usize, usize) {
        self.source
    }

    pub fn target(&self) -> (usize, usize) {
        self.target
    }

    /// `tokens` is `source_rows * source_cols` by `e`.
    pub fn apply(&self, tokens: &Array2<f64>) -> Array2<f64> {
        let e = tokens.ncols();
        let mut out = Array2::zeros((self.taps.len(), e));
        for (mut row, taps) in out.rows_mut().into_iter().zip(&self.taps) {
            for &(src, w) in taps {
                if w != 0.0 {
                    row.scaled_add(w, &tokens.row(src));
                }
            }
        }
        out
    }

    /// Adjoint of [`apply`](Self::apply), used to push gradients back to the source grid.
    pub fn transpose_apply(&self, grads: &Array2<f64>) -> Array2<f64> {
        let e = grads.ncols();
        let mut out = Array2::zeros((self.source.0 * self.source.1, e));
        for (row, taps) in grads.rows().into_iter().zip(&self.taps) {
            for &(src, w) in taps {
                if w != 0.0 {
                    out.row_mut(src).scaled_add(w, &row);
                }
            }
        }
        out
    }
}
