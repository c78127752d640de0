use super::kernels::dot;
use crate::error::{Error, Result};
use crate::real::Real;

/// `y[n,o] = sum_i w[o,i] x[n,i] + b[o]` over `n` rows of `inputs` features.
pub fn fc_forward<T: Real>(x: &[T], w: &[T], b: &[T], inputs: usize, outputs: usize) -> Result<Vec<T>> {
    if w.len() != inputs * outputs || b.len() != outputs || !x.len().is_multiple_of(inputs.max(1)) {
        return Err(Error::ShapeMismatch(format!(
            "fc {inputs}->{outputs} with {} inputs, {} weights",
            x.len(),
            w.len()
        )));
    }
    let n = x.len() / inputs;
    let mut y = Vec::with_capacity(n * outputs);
    for row in x.chunks_exact(inputs) {
        for o in 0..outputs {
            y.push(dot(&w[o * inputs..(o + 1) * inputs], row) + b[o]);
        }
    }
    Ok(y)
}

/// Input gradient and this rank's partial weight and bias gradients.
pub fn fc_backward<T: Real>(
    x: &[T],
    dy: &[T],
    w: &[T],
    inputs: usize,
    outputs: usize,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let n = x.len() / inputs.max(1);
    if dy.len() != n * outputs || w.len() != inputs * outputs {
        return Err(Error::ShapeMismatch(format!("fc backward of {} gradients for {n} rows", dy.len())));
    }
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); outputs];
    for s in 0..n {
        let xrow = &x[s * inputs..(s + 1) * inputs];
        let dxrow = &mut dx[s * inputs..(s + 1) * inputs];
        for o in 0..outputs {
            let g = dy[s * outputs + o];
            db[o] += g;
            let wrow = &w[o * inputs..(o + 1) * inputs];
            for (d, &wv) in dxrow.iter_mut().zip(wrow) {
                *d += g * wv;
            }
            for (d, &xv) in dw[o * inputs..(o + 1) * inputs].iter_mut().zip(xrow) {
                *d += g * xv;
            }
        }
    }
    Ok((dx, dw, db))
}
