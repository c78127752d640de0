use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::PerfError;

/// Point-to-point time `SR(b) = alpha + beta * b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub alpha: f64,
    pub beta: f64,
    /// Root mean square residual of the fit, seconds.
    pub residual: f64,
}

impl LinkModel {
    pub fn new(alpha: f64, beta: f64) -> Self {
        LinkModel { alpha, beta, residual: 0.0 }
    }

    /// Free links, for compute-only bounds.
    pub fn free() -> Self {
        Self::new(0.0, 0.0)
    }

    /// Time of one message; empty messages are not sent.
    pub fn time(&self, bytes: u64) -> f64 {
        if bytes == 0 {
            0.0
        } else {
            self.alpha + self.beta * bytes as f64
        }
    }
}

/// Allreduce time `log t = c0 + c1 log m + c2 log p` over `m` elements and
/// `p` ranks. One rank costs nothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectiveModel {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Root mean square residual in log space.
    pub residual: f64,
}

impl CollectiveModel {
    pub fn time(&self, elements: u64, ranks: usize) -> f64 {
        if ranks <= 1 || elements == 0 {
            return 0.0;
        }
        (self.c0 + self.c1 * (elements as f64).ln() + self.c2 * (ranks as f64).ln()).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PingPongSample {
    pub bytes: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllreduceSample {
    pub elements: u64,
    pub ranks: usize,
    pub seconds: f64,
}

/// Least squares of `a x = b`; fails when `a` has dependent columns.
fn least_squares(a: DMatrix<f64>, b: DVector<f64>) -> Result<(DVector<f64>, f64), PerfError> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax == 0.0 || smin <= smax * 1e-12 {
        return Err(PerfError::DegenerateFit("samples do not determine every coefficient".into()));
    }
    let x = svd.solve(&b, 0.0).map_err(|e| PerfError::DegenerateFit(e.into()))?;
    let r = &a * &x - b;
    let rms = (r.norm_squared() / r.len() as f64).sqrt();
    Ok((x, rms))
}

/// Fit a link model to ping-pong timings; needs two distinct sizes.
pub fn fit_link(samples: &[PingPongSample]) -> Result<LinkModel, PerfError> {
    let mut sizes: Vec<u64> = samples.iter().map(|s| s.bytes).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 2 {
        return Err(PerfError::InsufficientData { needed: "two distinct message sizes".into(), got: sizes.len() });
    }
    let a = DMatrix::from_fn(samples.len(), 2, |i, j| if j == 0 { 1.0 } else { samples[i].bytes as f64 });
    let b = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.seconds));
    let (x, residual) = least_squares(a, b)?;
    if x[1] < 0.0 {
        return Err(PerfError::DegenerateFit(format!("negative per-byte time {}", x[1])));
    }
    Ok(LinkModel { alpha: x[0], beta: x[1], residual })
}

/// Fit the log-log allreduce model; needs three points spanning both
/// message size and rank count. Single-rank samples are ignored.
pub fn fit_allreduce(samples: &[AllreduceSample]) -> Result<CollectiveModel, PerfError> {
    let pts: Vec<_> = samples.iter().filter(|s| s.ranks > 1 && s.elements > 0).collect();
    if pts.len() < 3 {
        return Err(PerfError::InsufficientData { needed: "three multi-rank samples".into(), got: pts.len() });
    }
    if pts.iter().any(|s| s.seconds <= 0.0) {
        return Err(PerfError::DegenerateFit("non-positive allreduce time".into()));
    }
    let a = DMatrix::from_fn(pts.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => (pts[i].elements as f64).ln(),
        _ => (pts[i].ranks as f64).ln(),
    });
    let b = DVector::from_iterator(pts.len(), pts.iter().map(|s| s.seconds.ln()));
    let (x, residual) = least_squares(a, b)?;
    Ok(CollectiveModel { c0: x[0], c1: x[1], c2: x[2], residual })
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PerfError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| PerfError::Parse(format!("{}: {e}", path.display())))?;
    rdr.deserialize().collect::<Result<_, _>>().map_err(|e| PerfError::Parse(format!("{}: {e}", path.display())))
}

/// `bytes,seconds` with a header row.
pub fn read_pingpong_samples(path: &Path) -> Result<Vec<PingPongSample>, PerfError> {
    read_csv(path)
}

/// `elements,ranks,seconds` with a header row.
pub fn read_allreduce_samples(path: &Path) -> Result<Vec<AllreduceSample>, PerfError> {
    read_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_link() {
        let m =
            fit_link(&[PingPongSample { bytes: 1024, seconds: 10e-6 }, PingPongSample { bytes: 2048, seconds: 15e-6 }])
                .unwrap();
        assert!((m.alpha - 5e-6).abs() < 1e-15);
        assert!((m.beta - 5e-6 / 1024.0).abs() < 1e-18);
        assert!((m.beta - 4.88e-9).abs() < 1e-11);
        let one = fit_link(&[PingPongSample { bytes: 8, seconds: 1.0 }]);
        assert!(matches!(one, Err(PerfError::InsufficientData { got: 1, .. })));
        let same = fit_link(&[PingPongSample { bytes: 8, seconds: 1.0 }, PingPongSample { bytes: 8, seconds: 2.0 }]);
        assert!(matches!(same, Err(PerfError::InsufficientData { .. })));
    }

    #[test]
    fn recovers_power_law() {
        let mut pts = Vec::new();
        for m in [1u64 << 10, 1 << 14, 1 << 18, 1 << 22] {
            for p in [2usize, 4, 8, 16, 64] {
                pts.push(AllreduceSample {
                    elements: m,
                    ranks: p,
                    seconds: 2.0 * (m as f64).powf(0.9) * (p as f64).powf(0.3),
                });
            }
        }
        let c = fit_allreduce(&pts).unwrap();
        assert!((c.c0 - 2f64.ln()).abs() < 1e-6);
        assert!((c.c1 - 0.9).abs() < 1e-6);
        assert!((c.c2 - 0.3).abs() < 1e-6);
        assert_eq!(c.time(100, 1), 0.0);
        let flat: Vec<_> = pts.iter().filter(|s| s.ranks == 2).copied().collect();
        assert!(matches!(fit_allreduce(&flat), Err(PerfError::DegenerateFit(_))));
    }

    proptest! {
        #[test]
        fn refit_is_idempotent(alpha in 1e-7f64..1e-4, beta in 1e-11f64..1e-8,
                               c0 in -12f64..-4.0, c1 in 0.2f64..1.2, c2 in 0.0f64..1.0) {
            let link = LinkModel::new(alpha, beta);
            let pts: Vec<_> = [64u64, 4096, 1 << 20].iter().map(|&b| PingPongSample { bytes: b, seconds: link.time(b) }).collect();
            let back = fit_link(&pts).unwrap();
            prop_assert!((back.alpha - alpha).abs() <= 1e-9 * alpha.max(1e-9));
            prop_assert!((back.beta - beta).abs() <= 1e-9 * beta);
            let coll = CollectiveModel { c0, c1, c2, residual: 0.0 };
            let pts: Vec<_> = [(1u64 << 8, 2usize), (1 << 12, 8), (1 << 16, 4), (1 << 20, 32)]
                .iter()
                .map(|&(m, p)| AllreduceSample { elements: m, ranks: p, seconds: coll.time(m, p) })
                .collect();
            let back = fit_allreduce(&pts).unwrap();
            prop_assert!((back.c0 - c0).abs() < 1e-9 && (back.c1 - c1).abs() < 1e-9 && (back.c2 - c2).abs() < 1e-9);
        }
    }
}
