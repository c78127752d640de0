use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PerfError;
use crate::layers::{flop_count, LayerOp, Phase};
use crate::tensor::Shape5D;

/// Result of a kernel-time lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup {
    pub seconds: f64,
    /// Scaled beyond the range of comparable measurements.
    pub extrapolated: bool,
}

/// Source of per-layer kernel times.
///
/// `domain` is the local block a pass computes: the output for the forward
/// and backward-filter passes, the input for backward-data. `input` is the
/// layer's global input shape.
pub trait CompModel {
    fn comp(
        &self,
        name: &str,
        op: &LayerOp,
        input: Shape5D,
        phase: Phase,
        domain: Shape5D,
    ) -> Result<Lookup, PerfError>;
}

/// The block a pass of `op` computes for an input of shape `input`.
pub fn phase_domain(op: &LayerOp, input: Shape5D, phase: Phase) -> Shape5D {
    match phase {
        Phase::BackwardData => input,
        _ => op.output_shape(&[input]).unwrap_or(input),
    }
}

/// What a [`ProportionalModel`] charges for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkBasis {
    /// Flops of the pass.
    Flops,
    /// Elements of the computed block (`n * c * voxels`).
    Elements,
}

/// Kernel time proportional to the work in the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProportionalModel {
    pub basis: WorkBasis,
    pub seconds_per_unit: f64,
}

impl CompModel for ProportionalModel {
    fn comp(&self, _: &str, op: &LayerOp, input: Shape5D, phase: Phase, domain: Shape5D) -> Result<Lookup, PerfError> {
        let units = match self.basis {
            WorkBasis::Elements => domain.len() as f64,
            WorkBasis::Flops => {
                let full = phase_domain(op, input, phase);
                let per_voxel = flop_count(op, &[input], phase) / (full.n * full.voxels()) as f64;
                per_voxel * (domain.n * domain.voxels()) as f64
            }
        };
        Ok(Lookup { seconds: units * self.seconds_per_unit, extrapolated: false })
    }
}

/// One measured kernel time. `kind` is a layer name or a layer kind
/// (`conv`, `deconv`, `pool`, `bn`); names take precedence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub kind: String,
    pub phase: String,
    pub n: usize,
    pub c: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub seconds: f64,
}

impl TableRow {
    fn shape(&self) -> Shape5D {
        Shape5D { n: self.n, c: self.c, d: self.d, h: self.h, w: self.w }
    }

    fn measure(&self) -> usize {
        self.n * self.d * self.h * self.w
    }
}

/// Measured kernel times, looked up exactly or interpolated linearly in
/// voxel count between the nearest entries with the same kind, phase and
/// channel count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KernelTimeTable {
    pub rows: Vec<TableRow>,
}

impl KernelTimeTable {
    pub fn new(rows: Vec<TableRow>) -> Result<Self, PerfError> {
        for (i, r) in rows.iter().enumerate() {
            if !(r.seconds > 0.0) || Phase::parse(&r.phase).is_none() {
                return Err(PerfError::Parse(format!("row {}: need a known phase and positive time", i + 1)));
            }
            if rows[..i].iter().any(|o| o.kind == r.kind && o.phase == r.phase && o.shape() == r.shape()) {
                return Err(PerfError::Parse(format!("row {}: duplicate key", i + 1)));
            }
        }
        Ok(KernelTimeTable { rows })
    }

    /// `kind,phase,n,c,d,h,w,seconds` with a header row.
    pub fn load(path: &Path) -> Result<Self, PerfError> {
        let err = |e: csv::Error| PerfError::Parse(format!("{}: {e}", path.display()));
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(err)?;
        let header = rdr.headers().map_err(err)?.clone();
        if header.iter().collect::<Vec<_>>() != ["kind", "phase", "n", "c", "d", "h", "w", "seconds"] {
            return Err(PerfError::Parse(format!("{}: header must be kind,phase,n,c,d,h,w,seconds", path.display())));
        }
        let rows = rdr.deserialize().collect::<Result<Vec<TableRow>, _>>().map_err(err)?;
        Self::new(rows)
    }

    pub fn save(&self, path: &Path) -> Result<(), PerfError> {
        let err = |e: csv::Error| PerfError::Parse(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        for r in &self.rows {
            w.serialize(r).map_err(err)?;
        }
        w.flush().map_err(|e| PerfError::Parse(e.to_string()))
    }

    fn lookup(&self, keys: &[&str], phase: Phase, domain: Shape5D) -> Result<Lookup, PerfError> {
        let kind = keys
            .iter()
            .find(|k| self.rows.iter().any(|r| r.kind == **k && r.phase == phase.name()))
            .ok_or_else(|| self.missing(keys, phase, domain))?;
        let rows: Vec<_> = self.rows.iter().filter(|r| r.kind == *kind && r.phase == phase.name()).collect();
        if let Some(r) = rows.iter().find(|r| r.shape() == domain) {
            return Ok(Lookup { seconds: r.seconds, extrapolated: false });
        }
        let x = domain.n * domain.voxels();
        let same_c: Vec<_> = rows.into_iter().filter(|r| r.c == domain.c).collect();
        let below = same_c.iter().filter(|r| r.measure() <= x).max_by_key(|r| r.measure());
        let above = same_c.iter().filter(|r| r.measure() >= x).min_by_key(|r| r.measure());
        let xf = x as f64;
        match (below, above) {
            (Some(lo), Some(hi)) if lo.measure() == hi.measure() => {
                Ok(Lookup { seconds: lo.seconds, extrapolated: false })
            }
            (Some(lo), Some(hi)) => {
                let (x0, x1) = (lo.measure() as f64, hi.measure() as f64);
                Ok(Lookup {
                    seconds: lo.seconds + (hi.seconds - lo.seconds) * (xf - x0) / (x1 - x0),
                    extrapolated: false,
                })
            }
            (Some(r), None) | (None, Some(r)) => {
                Ok(Lookup { seconds: r.seconds * xf / r.measure() as f64, extrapolated: true })
            }
            (None, None) => Err(self.missing(keys, phase, domain)),
        }
    }

    fn missing(&self, keys: &[&str], phase: Phase, domain: Shape5D) -> PerfError {
        PerfError::NoComparableEntry { kind: keys.join("/"), phase: phase.name().into(), shape: domain.to_string() }
    }
}

impl CompModel for KernelTimeTable {
    fn comp(&self, name: &str, op: &LayerOp, _: Shape5D, phase: Phase, domain: Shape5D) -> Result<Lookup, PerfError> {
        self.lookup(&[name, op.kind_name()], phase, domain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ConvParams;

    fn row(kind: &str, width: usize, seconds: f64) -> TableRow {
        TableRow { kind: kind.into(), phase: "fwd".into(), n: 1, c: 8, d: width, h: width, w: width, seconds }
    }

    #[test]
    fn exact_interpolated_and_extrapolated() {
        let t = KernelTimeTable::new(vec![row("conv", 8, 1.0), row("conv", 16, 8.0), row("c1", 8, 3.0)]).unwrap();
        let op = LayerOp::Conv(ConvParams::cubic(8, 8, 3, 1));
        let input = Shape5D::cube(1, 8, 16);
        let at = |name: &str, s: Shape5D| t.comp(name, &op, input, Phase::Forward, s).unwrap();
        assert_eq!(at("c2", Shape5D::cube(1, 8, 16)).seconds, 8.0);
        assert_eq!(at("c1", Shape5D::cube(1, 8, 8)).seconds, 3.0);
        // 2304 voxels is halfway between 512 and 4096.
        let mid = at("c2", Shape5D { n: 1, c: 8, d: 16, h: 12, w: 12 });
        assert_eq!(mid.seconds, 4.5);
        assert!(!mid.extrapolated);
        let big = at("c2", Shape5D::cube(1, 8, 32));
        assert_eq!((big.seconds, big.extrapolated), (64.0, true));
        let empty = KernelTimeTable::default();
        assert!(matches!(
            empty.comp("c1", &op, input, Phase::Forward, input),
            Err(PerfError::NoComparableEntry { .. })
        ));
    }

    #[test]
    fn csv_roundtrip_requires_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let t = KernelTimeTable::new(vec![row("conv", 8, 1.5)]).unwrap();
        t.save(&p).unwrap();
        assert_eq!(KernelTimeTable::load(&p).unwrap(), t);
        std::fs::write(&p, "conv,fwd,1,8,8,8,8,1.5\n").unwrap();
        assert!(KernelTimeTable::load(&p).is_err());
    }

    #[test]
    fn proportional_flops() {
        let m = ProportionalModel { basis: WorkBasis::Flops, seconds_per_unit: 1.0 };
        let op = LayerOp::Conv(ConvParams::cubic(2, 4, 3, 2));
        let input = Shape5D::cube(1, 2, 8);
        let full = m.comp("c", &op, input, Phase::Forward, Shape5D::cube(1, 4, 4)).unwrap().seconds;
        assert_eq!(full, flop_count(&op, &[input], Phase::Forward));
        let bd = m.comp("c", &op, input, Phase::BackwardData, Shape5D::cube(1, 2, 8)).unwrap().seconds;
        assert_eq!(bd, full);
    }
}
