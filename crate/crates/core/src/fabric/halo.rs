use super::{tags, Comm, FabricError, TrafficClass};
use crate::real::{decode, encode, Real};
use crate::tensor::DistTensor;

/// Fill the halo slabs of `x` from its neighbors using the radii of its
/// layout. Every rank of the layout must call this collectively.
///
/// Outer domain faces get no slab and read as zero padding. The local
/// interior is not modified.
pub fn halo_exchange<T: Real>(comm: &Comm, x: &mut DistTensor<T>) -> crate::Result<()> {
    if x.rank() != comm.rank() {
        return Err(FabricError::BadRank { rank: x.rank(), size: comm.size() }.into());
    }
    let faces = x.meta().halo_faces(x.rank());
    if faces.is_empty() {
        x.clear_halos();
        return Ok(());
    }
    let buffers = x.pack_faces(&faces)?;
    for (face, buf) in faces.iter().zip(&buffers) {
        let tag = tags::HALO + face.direction_index() as u64;
        comm.send_class(face.neighbor, tag, encode(buf), TrafficClass::Halo)?;
    }
    let mut received = Vec::with_capacity(faces.len());
    for face in &faces {
        // The neighbor tagged the message with its own direction towards us.
        let tag = tags::HALO + (26 - face.direction_index()) as u64;
        let bytes = comm.recv_class(face.neighbor, tag)?;
        received.push(decode::<T>(&bytes));
    }
    x.unpack_faces(&faces, received)?;
    Ok(())
}

impl Comm<'_> {
    pub fn halo_exchange<T: Real>(&self, x: &mut DistTensor<T>) -> crate::Result<()> {
        halo_exchange(self, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::{ExecMode, Fabric};
    use crate::tensor::{make_partition, ProcessGrid, Shape5D, Tensor5};

    #[test]
    fn send_recv_roundtrip_and_fifo() {
        let fabric = Fabric::new(2, ExecMode::Sequential);
        let out = fabric
            .run_all(|comm| {
                if comm.rank() == 0 {
                    comm.send(1, 7, vec![1u8; 64])?;
                    comm.send(1, 7, vec![2u8; 3])?;
                    Ok(vec![])
                } else {
                    let a = comm.recv(0, 7)?;
                    let b = comm.recv(0, 7)?;
                    Ok(vec![a, b])
                }
            })
            .unwrap();
        assert_eq!(out[1], vec![vec![1u8; 64], vec![2u8; 3]]);
        let c = fabric.counters();
        assert_eq!(c.ranks[0].bytes_sent, 67);
        assert_eq!(c.ranks[1].bytes_received, 67);
    }

    #[test]
    fn deadlock_names_every_rank() {
        for mode in [ExecMode::Sequential, ExecMode::Parallel] {
            let fabric = Fabric::new(3, mode);
            let results = fabric.run(|comm| {
                let src = (comm.rank() + 1) % 3;
                comm.recv(src, 1)?;
                Ok(())
            });
            for r in results {
                match r {
                    Err(crate::Error::Fabric(FabricError::Deadlock { blocked })) => {
                        let ranks: Vec<_> = blocked.iter().map(|b| b.rank).collect();
                        assert_eq!(ranks, vec![0, 1, 2], "{mode:?}");
                    }
                    other => panic!("{mode:?}: expected deadlock, got {other:?}"),
                }
            }
        }
    }

    #[test]
    fn failed_rank_surfaces_root_cause() {
        let fabric = Fabric::new(2, ExecMode::Sequential);
        let err = fabric
            .run_all(|comm| {
                if comm.rank() == 0 {
                    return Err(crate::Error::Config("boom".into()));
                }
                comm.recv(0, 3)?;
                Ok(())
            })
            .unwrap_err();
        assert!(matches!(err, crate::Error::Config(_)));
    }

    #[test]
    fn allreduce_two_ranks() {
        let fabric = Fabric::new(2, ExecMode::Sequential);
        let out = fabric
            .run_all(|comm| {
                let mut v = if comm.rank() == 0 { vec![1.0f64, 2.0] } else { vec![3.0, 4.0] };
                comm.allreduce_sum(&mut v, &[0, 1])?;
                Ok(v)
            })
            .unwrap();
        assert_eq!(out, vec![vec![4.0, 6.0], vec![4.0, 6.0]]);
    }

    #[test]
    fn allreduce_length_mismatch() {
        let fabric = Fabric::new(3, ExecMode::Sequential);
        let results = fabric.run(|comm| {
            let mut v = vec![1.0f32; if comm.rank() == 2 { 3 } else { 2 }];
            comm.allreduce_sum(&mut v, &[0, 1, 2])?;
            Ok(())
        });
        for r in results {
            assert!(matches!(r, Err(crate::Error::Fabric(FabricError::LengthMismatch { .. }))));
        }
    }

    #[test]
    fn halo_exchange_constant_and_counters() {
        let shape = Shape5D::new(1, 1, 8, 4, 4).unwrap();
        let meta = make_partition(shape, ProcessGrid::new(1, 2, 1, 1).unwrap(), [1, 0, 0]).unwrap();
        let global = Tensor5::from_fn(shape, |_, _, _, _, _| 3.5f32);
        let fabric = Fabric::new(2, ExecMode::Sequential);
        let halos = fabric
            .run_all(|comm| {
                let mut x = DistTensor::scatter(&global, &meta, comm.rank())?;
                comm.halo_exchange(&mut x)?;
                Ok(x.halos().to_vec())
            })
            .unwrap();
        for h in &halos {
            assert_eq!(h.len(), 1);
            assert!(h[0].values.iter().all(|&v| v == 3.5));
        }
        // One face each way, 16 voxels per slab, 4 bytes each.
        assert_eq!(fabric.counters().halo_bytes(), 2 * 4 * 16);
    }

    #[test]
    fn zero_radius_exchange_sends_nothing() {
        let shape = Shape5D::new(1, 1, 8, 4, 4).unwrap();
        let meta = make_partition(shape, ProcessGrid::new(1, 2, 1, 1).unwrap(), [0; 3]).unwrap();
        let fabric = Fabric::new(2, ExecMode::Sequential);
        fabric
            .run_all(|comm| {
                let mut x = DistTensor::<f64>::zeros(meta.clone(), comm.rank());
                comm.halo_exchange(&mut x)
            })
            .unwrap();
        assert_eq!(fabric.counters(), crate::fabric::TrafficCounters::new(2));
    }
}
