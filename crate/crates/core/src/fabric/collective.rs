use super::{tags, Comm, FabricError, TrafficClass};
use crate::real::{decode, encode, Real};

const OK: u8 = 0;
const FAILED: u8 = 1;

fn member_index(rank: usize, group: &[usize]) -> Result<usize, FabricError> {
    group.iter().position(|&r| r == rank).ok_or_else(|| FabricError::NotInGroup { rank, group: group.to_vec() })
}

fn sorted_group(group: &[usize]) -> Vec<usize> {
    let mut g = group.to_vec();
    g.sort_unstable();
    g.dedup();
    g
}

impl Comm<'_> {
    fn send_flagged<T: Real>(&self, dst: usize, tag: u64, ok: bool, values: &[T]) -> Result<(), FabricError> {
        let mut payload = vec![if ok { OK } else { FAILED }];
        if ok {
            payload.extend(encode(values));
        }
        self.send_class(dst, tag, payload, TrafficClass::Allreduce)
    }

    fn recv_flagged<T: Real>(&self, src: usize, tag: u64) -> Result<Option<Vec<T>>, FabricError> {
        let bytes = self.recv_class(src, tag)?;
        match bytes.first() {
            Some(&OK) => Ok(Some(decode(&bytes[1..]))),
            Some(&FAILED) => Ok(None),
            _ => Err(FabricError::Malformed { src, reason: "empty allreduce message".into() }),
        }
    }

    /// Sum `data` element-wise over `group`; every member ends with the same
    /// result.
    ///
    /// Reduction runs up a binomial tree over the members sorted by rank id:
    /// at distance `s = 1, 2, 4, ...` member `i` (with `i % 2s == 0`) adds the
    /// partial of member `i + s` to its own as `own + other`. The root's sum is
    /// then broadcast back down the same tree. The order of additions is
    /// therefore fixed by the group alone.
    pub fn allreduce_sum<T: Real>(&self, data: &mut [T], group: &[usize]) -> Result<(), FabricError> {
        let group = sorted_group(group);
        let me = member_index(self.rank, &group)?;
        let m = group.len();
        {
            let mut st = self.fabric.lock();
            st.counters.record_allreduce(self.rank, data.len());
        }
        if m == 1 {
            return Ok(());
        }

        let mut ok = true;
        let mut step = 1;
        // Reduce towards member 0.
        while step < m {
            if me % (2 * step) == 0 {
                let child = me + step;
                if child < m {
                    match self.recv_flagged::<T>(group[child], tags::ALLREDUCE_UP)? {
                        Some(other) if other.len() == data.len() && ok => {
                            for (a, b) in data.iter_mut().zip(other) {
                                *a += b;
                            }
                        }
                        _ => ok = false,
                    }
                }
            } else {
                self.send_flagged(group[me - step], tags::ALLREDUCE_UP, ok, data)?;
                break;
            }
            step *= 2;
        }

        // Broadcast back down: receive from the parent (unless root), then
        // forward to children at decreasing distances.
        let mut span = step;
        if me != 0 {
            let parent = me - step;
            match self.recv_flagged::<T>(group[parent], tags::ALLREDUCE_DOWN)? {
                Some(sum) if sum.len() == data.len() => data.copy_from_slice(&sum),
                _ => ok = false,
            }
        } else {
            span = m.next_power_of_two();
        }
        let mut s = span / 2;
        while s >= 1 {
            if me + s < m {
                self.send_flagged(group[me + s], tags::ALLREDUCE_DOWN, ok, data)?;
            }
            s /= 2;
        }
        if ok {
            Ok(())
        } else {
            Err(FabricError::LengthMismatch { group })
        }
    }

    /// Sum of one scalar over `group`.
    pub fn allreduce_scalar<T: Real>(&self, value: T, group: &[usize]) -> Result<T, FabricError> {
        let mut v = [value];
        self.allreduce_sum(&mut v, group)?;
        Ok(v[0])
    }

    /// Block until every member of `group` has reached the barrier.
    pub fn barrier(&self, group: &[usize]) -> Result<(), FabricError> {
        let group = sorted_group(group);
        let me = member_index(self.rank, &group)?;
        let root = group[0];
        if me == 0 {
            for &r in &group[1..] {
                self.recv_class(r, tags::BARRIER)?;
            }
            for &r in &group[1..] {
                self.send_class(r, tags::BARRIER, Vec::new(), TrafficClass::PointToPoint)?;
            }
        } else {
            self.send_class(root, tags::BARRIER, Vec::new(), TrafficClass::PointToPoint)?;
            self.recv_class(root, tags::BARRIER)?;
        }
        Ok(())
    }
}

/// Serial model of [`Comm::allreduce_sum`]'s addition order, for tests.
pub fn tree_sum<T: Real>(parts: &[Vec<T>]) -> Vec<T> {
    let m = parts.len();
    let mut acc: Vec<Vec<T>> = parts.to_vec();
    let mut step = 1;
    while step < m {
        let mut i = 0;
        while i + step < m {
            let other = acc[i + step].clone();
            for (a, b) in acc[i].iter_mut().zip(other) {
                *a += b;
            }
            i += 2 * step;
        }
        step *= 2;
    }
    acc.swap_remove(0)
}
