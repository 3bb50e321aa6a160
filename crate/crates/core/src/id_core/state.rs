use std::collections::{BTreeSet, HashMap, VecDeque};

use super::{Label, TrajectoryWindow};
use crate::error::{Error, Result};
use crate::real::Real;

/// Internal label pool plus the mapping to globally unique output track ids.
///
/// Labels are issued `1, 2, …, K` first; after that, released labels are reused
/// oldest-first. Each reuse bumps the label's generation and issues a fresh
/// external id, so output ids never collide even though labels do.
#[derive(Debug, Clone)]
pub struct TrackerState {
    capacity: usize,
    miss_tolerance: i64,
    active: BTreeSet<Label>,
    free: VecDeque<Label>,
    next_fresh: Label,
    generation: Vec<u32>,
    last_seen: Vec<i64>,
    external: HashMap<(Label, u32), u64>,
    next_external: u64,
}

impl TrackerState {
    pub fn new(capacity: usize, miss_tolerance: usize) -> Self {
        Self {
            capacity,
            miss_tolerance: miss_tolerance as i64,
            active: BTreeSet::new(),
            free: VecDeque::new(),
            next_fresh: 1,
            generation: vec![0; capacity + 1],
            last_seen: vec![i64::MIN; capacity + 1],
            external: HashMap::new(),
            next_external: 1,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn miss_tolerance(&self) -> usize {
        self.miss_tolerance as usize
    }

    pub fn active(&self) -> &BTreeSet<Label> {
        &self.active
    }

    pub fn is_active(&self, label: Label) -> bool {
        self.active.contains(&label)
    }

    pub fn free_pool(&self) -> impl Iterator<Item = Label> + '_ {
        self.free.iter().copied()
    }

    pub fn generation(&self, label: Label) -> u32 {
        self.generation[label as usize]
    }

    pub fn last_seen(&self, label: Label) -> Option<i64> {
        let v = self.last_seen[label as usize];
        (v != i64::MIN).then_some(v)
    }

    /// Output id for the label's current generation.
    pub fn external_id(&self, label: Label) -> Option<u64> {
        self.external.get(&(label, self.generation(label))).copied()
    }

    pub fn issued_external_ids(&self) -> u64 {
        self.next_external - 1
    }

    /// Claim a label for a new trajectory. Returns `(label, external id)`.
    pub fn acquire_label(&mut self) -> Result<(Label, u64)> {
        if self.active.len() >= self.capacity {
            return Err(Error::Capacity {
                capacity: self.capacity,
            });
        }
        let label = if (self.next_fresh as usize) <= self.capacity {
            self.next_fresh += 1;
            self.next_fresh - 1
        } else {
            self.free
                .pop_front()
                .expect("fewer than K active labels implies a free one")
        };
        self.generation[label as usize] += 1;
        let ext = self.next_external;
        self.next_external += 1;
        self.external.insert((label, self.generation[label as usize]), ext);
        self.active.insert(label);
        self.last_seen[label as usize] = i64::MIN;
        Ok((label, ext))
    }

    pub fn mark_seen(&mut self, label: Label, t: i64) -> Result<()> {
        if !self.active.contains(&label) {
            return Err(Error::State(format!("label {label} is not active")));
        }
        self.last_seen[label as usize] = t;
        Ok(())
    }

    pub fn release(&mut self, label: Label) {
        if self.active.remove(&label) {
            self.free.push_back(label);
        }
    }

    /// Release every active label unseen for more than `miss_tolerance` frames.
    pub fn expire_stale<T: Real>(&mut self, window: &mut TrajectoryWindow<T>, t: i64) -> Vec<Label> {
        let stale: Vec<Label> = self
            .active
            .iter()
            .copied()
            .filter(|&l| {
                let seen = self.last_seen[l as usize];
                seen == i64::MIN || t - seen > self.miss_tolerance
            })
            .collect();
        for &l in &stale {
            self.release(l);
            window.close(l);
        }
        stale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sequential_then_recycled() {
        let mut s = TrackerState::new(2, 30);
        assert_eq!(s.acquire_label().unwrap(), (1, 1));
        assert_eq!(s.acquire_label().unwrap(), (2, 2));
        assert!(matches!(s.acquire_label(), Err(Error::Capacity { capacity: 2 })));
        s.mark_seen(1, 0).unwrap();
        s.mark_seen(2, 0).unwrap();
        let mut w = TrajectoryWindow::<f64>::new(5);
        w.open(1);
        w.open(2);
        assert_eq!(s.expire_stale(&mut w, 31), vec![1, 2]);
        assert!(!w.contains(1));
        let (label, ext) = s.acquire_label().unwrap();
        assert_eq!(label, 1);
        assert_eq!(s.generation(1), 2);
        assert_eq!(ext, 3);
        assert_eq!(s.external_id(1), Some(3));
    }

    #[test]
    fn tolerance_boundary() {
        let mut s = TrackerState::new(4, 30);
        let mut w = TrajectoryWindow::<f64>::new(5);
        let (a, _) = s.acquire_label().unwrap();
        let (b, _) = s.acquire_label().unwrap();
        s.mark_seen(a, 0).unwrap();
        s.mark_seen(b, 31).unwrap();
        assert!(s.expire_stale(&mut w, 30).is_empty());
        assert_eq!(s.expire_stale(&mut w, 31), vec![a]);
        assert!(s.is_active(b));
    }

    /// Naive shadow: active labels as a Vec, free pool as a Vec, external ids counted.
    #[test]
    fn fuzz_against_shadow() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let k = 6usize;
        let tol = 3i64;
        let mut s = TrackerState::new(k, tol as usize);
        let mut w = TrajectoryWindow::<f64>::new(4);
        let mut sh_active: Vec<(Label, i64)> = Vec::new();
        let mut sh_free: Vec<Label> = Vec::new();
        let mut sh_next = 1u32;
        let mut issued = std::collections::HashSet::new();
        for t in 0..1000i64 {
            for _ in 0..rng.random_range(0..3) {
                let got = s.acquire_label();
                if sh_active.len() == k {
                    assert!(got.is_err());
                    continue;
                }
                let want = if (sh_next as usize) <= k {
                    sh_next += 1;
                    sh_next - 1
                } else {
                    sh_free.remove(0)
                };
                let (l, ext) = got.unwrap();
                assert_eq!(l, want);
                assert!(issued.insert(ext));
                s.mark_seen(l, t).unwrap();
                sh_active.push((l, t));
            }
            for entry in sh_active.iter_mut() {
                if rng.random_bool(0.5) {
                    s.mark_seen(entry.0, t).unwrap();
                    entry.1 = t;
                }
            }
            let released = s.expire_stale(&mut w, t);
            let mut want: Vec<Label> = sh_active
                .iter()
                .filter(|(_, seen)| t - seen > tol)
                .map(|(l, _)| *l)
                .collect();
            want.sort();
            assert_eq!(released, want);
            sh_active.retain(|(l, _)| !want.contains(l));
            sh_free.extend(want);
            let mut act: Vec<Label> = sh_active.iter().map(|(l, _)| *l).collect();
            act.sort();
            assert_eq!(s.active().iter().copied().collect::<Vec<_>>(), act);
            assert_eq!(s.free_pool().collect::<Vec<_>>(), sh_free);
            assert!(s.active().iter().all(|&l| l >= 1 && l as usize <= k));
        }
    }
}
