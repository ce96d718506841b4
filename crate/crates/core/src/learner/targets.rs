use super::config::SyncMode;
use crate::nn::ParamSet;
use crate::{Error, Result};

/// `m` frozen copies of the online parameters.
///
/// Every copy is initialized from the online parameters at construction.
#[derive(Debug, Clone)]
pub struct TargetBank {
    pub params: Vec<ParamSet>,
    pub last_sync: Vec<Option<u64>>,
    update_interval: u64,
    mode: SyncMode,
}

impl TargetBank {
    pub fn new(m: usize, online: &ParamSet, update_interval: u64, mode: SyncMode) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("a target bank needs at least one target".into()));
        }
        if update_interval == 0 {
            return Err(Error::Config("update_interval must be positive".into()));
        }
        Ok(Self {
            params: (0..m).map(|_| online.detached_clone()).collect(),
            last_sync: vec![None; m],
            update_interval,
            mode,
        })
    }

    pub fn m(&self) -> usize {
        self.params.len()
    }

    pub fn update_interval(&self) -> u64 {
        self.update_interval
    }

    /// First step at which target `i` syncs.
    pub fn offset(&self, i: usize) -> u64 {
        match self.mode {
            SyncMode::Staggered => i as u64 * self.update_interval / self.m() as u64,
            SyncMode::Simultaneous => 0,
        }
    }

    pub fn due(&self, i: usize, t: u64) -> bool {
        let off = self.offset(i);
        t >= off && (t - off) % self.update_interval == 0
    }

    /// Hard-copies every target that is due at step `t`; returns their indices.
    pub fn sync(&mut self, t: u64, online: &ParamSet) -> Result<Vec<usize>> {
        let mut synced = Vec::new();
        for i in 0..self.m() {
            if self.due(i, t) && self.last_sync[i] != Some(t) {
                self.params[i].copy_values_from(online)?;
                self.last_sync[i] = Some(t);
                synced.push(i);
            }
        }
        Ok(synced)
    }

    pub fn sync_all(&mut self, t: u64, online: &ParamSet) -> Result<()> {
        for i in 0..self.m() {
            self.params[i].copy_values_from(online)?;
            self.last_sync[i] = Some(t);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    fn online(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("w", ArrayD::from_elem(vec![2], v)).unwrap();
        ps
    }

    fn sync_steps(bank: &mut TargetBank, until: u64) -> Vec<Vec<u64>> {
        let ps = online(1.0);
        let mut out = vec![Vec::new(); bank.m()];
        for t in 0..=until {
            for i in bank.sync(t, &ps).unwrap() {
                out[i].push(t);
            }
        }
        out
    }

    #[test]
    fn staggered_offsets() {
        let mut bank = TargetBank::new(2, &online(0.0), 200, SyncMode::Staggered).unwrap();
        let s = sync_steps(&mut bank, 600);
        assert_eq!(s[0], vec![0, 200, 400, 600]);
        assert_eq!(s[1], vec![100, 300, 500]);
    }

    #[test]
    fn simultaneous_and_single() {
        let mut bank = TargetBank::new(3, &online(0.0), 50, SyncMode::Simultaneous).unwrap();
        let s = sync_steps(&mut bank, 100);
        for i in 0..3 {
            assert_eq!(s[i], vec![0, 50, 100]);
        }
        let mut one = TargetBank::new(1, &online(0.0), 50, SyncMode::Staggered).unwrap();
        assert_eq!(sync_steps(&mut one, 100)[0], vec![0, 50, 100]);
    }

    #[test]
    fn sync_copies_values() {
        let mut bank = TargetBank::new(2, &online(0.0), 10, SyncMode::Staggered).unwrap();
        bank.sync(5, &online(3.0)).unwrap();
        assert_eq!(bank.params[1].by_name("w").unwrap().value[[0]], 3.0);
        assert_eq!(bank.params[0].by_name("w").unwrap().value[[0]], 0.0);
    }

    #[test]
    fn zero_targets_rejected() {
        assert!(matches!(
            TargetBank::new(0, &online(0.0), 10, SyncMode::Staggered),
            Err(Error::Config(_))
        ));
    }
}
