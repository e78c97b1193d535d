use std::collections::{BTreeMap, BTreeSet};

use crate::augment::AlignmentPair;

use super::TrainError;

/// Tracks classifier misses over a window of epochs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RefinementState {
    window_size: usize,
    window: Vec<usize>,
    miss_record: BTreeMap<String, BTreeSet<usize>>,
    filtered_ids: BTreeSet<String>,
}

impl RefinementState {
    /// A `window_size` of zero disables filtering.
    pub fn new(window_size: usize) -> Self {
        RefinementState {
            window_size,
            ..Default::default()
        }
    }

    pub fn window(&self) -> &[usize] {
        &self.window
    }

    pub fn filtered_ids(&self) -> &BTreeSet<String> {
        &self.filtered_ids
    }

    pub fn misses(&self, pair_id: &str) -> usize {
        self.miss_record.get(pair_id).map_or(0, BTreeSet::len)
    }

    /// Records one epoch. `misclassified` lists the pairs whose every
    /// prediction in that epoch was wrong; pairs not listed count as correct.
    pub fn record<'a>(&mut self, epoch: usize, misclassified: impl IntoIterator<Item = &'a str>) {
        if self.window_size == 0 {
            return;
        }
        self.window.push(epoch);
        for id in misclassified {
            self.miss_record.entry(id.to_string()).or_default().insert(epoch);
        }
    }

    pub fn window_complete(&self) -> bool {
        self.window_size > 0 && self.window.len() >= self.window_size
    }

    /// Deactivates pairs missed in every epoch of a complete window and
    /// starts a new window. Returns the newly filtered pair ids.
    pub fn refine(&mut self, pairs: &mut [AlignmentPair]) -> Result<Vec<String>, TrainError> {
        if !self.window_complete() {
            return Ok(Vec::new());
        }
        let needed = self.window.len();
        let mut newly = Vec::new();
        for p in pairs.iter_mut().filter(|p| p.active) {
            if self.misses(&p.pair_id) == needed {
                p.active = false;
                self.filtered_ids.insert(p.pair_id.clone());
                newly.push(p.pair_id.clone());
            }
        }
        self.window.clear();
        self.miss_record.clear();
        if !pairs.iter().any(|p| p.active) {
            return Err(TrainError::AllFiltered);
        }
        Ok(newly)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::PairClass;

    fn pairs() -> Vec<AlignmentPair> {
        vec![
            AlignmentPair::new("a", PairClass::S, "C", "methane"),
            AlignmentPair::new("b", PairClass::S, "CC", "ethane"),
        ]
    }

    #[test]
    fn all_of_window_semantics() {
        let mut ps = pairs();
        let (a, b) = (ps[0].pair_id.clone(), ps[1].pair_id.clone());
        let mut st = RefinementState::new(10);
        for e in 0..10 {
            let mut missed = vec![a.as_str()];
            if e != 4 {
                missed.push(b.as_str());
            }
            st.record(e, missed);
            if e < 9 {
                assert!(st.refine(&mut ps).unwrap().is_empty());
            }
        }
        assert_eq!(st.refine(&mut ps).unwrap(), [a.clone()]);
        assert!(!ps[0].active && ps[1].active);
        assert!(st.window().is_empty());
        assert_eq!(st.misses(&b), 0);
    }

    #[test]
    fn filtering_everything_is_an_error() {
        let mut ps = pairs();
        let ids: Vec<String> = ps.iter().map(|p| p.pair_id.clone()).collect();
        let mut st = RefinementState::new(1);
        st.record(0, ids.iter().map(String::as_str));
        assert!(matches!(st.refine(&mut ps), Err(TrainError::AllFiltered)));
    }

    #[test]
    fn disabled_window_never_filters() {
        let mut ps = pairs();
        let mut st = RefinementState::new(0);
        st.record(0, [ps[0].pair_id.clone().as_str()]);
        assert!(!st.window_complete());
        assert!(st.refine(&mut ps).unwrap().is_empty());
    }
}
