//! Shared prioritized experience buffer: one ring of transitions, two
//! independent priority tracks (one per learner).

mod snapshot;
mod sum_tree;

use rand::Rng;
use thiserror::Error;

use crate::env::Transition;
use sum_tree::PriorityTrack;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("buffer not ready: {len} stored, batch of {batch} requested")]
    NotReady { len: usize, batch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Track {
    QMap = 0,
    Dqn = 1,
}

#[derive(Debug, Clone)]
pub struct ReplayConfig {
    pub capacity: usize,
    /// Prioritization exponent.
    pub alpha: f64,
    /// Additive priority floor keeping every stored entry sampleable.
    pub floor: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self { capacity: 50_000, alpha: 0.6, floor: 1e-6 }
    }
}

/// A sampled batch; slots and generations identify entries for the follow-up
/// priority update (a generation mismatch means the slot was evicted).
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub transitions: Vec<Transition>,
    pub slots: Vec<usize>,
    pub gens: Vec<u64>,
    /// Importance weights in (0, 1], normalized so the maximum possible
    /// weight over the buffer is 1.
    pub weights: Vec<f64>,
}

#[derive(Debug)]
pub struct PrioritizedBuffer {
    pub cfg: ReplayConfig,
    entries: Vec<Transition>,
    gens: Vec<u64>,
    insert_count: u64,
    tracks: [PriorityTrack; 2],
    pub stale_updates: u64,
}

impl PrioritizedBuffer {
    pub fn new(cfg: ReplayConfig) -> Self {
        let tracks = [
            PriorityTrack::new(cfg.capacity, cfg.alpha),
            PriorityTrack::new(cfg.capacity, cfg.alpha),
        ];
        Self {
            entries: Vec::new(),
            gens: Vec::new(),
            insert_count: 0,
            tracks,
            stale_updates: 0,
            cfg,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, slot: usize) -> &Transition {
        &self.entries[slot]
    }

    /// Stores a transition, evicting the oldest entry when full. The new
    /// entry receives the current maximum priority on both tracks.
    pub fn insert(&mut self, transition: Transition) -> usize {
        let slot = (self.insert_count % self.cfg.capacity as u64) as usize;
        let max = [self.tracks[0].max_raw(), self.tracks[1].max_raw()];
        if slot == self.entries.len() {
            self.entries.push(transition);
            self.gens.push(self.insert_count);
        } else {
            self.entries[slot] = transition;
            self.gens[slot] = self.insert_count;
        }
        self.tracks[0].set_raw(slot, max[0]);
        self.tracks[1].set_raw(slot, max[1]);
        self.insert_count += 1;
        slot
    }

    /// Samples `batch_size` entries on one track, probabilities proportional
    /// to priority^alpha, with importance weights (N P(i))^-beta normalized
    /// by the buffer-wide maximum weight.
    pub fn sample<R: Rng>(
        &self,
        track: Track,
        batch_size: usize,
        beta: f64,
        rng: &mut R,
    ) -> Result<SampleBatch, ReplayError> {
        if self.len() < batch_size {
            return Err(ReplayError::NotReady { len: self.len(), batch: batch_size });
        }
        let t = &self.tracks[track as usize];
        let total = t.total();
        let min_powered = t.min_powered();
        let mut batch = SampleBatch {
            transitions: Vec::with_capacity(batch_size),
            slots: Vec::with_capacity(batch_size),
            gens: Vec::with_capacity(batch_size),
            weights: Vec::with_capacity(batch_size),
        };
        for _ in 0..batch_size {
            let slot = t.find(rng.gen::<f64>() * total);
            // (N P(i))^-beta / (N P_min)^-beta = (P_min / P(i))^beta
            let weight = (min_powered / t.powered(slot)).powf(beta);
            batch.transitions.push(self.entries[slot].clone());
            batch.slots.push(slot);
            batch.gens.push(self.gens[slot]);
            batch.weights.push(weight);
        }
        Ok(batch)
    }

    /// Sets priorities to |td| + floor on one track; entries evicted since
    /// sampling are skipped and counted.
    pub fn update_priorities(&mut self, track: Track, slots: &[usize], gens: &[u64], td_errors: &[f64]) {
        assert_eq!(slots.len(), td_errors.len());
        assert_eq!(slots.len(), gens.len());
        for ((&slot, &gen), &td) in slots.iter().zip(gens).zip(td_errors) {
            if self.gens.get(slot) != Some(&gen) {
                self.stale_updates += 1;
                continue;
            }
            self.tracks[track as usize].set_raw(slot, td.abs() + self.cfg.floor);
        }
    }

    /// Current sampling probability of a slot on a track (diagnostics/tests).
    pub fn probability(&self, track: Track, slot: usize) -> f64 {
        self.tracks[track as usize].probability(slot)
    }

    pub fn insert_count(&self) -> u64 {
        self.insert_count
    }

    pub(crate) fn raw_parts(&self) -> (&[Transition], &[u64], &[PriorityTrack; 2]) {
        (&self.entries, &self.gens, &self.tracks)
    }

    pub(crate) fn restore_entry(&mut self, transition: Transition, gen: u64, qmap_raw: f64, dqn_raw: f64) {
        let slot = self.entries.len();
        self.entries.push(transition);
        self.gens.push(gen);
        self.tracks[0].set_raw(slot, qmap_raw);
        self.tracks[1].set_raw(slot, dqn_raw);
    }

    pub(crate) fn set_insert_count(&mut self, count: u64) {
        self.insert_count = count;
    }

    /// Exact raw priority of a slot on a track.
    pub fn track_raw(&self, track: Track, slot: usize) -> f64 {
        self.tracks[track as usize].raw(slot)
    }
}

pub use snapshot::{load_snapshot, save_snapshot, SnapshotError};

#[cfg(test)]
pub(crate) mod test_support {
    use std::collections::BTreeSet;
    use std::sync::Arc;

    use crate::env::{Action, Frame, Observation, StateKey, Transition, WorldState};

    /// Minimal distinct transition for buffer tests.
    pub fn dummy_transition(tag: usize) -> Transition {
        let frame = Arc::new(Frame { h: 1, w: 2, data: vec![tag as f32, -1.0] });
        let obs = Observation { frames: vec![frame; 3] };
        let key = StateKey { col: tag as u16, row: 0, vy: 0, scroll: 0 };
        let _ = WorldState {
            col: 0,
            row: 0,
            vertical_velocity: 0,
            scroll_col: 0,
            collected: BTreeSet::new(),
            step_count: 0,
            terminal: false,
        };
        Transition {
            obs_before: obs.clone(),
            action: Action::from_code(tag % 6).unwrap(),
            obs_after: obs,
            next_cell: (0, 0),
            reward: tag as f64,
            terminal: tag % 7 == 0,
            world_pos_after: (tag, 0),
            key_before: key,
            key_after: key,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::dummy_transition;
    use super::*;
    use crate::util::seeded_rng;

    fn buffer(capacity: usize) -> PrioritizedBuffer {
        PrioritizedBuffer::new(ReplayConfig { capacity, ..ReplayConfig::default() })
    }

    #[test]
    fn insert_grows_then_evicts_fifo() {
        let mut b = buffer(2);
        b.insert(dummy_transition(1));
        assert_eq!(b.len(), 1);
        b.insert(dummy_transition(2));
        b.insert(dummy_transition(3));
        assert_eq!(b.len(), 2);
        let rewards: Vec<f64> = (0..2).map(|i| b.get(i).reward).collect();
        assert_eq!(rewards, vec![3.0, 2.0], "oldest entry evicted");
    }

    #[test]
    fn new_entry_gets_at_least_max_probability() {
        let mut b = buffer(8);
        for i in 0..5 {
            b.insert(dummy_transition(i));
        }
        let slots = [0usize, 1, 2];
        let gens = [0u64, 1, 2];
        b.update_priorities(Track::QMap, &slots, &gens, &[0.5, 2.0, 0.1]);
        let slot = b.insert(dummy_transition(9));
        for i in 0..b.len() {
            assert!(
                b.probability(Track::QMap, slot) >= b.probability(Track::QMap, i) - 1e-12,
                "new entry must dominate slot {i}"
            );
        }
        // direct computation: every slot's probability is powered/total
        let total: f64 = (0..b.len()).map(|i| b.track_raw(Track::QMap, i).powf(b.cfg.alpha)).sum();
        for i in 0..b.len() {
            let expect = b.track_raw(Track::QMap, i).powf(b.cfg.alpha) / total;
            assert!((b.probability(Track::QMap, i) - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn sample_requires_enough_entries_and_beta_zero_gives_unit_weights() {
        let mut b = buffer(16);
        b.insert(dummy_transition(0));
        let mut rng = seeded_rng(0, "replay");
        let err = b.sample(Track::Dqn, 2, 0.4, &mut rng).unwrap_err();
        assert_eq!(err, ReplayError::NotReady { len: 1, batch: 2 });
        b.insert(dummy_transition(1));
        b.insert(dummy_transition(2));
        b.update_priorities(Track::Dqn, &[0, 1], &[0, 1], &[3.0, 0.2]);
        let batch = b.sample(Track::Dqn, 3, 0.0, &mut rng).unwrap();
        assert!(batch.weights.iter().all(|&w| w == 1.0));
        let batch = b.sample(Track::Dqn, 3, 1.0, &mut rng).unwrap();
        assert!(batch.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
    }

    #[test]
    fn td_zero_keeps_priority_at_floor() {
        let mut b = buffer(4);
        b.insert(dummy_transition(0));
        b.insert(dummy_transition(1));
        b.update_priorities(Track::QMap, &[0], &[0], &[0.0]);
        assert!(b.track_raw(Track::QMap, 0) > 0.0);
        assert!((b.track_raw(Track::QMap, 0) - b.cfg.floor).abs() < 1e-15);
    }

    #[test]
    fn tracks_are_independent() {
        let mut b = buffer(8);
        for i in 0..6 {
            b.insert(dummy_transition(i));
        }
        let before: Vec<f64> = (0..6).map(|i| b.probability(Track::Dqn, i)).collect();
        b.update_priorities(Track::QMap, &[0, 3, 5], &[0, 3, 5], &[9.0, 0.01, 4.2]);
        let after: Vec<f64> = (0..6).map(|i| b.probability(Track::Dqn, i)).collect();
        assert_eq!(before, after, "dqn track must be bit-identical");
    }

    #[test]
    fn stale_updates_are_skipped_and_counted() {
        let mut b = buffer(2);
        b.insert(dummy_transition(0));
        b.insert(dummy_transition(1));
        let mut rng = seeded_rng(1, "replay");
        let batch = b.sample(Track::QMap, 2, 0.5, &mut rng).unwrap();
        b.insert(dummy_transition(2)); // evicts slot 0
        b.update_priorities(Track::QMap, &batch.slots, &batch.gens, &vec![1.0; batch.slots.len()]);
        assert!(b.stale_updates > 0);
    }

    #[test]
    fn empirical_sampling_matches_analytic_distribution() {
        let mut b = buffer(8);
        for i in 0..8 {
            b.insert(dummy_transition(i));
        }
        let tds = [0.4, 1.3, 0.05, 2.0, 0.7, 0.01, 1.0, 0.33];
        let slots: Vec<usize> = (0..8).collect();
        let gens: Vec<u64> = (0..8).collect();
        b.update_priorities(Track::QMap, &slots, &gens, &tds);
        let mut rng = seeded_rng(2, "replay");
        let draws = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..draws / 8 {
            let batch = b.sample(Track::QMap, 8, 0.4, &mut rng).unwrap();
            for s in batch.slots {
                counts[s] += 1;
            }
        }
        let draws = (draws / 8) * 8;
        for i in 0..8 {
            let p = b.probability(Track::QMap, i);
            let mean = draws as f64 * p;
            let sd = (draws as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (counts[i] as f64 - mean).abs() <= 3.0 * sd,
                "slot {i}: count {} expected {mean:.1} sd {sd:.1}",
                counts[i]
            );
        }
    }
}
