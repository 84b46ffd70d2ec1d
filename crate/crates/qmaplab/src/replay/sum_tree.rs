/// One priority track: segment trees over priority^alpha (sum and min, for
/// sampling and importance weights) plus raw-priority max (for the
/// max-priority-on-insert rule).
#[derive(Debug, Clone)]
pub struct PriorityTrack {
    base: usize,
    pub alpha: f64,
    sum: Vec<f64>,
    min: Vec<f64>,
    max_raw: Vec<f64>,
    raw: Vec<f64>,
    len: usize,
}

impl PriorityTrack {
    pub fn new(capacity: usize, alpha: f64) -> Self {
        let base = capacity.next_power_of_two().max(1);
        Self {
            base,
            alpha,
            sum: vec![0.0; 2 * base],
            min: vec![f64::INFINITY; 2 * base],
            max_raw: vec![f64::NEG_INFINITY; 2 * base],
            raw: vec![0.0; base],
            len: 0,
        }
    }

    /// Exact raw priority of a slot as last set.
    pub fn raw(&self, slot: usize) -> f64 {
        self.raw[slot]
    }

    /// Sets the raw priority of a slot; stores priority^alpha in the
    /// sampling trees.
    pub fn set_raw(&mut self, slot: usize, raw: f64) {
        debug_assert!(raw > 0.0, "priorities must stay positive");
        self.len = self.len.max(slot + 1);
        self.raw[slot] = raw;
        let mut i = self.base + slot;
        self.sum[i] = raw.powf(self.alpha);
        self.min[i] = self.sum[i];
        self.max_raw[i] = raw;
        while i > 1 {
            i /= 2;
            self.sum[i] = self.sum[2 * i] + self.sum[2 * i + 1];
            self.min[i] = self.min[2 * i].min(self.min[2 * i + 1]);
            self.max_raw[i] = self.max_raw[2 * i].max(self.max_raw[2 * i + 1]);
        }
    }

    pub fn total(&self) -> f64 {
        self.sum[1]
    }

    /// Smallest priority^alpha among occupied slots.
    pub fn min_powered(&self) -> f64 {
        self.min[1]
    }

    /// Largest raw priority among occupied slots, or 1.0 when empty.
    pub fn max_raw(&self) -> f64 {
        if self.len == 0 {
            1.0
        } else {
            self.max_raw[1]
        }
    }

    pub fn powered(&self, slot: usize) -> f64 {
        self.sum[self.base + slot]
    }

    /// Normalized sampling probability of one slot.
    pub fn probability(&self, slot: usize) -> f64 {
        self.powered(slot) / self.total()
    }

    /// Prefix-sum descent: maps a mass in [0, total) to a slot.
    pub fn find(&self, mass: f64) -> usize {
        let mut i = 1;
        let mut mass = mass;
        while i < self.base {
            let left = 2 * i;
            if mass < self.sum[left] || self.sum[left + 1] == 0.0 {
                i = left;
            } else {
                mass -= self.sum[left];
                i = left + 1;
            }
        }
        (i - self.base).min(self.len.saturating_sub(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn find_walks_prefix_sums() {
        let mut t = PriorityTrack::new(4, 1.0);
        for (i, p) in [0.5, 0.2, 0.8, 0.3].iter().enumerate() {
            t.set_raw(i, *p);
        }
        assert!((t.total() - 1.8).abs() < 1e-12);
        assert_eq!(t.find(0.0), 0);
        assert_eq!(t.find(0.49), 0);
        assert_eq!(t.find(0.5), 1);
        assert_eq!(t.find(0.69), 1);
        assert_eq!(t.find(0.7), 2);
        assert_eq!(t.find(1.49), 2);
        assert_eq!(t.find(1.5), 3);
        assert_eq!(t.find(1.7999999), 3);
    }

    #[test]
    fn alpha_shapes_the_masses() {
        let mut t = PriorityTrack::new(2, 0.5);
        t.set_raw(0, 4.0);
        t.set_raw(1, 9.0);
        assert!((t.total() - 5.0).abs() < 1e-12);
        assert!((t.probability(0) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn max_and_min_track_updates() {
        let mut t = PriorityTrack::new(8, 1.0);
        t.set_raw(0, 2.0);
        t.set_raw(1, 5.0);
        assert_eq!(t.max_raw(), 5.0);
        assert_eq!(t.min_powered(), 2.0);
        t.set_raw(1, 0.5);
        assert_eq!(t.max_raw(), 2.0);
        assert_eq!(t.min_powered(), 0.5);
    }
}
