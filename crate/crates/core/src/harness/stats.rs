use serde::Serialize;

/// Running mean and variance (Welford), mergeable in any grouping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MeanVar {
    count: u64,
    mean: f64,
    m2: f64,
}

impl MeanVar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &MeanVar) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeds of one trial: graph sampling, channel draws and schedule choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrialSeeds {
    pub graph: u64,
    pub channel: u64,
    pub schedule: u64,
}

/// Derives the seeds of trial `trial` at campaign point `point` by chained
/// splitmix64 mixing of the master seed.
pub fn trial_seeds(master: u64, point: u64, trial: u64) -> TrialSeeds {
    let base = splitmix64(splitmix64(splitmix64(master) ^ point) ^ trial);
    TrialSeeds {
        graph: splitmix64(base ^ 1),
        channel: splitmix64(base ^ 2),
        schedule: splitmix64(base ^ 3),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, 4.5, -2.0, 7.25, 0.0];
        let mut m = MeanVar::new();
        xs.iter().for_each(|&x| m.push(x));
        let mean = xs.iter().sum::<f64>() / 6.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
        assert!((m.mean() - mean).abs() < 1e-14);
        assert!((m.variance() - var).abs() < 1e-12);
    }

    #[test]
    fn merge_is_grouping_independent() {
        let xs: Vec<f64> = (0..40).map(|k| ((k * 37) % 11) as f64 * 0.3).collect();
        let mut all = MeanVar::new();
        xs.iter().for_each(|&x| all.push(x));
        let mut parts = [MeanVar::new(); 3];
        for (k, &x) in xs.iter().enumerate() {
            parts[k % 3].push(x);
        }
        let mut merged = parts[2];
        merged.merge(&parts[0]);
        merged.merge(&parts[1]);
        assert_eq!(merged.count(), 40);
        assert!((merged.mean() - all.mean()).abs() < 1e-13);
        assert!((merged.variance() - all.variance()).abs() < 1e-12);
        let mut empty = MeanVar::new();
        empty.merge(&all);
        assert_eq!(empty, all);
    }

    #[test]
    fn seeds_differ_by_role_and_index() {
        let a = trial_seeds(7, 0, 0);
        assert_eq!(a, trial_seeds(7, 0, 0));
        assert_ne!(a, trial_seeds(7, 0, 1));
        assert_ne!(a, trial_seeds(7, 1, 0));
        assert_ne!(a, trial_seeds(8, 0, 0));
        assert!(a.graph != a.channel && a.channel != a.schedule);
    }
}
