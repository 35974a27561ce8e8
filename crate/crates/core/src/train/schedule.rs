//! Cosine-annealed learning rate.

use crate::train::TrainConfig;

/// `lr = lr0 · (1 + cos(π·epoch/epochs)) / 2`: starts at `lr0`, decays to 0
/// at `epoch == epochs`. Anything at or past the horizon (including an
/// `epochs == 0` config) is 0.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    if cfg.epochs == 0 || epoch > cfg.epochs {
        return 0.0;
    }
    let phase = std::f64::consts::PI * epoch as f64 / cfg.epochs as f64;
    (cfg.lr0 * (1.0 + phase.cos()) / 2.0).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr0: f64, epochs: usize) -> TrainConfig {
        TrainConfig { lr0, epochs, ..Default::default() }
    }

    #[test]
    fn starts_at_lr0() {
        assert_eq!(cosine_lr(0, &cfg(5e-3, 70)), 5e-3);
    }

    #[test]
    fn ends_at_zero() {
        let lr = cosine_lr(70, &cfg(5e-3, 70));
        assert!(lr.abs() < 1e-18, "end of schedule should be 0, got {lr}");
    }

    #[test]
    fn midpoint_is_half() {
        let lr = cosine_lr(35, &cfg(5e-3, 70));
        assert!((lr - 2.5e-3).abs() < 1e-15);
    }

    #[test]
    fn never_negative_and_monotone_decreasing() {
        let c = cfg(1.0, 40);
        let mut prev = f64::INFINITY;
        for e in 0..=40 {
            let lr = cosine_lr(e, &c);
            assert!(lr >= 0.0);
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
