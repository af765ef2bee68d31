//! Experiment files: a [`TrainConfig`] written as sectioned `key = value`
//! text. Missing keys take their defaults; unknown keys are rejected.
//!
//! ```text
//! mode = "rotation"
//! lambda = 0.7
//!
//! [split]
//! label_fraction = 0.1
//! ```

use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::trainer::TrainConfig;

pub fn parse_experiment(text: &str) -> Result<TrainConfig> {
    TrainConfig::from_toml(text)
}

pub fn render_experiment(config: &TrainConfig) -> String {
    config.to_toml()
}

pub fn read_experiment(path: &Path) -> Result<TrainConfig> {
    parse_experiment(&fs::read_to_string(path)?)
}

pub fn write_experiment(config: &TrainConfig, path: &Path) -> Result<()> {
    fs::write(path, render_experiment(config))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diversification::DbConfig;
    use crate::losses::{DclAblation, GceConfig, LocMode};
    use crate::trainer::{Mode, PirlConfig, RcmConfig};
    use crate::dataset::SplitSpec;
    use crate::Error;
    use proptest::prelude::*;

    fn unit() -> impl Strategy<Value = f64> {
        0.0..=1.0f64
    }

    prop_compose! {
        fn configs()(
            mode in prop::sample::select(Mode::ALL.to_vec()),
            epochs in 1usize..200,
            batch_size in 1usize..64,
            lr in 1e-6..1.0f64,
            momentum in unit(),
            decay in (unit(), 0usize..100),
            lambda in unit(),
            loc_mode in prop::sample::select(vec![LocMode::Mse, LocMode::L1, LocMode::Bce]),
            seed in any::<u64>(),
            rcm in (2usize..8, 1usize..4),
            pirl in (1e-3..1.0f64, unit(), 1usize..2000, prop::option::of(8usize..40)),
            db in (unit(), unit(), 1usize..4, unit(), any::<bool>()),
            gce in (1usize..10, 0usize..20),
            abl in (any::<bool>(), any::<bool>(), any::<bool>()),
            split in (unit(), any::<u64>()),
        ) -> TrainConfig {
            TrainConfig {
                mode, epochs, batch_size, lr, momentum,
                lr_decay_factor: decay.0,
                lr_decay_epoch: decay.1,
                lambda, loc_mode, seed,
                rcm: RcmConfig { k: rcm.0, d: rcm.1 },
                pirl: PirlConfig { tau: pirl.0, beta: pirl.1, negatives: pirl.2, crop: pirl.3, ..PirlConfig::default() },
                db: DbConfig { p_peak: db.0, p_patch: db.1, patch_k: db.2, alpha: db.3, train_only: db.4 },
                gce: GceConfig { k: gce.0, warmup_epochs: gce.1 },
                dcl_ablation: DclAblation { cls: abl.0, adv: abl.1, loc: abl.2 },
                split: SplitSpec { label_fraction: split.0, seed: split.1 },
            }
        }
    }

    proptest! {
        #[test]
        fn roundtrip(c in configs()) {
            prop_assert_eq!(parse_experiment(&render_experiment(&c)).unwrap(), c);
        }
    }

    #[test]
    fn partial_files_take_defaults() {
        let c = parse_experiment("mode = \"rotation\"\nlambda = 0.7\n[split]\nlabel_fraction = 0.1\n").unwrap();
        assert_eq!(c.mode, Mode::Rotation);
        assert_eq!(c.lambda, 0.7);
        assert_eq!(c.split.label_fraction, 0.1);
        assert_eq!(c.epochs, TrainConfig::default().epochs);
        assert_eq!(parse_experiment("").unwrap(), TrainConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(parse_experiment("lamda = 0.3"), Err(Error::Config(_))));
        assert!(matches!(parse_experiment("[rcm]\nk = 4\nj = 1"), Err(Error::Config(_))));
        assert!(matches!(parse_experiment("mode = \"jigsaw\""), Err(Error::Config(_))));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.toml");
        let c = TrainConfig::full_scale();
        write_experiment(&c, &p).unwrap();
        assert_eq!(read_experiment(&p).unwrap(), c);
        assert!(matches!(read_experiment(&dir.path().join("missing.toml")), Err(Error::Io(_))));
    }
}
