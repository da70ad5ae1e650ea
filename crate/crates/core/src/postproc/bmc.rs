use serde::{Deserialize, Serialize};

use crate::raster::{BitGrid, ClassId, InstanceMask, MaskSource, ScalarField};

/// Binary mask cutoff: logits at or above `cutoff` become mask pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BmcConfig {
    pub cutoff: f64,
    #[serde(default = "default_class")]
    pub class: ClassId,
}

fn default_class() -> ClassId {
    ClassId::InSystemTrash
}

impl BmcConfig {
    pub fn new(cutoff: f64) -> Self {
        BmcConfig {
            cutoff,
            class: default_class(),
        }
    }
}

/// Thresholds a logit map. `None` means no pixel reached the cutoff.
pub fn bmc_threshold(logits: &ScalarField, config: &BmcConfig) -> Option<InstanceMask> {
    let bits = logits.values().iter().map(|&v| v as f64 >= config.cutoff).collect();
    let grid = BitGrid::from_bits(logits.dims(), bits).expect("same length as field");
    InstanceMask::non_empty(grid, config.class, MaskSource::Predicted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Dims;

    #[test]
    fn threshold_examples() {
        let f = ScalarField::new(Dims::new(2, 1).unwrap(), vec![0.2, 0.7]).unwrap();
        let m = bmc_threshold(&f, &BmcConfig::new(0.5)).unwrap();
        assert_eq!(m.area(), 1);
        assert!(m.get(1, 0));
        assert_eq!(bmc_threshold(&f, &BmcConfig::new(0.1)).unwrap().area(), 2);
        assert!(bmc_threshold(&f, &BmcConfig::new(0.9)).is_none());
    }

    #[test]
    fn cutoff_is_inclusive() {
        let f = ScalarField::new(Dims::new(1, 1).unwrap(), vec![0.5]).unwrap();
        assert!(bmc_threshold(&f, &BmcConfig::new(0.5)).is_some());
    }
}
