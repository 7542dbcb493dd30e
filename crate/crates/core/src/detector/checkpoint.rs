//! Self-describing JSON checkpoints: config, counters, named parameter arrays,
//! frozen buffers and (optionally) optimizer momentum.
//!
//! Floats are written in shortest round-trip form and parsed with correct
//! rounding, so a save/load cycle reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DetectorConfig, DetectorState, NamedSlot, Trainable};
use crate::error::{Error, Result};

pub const FORMAT: &str = "framemix-checkpoint";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub schema_version: u32,
    pub config: DetectorConfig,
    pub epoch: usize,
    pub step: u64,
    pub parameters: Vec<NamedArray>,
    pub buffers: Vec<NamedArray>,
    /// Momentum buffers, named like `parameters`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<Vec<NamedArray>>,
}

fn gather(slots: &[NamedSlot], flat: &[f64]) -> Vec<NamedArray> {
    slots
        .iter()
        .map(|s| NamedArray {
            name: s.name.clone(),
            shape: s.shape.clone(),
            values: flat[s.offset..s.offset + s.len].to_vec(),
        })
        .collect()
}

fn scatter(slots: &[NamedSlot], arrays: &[NamedArray], total: usize, what: &str) -> Result<Vec<f64>> {
    if slots.len() != arrays.len() {
        return Err(Error::arg(format!(
            "checkpoint has {} {what} arrays, config expects {}",
            arrays.len(),
            slots.len()
        )));
    }
    let mut flat = vec![0.0; total];
    for (s, a) in slots.iter().zip(arrays) {
        if s.name != a.name || s.shape != a.shape || a.values.len() != s.len {
            return Err(Error::arg(format!(
                "checkpoint {what} `{}` {:?} does not match expected `{}` {:?}",
                a.name, a.shape, s.name, s.shape
            )));
        }
        flat[s.offset..s.offset + s.len].copy_from_slice(&a.values);
    }
    Ok(flat)
}

impl Checkpoint {
    pub fn capture(state: &DetectorState, momentum: Option<&[f64]>) -> Self {
        let slots = state.parameter_slots();
        Self {
            format: FORMAT.into(),
            schema_version: SCHEMA_VERSION,
            config: state.config().clone(),
            epoch: state.epoch,
            step: state.step,
            parameters: gather(&slots, state.params()),
            buffers: gather(&state.buffer_slots(), state.buffers()),
            momentum: momentum.map(|m| gather(&slots, m)),
        }
    }

    /// Rebuild the detector state and the flattened momentum, if stored.
    pub fn restore(&self) -> Result<(DetectorState, Option<Vec<f64>>)> {
        if self.format != FORMAT || self.schema_version != SCHEMA_VERSION {
            return Err(Error::arg(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.schema_version
            )));
        }
        // A throwaway build gives the slot layout for this config.
        let template = DetectorState::new(self.config.clone(), 0)?;
        let pslots = template.parameter_slots();
        let n_params = template.params().len();
        let params = scatter(&pslots, &self.parameters, n_params, "parameter")?;
        let buffers = scatter(
            &template.buffer_slots(),
            &self.buffers,
            template.buffers().len(),
            "buffer",
        )?;
        let momentum = self
            .momentum
            .as_ref()
            .map(|m| scatter(&pslots, m, n_params, "momentum"))
            .transpose()?;
        let state = DetectorState::from_parts(self.config.clone(), params, buffers, self.epoch, self.step)?;
        Ok((state, momentum))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::load(path, e.to_string()))
    }
}

pub fn save_checkpoint(path: &Path, state: &DetectorState, momentum: Option<&[f64]>) -> Result<()> {
    Checkpoint::capture(state, momentum).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(DetectorState, Option<Vec<f64>>)> {
    Checkpoint::load(path)?.restore()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::build_detector;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut st = build_detector(DetectorConfig::default(), 9).unwrap();
        st.epoch = 4;
        st.step = 123;
        // awkward values: subnormal, negative zero, large exponents
        st.params_mut()[0] = -0.0;
        st.params_mut()[1] = 5e-324;
        st.params_mut()[2] = 1.234_567_890_123_456_7e300;
        let momentum: Vec<f64> = (0..st.params().len()).map(|i| (i as f64).sqrt() / 7.0).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        save_checkpoint(&path, &st, Some(&momentum)).unwrap();
        let (back, m) = load_checkpoint(&path).unwrap();
        assert_eq!(back, st);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.params()), bits(st.params()));
        assert_eq!(bits(&m.unwrap()), bits(&momentum));
    }

    #[test]
    fn mismatched_arrays_rejected() {
        let st = build_detector(DetectorConfig::default(), 1).unwrap();
        let mut ck = Checkpoint::capture(&st, None);
        ck.parameters[0].values.pop();
        assert!(ck.restore().is_err());
        let mut ck = Checkpoint::capture(&st, None);
        ck.schema_version = 99;
        assert!(ck.restore().is_err());
    }
}
