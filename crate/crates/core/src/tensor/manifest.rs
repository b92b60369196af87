//! `activations_manifest.json`: layer order, block tags and tensor locations.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TensorError;

/// Block tag excluded from the inter-layer analysis (its width differs).
pub const LATENT_BLOCK: &str = "latent";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub layer_id: String,
    /// One of `enc1, enc2, latent, dec2, dec1, refine` for U-Net style models.
    pub block: String,
    pub depth_index: usize,
    #[serde(default)]
    pub first_in_block: bool,
    pub token_axis: usize,
    #[serde(default)]
    pub skip_input: bool,
    #[serde(default)]
    pub skip_output: bool,
}

/// One tensor file. Clean references use `noise_type = "clean"` and no SNR.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationEntry {
    pub layer_id: String,
    pub noise_type: String,
    pub snr_db: Option<i32>,
    pub utterance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<u32>,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationsManifest {
    pub schema_version: u32,
    pub layers: Vec<LayerInfo>,
    pub entries: Vec<ActivationEntry>,
}

impl ActivationsManifest {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn read(path: impl AsRef<Path>) -> Result<ActivationsManifest, TensorError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| TensorError::io(path, e))?;
        let mut m: ActivationsManifest = serde_json::from_slice(&bytes)?;
        m.validate()?;
        m.layers.sort_by_key(|l| l.depth_index);
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), TensorError> {
        let path = path.as_ref();
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        std::fs::write(path, json).map_err(|e| TensorError::io(path, e))
    }

    pub fn layer(&self, id: &str) -> Option<&LayerInfo> {
        self.layers.iter().find(|l| l.layer_id == id)
    }

    /// Layers sorted by depth.
    pub fn ordered_layers(&self) -> Vec<LayerInfo> {
        let mut l = self.layers.clone();
        l.sort_by_key(|l| l.depth_index);
        l
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |m: String| Err(TensorError::Manifest(m));
        if self.schema_version != Self::SCHEMA_VERSION {
            return bad(format!("schema_version {} (expected {})", self.schema_version, Self::SCHEMA_VERSION));
        }
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        let mut ids = BTreeSet::new();
        let mut depths = BTreeSet::new();
        for l in &self.layers {
            if !ids.insert(l.layer_id.as_str()) {
                return bad(format!("duplicate layer_id {}", l.layer_id));
            }
            if !depths.insert(l.depth_index) {
                return bad(format!("duplicate depth_index {}", l.depth_index));
            }
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !ids.contains(e.layer_id.as_str()) {
                return bad(format!("entry references unknown layer {}", e.layer_id));
            }
            let clean = e.noise_type == super::CLEAN_CONDITION;
            if clean != e.snr_db.is_none() {
                return bad(format!("entry {}: clean entries have no snr_db, noisy entries need one", e.path));
            }
            if !seen.insert((&e.layer_id, &e.noise_type, e.snr_db, &e.utterance_id, e.window)) {
                return bad(format!("duplicate entry for {}", e.path));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(id: &str, depth: usize) -> LayerInfo {
        LayerInfo {
            layer_id: id.into(),
            block: "enc1".into(),
            depth_index: depth,
            first_in_block: depth == 0,
            token_axis: 0,
            skip_input: false,
            skip_output: false,
        }
    }

    fn entry(layer: &str, noise: &str, snr: Option<i32>) -> ActivationEntry {
        ActivationEntry {
            layer_id: layer.into(),
            noise_type: noise.into(),
            snr_db: snr,
            utterance_id: "u".into(),
            window: None,
            path: format!("{layer}/{noise}.npy"),
        }
    }

    #[test]
    fn validation_rules() {
        let ok = ActivationsManifest {
            schema_version: 1,
            layers: vec![layer("a", 0), layer("b", 1)],
            entries: vec![entry("a", "clean", None), entry("a", "babble", Some(3))],
        };
        assert!(ok.validate().is_ok());

        let mut m = ok.clone();
        m.layers[1].layer_id = "a".into();
        assert!(m.validate().is_err());

        let mut m = ok.clone();
        m.entries.push(entry("zzz", "clean", None));
        assert!(m.validate().is_err());

        let mut m = ok.clone();
        m.entries.push(entry("b", "clean", Some(0)));
        assert!(m.validate().is_err());

        let mut m = ok.clone();
        m.entries.push(entry("a", "clean", None));
        assert!(m.validate().is_err());
    }

    #[test]
    fn json_defaults_for_optional_flags() {
        let json = r#"{"schema_version":1,
            "layers":[{"layer_id":"x","block":"latent","depth_index":4,"token_axis":1}],
            "entries":[{"layer_id":"x","noise_type":"clean","snr_db":null,"utterance_id":"u1","path":"x.npy"}]}"#;
        let m: ActivationsManifest = serde_json::from_str(json).unwrap();
        assert!(m.validate().is_ok());
        assert!(!m.layers[0].first_in_block && !m.layers[0].skip_input);
        assert_eq!(m.entries[0].window, None);
    }
}
