//! Checkpoints: parameters plus the model config (and any caller metadata)
//! in one self-describing container file.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{read_container, write_container, Container, Scalar};

use super::config::{self, ModelConfig};
use super::Model;

impl<S: Scalar> Model<S> {
    /// Write params + config. `extra` entries land next to the model fields
    /// in the embedded JSON (feature setup, normalization stats, vocab…);
    /// they must not collide with config keys.
    pub fn save(
        &self,
        path: &Path,
        extra: Option<&serde_json::Map<String, serde_json::Value>>,
    ) -> Result<()> {
        let mut cfg = match serde_json::to_value(&self.config) {
            Ok(serde_json::Value::Object(map)) => map,
            _ => return Err(Error::Config("model config did not serialize to an object".into())),
        };
        if let Some(extra) = extra {
            for (k, v) in extra {
                if cfg.contains_key(k) {
                    return Err(Error::Config(format!(
                        "checkpoint metadata key '{}' collides with a config field",
                        k
                    )));
                }
                cfg.insert(k.clone(), v.clone());
            }
        }
        let container = Container::from_params(&self.params, Some(serde_json::Value::Object(cfg)));
        write_container(path, &container)
    }

    /// Read a checkpoint back. Returns the model and the full embedded JSON
    /// (config fields plus whatever metadata was saved next to them).
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let container = read_container(path)?;
        let cfg_json = container.config.clone().ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            detail: "checkpoint has no embedded config".into(),
        })?;
        let config: ModelConfig = serde_json::from_value(cfg_json.clone()).map_err(|e| {
            Error::Format {
                path: path.to_path_buf(),
                detail: format!("bad model config: {e}"),
            }
        })?;
        let params = container.to_params();
        let model = Model { config, params };
        model.validate_params()?;
        Ok((model, cfg_json))
    }

    /// Check the parameter store against the config's inventory: every
    /// expected array present with its exact shape, nothing extra.
    pub fn validate_params(&self) -> Result<()> {
        let specs = config::manifest(&self.config)?;
        for spec in &specs {
            let t = self
                .params
                .get(&spec.name)
                .map_err(|_| Error::Config(format!("checkpoint is missing '{}'", spec.name)))?;
            if t.shape != spec.shape {
                return Err(Error::shape(
                    "checkpoint",
                    format!("'{}' is {:?}, model wants {:?}", spec.name, t.shape, spec.shape),
                ));
            }
        }
        if self.params.len() != specs.len() {
            let expected: HashSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
            for name in self.params.names() {
                if !expected.contains(name.as_str()) {
                    return Err(Error::Config(format!(
                        "checkpoint carries unexpected array '{}'",
                        name
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{FastSpeechConfig, Tacotron2Config, TransformerTtsConfig};
    use crate::nn::Tensor;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("canta-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_preserves_params_config_and_metadata() {
        let cfg = ModelConfig::Tacotron2(Tacotron2Config::micro(8, 6));
        let model: Model<f32> = Model::init(cfg.clone(), 3).unwrap();
        let mut extra = serde_json::Map::new();
        extra.insert("norm".into(), serde_json::json!({"mean": [0.0, 1.0]}));
        let path = tmp("tac2.ckpt");
        model.save(&path, Some(&extra)).unwrap();

        let (back, j) = Model::<f32>::load(&path).unwrap();
        assert_eq!(back.config, cfg);
        assert_eq!(back.kind_str(), "tacotron2");
        assert_eq!(j["model"], "tacotron2");
        assert_eq!(j["norm"]["mean"][1], 1.0);
        assert_eq!(back.params.len(), model.params.len());
        for (name, t) in model.params.iter() {
            assert_eq!(&back.params.get(name).unwrap().data, &t.data, "{name}");
        }
    }

    #[test]
    fn kind_strings_cover_all_three_models() {
        for (cfg, want) in [
            (ModelConfig::Tacotron2(Tacotron2Config::micro(8, 4)), "tacotron2"),
            (
                ModelConfig::Transformer(TransformerTtsConfig::micro(8, 4)),
                "transformer",
            ),
            (ModelConfig::FastSpeech(FastSpeechConfig::micro(8, 4)), "fastspeech"),
        ] {
            let model: Model<f32> = Model::init(cfg, 0).unwrap();
            assert_eq!(model.kind_str(), want);
            let path = tmp(&format!("{want}.ckpt"));
            model.save(&path, None).unwrap();
            let (back, _) = Model::<f32>::load(&path).unwrap();
            assert_eq!(back.kind_str(), want);
        }
    }

    #[test]
    fn load_rejects_missing_or_malformed_pieces() {
        let cfg = ModelConfig::FastSpeech(FastSpeechConfig::micro(8, 4));
        let model: Model<f32> = Model::init(cfg, 1).unwrap();

        // config key collision refused at save time
        let mut extra = serde_json::Map::new();
        extra.insert("vocab_size".into(), serde_json::json!(99));
        assert!(model.save(&tmp("x.ckpt"), Some(&extra)).is_err());

        // a param stripped out -> load fails the inventory check
        let path = tmp("maimed.ckpt");
        let mut maimed = Model::<f32> {
            config: model.config.clone(),
            params: model.params.clone(),
        };
        // rebuild the store without one array
        let mut store = crate::nn::ParamStore::new();
        for (name, t) in model.params.iter() {
            if name != "dur.out.w" {
                store.insert(name.clone(), t.clone());
            }
        }
        maimed.params = store;
        maimed.save(&path, None).unwrap();
        assert!(Model::<f32>::load(&path).is_err());

        // wrong shape
        let path = tmp("bent.ckpt");
        let mut bent = Model::<f32> {
            config: model.config.clone(),
            params: model.params.clone(),
        };
        bent.params
            .insert("feat.b", Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap());
        bent.save(&path, None).unwrap();
        assert!(Model::<f32>::load(&path).is_err());

        // an extra array nothing asked for
        let path = tmp("noisy.ckpt");
        let mut noisy = Model::<f32> {
            config: model.config.clone(),
            params: model.params.clone(),
        };
        noisy
            .params
            .insert("stowaway", Tensor::new(vec![1, 1], vec![7.0]).unwrap());
        noisy.save(&path, None).unwrap();
        assert!(Model::<f32>::load(&path).is_err());

        // no config at all
        let path = tmp("bare.ckpt");
        let c = Container::from_params(&model.params, None);
        write_container(&path, &c).unwrap();
        assert!(Model::<f32>::load(&path).is_err());
    }
}
