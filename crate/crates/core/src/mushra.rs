//! Session manifests for the browser listening-test harness.
//!
//! A session lists, for every item, the reference recording, a low-pass
//! anchor and the outputs of each system under test. Paths are relative to
//! the manifest's directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dsp::{lowpass_filter, read_wav, write_wav, WavFormat};
use crate::error::{AeroError, Result};

pub const MANIFEST_FILE: &str = "session.json";
pub const RATING_SCALE: &str = "0-100";
pub const DEFAULT_ANCHOR_CUTOFF_HZ: f64 = 3500.0;

/// JSON Schema of the manifest, shipped next to the export for the harness.
pub const SESSION_SCHEMA: &str = r#"{
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "listening-test session manifest",
  "type": "object",
  "additionalProperties": false,
  "required": ["items", "scale"],
  "properties": {
    "scale": { "const": "0-100" },
    "items": {
      "type": "array",
      "minItems": 1,
      "items": {
        "type": "object",
        "additionalProperties": false,
        "required": ["id", "reference", "anchor", "systems"],
        "properties": {
          "id": { "type": "string", "minLength": 1 },
          "reference": { "type": "string", "minLength": 1 },
          "anchor": { "type": "string", "minLength": 1 },
          "systems": {
            "type": "array",
            "minItems": 1,
            "items": {
              "type": "object",
              "additionalProperties": false,
              "required": ["name", "path"],
              "properties": {
                "name": { "type": "string", "minLength": 1 },
                "path": { "type": "string", "minLength": 1 }
              }
            }
          }
        }
      }
    }
  }
}"#;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemStimulus {
    pub name: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionItem {
    pub id: String,
    pub reference: String,
    pub anchor: String,
    pub systems: Vec<SystemStimulus>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionManifest {
    pub items: Vec<SessionItem>,
    pub scale: String,
}

fn invalid(msg: impl Into<String>) -> AeroError {
    AeroError::Data(format!("session manifest: {}", msg.into()))
}

fn check_relative(field: &str, p: &str) -> Result<()> {
    if p.is_empty() {
        return Err(invalid(format!("{field} is empty")));
    }
    let path = Path::new(p);
    if path.is_absolute() || path.components().any(|c| matches!(c, Component::ParentDir)) {
        return Err(invalid(format!("{field} {p:?} must be relative and stay inside the session")));
    }
    Ok(())
}

impl SessionManifest {
    /// Structural checks beyond the field types.
    pub fn validate(&self) -> Result<()> {
        if self.scale != RATING_SCALE {
            return Err(invalid(format!("scale must be {RATING_SCALE:?}, got {:?}", self.scale)));
        }
        if self.items.is_empty() {
            return Err(invalid("no items"));
        }
        let mut ids = BTreeSet::new();
        for item in &self.items {
            if item.id.is_empty() {
                return Err(invalid("item with empty id"));
            }
            if !ids.insert(item.id.as_str()) {
                return Err(invalid(format!("duplicate item id {:?}", item.id)));
            }
            check_relative(&format!("{}.reference", item.id), &item.reference)?;
            check_relative(&format!("{}.anchor", item.id), &item.anchor)?;
            if item.systems.is_empty() {
                return Err(invalid(format!("item {:?} has no systems", item.id)));
            }
            let mut names = BTreeSet::new();
            for s in &item.systems {
                if s.name.is_empty() {
                    return Err(invalid(format!("item {:?} has a system with empty name", item.id)));
                }
                if ["reference", "anchor"].contains(&s.name.as_str()) || !names.insert(s.name.as_str()) {
                    return Err(invalid(format!("item {:?}: system name {:?} is reserved or repeated", item.id, s.name)));
                }
                check_relative(&format!("{}.{}", item.id, s.name), &s.path)?;
            }
        }
        Ok(())
    }

    /// Every referenced file, resolved against `base`, must exist.
    pub fn check_files(&self, base: &Path) -> Result<()> {
        let missing: Vec<String> = self
            .items
            .iter()
            .flat_map(|i| {
                [i.reference.as_str(), i.anchor.as_str()]
                    .into_iter()
                    .chain(i.systems.iter().map(|s| s.path.as_str()))
            })
            .filter(|p| !base.join(p).is_file())
            .map(str::to_string)
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(invalid(format!("missing audio files: {}", missing.join(", "))))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates against the schema rules.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        validate_value(&value)?;
        let m: SessionManifest = serde_json::from_value(value)?;
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AeroError::io(path, e))?;
        Self::from_json(&text)
    }
}

fn expect_object<'a>(v: &'a Value, at: &str, keys: &[&str]) -> Result<&'a serde_json::Map<String, Value>> {
    let obj = v.as_object().ok_or_else(|| invalid(format!("{at} must be an object")))?;
    for k in keys {
        if !obj.contains_key(*k) {
            return Err(invalid(format!("{at} lacks required key {k:?}")));
        }
    }
    if let Some(extra) = obj.keys().find(|k| !keys.contains(&k.as_str())) {
        return Err(invalid(format!("{at} has unexpected key {extra:?}")));
    }
    Ok(obj)
}

fn expect_string(v: &Value, at: &str) -> Result<()> {
    match v.as_str() {
        Some(s) if !s.is_empty() => Ok(()),
        _ => Err(invalid(format!("{at} must be a non-empty string"))),
    }
}

fn expect_array<'a>(v: &'a Value, at: &str) -> Result<&'a Vec<Value>> {
    match v.as_array() {
        Some(a) if !a.is_empty() => Ok(a),
        _ => Err(invalid(format!("{at} must be a non-empty array"))),
    }
}

/// Checks a parsed JSON document against [`SESSION_SCHEMA`].
pub fn validate_value(v: &Value) -> Result<()> {
    let root = expect_object(v, "manifest", &["items", "scale"])?;
    if root["scale"] != Value::from(RATING_SCALE) {
        return Err(invalid(format!("scale must be {RATING_SCALE:?}")));
    }
    for (i, item) in expect_array(&root["items"], "items")?.iter().enumerate() {
        let at = format!("items[{i}]");
        let obj = expect_object(item, &at, &["id", "reference", "anchor", "systems"])?;
        for k in ["id", "reference", "anchor"] {
            expect_string(&obj[k], &format!("{at}.{k}"))?;
        }
        for (j, s) in expect_array(&obj["systems"], &format!("{at}.systems"))?.iter().enumerate() {
            let at = format!("{at}.systems[{j}]");
            let so = expect_object(s, &at, &["name", "path"])?;
            expect_string(&so["name"], &format!("{at}.name"))?;
            expect_string(&so["path"], &format!("{at}.path"))?;
        }
    }
    Ok(())
}

/// One item to bundle: the reference plus system outputs on disk.
#[derive(Debug, Clone)]
pub struct ExportItem {
    pub id: String,
    pub reference: PathBuf,
    pub systems: Vec<(String, PathBuf)>,
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

/// Low-pass anchor of a reference file.
pub fn make_anchor(reference: &Path, out: &Path, cutoff_hz: f64) -> Result<()> {
    let x = read_wav::<f32>(reference)?;
    let y = lowpass_filter(&x, cutoff_hz)?;
    write_wav(out, &y, WavFormat::Float32)?;
    Ok(())
}

/// Copies stimuli into `out_dir/audio/<item>/`, builds anchors and writes
/// `session.json` plus the schema file.
pub fn export_session(items: &[ExportItem], out_dir: &Path, anchor_cutoff_hz: f64) -> Result<SessionManifest> {
    let mut out_items = Vec::with_capacity(items.len());
    for item in items {
        let key = sanitize(&item.id);
        let dir = out_dir.join("audio").join(&key);
        fs::create_dir_all(&dir).map_err(|e| AeroError::io(&dir, e))?;
        let copy = |src: &Path, name: &str| -> Result<String> {
            let dst = dir.join(name);
            fs::copy(src, &dst).map_err(|e| AeroError::io(src, e))?;
            Ok(format!("audio/{key}/{name}"))
        };
        let reference = copy(&item.reference, "reference.wav")?;
        make_anchor(&item.reference, &dir.join("anchor.wav"), anchor_cutoff_hz)?;
        let systems = item
            .systems
            .iter()
            .map(|(name, path)| {
                Ok(SystemStimulus { name: name.clone(), path: copy(path, &format!("sys_{}.wav", sanitize(name)))? })
            })
            .collect::<Result<Vec<_>>>()?;
        out_items.push(SessionItem { id: item.id.clone(), reference, anchor: format!("audio/{key}/anchor.wav"), systems });
    }
    let manifest = SessionManifest { items: out_items, scale: RATING_SCALE.into() };
    manifest.validate()?;
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()?).map_err(|e| AeroError::io(&path, e))?;
    let schema = out_dir.join("session.schema.json");
    fs::write(&schema, SESSION_SCHEMA).map_err(|e| AeroError::io(&schema, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SessionManifest {
        SessionManifest {
            items: vec![SessionItem {
                id: "p360_001".into(),
                reference: "audio/p360_001/reference.wav".into(),
                anchor: "audio/p360_001/anchor.wav".into(),
                systems: vec![SystemStimulus { name: "sinc".into(), path: "audio/p360_001/sys_sinc.wav".into() }],
            }],
            scale: RATING_SCALE.into(),
        }
    }

    #[test]
    fn json_round_trip() {
        let m = sample();
        assert_eq!(SessionManifest::from_json(&m.to_json().unwrap()).unwrap(), m);
    }

    #[test]
    fn schema_is_valid_json() {
        let v: Value = serde_json::from_str(SESSION_SCHEMA).unwrap();
        assert_eq!(v["properties"]["scale"]["const"], "0-100");
    }

    #[test]
    fn rejects_missing_anchor_and_bad_scale() {
        let mut v = serde_json::to_value(sample()).unwrap();
        v["items"][0].as_object_mut().unwrap().remove("anchor");
        assert!(validate_value(&v).is_err());
        let mut m = sample();
        m.scale = "1-5".into();
        assert!(m.validate().is_err());
    }

    #[test]
    fn rejects_escaping_paths_and_reserved_names() {
        let mut m = sample();
        m.items[0].systems[0].path = "../x.wav".into();
        assert!(m.validate().is_err());
        let mut m = sample();
        m.items[0].systems[0].name = "reference".into();
        assert!(m.validate().is_err());
    }
}
