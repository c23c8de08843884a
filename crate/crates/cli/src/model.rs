use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use shsmb::modelfile::parse_model_with;
use shsmb::models;
use shsmb::shs::ShsModel;

use crate::{Failure, ModelArgs};

/// A loaded model plus what is needed to identify it.
pub struct Loaded {
    pub name: String,
    pub model: ShsModel,
    pub source: String,
    pub overrides: BTreeMap<String, f64>,
}

impl Loaded {
    /// SHA-256 of the source text and the parameter overrides.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.source.as_bytes());
        for (k, v) in &self.overrides {
            h.update(format!("\n{k}={v}").as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_overrides(items: &[String]) -> Result<BTreeMap<String, f64>, Failure> {
    let mut out = BTreeMap::new();
    for item in items {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("`--set {item}` is not NAME=VALUE")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("`--set {item}`: `{}` is not a number", v.trim())))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}

pub fn load(args: &ModelArgs) -> Result<Loaded, Failure> {
    let overrides = parse_overrides(&args.overrides)?;
    load_with(args, overrides)
}

pub fn load_with(args: &ModelArgs, overrides: BTreeMap<String, f64>) -> Result<Loaded, Failure> {
    let path = Path::new(&args.model);
    let (name, source) = if path.exists() {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Model(format!("cannot read {}: {e}", path.display())))?;
        let name = path.file_stem().map_or(args.model.clone(), |s| s.to_string_lossy().into_owned());
        (name, text)
    } else if let Some(src) = models::source(&args.model) {
        (args.model.clone(), src.to_string())
    } else {
        let names: Vec<&str> = models::SOURCES.iter().map(|(n, _)| *n).collect();
        return Err(Failure::Model(format!(
            "no model file `{}` and no bundled model of that name (bundled: {})",
            args.model,
            names.join(", ")
        )));
    };
    let model = parse_model_with(&source, &overrides).map_err(|e| match e {
        shsmb::modelfile::ModelFileError::UnknownOverride(_) => Failure::Usage(e.to_string()),
        _ => Failure::Model(format!("{}: {e}", args.model)),
    })?;
    Ok(Loaded { name, model, source, overrides })
}
