//! Self-describing JSON checkpoints. Reals are written in shortest round-trip
//! form, so save followed by load reproduces every stored value exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KanError, Result};
use crate::network::GatedKan;
use crate::scalar::Real;

pub const FORMAT_NAME: &str = "sparse-kan-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct Envelope<T> {
    format: String,
    format_version: u32,
    scalar: String,
    network: GatedKan<T>,
}

fn scalar_name<T>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

pub fn to_string<T: Real>(net: &GatedKan<T>) -> Result<String> {
    let env = Envelope {
        format: FORMAT_NAME.to_string(),
        format_version: FORMAT_VERSION,
        scalar: scalar_name::<T>().to_string(),
        network: net.clone(),
    };
    Ok(serde_json::to_string_pretty(&env)?)
}

pub fn from_str<T: Real>(text: &str) -> Result<GatedKan<T>> {
    #[derive(Deserialize)]
    struct Header {
        format: Option<String>,
        format_version: Option<u32>,
        scalar: Option<String>,
    }
    let header: Header = serde_json::from_str(text)
        .map_err(|e| KanError::Format(format!("unreadable checkpoint: {e}")))?;
    if header.format.as_deref() != Some(FORMAT_NAME) {
        return Err(KanError::Format("not a sparse-kan checkpoint".into()));
    }
    match header.format_version {
        Some(FORMAT_VERSION) => {}
        Some(v) => {
            return Err(KanError::Format(format!(
                "format_version {v} unsupported (expected {FORMAT_VERSION})"
            )))
        }
        None => return Err(KanError::Format("missing format_version".into())),
    }
    if header.scalar.as_deref() != Some(scalar_name::<T>()) {
        return Err(KanError::Format(format!(
            "checkpoint stores {:?} values, requested {}",
            header.scalar,
            scalar_name::<T>()
        )));
    }
    let env: Envelope<T> = serde_json::from_str(text)
        .map_err(|e| KanError::Format(format!("format_version {FORMAT_VERSION}: {e}")))?;
    env.network.validate()?;
    Ok(env.network)
}

pub fn save<T: Real>(net: &GatedKan<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_string(net)?)?;
    Ok(())
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<GatedKan<T>> {
    from_str(&fs::read_to_string(path)?)
}
