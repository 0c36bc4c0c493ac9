use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::datasets::{load_idx, synth_generate, ImageBatch, SyntheticFamily, SyntheticSpec};
use crate::error::{Error, Result};

/// Where images come from: `idx:<path>` or `synthetic:<family>[:<length>]`.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Idx(PathBuf),
    Synthetic(SyntheticFamily),
}

impl DataSource {
    /// Loads the whole source. Synthetic sources produce `n` images of
    /// `image_shape`; IDX files ignore both.
    pub fn load(&self, image_shape: [usize; 3], n: usize, seed: u64) -> Result<ImageBatch> {
        match self {
            DataSource::Idx(path) => {
                if !path.exists() {
                    return Err(Error::Config(format!("data file {} does not exist", path.display())));
                }
                load_idx(path)
            }
            DataSource::Synthetic(family) => {
                let mut batch = synth_generate(&SyntheticSpec::new(*family, image_shape), n, seed)?;
                batch = ImageBatch::new(
                    batch.shape(),
                    batch.pixels().to_vec(),
                    batch.levels(),
                    batch.ids().to_vec(),
                    self.to_string(),
                )?;
                Ok(batch)
            }
        }
    }

    /// Short label for report rows.
    pub fn label(&self) -> String {
        match self {
            DataSource::Idx(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            DataSource::Synthetic(f) => f.name().to_string(),
        }
    }
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("idx:") {
            return Ok(DataSource::Idx(PathBuf::from(path)));
        }
        let rest = s
            .strip_prefix("synthetic:")
            .ok_or_else(|| Error::Config(format!("data source `{s}` must start with `idx:` or `synthetic:`")))?;
        let mut parts = rest.split(':');
        let family = match (parts.next(), parts.next()) {
            (Some("flat-blob"), None) => SyntheticFamily::flat_blob(),
            (Some("white-noise"), None) => SyntheticFamily::WhiteNoise,
            (Some("correlated-field"), None) => SyntheticFamily::correlated_field(1.5),
            (Some("correlated-field"), Some(len)) => {
                let len: f64 = len
                    .parse()
                    .map_err(|_| Error::Config(format!("bad correlation length `{len}`")))?;
                SyntheticFamily::correlated_field(len)
            }
            _ => return Err(Error::Config(format!("unknown synthetic family in `{s}`"))),
        };
        if parts.next().is_some() {
            return Err(Error::Config(format!("trailing fields in `{s}`")));
        }
        Ok(DataSource::Synthetic(family))
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Idx(p) => write!(f, "idx:{}", p.display()),
            DataSource::Synthetic(SyntheticFamily::CorrelatedField { length, .. }) => {
                write!(f, "synthetic:correlated-field:{length}")
            }
            DataSource::Synthetic(fam) => write!(f, "synthetic:{}", fam.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        for s in [
            "synthetic:flat-blob",
            "synthetic:white-noise",
            "synthetic:correlated-field:2.5",
            "idx:/tmp/x-ubyte",
        ] {
            let d: DataSource = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
        }
        assert!("synthetic:plaid".parse::<DataSource>().is_err());
        assert!("mnist".parse::<DataSource>().is_err());
    }

    #[test]
    fn missing_idx_path_is_config_error() {
        let d: DataSource = "idx:/nonexistent/file".parse().unwrap();
        assert!(matches!(d.load([1, 8, 8], 1, 0), Err(Error::Config(_))));
    }
}
