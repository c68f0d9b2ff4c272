use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RmlError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    /// Three fully-connected layers applied independently at every pixel.
    Mlp,
    /// 3×3 stem convolution, two residual 3×3 blocks, 1×1 classifier.
    Cnn,
    /// Patch embedding, one single-head self-attention block, pixel decoder.
    Attn,
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchKind::Mlp => "mlp",
            ArchKind::Cnn => "cnn",
            ArchKind::Attn => "attn",
        })
    }
}

impl FromStr for ArchKind {
    type Err = RmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ArchKind::Mlp),
            "cnn" => Ok(ArchKind::Cnn),
            "attn" => Ok(ArchKind::Attn),
            other => Err(RmlError::config(
                "arch",
                format!("unknown architecture `{other}` (expected mlp, cnn or attn)"),
            )),
        }
    }
}

/// Architecture descriptor: the kind plus the input geometry and widths.
///
/// `hidden` is the first hidden width of the mlp and the token width of the
/// attention model; the cnn runs at the feature width throughout. `patch` is
/// only read by the attention model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub kind: ArchKind,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub hidden: usize,
    pub patch: usize,
}

impl ArchSpec {
    pub fn mlp(in_channels: usize, height: usize, width: usize, hidden: usize) -> Self {
        ArchSpec {
            kind: ArchKind::Mlp,
            in_channels,
            height,
            width,
            hidden,
            patch: 1,
        }
    }

    pub fn cnn(in_channels: usize, height: usize, width: usize) -> Self {
        ArchSpec {
            kind: ArchKind::Cnn,
            in_channels,
            height,
            width,
            hidden: 0,
            patch: 1,
        }
    }

    pub fn attn(in_channels: usize, height: usize, width: usize, hidden: usize, patch: usize) -> Self {
        ArchSpec {
            kind: ArchKind::Attn,
            in_channels,
            height,
            width,
            hidden,
            patch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.height == 0 || self.width == 0 {
            return Err(RmlError::config("arch", "input geometry must be positive"));
        }
        match self.kind {
            ArchKind::Mlp | ArchKind::Attn if self.hidden == 0 => {
                Err(RmlError::config("arch", format!("{} needs a positive hidden width", self.kind)))
            }
            ArchKind::Attn if self.patch == 0 || !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) => {
                Err(RmlError::config(
                    "arch",
                    format!(
                        "attn patch {} must divide the input {}×{}",
                        self.patch, self.height, self.width
                    ),
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn tokens(&self) -> usize {
        (self.height / self.patch.max(1)) * (self.width / self.patch.max(1))
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:in={},h={},w={},hidden={},patch={}",
            self.kind, self.in_channels, self.height, self.width, self.hidden, self.patch
        )
    }
}

impl FromStr for ArchSpec {
    type Err = RmlError;

    /// Parses the form produced by `Display`, e.g. `cnn:in=3,h=16,w=16,hidden=0,patch=1`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| RmlError::config("arch", msg);
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| bad(format!("descriptor `{s}` lacks `kind:` prefix")))?;
        let kind: ArchKind = kind.parse()?;
        let mut spec = ArchSpec {
            kind,
            in_channels: 0,
            height: 0,
            width: 0,
            hidden: 0,
            patch: 1,
        };
        for part in rest.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed descriptor field `{part}`")))?;
            let value: usize = value
                .parse()
                .map_err(|_| bad(format!("descriptor field `{key}` is not an integer")))?;
            match key {
                "in" => spec.in_channels = value,
                "h" => spec.height = value,
                "w" => spec.width = value,
                "hidden" => spec.hidden = value,
                "patch" => spec.patch = value,
                other => return Err(bad(format!("unknown descriptor field `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}
