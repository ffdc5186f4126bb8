//! Plain-text architecture files.
//!
//! One layer per line: a kind followed by `key=value` pairs. `#` starts a
//! comment. An `input` line sets the image geometry and `shortcut` lines add
//! identity skips between activations.
//!
//! ```text
//! input depth=1 size=8
//! conv filters=2 kernel=3
//! relu
//! maxpool kernel=2 stride=2
//! flatten
//! dense outputs=10
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::SamplingTriplet;
use crate::network::{ArchSpec, LayerSpec, Shortcut};

struct Line<'a> {
    number: usize,
    kind: &'a str,
    fields: BTreeMap<&'a str, &'a str>,
}

impl Line<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Config {
            line: self.number,
            message: message.into(),
        }
    }

    fn usize(&mut self, key: &str, default: Option<usize>) -> Result<usize> {
        match self.fields.remove(key) {
            Some(v) => v.parse().map_err(|_| self.err(format!("{key}={v} is not a non-negative integer"))),
            None => default.ok_or_else(|| self.err(format!("{} needs {key}=", self.kind))),
        }
    }

    fn triplet(&mut self, default_stride: Option<usize>) -> Result<SamplingTriplet> {
        let kernel = self.usize("kernel", None)?;
        let stride = self.usize("stride", Some(default_stride.unwrap_or(kernel)))?;
        let padding = self.usize("padding", Some(0))?;
        SamplingTriplet::new(kernel, stride, padding).map_err(|e| self.err(e.to_string()))
    }

    fn finish(&self) -> Result<()> {
        match self.fields.keys().next() {
            Some(k) => Err(self.err(format!("unknown key `{k}` for {}", self.kind))),
            None => Ok(()),
        }
    }
}

/// Parses an architecture file. Missing `input` means one 28×28 channel.
pub fn parse_arch(text: &str) -> Result<ArchSpec> {
    let mut arch = ArchSpec {
        input_depth: 1,
        input_size: 28,
        layers: Vec::new(),
        shortcuts: Vec::new(),
    };
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut words = content.split_whitespace();
        let kind = words.next().expect("non-empty line");
        let mut line = Line {
            number: i + 1,
            kind,
            fields: BTreeMap::new(),
        };
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(|| line.err(format!("expected key=value, found `{w}`")))?;
            if line.fields.insert(k, v).is_some() {
                return Err(line.err(format!("duplicate key `{k}`")));
            }
        }
        match kind {
            "input" => {
                arch.input_depth = line.usize("depth", Some(1))?;
                arch.input_size = line.usize("size", None)?;
            }
            "conv" => {
                let filters = line.usize("filters", None)?;
                let sampling = line.triplet(Some(1))?;
                arch.layers.push(LayerSpec::Conv { filters, sampling });
            }
            "maxpool" => {
                let sampling = line.triplet(None)?;
                arch.layers.push(LayerSpec::MaxPool { sampling });
            }
            "dense" => {
                let outputs = line.usize("outputs", None)?;
                arch.layers.push(LayerSpec::Dense { outputs });
            }
            "relu" => arch.layers.push(LayerSpec::Relu),
            "batchnorm" => arch.layers.push(LayerSpec::BatchNorm),
            "flatten" => arch.layers.push(LayerSpec::Flatten),
            "shortcut" => {
                let from = line.usize("from", None)?;
                let to = line.usize("to", None)?;
                arch.shortcuts.push(Shortcut { from, to });
            }
            other => return Err(line.err(format!("unknown layer kind `{other}`"))),
        }
        line.finish()?;
    }
    if arch.layers.is_empty() {
        return Err(Error::Config {
            line: 0,
            message: "no layers".into(),
        });
    }
    Ok(arch)
}

pub fn load_arch(path: impl AsRef<Path>) -> Result<ArchSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_arch(&text)
}

/// Canonical text form: every field spelled out, one fixed order.
pub fn render_arch(arch: &ArchSpec) -> String {
    let mut out = format!("input depth={} size={}\n", arch.input_depth, arch.input_size);
    let triplet = |p: &SamplingTriplet| format!("kernel={} stride={} padding={}", p.kernel, p.stride, p.padding);
    for l in &arch.layers {
        let line = match l {
            LayerSpec::Conv { filters, sampling } => format!("conv filters={filters} {}", triplet(sampling)),
            LayerSpec::MaxPool { sampling } => format!("maxpool {}", triplet(sampling)),
            LayerSpec::Dense { outputs } => format!("dense outputs={outputs}"),
            LayerSpec::Relu => "relu".into(),
            LayerSpec::BatchNorm => "batchnorm".into(),
            LayerSpec::Flatten => "flatten".into(),
        };
        out.push_str(&line);
        out.push('\n');
    }
    let mut edges = arch.shortcuts.clone();
    edges.sort();
    for e in edges {
        out.push_str(&format!("shortcut from={} to={}\n", e.from, e.to));
    }
    out
}

/// CRC-32 of [`render_arch`].
pub fn fingerprint(arch: &ArchSpec) -> u32 {
    crc32fast::hash(render_arch(arch).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_round_trips() {
        let arch = ArchSpec::reference();
        let text = render_arch(&arch);
        assert_eq!(parse_arch(&text).unwrap(), arch);
        assert_eq!(text.lines().count(), 17);
    }

    #[test]
    fn defaults_and_comments() {
        let arch = parse_arch(
            "# tiny\ninput size=8\nconv filters=2 kernel=3   # unit stride\nrelu\nmaxpool kernel=2\nflatten\ndense outputs=10\n",
        )
        .unwrap();
        assert_eq!(arch.input_depth, 1);
        assert_eq!(
            arch.layers[2],
            LayerSpec::MaxPool {
                sampling: SamplingTriplet::new(2, 2, 0).unwrap()
            }
        );
        assert_eq!(
            arch.layers[0],
            LayerSpec::Conv {
                filters: 2,
                sampling: SamplingTriplet::new(3, 1, 0).unwrap()
            }
        );
    }

    #[test]
    fn errors_name_the_line() {
        let cases = [
            ("relu\nconv kernel=3\n", 2),
            ("dense outputs=ten\n", 1),
            ("flatten\n\nsoftplus\n", 3),
            ("dense outputs=3 bias=no\n", 1),
            ("conv filters=1 kernel=0\n", 1),
            ("dense outputs=3 outputs=4\n", 1),
        ];
        for (text, line) in cases {
            match parse_arch(text) {
                Err(Error::Config { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(parse_arch("# nothing\n").is_err());
    }

    #[test]
    fn fingerprint_tracks_architecture() {
        let a = ArchSpec::reference();
        let mut b = a.clone();
        b.layers[15] = LayerSpec::Dense { outputs: 9 };
        assert_eq!(fingerprint(&a), fingerprint(&ArchSpec::reference()));
        assert_ne!(fingerprint(&a), fingerprint(&b));
    }
}
