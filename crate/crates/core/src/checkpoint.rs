//! Checkpoint container: a plain-text header followed by little-endian f32
//! buffers.
//!
//! ```text
//! protoadapt-checkpoint 1
//! encoder 1 64 4 28 28
//! seed 7
//! episodes 2000
//! optimizer adam 0.001 2000
//! param block0.conv.weight 64 1 3 3
//! ...
//! moments block0.conv.weight
//! ...
//! end
//! ```
//!
//! After `end\n` come the parameter buffers in `param` order, then for each
//! `moments` line the first- and second-moment buffers of that parameter.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use protoadapt_tensor::{NdArray, Optimizer, OptimizerKind, ParamSet};

use crate::encoder::{self, EncoderConfig};
use crate::error::{Error, Result};

const MAGIC: &str = "protoadapt-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub params: ParamSet,
    pub seed: u64,
    pub episodes: usize,
    pub optimizer: Optimizer<f32>,
}

fn kind_name(kind: OptimizerKind) -> &'static str {
    match kind {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::Adam => "adam",
    }
}

pub fn parse_optimizer_kind(s: &str) -> Result<OptimizerKind> {
    match s {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adam" => Ok(OptimizerKind::Adam),
        other => Err(Error::Config(format!("unknown optimizer `{other}` (expected sgd or adam)"))),
    }
}

fn push_f32s(out: &mut Vec<u8>, data: &[f32]) {
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let end = self.pos + n * 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Checkpoint(format!("truncated data for `{what}`")))?;
        self.pos = end;
        Ok(chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }
}

fn field<T: std::str::FromStr>(token: Option<&str>, line: &str) -> Result<T> {
    token
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("malformed header line `{line}`")))
}

impl Checkpoint {
    pub fn new(config: EncoderConfig, params: ParamSet, seed: u64, episodes: usize, optimizer: Optimizer<f32>) -> Self {
        Checkpoint {
            config,
            params,
            seed,
            episodes,
            optimizer,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut header = String::new();
        let _ = writeln!(header, "{MAGIC} {VERSION}");
        let _ = writeln!(
            header,
            "encoder {} {} {} {} {}",
            c.in_channels, c.hidden_channels, c.num_blocks, c.input_hw.0, c.input_hw.1
        );
        let _ = writeln!(header, "seed {}", self.seed);
        let _ = writeln!(header, "episodes {}", self.episodes);
        let o = &self.optimizer;
        let _ = writeln!(header, "optimizer {} {} {}", kind_name(o.kind()), o.lr(), o.step_count());
        for (name, p, _) in self.params.iter() {
            let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(header, "param {name} {}", dims.join(" "));
        }
        for (name, _, _) in o.moments() {
            let _ = writeln!(header, "moments {name}");
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        for (_, p, _) in self.params.iter() {
            push_f32s(&mut out, p.value.data());
        }
        for (_, first, second) in o.moments() {
            push_f32s(&mut out, first);
            push_f32s(&mut out, second);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const END: &[u8] = b"\nend\n";
        let split = bytes
            .windows(END.len())
            .position(|w| w == END)
            .ok_or_else(|| Error::Checkpoint("header has no `end` line".into()))?;
        let header = std::str::from_utf8(&bytes[..split])
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let mut lines = header.lines();
        let first = lines.next().unwrap_or_default();
        if first != format!("{MAGIC} {VERSION}") {
            return Err(Error::Checkpoint(format!("unsupported header `{first}`")));
        }
        let (mut config, mut seed, mut episodes, mut optim) = (None, None, None, None);
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        let mut moment_names: Vec<String> = Vec::new();
        for line in lines {
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("encoder") => {
                    let v: Vec<usize> = tok.map(|t| field(Some(t), line)).collect::<Result<_>>()?;
                    if v.len() != 5 {
                        return Err(Error::Checkpoint(format!("malformed header line `{line}`")));
                    }
                    config = Some(EncoderConfig {
                        in_channels: v[0],
                        hidden_channels: v[1],
                        num_blocks: v[2],
                        input_hw: (v[3], v[4]),
                    });
                }
                Some("seed") => seed = Some(field::<u64>(tok.next(), line)?),
                Some("episodes") => episodes = Some(field::<usize>(tok.next(), line)?),
                Some("optimizer") => {
                    let kind = parse_optimizer_kind(tok.next().unwrap_or_default())
                        .map_err(|e| Error::Checkpoint(e.to_string()))?;
                    let lr = field::<f64>(tok.next(), line)?;
                    let steps = field::<u64>(tok.next(), line)?;
                    optim = Some((kind, lr, steps));
                }
                Some("param") => {
                    let name = tok.next().ok_or_else(|| Error::Checkpoint(format!("malformed header line `{line}`")))?;
                    let dims = tok.map(|t| field(Some(t), line)).collect::<Result<_>>()?;
                    shapes.push((name.to_string(), dims));
                }
                Some("moments") => {
                    let name = tok.next().ok_or_else(|| Error::Checkpoint(format!("malformed header line `{line}`")))?;
                    moment_names.push(name.to_string());
                }
                _ => return Err(Error::Checkpoint(format!("unknown header line `{line}`"))),
            }
        }
        let missing = |what: &str| Error::Checkpoint(format!("header is missing `{what}`"));
        let config = config.ok_or_else(|| missing("encoder"))?;
        let (kind, lr, steps) = optim.ok_or_else(|| missing("optimizer"))?;

        let mut reader = Reader {
            bytes,
            pos: split + END.len(),
        };
        let mut params = ParamSet::new();
        for (name, dims) in &shapes {
            let n = dims.iter().product();
            let data = reader.f32s(n, name)?;
            params.insert(name.clone(), NdArray::new(dims.clone(), data)?);
        }
        let mut moments = Vec::with_capacity(moment_names.len());
        for name in moment_names {
            let n = params
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("moments for unknown parameter `{name}`")))?
                .len();
            let first = reader.f32s(n, &name)?;
            let second = reader.f32s(n, &name)?;
            moments.push((name, first, second));
        }
        if reader.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after declared buffers",
                bytes.len() - reader.pos
            )));
        }
        encoder::validate_params(&config, &params).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let optimizer = Optimizer::restore(kind, lr, steps, moments).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Checkpoint {
            config,
            params,
            seed: seed.ok_or_else(|| missing("seed"))?,
            episodes: episodes.ok_or_else(|| missing("episodes"))?,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Errors listing every encoder field that differs from `expected`.
    pub fn check_config(&self, expected: &EncoderConfig) -> Result<()> {
        let (a, b) = (&self.config, expected);
        let mut diffs = Vec::new();
        if a.in_channels != b.in_channels {
            diffs.push(format!("in_channels: checkpoint {} vs config {}", a.in_channels, b.in_channels));
        }
        if a.hidden_channels != b.hidden_channels {
            diffs.push(format!("hidden_channels: checkpoint {} vs config {}", a.hidden_channels, b.hidden_channels));
        }
        if a.num_blocks != b.num_blocks {
            diffs.push(format!("num_blocks: checkpoint {} vs config {}", a.num_blocks, b.num_blocks));
        }
        if a.input_hw != b.input_hw {
            diffs.push(format!("input_hw: checkpoint {:?} vs config {:?}", a.input_hw, b.input_hw));
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("checkpoint does not match config: {}", diffs.join("; "))))
        }
    }
}
