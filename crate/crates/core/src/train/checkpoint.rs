//! Checkpoint directories.
//!
//! ```text
//! <dir>/manifest.json     config, counters, RNG state, tensor index
//! <dir>/history.csv       per-step metrics
//! <dir>/tensors/NNNN.bin  one array per file
//! ```
//!
//! Each `.bin` file is `b"HSRT"`, a version byte, a dtype byte, a `u16`
//! name length, the UTF-8 name, a `u32` rank, one `u64` per extent, then
//! the values; all integers and values little-endian.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{read_metrics_csv, write_history_csv};
use super::optim::OptimizerState;
use super::state::{TrainConfig, TrainEvent, TrainState};
use crate::data::BatchCursor;
use crate::error::{Error, Result};
use crate::nn::{Generator, GeneratorSpec, Module};
use crate::tensor::{DType, Element, Tensor};

pub const CHECKPOINT_FORMAT: &str = "hetsr-checkpoint-1";
const MAGIC: &[u8; 4] = b"HSRT";
const VERSION: u8 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
    dtype: DType,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RngState {
    /// 32-byte ChaCha key, hex.
    seed: String,
    stream: u64,
    /// Position in the keystream (a `u128`, as a decimal string).
    word_pos: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    dtype: DType,
    iteration: u64,
    config: TrainConfig,
    rng: RngState,
    cursor: BatchCursor,
    generator_opt_steps: u64,
    critic_opt_steps: u64,
    events: Vec<TrainEvent>,
    tensors: Vec<TensorEntry>,
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn encode<T: Element>(name: &str, t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + name.len() + 8 * t.ndim() + t.numel() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE.code());
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }
}

/// Decodes one array file into `(name, tensor)`, converting precision if needed.
fn decode<T: Element>(path: &Path, bytes: &[u8]) -> Result<(String, Tensor<T>)> {
    let mut r = Reader { bytes, pos: 0 };
    let truncated = || bad(path, "truncated array file");
    if r.take(4) != Some(MAGIC.as_slice()) {
        return Err(bad(path, "not an array file (bad magic)"));
    }
    let version = r.take(1).ok_or_else(truncated)?[0];
    if version != VERSION {
        return Err(bad(path, format!("unsupported array version {version}")));
    }
    let code = r.take(1).ok_or_else(truncated)?[0];
    let dtype = DType::from_code(code).ok_or_else(|| bad(path, format!("unknown dtype code {code}")))?;
    let name_len = u16::from_le_bytes(r.take(2).ok_or_else(truncated)?.try_into().expect("2 bytes")) as usize;
    let name = std::str::from_utf8(r.take(name_len).ok_or_else(truncated)?)
        .map_err(|_| bad(path, "array name is not UTF-8"))?
        .to_string();
    let ndim = u32::from_le_bytes(r.take(4).ok_or_else(truncated)?.try_into().expect("4 bytes")) as usize;
    let shape = (0..ndim)
        .map(|_| {
            r.take(8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
                .ok_or_else(truncated)
        })
        .collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let raw = r.take(n * dtype.size()).ok_or_else(truncated)?;
    if r.pos != bytes.len() {
        return Err(bad(path, "trailing bytes after array data"));
    }
    let data: Vec<T> = match dtype {
        DType::F32 => raw.chunks(4).map(|c| T::from_f64(f32::read_le(c) as f64)).collect(),
        DType::F64 => raw.chunks(8).map(|c| T::from_f64(f64::read_le(c))).collect(),
    };
    let t = Tensor::new(&shape, data).map_err(|e| bad(path, e.to_string()))?;
    Ok((name, t))
}

fn tag<'a, T: Element>(p: &str, v: Vec<(String, &'a Tensor<T>)>) -> Vec<(String, &'a Tensor<T>)> {
    v.into_iter().map(|(n, t)| (format!("{p}/{n}"), t)).collect()
}

fn named_state<T: Element>(s: &TrainState<T>) -> Vec<(String, &Tensor<T>)> {
    let mut v = tag("generator", s.generator.named_parameters());
    v.extend(tag("critic", s.critic.named_parameters()));
    v.extend(tag("generator_opt", s.generator_opt.named_tensors()));
    v.extend(tag("critic_opt", s.critic_opt.named_tensors()));
    v
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `state` into `dir` (created if needed; existing files replaced).
pub fn save_checkpoint<T: Element>(state: &TrainState<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let tdir = dir.join("tensors");
    std::fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
    let mut entries = Vec::new();
    for (i, (name, t)) in named_state(state).into_iter().enumerate() {
        let file = format!("tensors/{i:04}.bin");
        write(&dir.join(&file), &encode(&name, t))?;
        entries.push(TensorEntry {
            name,
            file,
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
        });
    }
    let rng = &state.rng;
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        dtype: T::DTYPE,
        iteration: state.iteration,
        config: state.config.clone(),
        rng: RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        },
        cursor: state.cursor,
        generator_opt_steps: state.generator_opt.step_count(),
        critic_opt_steps: state.critic_opt.step_count(),
        events: state.events.clone(),
        tensors: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    write(&dir.join("manifest.json"), json.as_bytes())?;
    write_history_csv(&dir.join("history.csv"), &state.history)
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| bad(&path, e.to_string()))?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(bad(&path, format!("unsupported format {:?}", m.format)));
    }
    Ok(m)
}

/// Reads the named arrays of a checkpoint, in manifest order.
fn read_tensors<T: Element>(dir: &Path, m: &Manifest, prefix: &str) -> Result<Vec<(String, Tensor<T>)>> {
    m.tensors
        .iter()
        .filter(|e| e.name.starts_with(prefix))
        .map(|e| {
            let path: PathBuf = dir.join(&e.file);
            let bytes = std::fs::read(&path).map_err(|err| Error::io(&path, err))?;
            let (name, t) = decode::<T>(&path, &bytes)?;
            if name != e.name || t.shape() != e.shape.as_slice() {
                return Err(bad(&path, format!("array {name:?} does not match manifest entry {:?}", e.name)));
            }
            Ok((name[prefix.len()..].to_string(), t))
        })
        .collect()
}

fn fill<T: Element, M: Module<T>>(dir: &Path, module: &mut M, arrays: Vec<(String, Tensor<T>)>) -> Result<()> {
    let names: Vec<String> = module.named_parameters().into_iter().map(|(n, _)| n).collect();
    let params = module.parameters_mut();
    if params.len() != arrays.len() {
        return Err(bad(dir, format!("expected {} arrays, found {}", params.len(), arrays.len())));
    }
    for ((p, want), (name, t)) in params.into_iter().zip(names).zip(arrays) {
        if name != want || p.shape() != t.shape() {
            return Err(bad(dir, format!("array {name:?} does not fit parameter {want:?}")));
        }
        *p = t;
    }
    Ok(())
}

fn parse_seed(dir: &Path, hex: &str) -> Result<[u8; 32]> {
    let mut seed = [0u8; 32];
    if hex.len() != 64 {
        return Err(bad(dir, "RNG seed must be 64 hex digits"));
    }
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad(dir, "RNG seed is not hex"))?;
    }
    Ok(seed)
}

/// Restores a full training state. Loading into a different precision
/// converts every array.
pub fn load_checkpoint<T: Element>(dir: impl AsRef<Path>) -> Result<TrainState<T>> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    let mut state = TrainState::<T>::new(m.config.clone())?;
    fill(dir, &mut state.generator, read_tensors(dir, &m, "generator/")?)?;
    fill(dir, &mut state.critic, read_tensors(dir, &m, "critic/")?)?;
    let opt = |prefix: &str| -> Result<Vec<Tensor<T>>> {
        Ok(read_tensors(dir, &m, prefix)?.into_iter().map(|(_, t)| t).collect())
    };
    state.generator_opt =
        OptimizerState::restore(m.config.generator_optimizer, m.generator_opt_steps, opt("generator_opt/")?)?;
    state.critic_opt = OptimizerState::restore(m.config.critic_optimizer, m.critic_opt_steps, opt("critic_opt/")?)?;
    let mut rng = ChaCha8Rng::from_seed(parse_seed(dir, &m.rng.seed)?);
    rng.set_stream(m.rng.stream);
    rng.set_word_pos(m.rng.word_pos.parse().map_err(|_| bad(dir, "bad RNG position"))?);
    state.rng = rng;
    state.iteration = m.iteration;
    state.cursor = m.cursor;
    state.events = m.events;
    state.history = read_metrics_csv(dir.join("history.csv"))?;
    Ok(state)
}

/// Loads only the generator (for inference).
pub fn load_generator<T: Element>(dir: impl AsRef<Path>) -> Result<Generator<T>> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    let spec: &GeneratorSpec = &m.config.generator;
    let mut g = Generator::new(spec, &mut ChaCha8Rng::seed_from_u64(0))?;
    fill(dir, &mut g, read_tensors(dir, &m, "generator/")?)?;
    Ok(g)
}
