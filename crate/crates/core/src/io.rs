//! On-disk formats. Numeric payloads are flat little-endian blobs; every blob
//! has a TOML manifest next to it describing its layout.
//!
//! Dataset directory:
//!
//! ```text
//! manifest.toml          generation config, split, counts
//! features/000012.f32    3 × H × W single-precision, channel-major
//! features/000012.toml   grid spec and channel order
//! demos.csv              sample,world,states ("row:col" separated by spaces)
//! worlds/000003.bin      obstacle mask, traversable mask (u8), terrain height
//!                        and true reward (f64)
//! ```
//!
//! Checkpoint directory: `manifest.toml` (architecture, layer graph, seed,
//! step, tensor sizes) and `params.f32` (parameters in [`Network::params`]
//! order followed by batch-norm running mean and variance per node).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::arch::ArchitectureId;
use crate::error::{Error, Result};
use crate::grid::{Cell, FeatureMap, GridSpec, Trajectory};
use crate::nn::{LayerSpec, Network};
use crate::synth::{Dataset, DatasetConfig, DatasetSample, GroundTruthWorld};
use crate::train::Checkpoint;

const FORMAT_VERSION: u32 = 1;

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::format(path, e.to_string()))?;
    write_file(path, text)
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    toml::from_str(&read_string(path)?).map_err(|e| Error::format(path, e.to_string()))
}

fn f32_bytes(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(|v| (v as f32).to_le_bytes()).collect()
}

fn f32_values(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f64>> {
    if bytes.len() != 4 * expected {
        return Err(Error::format(
            path,
            format!("expected {} bytes, found {}", 4 * expected, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureManifest {
    format: u32,
    spec: GridSpec,
    channels: Vec<String>,
    dtype: String,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut p = stem.as_os_str().to_owned();
    p.push(".");
    p.push(ext);
    PathBuf::from(p)
}

/// Writes `<stem>.f32` and `<stem>.toml`. Values are stored in single
/// precision; maps produced by [`FeatureMap::quantized`] round-trip exactly.
pub fn save_feature_map(stem: &Path, map: &FeatureMap) -> Result<()> {
    let manifest = FeatureManifest {
        format: FORMAT_VERSION,
        spec: map.spec,
        channels: FeatureMap::CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        dtype: "f32le".into(),
    };
    write_toml(&with_ext(stem, "toml"), &manifest)?;
    write_file(&with_ext(stem, "f32"), f32_bytes(map.to_planes()))
}

pub fn load_feature_map(stem: &Path) -> Result<FeatureMap> {
    let mpath = with_ext(stem, "toml");
    let manifest: FeatureManifest = read_toml(&mpath)?;
    if manifest.channels != FeatureMap::CHANNEL_NAMES {
        return Err(Error::format(&mpath, format!("unexpected channel order {:?}", manifest.channels)));
    }
    if manifest.dtype != "f32le" {
        return Err(Error::format(&mpath, format!("unsupported dtype {}", manifest.dtype)));
    }
    manifest.spec.validate()?;
    let bpath = with_ext(stem, "f32");
    let n = manifest.spec.n_cells();
    let mut values = f32_values(&bpath, &read_bytes(&bpath)?, 3 * n)?;
    let visibility = values.split_off(2 * n);
    let height_variance = values.split_off(n);
    Ok(FeatureMap {
        spec: manifest.spec,
        mean_height: values,
        height_variance,
        visibility,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    format: u32,
    n_samples: usize,
    n_worlds: usize,
    train: Vec<usize>,
    test: Vec<usize>,
    config: DatasetConfig,
}

fn sample_stem(dir: &Path, i: usize) -> PathBuf {
    dir.join("features").join(format!("{i:06}"))
}

fn world_path(dir: &Path, w: usize) -> PathBuf {
    dir.join("worlds").join(format!("{w:06}.bin"))
}

fn world_bytes(world: &GroundTruthWorld) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(world.obstacle_mask.iter().map(|&b| b as u8));
    out.extend(world.traversable.iter().map(|&b| b as u8));
    for v in world.terrain_height.iter().chain(&world.true_reward) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn parse_world(path: &Path, bytes: &[u8], spec: GridSpec) -> Result<GroundTruthWorld> {
    let n = spec.n_cells();
    if bytes.len() != 2 * n + 16 * n {
        return Err(Error::format(path, format!("expected {} bytes, found {}", 18 * n, bytes.len())));
    }
    let mask = |s: &[u8]| -> Result<Vec<bool>> {
        s.iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::format(path, format!("invalid mask byte {b}"))),
            })
            .collect()
    };
    let f64s = |s: &[u8]| -> Vec<f64> {
        s.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight")))
            .collect()
    };
    Ok(GroundTruthWorld {
        spec,
        obstacle_mask: mask(&bytes[..n])?,
        traversable: mask(&bytes[n..2 * n])?,
        terrain_height: f64s(&bytes[2 * n..10 * n]),
        true_reward: f64s(&bytes[10 * n..]),
    })
}

fn demo_line(i: usize, s: &DatasetSample) -> String {
    let cells: Vec<String> = s.demo.states().iter().map(|c| format!("{}:{}", c.row, c.col)).collect();
    format!("{i},{},{}\n", s.world, cells.join(" "))
}

fn parse_demo_line(path: &Path, line: &str, spec: GridSpec) -> Result<(usize, usize, Trajectory)> {
    let bad = |m: &str| Error::format(path, format!("{m}: {line:?}"));
    let mut parts = line.splitn(3, ',');
    let mut field = || parts.next().ok_or_else(|| bad("missing field"));
    let index: usize = field()?.parse().map_err(|_| bad("bad sample index"))?;
    let world: usize = field()?.parse().map_err(|_| bad("bad world index"))?;
    let states = field()?
        .split_whitespace()
        .map(|tok| {
            let (r, c) = tok.split_once(':').ok_or_else(|| bad("bad cell"))?;
            Ok(Cell::new(
                r.parse().map_err(|_| bad("bad row"))?,
                c.parse().map_err(|_| bad("bad column"))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((index, world, Trajectory::from_states(spec.shape(), states)?))
}

/// Writes the dataset, its demonstrations and its generating worlds.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    let manifest = DatasetManifest {
        format: FORMAT_VERSION,
        n_samples: dataset.samples.len(),
        n_worlds: dataset.worlds.len(),
        train: dataset.train.clone(),
        test: dataset.test.clone(),
        config: dataset.config.clone(),
    };
    write_toml(&dir.join("manifest.toml"), &manifest)?;
    let mut demos = String::from("sample,world,states\n");
    for (i, s) in dataset.samples.iter().enumerate() {
        save_feature_map(&sample_stem(dir, i), &s.features)?;
        demos.push_str(&demo_line(i, s));
    }
    write_file(&dir.join("demos.csv"), demos)?;
    for (w, world) in dataset.worlds.iter().enumerate() {
        write_file(&world_path(dir, w), world_bytes(world))?;
    }
    Ok(())
}

/// Loads and audits a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join("manifest.toml");
    let m: DatasetManifest = read_toml(&mpath)?;
    if m.format != FORMAT_VERSION {
        return Err(Error::format(&mpath, format!("unsupported format version {}", m.format)));
    }
    let spec = m.config.spec;
    spec.validate()?;
    let worlds = (0..m.n_worlds)
        .map(|w| {
            let p = world_path(dir, w);
            parse_world(&p, &read_bytes(&p)?, spec)
        })
        .collect::<Result<Vec<_>>>()?;
    let dpath = dir.join("demos.csv");
    let text = read_string(&dpath)?;
    let mut lines = text.lines();
    if lines.next() != Some("sample,world,states") {
        return Err(Error::format(&dpath, "missing header"));
    }
    let mut samples = Vec::with_capacity(m.n_samples);
    for (expected, line) in lines.enumerate() {
        let (i, world, demo) = parse_demo_line(&dpath, line, spec)?;
        if i != expected {
            return Err(Error::format(&dpath, format!("sample {i} out of order")));
        }
        let features = load_feature_map(&sample_stem(dir, i))?;
        samples.push(DatasetSample {
            features,
            start: demo.start(),
            goal: demo.end(),
            demo,
            world,
        });
    }
    if samples.len() != m.n_samples {
        return Err(Error::format(
            &dpath,
            format!("{} demonstrations, manifest lists {}", samples.len(), m.n_samples),
        ));
    }
    let ds = Dataset {
        config: m.config,
        worlds,
        samples,
        train: m.train,
        test: m.test,
    };
    ds.audit()?;
    Ok(ds)
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    inputs: Vec<usize>,
    layer: LayerSpec,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format: u32,
    architecture: ArchitectureId,
    seed: u64,
    step: u64,
    blob: String,
    dtype: String,
    param_lengths: Vec<usize>,
    buffer_lengths: Vec<usize>,
    spec: GridSpec,
    layers: Vec<LayerEntry>,
}

impl Checkpoint {
    /// Copy with every parameter and buffer rounded to single precision, i.e.
    /// exactly what [`save_checkpoint`] stores.
    pub fn quantized(&self) -> Checkpoint {
        let mut out = self.clone();
        for p in out.network.params_mut() {
            p.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        for (m, v) in out.network.buffers_mut() {
            m.iter_mut().chain(v.iter_mut()).for_each(|x| *x = *x as f32 as f64);
        }
        out
    }
}

pub fn save_checkpoint(dir: &Path, ck: &Checkpoint) -> Result<()> {
    let net = &ck.network;
    let params = net.params();
    let buffers = net.buffers();
    let manifest = CheckpointManifest {
        format: FORMAT_VERSION,
        architecture: ck.architecture,
        seed: ck.seed,
        step: ck.step,
        blob: "params.f32".into(),
        dtype: "f32le".into(),
        param_lengths: params.iter().map(|p| p.len()).collect(),
        buffer_lengths: buffers.iter().map(|(m, _)| m.len()).collect(),
        spec: ck.spec,
        layers: net
            .specs()
            .into_iter()
            .map(|(layer, inputs)| LayerEntry { inputs, layer })
            .collect(),
    };
    write_toml(&dir.join("manifest.toml"), &manifest)?;
    let values = params
        .iter()
        .flat_map(|p| p.iter().copied())
        .chain(buffers.iter().flat_map(|(m, v)| m.iter().chain(v.iter()).copied()));
    write_file(&dir.join(&manifest.blob), f32_bytes(values))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let mpath = dir.join("manifest.toml");
    let m: CheckpointManifest = read_toml(&mpath)?;
    if m.format != FORMAT_VERSION || m.dtype != "f32le" {
        return Err(Error::format(&mpath, "unsupported checkpoint format"));
    }
    let specs: Vec<(LayerSpec, Vec<usize>)> = m.layers.into_iter().map(|e| (e.layer, e.inputs)).collect();
    let mut network = Network::from_specs(&specs)?;
    let lengths: Vec<usize> = network.params().iter().map(|p| p.len()).collect();
    let buf_lengths: Vec<usize> = network.buffers().iter().map(|(b, _)| b.len()).collect();
    if lengths != m.param_lengths || buf_lengths != m.buffer_lengths {
        return Err(Error::format(&mpath, "tensor sizes do not match the layer graph"));
    }
    let bpath = dir.join(&m.blob);
    let total = lengths.iter().sum::<usize>() + 2 * buf_lengths.iter().sum::<usize>();
    let values = f32_values(&bpath, &read_bytes(&bpath)?, total)?;
    let mut it = values.into_iter();
    for p in network.params_mut() {
        p.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
    }
    for (mean, var) in network.buffers_mut() {
        mean.iter_mut()
            .chain(var.iter_mut())
            .for_each(|v| *v = it.next().expect("length checked"));
    }
    network.set_mode(crate::nn::Mode::Eval);
    Ok(Checkpoint {
        architecture: m.architecture,
        spec: m.spec,
        network,
        seed: m.seed,
        step: m.step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch;
    use crate::rng::rng_for;

    #[test]
    fn feature_map_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(5, 4, 0.5, [1.0, -2.0]).unwrap();
        let mut f = FeatureMap::zeros(spec);
        for i in 0..spec.n_cells() {
            f.mean_height[i] = 0.1 * i as f64;
            f.height_variance[i] = 1e-3 * (i * i) as f64;
            f.visibility[i] = (i % 2) as f64;
        }
        let f = f.quantized();
        let stem = dir.path().join("map");
        save_feature_map(&stem, &f).unwrap();
        assert_eq!(load_feature_map(&stem).unwrap(), f);
    }

    #[test]
    fn truncated_blob_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(3, 3, 1.0, [0.0, 0.0]).unwrap();
        let stem = dir.path().join("m");
        save_feature_map(&stem, &FeatureMap::zeros(spec)).unwrap();
        fs::write(with_ext(&stem, "f32"), [0u8; 7]).unwrap();
        assert!(matches!(load_feature_map(&stem), Err(Error::Format { .. })));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for id in ArchitectureId::ALL {
            let mut net = arch::build(id, 3).unwrap();
            net.initialize(&mut rng_for(3, 0, 0), 0.1, -3.0).unwrap();
            for (k, (m, v)) in net.buffers_mut().into_iter().enumerate() {
                m.iter_mut().for_each(|x| *x = 0.1 * k as f64);
                v.iter_mut().for_each(|x| *x = 1.0 + 0.01 * k as f64);
            }
            net.set_mode(crate::nn::Mode::Eval);
            let ck = Checkpoint {
                architecture: id,
                spec: GridSpec::default(),
                network: net,
                seed: 3,
                step: 17,
            }
            .quantized();
            let d = dir.path().join(id.as_str());
            save_checkpoint(&d, &ck).unwrap();
            let back = load_checkpoint(&d).unwrap();
            assert_eq!(back, ck);
        }
    }
}
