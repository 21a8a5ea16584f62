use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::netgraph::NetGraph;
use crate::reference;
use crate::taskgraph::{DataSource, EdgeParam, Params, Sample};
use crate::tensor_ops::{load_volume, Dim3, Scalar, Volume};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSpec {
    /// `samples` random inputs labelled by a fixed random teacher net.
    Synthetic { samples: usize },
    /// Directory holding `input/` and `label/` subdirectories of volume files.
    Dir(PathBuf),
}

/// Fixed set of samples, served round-robin, one per round.
pub struct DataProvider<T: Scalar> {
    samples: Vec<Sample<T>>,
    offset: usize,
}

impl<T: Scalar> DataProvider<T> {
    pub fn new(spec: &DataSpec, g: &NetGraph, seed: u64) -> Result<Self> {
        let samples = match spec {
            DataSpec::Synthetic { samples } => synthetic(g, seed, *samples)?,
            DataSpec::Dir(dir) => from_dir(g, dir)?,
        };
        if samples.is_empty() {
            return Err(Error::Config("data source holds no samples".into()));
        }
        Ok(DataProvider { samples, offset: 0 })
    }

    pub fn from_samples(samples: Vec<Sample<T>>) -> Self {
        DataProvider { samples, offset: 0 }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, i: usize) -> &Sample<T> {
        &self.samples[i % self.samples.len()]
    }

    /// Round `r` of the next run is served sample `r + offset`.
    pub fn set_offset(&mut self, offset: usize) {
        self.offset = offset;
    }
}

impl<T: Scalar> DataSource<T> for DataProvider<T> {
    fn sample(&self, round: usize) -> Result<Sample<T>> {
        Ok(self.get(round + self.offset).clone())
    }
}

fn synthetic<T: Scalar>(g: &NetGraph, seed: u64, count: usize) -> Result<Vec<Sample<T>>> {
    // Centred kernels with He-style gain: inputs are all positive, so a
    // plain random kernel can switch a rectified map off everywhere.
    let mut teacher: Params<T> = Params::init(g, seed.wrapping_add(1));
    for (e, p) in teacher.edges.iter_mut().enumerate() {
        if let EdgeParam::Kernel(k) = p {
            let n = k.weights.len() as f64;
            let mean = k.weights.sum_f64() / n;
            let centred = k.weights.map(|w| w - T::of(mean));
            let sd = (centred.dot(&centred) / n).sqrt();
            let fan_in = (g.in_edges(g.edge(e).to).len() as f64) * n;
            let gain = if sd > 0.0 { (2.0 / fan_in).sqrt() / sd } else { 0.0 };
            k.weights = centred.map(|w| w * T::of(gain));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let shape = g.input_shape();
    (0..count)
        .map(|_| {
            let inputs: Vec<Volume<T>> = g
                .inputs()
                .iter()
                .map(|_| Volume::from_fn(shape, |_, _, _| T::of(rng.random_range(0.0..1.0))))
                .collect();
            let desired = reference::outputs(g, &teacher, &inputs)?;
            Ok(Sample { inputs, desired })
        })
        .collect()
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> =
        std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file());
    files.sort();
    Ok(files)
}

fn check(v: &Volume<impl Scalar>, want: Dim3, path: &Path) -> Result<()> {
    if v.dims() != want {
        return Err(Error::Config(format!("{} has extent {:?}, the net needs {want:?}", path.display(), v.dims())));
    }
    Ok(())
}

/// Files are paired in name order; a net with several inputs (outputs)
/// takes that many consecutive files per sample.
fn from_dir<T: Scalar>(g: &NetGraph, dir: &Path) -> Result<Vec<Sample<T>>> {
    let inputs = sorted_files(&dir.join("input"))?;
    let labels = sorted_files(&dir.join("label"))?;
    let (ni, no) = (g.inputs().len(), g.outputs().len());
    let count = inputs.len() / ni;
    if inputs.len() % ni != 0 || labels.len() != count * no {
        return Err(Error::Config(format!(
            "{}: {} input and {} label files do not form whole samples for {ni} inputs and {no} outputs",
            dir.display(),
            inputs.len(),
            labels.len()
        )));
    }
    (0..count)
        .map(|s| {
            let load = |files: &[PathBuf], want: Dim3| -> Result<Vec<Volume<T>>> {
                files
                    .iter()
                    .map(|p| {
                        let v = load_volume(p)?;
                        check(&v, want, p)?;
                        Ok(v)
                    })
                    .collect()
            };
            Ok(Sample {
                inputs: load(&inputs[s * ni..(s + 1) * ni], g.input_shape())?,
                desired: load(&labels[s * no..(s + 1) * no], g.output_shape())?,
            })
        })
        .collect()
}
