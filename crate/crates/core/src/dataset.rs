//! Snapshot datasets: `samples × times × nodes × channels` on a periodic grid.
//!
//! On disk a dataset is a directory with `manifest.kv` and `fields.bin`
//! (little-endian f64 in sample → time → node → channel order).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::GridGraph;
use crate::kv::KvMap;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.kv";
pub const FIELDS: &str = "fields.bin";
const FORMAT: &str = "grade-dataset-1";

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotDataset {
    /// Grid points per axis (`[nx]` or `[nx, ny]`).
    pub dims: Vec<usize>,
    pub length: f64,
    pub nu: f64,
    /// Time between stored snapshots.
    pub dt: f64,
    pub n_samples: usize,
    pub n_times: usize,
    pub channels: Vec<String>,
    pub seed: u64,
    data: Vec<f64>,
}

impl SnapshotDataset {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dims: Vec<usize>,
        length: f64,
        nu: f64,
        dt: f64,
        n_samples: usize,
        n_times: usize,
        channels: Vec<String>,
        seed: u64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if dims.is_empty() || dims.len() > 2 || dims.contains(&0) {
            return Err(Error::config(format!("bad grid dims {dims:?}")));
        }
        if channels.len() != dims.len() {
            return Err(Error::config(format!(
                "{} channels on a {}-D grid",
                channels.len(),
                dims.len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) || !(length > 0.0) {
            return Err(Error::config("dt and length must be positive"));
        }
        let ds = SnapshotDataset {
            dims,
            length,
            nu,
            dt,
            n_samples,
            n_times,
            channels,
            seed,
            data: Vec::new(),
        };
        if data.len() != ds.expected_len() {
            return Err(Error::shape(
                "dataset",
                format!("{} values, expected {}", data.len(), ds.expected_len()),
            ));
        }
        Ok(SnapshotDataset { data, ..ds })
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    fn snapshot_len(&self) -> usize {
        self.n_nodes() * self.n_channels()
    }

    fn expected_len(&self) -> usize {
        self.n_samples * self.n_times * self.snapshot_len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn offset(&self, sample: usize, time: usize) -> usize {
        assert!(sample < self.n_samples && time < self.n_times, "snapshot index");
        (sample * self.n_times + time) * self.snapshot_len()
    }

    pub fn snapshot_slice(&self, sample: usize, time: usize) -> &[f64] {
        let o = self.offset(sample, time);
        &self.data[o..o + self.snapshot_len()]
    }

    /// One snapshot as an `n × channels` tensor.
    pub fn snapshot(&self, sample: usize, time: usize) -> Tensor {
        Tensor::matrix(self.n_nodes(), self.n_channels(), self.snapshot_slice(sample, time).to_vec())
            .expect("snapshot shape")
    }

    /// The periodic graph that matches this dataset's node ordering.
    pub fn graph(&self) -> Result<GridGraph> {
        match self.dims[..] {
            [nx] => GridGraph::periodic_1d(nx, self.length, 4),
            [nx, ny] => GridGraph::periodic_2d(nx, ny, self.length),
            _ => unreachable!("dims validated at construction"),
        }
    }

    /// Grid spacing along each axis.
    pub fn spacing(&self) -> Vec<f64> {
        self.dims.iter().map(|&n| self.length / n as f64).collect()
    }

    /// Keep snapshots `0, ratio, 2·ratio, …`.
    pub fn subsample_times(&self, ratio: usize) -> Result<SnapshotDataset> {
        if ratio == 0 {
            return Err(Error::config("subsample ratio must be positive"));
        }
        let keep: Vec<usize> = (0..self.n_times).step_by(ratio).collect();
        let mut data = Vec::with_capacity(self.n_samples * keep.len() * self.snapshot_len());
        for s in 0..self.n_samples {
            for &t in &keep {
                data.extend_from_slice(self.snapshot_slice(s, t));
            }
        }
        SnapshotDataset::new(
            self.dims.clone(),
            self.length,
            self.nu,
            self.dt * ratio as f64,
            self.n_samples,
            keep.len(),
            self.channels.clone(),
            self.seed,
            data,
        )
    }

    /// Keep every `stride`-th grid point along each axis.
    pub fn restrict(&self, stride: usize) -> Result<SnapshotDataset> {
        if stride == 0 || self.dims.iter().any(|&n| n % stride != 0) {
            return Err(Error::config(format!(
                "stride {stride} does not divide grid {:?}",
                self.dims
            )));
        }
        let dims: Vec<usize> = self.dims.iter().map(|&n| n / stride).collect();
        let nx = self.dims[0];
        let c = self.n_channels();
        let nodes: Vec<usize> = match dims[..] {
            [mx] => (0..mx).map(|i| i * stride).collect(),
            [mx, my] => (0..my)
                .flat_map(|iy| (0..mx).map(move |ix| iy * stride * nx + ix * stride))
                .collect(),
            _ => unreachable!(),
        };
        let mut data = Vec::with_capacity(self.n_samples * self.n_times * nodes.len() * c);
        for s in 0..self.n_samples {
            for t in 0..self.n_times {
                let snap = self.snapshot_slice(s, t);
                for &n in &nodes {
                    data.extend_from_slice(&snap[n * c..(n + 1) * c]);
                }
            }
        }
        SnapshotDataset::new(
            dims,
            self.length,
            self.nu,
            self.dt,
            self.n_samples,
            self.n_times,
            self.channels.clone(),
            self.seed,
            data,
        )
    }

    /// Samples `range` as a new dataset.
    pub fn select_samples(&self, range: std::ops::Range<usize>) -> Result<SnapshotDataset> {
        if range.end > self.n_samples || range.start > range.end {
            return Err(Error::config(format!(
                "sample range {range:?} outside 0..{}",
                self.n_samples
            )));
        }
        let per = self.n_times * self.snapshot_len();
        let data = self.data[range.start * per..range.end * per].to_vec();
        SnapshotDataset::new(
            self.dims.clone(),
            self.length,
            self.nu,
            self.dt,
            range.len(),
            self.n_times,
            self.channels.clone(),
            self.seed,
            data,
        )
    }

    /// Keep the first `n` snapshots of every sample.
    pub fn truncate_times(&self, n: usize) -> Result<SnapshotDataset> {
        if n == 0 || n > self.n_times {
            return Err(Error::config(format!("cannot keep {n} of {} snapshots", self.n_times)));
        }
        let mut data = Vec::with_capacity(self.n_samples * n * self.snapshot_len());
        for s in 0..self.n_samples {
            for t in 0..n {
                data.extend_from_slice(self.snapshot_slice(s, t));
            }
        }
        SnapshotDataset::new(
            self.dims.clone(),
            self.length,
            self.nu,
            self.dt,
            self.n_samples,
            n,
            self.channels.clone(),
            self.seed,
            data,
        )
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut kv = KvMap::new();
        kv.set("format", FORMAT);
        kv.set("ndim", self.ndim());
        kv.set("nx", self.dims[0]);
        if let Some(ny) = self.dims.get(1) {
            kv.set("ny", ny);
        }
        kv.set("L", format!("{:?}", self.length));
        kv.set("nu", format!("{:?}", self.nu));
        kv.set("dt", format!("{:?}", self.dt));
        kv.set("n_samples", self.n_samples);
        kv.set("n_times", self.n_times);
        kv.set("channels", self.channels.join(","));
        kv.set("seed", self.seed);
        let manifest = dir.join(MANIFEST);
        fs::write(&manifest, kv.to_text()).map_err(|e| Error::io(&manifest, e))?;
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let fields = dir.join(FIELDS);
        fs::write(&fields, bytes).map_err(|e| Error::io(&fields, e))
    }

    pub fn read(dir: &Path) -> Result<SnapshotDataset> {
        let manifest = dir.join(MANIFEST);
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let kv = KvMap::parse(&text)?;
        kv.reject_unknown(&[
            "format", "ndim", "nx", "ny", "L", "nu", "dt", "n_samples", "n_times", "channels",
            "seed",
        ])?;
        if kv.get("format")? != FORMAT {
            return Err(Error::Format(format!(
                "unsupported dataset format {:?}",
                kv.get("format")?
            )));
        }
        let ndim: usize = kv.parse_key("ndim")?;
        let mut dims = vec![kv.parse_key::<usize>("nx")?];
        if ndim == 2 {
            dims.push(kv.parse_key("ny")?);
        } else if kv.get_opt("ny").is_some() {
            return Err(Error::Format("ny given for a 1-D dataset".into()));
        }
        let n_samples: usize = kv.parse_key("n_samples")?;
        let n_times: usize = kv.parse_key("n_times")?;
        let channels: Vec<String> = kv.get("channels")?.split(',').map(str::to_string).collect();
        let n_values = n_samples * n_times * dims.iter().product::<usize>() * channels.len();

        let fields = dir.join(FIELDS);
        let bytes = fs::read(&fields).map_err(|e| Error::io(&fields, e))?;
        if bytes.len() != n_values * 8 {
            return Err(Error::Format(format!(
                "{FIELDS}: expected {} bytes, found {}",
                n_values * 8,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        SnapshotDataset::new(
            dims,
            kv.parse_key("L")?,
            kv.parse_key("nu")?,
            kv.parse_key("dt")?,
            n_samples,
            n_times,
            channels,
            kv.parse_key("seed")?,
            data,
        )
    }
}
