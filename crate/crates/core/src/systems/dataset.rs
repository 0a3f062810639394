use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{draw, SamplingSpec, SystemConfig, SystemId};
use crate::odeint::SolveConfig;
use crate::rng::{stream, Stream};
use crate::{Error, Result};

/// One observed time series together with the instance that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub config: SystemConfig,
    pub noise_sigma: f64,
}

impl Trajectory {
    pub fn new(
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
        config: SystemConfig,
        noise_sigma: f64,
    ) -> Result<Self> {
        let t = Self {
            times,
            values,
            config,
            noise_sigma,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::EmptySequence);
        }
        if self.times.len() != self.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} times but {} values",
                self.times.len(),
                self.values.len()
            )));
        }
        if self.times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("times must be strictly increasing".into()));
        }
        let dim = self.values[0].len();
        if self.values.iter().any(|v| v.len() != dim) {
            return Err(Error::ShapeMismatch("ragged observation vectors".into()));
        }
        if self.times.iter().chain(self.values.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory data".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn t_first(&self) -> f64 {
        self.times[0]
    }

    pub fn t_last(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Observations restricted to the given (sorted) indices.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Self::new(
            idx.iter().map(|&i| self.times[i]).collect(),
            idx.iter().map(|&i| self.values[i].clone()).collect(),
            self.config,
            self.noise_sigma,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    /// 80/10/10 by count; validation and test get `count / 10` each.
    pub fn for_count(count: usize) -> Self {
        let tenth = count / 10;
        Self {
            train: count - 2 * tenth,
            validation: tenth,
            test: tenth,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub system: SystemId,
    pub seed: u64,
    pub spec: SamplingSpec,
    pub train: Vec<Trajectory>,
    pub validation: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl Dataset {
    pub fn count(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn splits(&self) -> SplitSizes {
        SplitSizes {
            train: self.train.len(),
            validation: self.validation.len(),
            test: self.test.len(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }
}

/// Tolerances used to simulate training data.
pub fn data_solver() -> SolveConfig {
    SolveConfig::with_tolerances(1e-4, 1e-4)
}

/// Tolerances used for ground-truth comparisons during evaluation.
pub fn truth_solver() -> SolveConfig {
    SolveConfig {
        max_steps: 1_000_000,
        ..SolveConfig::with_tolerances(1e-8, 1e-8)
    }
}

/// `n` sorted distinct uniform draws from `[lo, hi]`; exact duplicates are redrawn.
pub fn sample_times<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut t: Vec<f64> = (0..n).map(|_| draw(rng, [lo, hi])).collect();
    loop {
        t.sort_by(f64::total_cmp);
        let dup = t.windows(2).position(|w| w[0] == w[1]);
        match dup {
            Some(i) => t[i + 1] = draw(rng, [lo, hi]),
            None => return t,
        }
    }
}

/// Draws one noisy trajectory; `rng` fully determines the result.
pub fn sample_trajectory<R: Rng + ?Sized>(
    spec: &SamplingSpec,
    rng: &mut R,
    solver: &SolveConfig,
) -> Result<Trajectory> {
    let t_final = draw(rng, spec.t_final);
    let config = spec.ranges.sample(rng);
    let times = sample_times(rng, spec.n_points, spec.t_start(), t_final);
    let mut values = config.simulate(&times, solver)?;
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for v in values.iter_mut().flatten() {
            *v += noise.sample(rng);
        }
    }
    Trajectory::new(times, values, config, spec.noise_sigma)
}

/// Generates `count` trajectories with the system's default recipe.
pub fn generate_dataset(system: SystemId, count: usize, seed: u64) -> Result<Dataset> {
    generate_with_spec(
        &SamplingSpec::for_system(system, Default::default()),
        count,
        seed,
    )
}

/// Generates `count` trajectories; trajectory `i` uses its own stream derived
/// from `(seed, i)`, so the result does not depend on thread scheduling.
pub fn generate_with_spec(spec: &SamplingSpec, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be positive".into()));
    }
    spec.validate()?;
    let solver = data_solver();
    let all: Vec<Trajectory> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, Stream::Data, i as u64);
            sample_trajectory(spec, &mut rng, &solver)
        })
        .collect::<Result<_>>()?;
    Ok(split(spec.clone(), seed, all))
}

fn split(spec: SamplingSpec, seed: u64, mut all: Vec<Trajectory>) -> Dataset {
    let sizes = SplitSizes::for_count(all.len());
    let test = all.split_off(sizes.train + sizes.validation);
    let validation = all.split_off(sizes.train);
    Dataset {
        system: spec.system(),
        seed,
        spec,
        train: all,
        validation,
        test,
    }
}

const MAGIC: &[u8; 4] = b"GLDS";
const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    system: SystemId,
    count: usize,
    seed: u64,
    noise_sigma: f64,
    spec: SamplingSpec,
    splits: SplitSizes,
}

/// Writes the dataset in the binary container described in the README.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = encode(ds)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn encode(ds: &Dataset) -> Result<Vec<u8>> {
    let header = Header {
        system: ds.system,
        count: ds.count(),
        seed: ds.seed,
        noise_sigma: ds.spec.noise_sigma,
        spec: ds.spec.clone(),
        splits: ds.splits(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in ds.iter() {
        let cfg = t.config.to_vec();
        let _ = out.write_all(&(t.len() as u32).to_le_bytes());
        let _ = out.write_all(&(t.dim() as u32).to_le_bytes());
        let _ = out.write_all(&(cfg.len() as u32).to_le_bytes());
        for v in cfg.iter().chain(&t.times).chain(t.values.iter().flatten()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format("dataset file is truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("oversized record".into()))?)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let version = r.take(1)?[0];
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let hlen = r.u32()?;
    let header: Header =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::Format(e.to_string()))?;
    if header.splits.total() != header.count {
        return Err(Error::Format(format!(
            "split sizes sum to {}, header declares {}",
            header.splits.total(),
            header.count
        )));
    }
    if header.spec.system() != header.system {
        return Err(Error::Format("header system does not match its sampling spec".into()));
    }
    let mut all = Vec::with_capacity(header.count.min(1 << 20));
    while r.pos < bytes.len() {
        if all.len() == header.count {
            return Err(Error::Format(format!(
                "file holds more than the declared {} trajectories",
                header.count
            )));
        }
        let n = r.u32()?;
        let dim = r.u32()?;
        let ncfg = r.u32()?;
        let cfg = SystemConfig::from_vec(header.system, &r.f64s(ncfg)?)?;
        let times = r.f64s(n)?;
        let flat = r.f64s(n * dim)?;
        let values = if dim == 0 {
            vec![Vec::new(); n]
        } else {
            flat.chunks(dim).map(<[f64]>::to_vec).collect()
        };
        all.push(Trajectory::new(times, values, cfg, header.noise_sigma)?);
    }
    if all.len() != header.count {
        return Err(Error::Format(format!(
            "header declares {} trajectories, file holds {}",
            header.count,
            all.len()
        )));
    }
    let test = all.split_off(header.splits.train + header.splits.validation);
    let validation = all.split_off(header.splits.train);
    Ok(Dataset {
        system: header.system,
        seed: header.seed,
        spec: header.spec,
        train: all,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn split_sizes() {
        assert_eq!(
            SplitSizes::for_count(10_000),
            SplitSizes {
                train: 8000,
                validation: 1000,
                test: 1000
            }
        );
        let s = SplitSizes::for_count(17);
        assert_eq!(s.total(), 17);
        assert_eq!((s.validation, s.test), (1, 1));
    }

    #[test]
    fn dho_times_are_in_range() {
        let ds = generate_dataset(SystemId::Dho, 20, 3).unwrap();
        assert_eq!(ds.count(), 20);
        for t in ds.iter() {
            assert_eq!(t.len(), 30);
            assert!(t.times.iter().all(|&x| (0.0..=20.0).contains(&x)));
            assert!(t.times.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(t.dim(), 2);
        }
    }

    #[test]
    fn noiseless_dho_matches_closed_form() {
        let mut spec = SamplingSpec::dho();
        spec.noise_sigma = 0.0;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let t = sample_trajectory(&spec, &mut rng, &data_solver()).unwrap();
        let SystemConfig::Dho { x0, v0, .. } = t.config else {
            unreachable!()
        };
        let disc = 0.52f64.sqrt();
        let (r1, r2) = ((-1.0 + disc) / 2.0, (-1.0 - disc) / 2.0);
        // x = a e^{r1 t} + b e^{r2 t}
        let b = (v0 - r1 * x0) / (r2 - r1);
        let a = x0 - b;
        for (time, v) in t.times.iter().zip(&t.values) {
            let x = a * (r1 * time).exp() + b * (r2 * time).exp();
            let xd = a * r1 * (r1 * time).exp() + b * r2 * (r2 * time).exp();
            assert!((v[0] - x).abs() < 1e-3 && (v[1] - xd).abs() < 1e-3);
        }
    }

    #[test]
    fn round_trip_and_count_validation() {
        let ds = generate_dataset(SystemId::LaneEmden, 12, 9).unwrap();
        let bytes = encode(&ds).unwrap();
        assert_eq!(decode(&bytes).unwrap(), ds);

        // rewrite the declared count
        let hlen = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[9..9 + hlen]).unwrap();
        let bad = header.replace("\"count\":12", "\"count\":13");
        let mut forged = bytes[..5].to_vec();
        forged.extend_from_slice(&(bad.len() as u32).to_le_bytes());
        forged.extend_from_slice(bad.as_bytes());
        forged.extend_from_slice(&bytes[9 + hlen..]);
        assert!(matches!(decode(&forged), Err(Error::Format(_))));
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode(b"NOPE").is_err());
    }

    #[test]
    fn generation_is_repeatable() {
        let a = encode(&generate_dataset(SystemId::LotkaVolterra, 5, 11).unwrap()).unwrap();
        let b = encode(&generate_dataset(SystemId::LotkaVolterra, 5, 11).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = encode(&generate_dataset(SystemId::LotkaVolterra, 5, 12).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_count_is_rejected() {
        assert!(generate_dataset(SystemId::Dho, 0, 1).is_err());
    }

    #[test]
    fn sample_times_redraws_duplicates() {
        // a two-valued interval forces collisions on almost every draw
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let t = sample_times(&mut rng, 5, 0.0, 1e-300);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
    }
}
