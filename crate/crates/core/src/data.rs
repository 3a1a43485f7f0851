//! Synthetic datasets and their on-disk form.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded through
//! `SeedableRng::seed_from_u64`, which is specified bit-for-bit and therefore
//! reproducible across platforms. For every sample the generator draws `x`
//! first (uniform) and then one standard normal (`rand_distr`'s ziggurat
//! sampler) for the noise.
//!
//! A dataset is stored as a CSV file with header `x,y[,true_mean,true_std]`
//! and a TOML sidecar next to it (`foo.csv` → `foo.meta.toml`) holding the
//! generator name, seed, size and generator parameters.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub x: f64,
    pub y: f64,
    /// Noise-free target, when the generator knows it.
    pub true_mean: Option<f64>,
    /// Standard deviation of the additive noise at `x`.
    pub true_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub seed: u64,
    pub n: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub meta: DatasetMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicSpec {
    pub n: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub noise_std: f64,
}

impl Default for CubicSpec {
    fn default() -> Self {
        CubicSpec {
            n: 1000,
            x_lo: -4.0,
            x_hi: 4.0,
            noise_std: 3.0,
        }
    }
}

/// Pulse centre and half-width, and the noise variances left and right of
/// the centre.
pub const PULSE_CENTER: f64 = 0.5;
pub const PULSE_HALF_WIDTH: f64 = 0.0025;
pub const PULSE_VAR_LEFT: f64 = 1e-4;
pub const PULSE_VAR_RIGHT: f64 = 1e-2;

/// Noise-free pulse value at `x`.
pub fn pulse_mean(x: f64) -> f64 {
    if (x - PULSE_CENTER).abs() < PULSE_HALF_WIDTH {
        1.0
    } else {
        0.0
    }
}

/// Noise variance of the pulse data at `x`.
pub fn pulse_variance(x: f64) -> f64 {
    if x < PULSE_CENTER {
        PULSE_VAR_LEFT
    } else {
        PULSE_VAR_RIGHT
    }
}

/// Which synthetic generator to run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "lowercase")]
pub enum GeneratorSpec {
    Cubic(CubicSpec),
    Pulse { n: usize },
}

impl GeneratorSpec {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        match *self {
            GeneratorSpec::Cubic(spec) => gen_cubic(spec, seed),
            GeneratorSpec::Pulse { n } => gen_binary_pulse(n, seed),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GeneratorSpec::Cubic(_) => "cubic",
            GeneratorSpec::Pulse { .. } => "pulse",
        }
    }

    /// Support of the training inputs.
    pub fn x_range(&self) -> (f64, f64) {
        match self {
            GeneratorSpec::Cubic(s) => (s.x_lo, s.x_hi),
            GeneratorSpec::Pulse { .. } => (0.0, 1.0),
        }
    }

    /// Noise-free target, used for residuals in traces.
    pub fn true_mean(&self, x: f64) -> f64 {
        match self {
            GeneratorSpec::Cubic(_) => x * x * x,
            GeneratorSpec::Pulse { .. } => pulse_mean(x),
        }
    }

    pub fn true_std(&self, x: f64) -> f64 {
        match self {
            GeneratorSpec::Cubic(s) => s.noise_std,
            GeneratorSpec::Pulse { .. } => pulse_variance(x).sqrt(),
        }
    }
}

/// `y = x³ + ε`, `x ~ U[x_lo, x_hi]`, `ε ~ N(0, noise_std²)`.
pub fn gen_cubic(spec: CubicSpec, seed: u64) -> Result<Dataset> {
    let CubicSpec {
        n,
        x_lo,
        x_hi,
        noise_std,
    } = spec;
    if n == 0 || !(x_lo < x_hi) || !(noise_std >= 0.0) || !x_lo.is_finite() || !x_hi.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "cubic generator needs n >= 1, x_lo < x_hi, noise_std >= 0 (got {spec:?})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(x_lo..x_hi);
            let z: f64 = rng.sample(StandardNormal);
            let mean = x * x * x;
            Sample {
                x,
                y: mean + noise_std * z,
                true_mean: Some(mean),
                true_std: Some(noise_std),
            }
        })
        .collect();
    let params = BTreeMap::from([
        ("x_lo".to_string(), x_lo),
        ("x_hi".to_string(), x_hi),
        ("noise_std".to_string(), noise_std),
    ]);
    Ok(Dataset {
        samples,
        meta: DatasetMeta {
            generator: "cubic".into(),
            seed,
            n,
            params,
        },
    })
}

/// Binary pulse on `x ~ U[0, 1)`: mean 1 inside `|x − 0.5| < 0.0025`, else 0;
/// noise variance 1e-4 left of 0.5 and 1e-2 from 0.5 on.
pub fn gen_binary_pulse(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("pulse generator needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(0.0..1.0);
            let z: f64 = rng.sample(StandardNormal);
            let mean = pulse_mean(x);
            let std = pulse_variance(x).sqrt();
            Sample {
                x,
                y: mean + std * z,
                true_mean: Some(mean),
                true_std: Some(std),
            }
        })
        .collect();
    Ok(Dataset {
        samples,
        meta: DatasetMeta {
            generator: "pulse".into(),
            seed,
            n,
            params: BTreeMap::from([("x_lo".to_string(), 0.0), ("x_hi".to_string(), 1.0)]),
        },
    })
}

/// Sidecar path for a dataset CSV (`a/b.csv` → `a/b.meta.toml`).
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.toml")
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn xs(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.x).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    fn has_truth(&self) -> bool {
        self.samples
            .iter()
            .all(|s| s.true_mean.is_some() && s.true_std.is_some())
    }

    /// CSV text; values use shortest round-trip formatting.
    pub fn to_csv_string(&self) -> String {
        let truth = self.has_truth();
        let mut out = String::from(if truth { "x,y,true_mean,true_std\n" } else { "x,y\n" });
        for s in &self.samples {
            if truth {
                out.push_str(&format!(
                    "{:?},{:?},{:?},{:?}\n",
                    s.x,
                    s.y,
                    s.true_mean.unwrap(),
                    s.true_std.unwrap()
                ));
            } else {
                out.push_str(&format!("{:?},{:?}\n", s.x, s.y));
            }
        }
        out
    }

    /// Parses dataset rows from CSV. `origin` labels errors.
    pub fn samples_from_csv<R: Read>(reader: R, origin: &str) -> Result<Vec<Sample>> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| csv_error(origin, e))?
            .iter()
            .map(str::to_owned)
            .collect::<Vec<_>>();
        let truth = match headers.iter().map(String::as_str).collect::<Vec<_>>()[..] {
            [""] | [] => return Err(Error::parse(origin, 1, "empty file")),
            ["x", "y"] => false,
            ["x", "y", "true_mean", "true_std"] => true,
            _ => {
                return Err(Error::parse(
                    origin,
                    1,
                    format!(
                        "expected header `x,y[,true_mean,true_std]`, found `{}`",
                        headers.join(",")
                    ),
                ))
            }
        };
        let width = headers.len();
        let mut samples = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| csv_error(origin, e))?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() == 1 && record[0].is_empty() {
                continue;
            }
            if record.len() != width {
                return Err(Error::parse(
                    origin,
                    line,
                    format!("expected {width} fields, found {}", record.len()),
                ));
            }
            let mut vals = [0.0; 4];
            for (i, field) in record.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::parse(origin, line, format!("`{field}` is not a number")))?;
                if !v.is_finite() {
                    return Err(Error::parse(origin, line, format!("non-finite value `{field}`")));
                }
                vals[i] = v;
            }
            samples.push(Sample {
                x: vals[0],
                y: vals[1],
                true_mean: truth.then_some(vals[2]),
                true_std: truth.then_some(vals[3]),
            });
        }
        if samples.is_empty() {
            return Err(Error::parse(origin, 1, "no data rows"));
        }
        Ok(samples)
    }

    pub fn meta_from_toml(text: &str, origin: &str) -> Result<DatasetMeta> {
        toml::from_str(text).map_err(|e| Error::toml(origin, text, e))
    }

    pub fn meta_to_toml(&self) -> String {
        toml::to_string(&self.meta).expect("metadata serializes")
    }

    /// Writes the CSV to `path` and the metadata sidecar next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))?;
        let meta = sidecar_path(path);
        std::fs::write(&meta, self.meta_to_toml()).map_err(|e| Error::io(meta, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let origin = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let samples = Self::samples_from_csv(file, &origin)?;
        let meta_path = sidecar_path(path);
        let meta = match std::fs::read_to_string(&meta_path) {
            Ok(text) => Self::meta_from_toml(&text, &meta_path.display().to_string())?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => DatasetMeta {
                generator: "external".into(),
                seed: 0,
                n: samples.len(),
                params: BTreeMap::new(),
            },
            Err(e) => return Err(Error::io(meta_path, e)),
        };
        if meta.n != samples.len() {
            return Err(Error::Format(format!(
                "{origin}: metadata says n = {}, file has {} rows",
                meta.n,
                samples.len()
            )));
        }
        Ok(Dataset { samples, meta })
    }
}

fn csv_error(origin: &str, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::parse(origin, line, e.to_string())
}
