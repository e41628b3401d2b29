//! Training-data generation: load sampling, scaling-factor encoding and
//! a binary on-disk dataset format with a JSON header.
//!
//! The train split is solved under the calibrated limits; the test split
//! is solved under the original limits so its stored costs serve as the
//! optimality-loss reference. Samples whose solve comes back infeasible
//! are discarded and resampled, with the discard count reported.

use crate::calibration::{apply_plan, CalibrationPlan, EffectiveLimits};
use crate::grid::{AdmittanceSystem, PowerNetwork};
use crate::solver::{solve_dcopf, DcOpfProblem, SolveStatus, SolverOptions};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid dataset file {path}: {message}")]
    Format { path: String, message: String },
    #[error("invalid sampling range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
    #[error(
        "dispatch component {index} = {value_mw:.6} MW lies outside generator bounds \
         [{min_mw:.6}, {max_mw:.6}] by more than the encoding tolerance"
    )]
    DispatchOutOfBounds {
        index: usize,
        value_mw: f64,
        min_mw: f64,
        max_mw: f64,
    },
    #[error(
        "calibration too aggressive for the sampled regime: {discarded} of {attempts} \
         solves infeasible (>50%)"
    )]
    CalibrationTooAggressive { discarded: usize, attempts: usize },
    #[error(transparent)]
    Calibration(#[from] crate::calibration::CalibrationError),
    #[error(transparent)]
    Solve(#[from] crate::solver::SolveError),
}

/// Load-sampling window tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// The default window covering both light and heavy loading.
    Full,
    Light,
    Heavy,
}

impl Regime {
    /// Canonical sampling window for each regime, as fractions of the
    /// default load.
    pub fn range(self) -> (f64, f64) {
        match self {
            Regime::Full => (1.0, 1.3),
            Regime::Light => (0.9, 1.1),
            Regime::Heavy => (1.1, 1.3),
        }
    }

    pub fn from_range(lo: f64, hi: f64) -> Regime {
        if (lo, hi) == (0.9, 1.1) {
            Regime::Light
        } else if (lo, hi) == (1.1, 1.3) {
            Regime::Heavy
        } else {
            Regime::Full
        }
    }
}

/// A sampled per-bus load vector. Buses with zero default load stay
/// zero.
#[derive(Debug, Clone)]
pub struct LoadSample {
    pub loads_mw: DVector<f64>,
    pub regime: Regime,
    /// Index into the deterministic sample stream.
    pub seed_index: u64,
}

/// One labeled instance: the load, the optimal scaling factors of the
/// non-slack non-degenerate generators, the optimal cost and the slack
/// generation at the optimum.
#[derive(Debug, Clone)]
pub struct DatasetRecord {
    pub sample: LoadSample,
    pub alpha: DVector<f64>,
    pub cost: f64,
    pub slack_gen_mw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

/// An in-memory dataset tied to one network (by content hash) and one
/// calibration plan.
#[derive(Debug, Clone)]
pub struct TrainingDataset {
    pub records: Vec<DatasetRecord>,
    pub calibration: CalibrationPlan,
    pub network_id: String,
    pub split: Split,
    pub range: (f64, f64),
    pub seed: u64,
    /// Samples discarded because their solve was infeasible.
    pub discarded: usize,
    /// Bus indices covered by the load columns.
    pub load_buses: Vec<usize>,
    /// Generator indices covered by the alpha columns.
    pub alpha_generators: Vec<usize>,
}

/// Generator indices whose output the model predicts: non-slack and
/// non-degenerate (strictly positive range width).
pub fn alpha_generators(net: &PowerNetwork) -> Vec<usize> {
    let slack = net.slack_generator();
    (0..net.n_generators())
        .filter(|&i| i != slack && net.generators[i].p_max_mw > net.generators[i].p_min_mw)
        .collect()
}

fn sample_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    // splitmix64 chain over (seed, stream, index)
    let mut x = seed
        .wrapping_add(stream.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(index.wrapping_mul(0xBF58476D1CE4E5B9));
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^= x >> 31;
    ChaCha8Rng::seed_from_u64(x)
}

fn draw_sample(
    net: &PowerNetwork,
    load_buses: &[usize],
    lo: f64,
    hi: f64,
    seed: u64,
    stream: u64,
    index: u64,
) -> LoadSample {
    let mut rng = sample_rng(seed, stream, index);
    let mut loads = DVector::zeros(net.n_buses());
    for &b in load_buses {
        let u: f64 = rng.gen();
        loads[b] = net.buses[b].load_mw * (lo + u * (hi - lo));
    }
    LoadSample {
        loads_mw: loads,
        regime: Regime::from_range(lo, hi),
        seed_index: index,
    }
}

/// Draw `n` load vectors uniformly in `[lo, hi]` of the default load on
/// each load bus. Deterministic given the seed; sample `k` depends only
/// on `(seed, k)`.
pub fn sample_loads(
    net: &PowerNetwork,
    range: (f64, f64),
    n: usize,
    seed: u64,
) -> Result<Vec<LoadSample>, DatasetError> {
    let (lo, hi) = range;
    if !(lo > 0.0 && lo <= hi) {
        return Err(DatasetError::InvalidRange { lo, hi });
    }
    let load_buses = net.load_buses();
    Ok((0..n as u64)
        .map(|k| draw_sample(net, &load_buses, lo, hi, seed, 0, k))
        .collect())
}

/// Tolerance (MW) beyond the generator bounds still accepted (and
/// clamped) when encoding a dispatch.
const ENCODE_TOL_MW: f64 = 1e-6;

/// Normalized position of each predicted generator inside its range,
/// clamped to [0, 1].
pub fn encode_alpha(
    net: &PowerNetwork,
    p_g_mw: &DVector<f64>,
) -> Result<DVector<f64>, DatasetError> {
    let gens = alpha_generators(net);
    let mut alpha = DVector::zeros(gens.len());
    for (j, &gi) in gens.iter().enumerate() {
        let g = &net.generators[gi];
        let p = p_g_mw[gi];
        if p < g.p_min_mw - ENCODE_TOL_MW || p > g.p_max_mw + ENCODE_TOL_MW {
            return Err(DatasetError::DispatchOutOfBounds {
                index: gi,
                value_mw: p,
                min_mw: g.p_min_mw,
                max_mw: g.p_max_mw,
            });
        }
        alpha[j] = ((p - g.p_min_mw) / (g.p_max_mw - g.p_min_mw)).clamp(0.0, 1.0);
    }
    Ok(alpha)
}

/// Generation statistics reported alongside the dataset files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenStats {
    pub train_attempts: usize,
    pub train_discarded: usize,
    pub test_attempts: usize,
    pub test_discarded: usize,
}

/// Generate the train split (calibrated limits) and test split
/// (original limits) from a shared seed.
pub fn generate_dataset(
    net: &PowerNetwork,
    adm: &AdmittanceSystem,
    plan: &CalibrationPlan,
    n_train: usize,
    n_test: usize,
    range: (f64, f64),
    seed: u64,
) -> Result<(TrainingDataset, TrainingDataset, GenStats), DatasetError> {
    let (lo, hi) = range;
    if !(lo > 0.0 && lo <= hi) {
        return Err(DatasetError::InvalidRange { lo, hi });
    }
    let calibrated = apply_plan(net, plan)?;
    let original = EffectiveLimits::original(net);
    let opts = SolverOptions::default();
    let load_buses = net.load_buses();
    let gens = alpha_generators(net);
    let network_id = net.content_hash();

    let generate_split = |stream: u64,
                          n: usize,
                          limits: &EffectiveLimits|
     -> Result<(Vec<DatasetRecord>, usize, usize), DatasetError> {
        let mut records = Vec::with_capacity(n);
        let mut discarded = 0usize;
        let mut index = 0u64;
        while records.len() < n {
            let sample = draw_sample(net, &load_buses, lo, hi, seed, stream, index);
            index += 1;
            let prob = DcOpfProblem::new(net, adm, sample.loads_mw.clone(), limits.clone())?;
            let sol = solve_dcopf(&prob, &opts);
            if sol.status != SolveStatus::Optimal {
                discarded += 1;
                let attempts = records.len() + discarded;
                if attempts >= 20 && discarded * 2 > attempts {
                    return Err(DatasetError::CalibrationTooAggressive {
                        discarded,
                        attempts,
                    });
                }
                continue;
            }
            let alpha = encode_alpha(net, &sol.p_g_mw)?;
            let slack_gen_mw = sol.p_g_mw[net.slack_generator()];
            records.push(DatasetRecord {
                sample,
                alpha,
                cost: sol.cost,
                slack_gen_mw,
            });
        }
        Ok((records, index as usize, discarded))
    };

    let (train_records, train_attempts, train_discarded) = generate_split(0, n_train, &calibrated)?;
    let (test_records, test_attempts, test_discarded) = generate_split(1, n_test, &original)?;

    let make = |records, split, discarded| TrainingDataset {
        records,
        calibration: plan.clone(),
        network_id: network_id.clone(),
        split,
        range,
        seed,
        discarded,
        load_buses: load_buses.clone(),
        alpha_generators: gens.clone(),
    };
    Ok((
        make(train_records, Split::Train, train_discarded),
        make(test_records, Split::Test, test_discarded),
        GenStats {
            train_attempts,
            train_discarded,
            test_attempts,
            test_discarded,
        },
    ))
}

const MAGIC: &[u8; 8] = b"OPFDSET1";

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    network_id: String,
    split: Split,
    calibration: CalibrationPlan,
    seed: u64,
    range: (f64, f64),
    regime: Regime,
    n_records: usize,
    discarded: usize,
    load_buses: Vec<usize>,
    alpha_generators: Vec<usize>,
    columns: Vec<String>,
}

impl TrainingDataset {
    fn columns(&self) -> Vec<String> {
        let mut cols = vec!["sample_index".to_string()];
        cols.extend(self.load_buses.iter().map(|b| format!("load_mw[{b}]")));
        cols.extend(self.alpha_generators.iter().map(|g| format!("alpha[{g}]")));
        cols.push("cost".into());
        cols.push("slack_gen_mw".into());
        cols
    }

    /// Write the header JSON plus fixed-width little-endian f64 records.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let io_err = |source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        };
        let header = Header {
            format_version: 1,
            network_id: self.network_id.clone(),
            split: self.split,
            calibration: self.calibration.clone(),
            seed: self.seed,
            range: self.range,
            regime: Regime::from_range(self.range.0, self.range.1),
            n_records: self.records.len(),
            discarded: self.discarded,
            load_buses: self.load_buses.clone(),
            alpha_generators: self.alpha_generators.clone(),
            columns: self.columns(),
        };
        let header_json = serde_json::to_vec(&header).expect("header serializes");
        let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        file.write_all(MAGIC).map_err(io_err)?;
        file.write_all(&(header_json.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        file.write_all(&header_json).map_err(io_err)?;
        for rec in &self.records {
            let mut row: Vec<f64> = Vec::with_capacity(3 + self.load_buses.len() + rec.alpha.len());
            row.push(rec.sample.seed_index as f64);
            for &b in &self.load_buses {
                row.push(rec.sample.loads_mw[b]);
            }
            for a in rec.alpha.iter() {
                row.push(*a);
            }
            row.push(rec.cost);
            row.push(rec.slack_gen_mw);
            for v in row {
                file.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        file.flush().map_err(io_err)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, n_buses: usize) -> Result<TrainingDataset, DatasetError> {
        let path = path.as_ref();
        let io_err = |source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        };
        let fmt_err = |message: String| DatasetError::Format {
            path: path.display().to_string(),
            message,
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(io_err)?
            .read_to_end(&mut bytes)
            .map_err(io_err)?;
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(fmt_err("missing magic bytes".into()));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if bytes.len() < 12 + header_len {
            return Err(fmt_err("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
            .map_err(|e| fmt_err(format!("bad header json: {e}")))?;
        if header.format_version != 1 {
            return Err(fmt_err(format!(
                "unsupported format_version {}",
                header.format_version
            )));
        }
        let row_len = 1 + header.load_buses.len() + header.alpha_generators.len() + 2;
        let body = &bytes[12 + header_len..];
        if body.len() != header.n_records * row_len * 8 {
            return Err(fmt_err(format!(
                "body holds {} bytes, expected {} records x {} columns",
                body.len(),
                header.n_records,
                row_len
            )));
        }
        let regime = header.regime;
        let mut records = Vec::with_capacity(header.n_records);
        for r in 0..header.n_records {
            let at = |c: usize| -> f64 {
                let off = (r * row_len + c) * 8;
                f64::from_le_bytes(body[off..off + 8].try_into().unwrap())
            };
            let mut col = 0;
            let seed_index = at(col) as u64;
            col += 1;
            let mut loads = DVector::zeros(n_buses);
            for &b in &header.load_buses {
                if b >= n_buses {
                    return Err(fmt_err(format!("load bus index {b} out of range")));
                }
                loads[b] = at(col);
                col += 1;
            }
            let mut alpha = DVector::zeros(header.alpha_generators.len());
            for j in 0..header.alpha_generators.len() {
                alpha[j] = at(col);
                col += 1;
            }
            let cost = at(col);
            let slack_gen_mw = at(col + 1);
            records.push(DatasetRecord {
                sample: LoadSample {
                    loads_mw: loads,
                    regime,
                    seed_index,
                },
                alpha,
                cost,
                slack_gen_mw,
            });
        }
        Ok(TrainingDataset {
            records,
            calibration: header.calibration,
            network_id: header.network_id,
            split: header.split,
            range: header.range,
            seed: header.seed,
            discarded: header.discarded,
            load_buses: header.load_buses,
            alpha_generators: header.alpha_generators,
        })
    }
}
