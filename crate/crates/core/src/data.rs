//! Measurement datasets: generation from exact dynamics, storage and the
//! per-key count tables the loss consumes.
//!
//! File layout: one JSON header line, then one line per shot
//! `state_id timestamp_idx basis_idx bitstring_hex`. The ground-truth
//! parameters live in a separate sidecar file.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::ExactPropagator;
use crate::error::{Error, Result};
use crate::pauli::{build_hamiltonian, HamiltonianFamily};
use crate::seeds::{self, stream};
use crate::statevec::{
    format_bitstring, outcome_probabilities, parse_bitstring, OutcomeSampler, PauliBasis, StateVector,
};

pub const FORMAT_VERSION: u32 = 1;

pub const DEFAULT_TIMESTAMPS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub num_sites: usize,
    pub family: HamiltonianFamily,
    /// Number of initial basis states `L`.
    pub num_states: usize,
    pub timestamps: Vec<f64>,
    /// Number of random Pauli bases `K`.
    pub num_bases: usize,
    /// Shots per (state, timestamp, basis) `M`.
    pub shots: usize,
    pub seed: u64,
}

impl DatasetSpec {
    /// `L = 5`, `J = 5` timestamps in `0.2..=1.0`, `K = 200`, `M = 100`.
    pub fn standard(family: HamiltonianFamily, num_sites: usize, seed: u64) -> Self {
        Self {
            num_sites,
            family,
            num_states: 5,
            timestamps: DEFAULT_TIMESTAMPS.to_vec(),
            num_bases: 200,
            shots: 100,
            seed,
        }
    }

    /// `|D| = M K J L`.
    pub fn cardinality(&self) -> usize {
        self.shots * self.num_bases * self.timestamps.len() * self.num_states
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 || self.num_bases == 0 || self.shots == 0 {
            return Err(Error::invalid("L, K and M must all be at least 1"));
        }
        if self.timestamps.is_empty() {
            return Err(Error::invalid("at least one timestamp is required"));
        }
        let mut prev = 0.0;
        for &t in &self.timestamps {
            if !(t.is_finite() && t > prev) {
                return Err(Error::invalid("timestamps must be positive and strictly ascending"));
            }
            prev = t;
        }
        if self.num_sites < self.family.min_sites() || self.num_sites > 16 {
            return Err(Error::invalid(format!(
                "{} sites is outside the supported range for {}",
                self.num_sites, self.family
            )));
        }
        if self.num_states > 1 << self.num_sites {
            return Err(Error::invalid(format!(
                "{} distinct basis states requested but only {} exist",
                self.num_states,
                1u64 << self.num_sites
            )));
        }
        Ok(())
    }
}

/// Coefficients drawn uniformly from `[-1, 1]`.
pub fn sample_ground_truth(family: HamiltonianFamily, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeds::rng(seed, stream::GROUND_TRUTH);
    (0..family.num_params(n))
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect()
}

/// Sidecar file holding the answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub family: HamiltonianFamily,
    pub num_sites: usize,
    pub params: Vec<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub num_sites: usize,
    pub family: HamiltonianFamily,
    pub timestamps: Vec<f64>,
    pub shots: usize,
    pub seed: u64,
    /// Initial states as bitstrings, site 1 first.
    pub states: Vec<String>,
    pub bases: Vec<PauliBasis>,
    pub num_records: usize,
    /// Hash of the run config that produced the file, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasurementRecord {
    pub state_id: u32,
    pub time_idx: u32,
    pub basis_idx: u32,
    pub bitstring: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<MeasurementRecord>,
}

/// Draws states, bases and shots for `spec` under the Hamiltonian with
/// parameters `truth`.
pub fn generate(spec: &DatasetSpec, truth: &[f64]) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.num_sites;
    let h = build_hamiltonian(spec.family, n, truth)?;
    let propagator = ExactPropagator::new(&h)?;

    let mut state_rng = seeds::rng(spec.seed, stream::STATES);
    let state_indices: Vec<u64> = rand::seq::index::sample(&mut state_rng, 1 << n, spec.num_states)
        .into_iter()
        .map(|i| i as u64)
        .collect();
    let mut basis_rng = seeds::rng(spec.seed, stream::BASES);
    let bases = (0..spec.num_bases)
        .map(|_| PauliBasis::random(n, &mut basis_rng))
        .collect::<Result<Vec<_>>>()?;

    let num_times = spec.timestamps.len();
    let pairs: Vec<(usize, usize)> = (0..spec.num_states)
        .flat_map(|s| (0..num_times).map(move |j| (s, j)))
        .collect();
    let chunks = pairs
        .par_iter()
        .enumerate()
        .map(|(p, &(s, j))| {
            let psi0 = StateVector::basis_state(n, state_indices[s])?;
            let psi = propagator.propagate(&psi0, spec.timestamps[j])?;
            let mut rng = seeds::rng(spec.seed, stream::SHOTS + p as u64);
            let mut out = Vec::with_capacity(spec.num_bases * spec.shots);
            for (k, basis) in bases.iter().enumerate() {
                let sampler = OutcomeSampler::new(&outcome_probabilities(&psi, basis)?)?;
                for _ in 0..spec.shots {
                    out.push(MeasurementRecord {
                        state_id: s as u32,
                        time_idx: j as u32,
                        basis_idx: k as u32,
                        bitstring: sampler.sample(&mut rng),
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<MeasurementRecord> = chunks.into_iter().flatten().collect();

    Ok(Dataset {
        header: DatasetHeader {
            format_version: FORMAT_VERSION,
            num_sites: n,
            family: spec.family,
            timestamps: spec.timestamps.clone(),
            shots: spec.shots,
            seed: spec.seed,
            states: state_indices.iter().map(|&i| format_bitstring(i, n)).collect(),
            bases,
            num_records: records.len(),
            config_hash: None,
        },
        records,
    })
}

/// Records for one `(state, timestamp, basis)` key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subset {
    pub bitstrings: Vec<u64>,
    /// False when any of the three keys is absent from the header.
    pub key_known: bool,
}

impl Dataset {
    pub fn num_sites(&self) -> usize {
        self.header.num_sites
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn initial_states(&self) -> Result<Vec<StateVector>> {
        self.header
            .states
            .iter()
            .map(|s| StateVector::from_bitstring(s))
            .collect()
    }

    pub fn split_subset(&self, state_id: usize, time_idx: usize, basis_idx: usize) -> Subset {
        let h = &self.header;
        let key_known = state_id < h.states.len() && time_idx < h.timestamps.len() && basis_idx < h.bases.len();
        let bitstrings = if key_known {
            self.records
                .iter()
                .filter(|r| {
                    r.state_id as usize == state_id
                        && r.time_idx as usize == time_idx
                        && r.basis_idx as usize == basis_idx
                })
                .map(|r| r.bitstring)
                .collect()
        } else {
            Vec::new()
        };
        Subset { bitstrings, key_known }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        let width = self.header.num_sites.div_ceil(4);
        for r in &self.records {
            writeln!(
                w,
                "{} {} {} {:0width$x}",
                r.state_id, r.time_idx, r.basis_idx, r.bitstring
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Parse("empty dataset file".into()))??;
        let header: DatasetHeader = serde_json::from_str(&first)?;
        validate_header(&header)?;
        let mut records = Vec::with_capacity(header.num_records.min(1 << 24));
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            records.push(
                parse_record(&header, &line).map_err(|e| Error::Parse(format!("record line {}: {e}", lineno + 2)))?,
            );
        }
        if records.len() != header.num_records {
            return Err(Error::Parse(format!(
                "header announces {} records, file has {}",
                header.num_records,
                records.len()
            )));
        }
        Ok(Self { header, records })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

fn validate_header(h: &DatasetHeader) -> Result<()> {
    if h.format_version != FORMAT_VERSION {
        return Err(Error::Parse(format!("unsupported format version {}", h.format_version)));
    }
    if h.num_sites == 0 || h.num_sites > 16 {
        return Err(Error::Parse(format!("unsupported chain length {}", h.num_sites)));
    }
    for s in &h.states {
        if s.len() != h.num_sites {
            return Err(Error::Parse(format!("state `{s}` has the wrong length")));
        }
        parse_bitstring(s)?;
    }
    if h.bases.iter().any(|b| b.num_sites() != h.num_sites) {
        return Err(Error::Parse("basis length does not match num_sites".into()));
    }
    if h.timestamps.iter().any(|t| !t.is_finite()) {
        return Err(Error::Parse("non-finite timestamp".into()));
    }
    Ok(())
}

fn parse_record(h: &DatasetHeader, line: &str) -> Result<MeasurementRecord> {
    let mut fields = line.split(' ');
    let mut next = || fields.next().ok_or_else(|| Error::Parse("missing field".into()));
    let parse_idx = |s: &str, bound: usize, what: &str| -> Result<u32> {
        let v: u32 = s.parse().map_err(|_| Error::Parse(format!("bad {what} `{s}`")))?;
        if v as usize >= bound {
            return Err(Error::Parse(format!("{what} {v} out of range")));
        }
        Ok(v)
    };
    let state_id = parse_idx(next()?, h.states.len(), "state id")?;
    let time_idx = parse_idx(next()?, h.timestamps.len(), "timestamp index")?;
    let basis_idx = parse_idx(next()?, h.bases.len(), "basis index")?;
    let hex = next()?;
    let bitstring = u64::from_str_radix(hex, 16).map_err(|_| Error::Parse(format!("bad bitstring `{hex}`")))?;
    if bitstring >> h.num_sites != 0 {
        return Err(Error::Parse(format!(
            "bitstring {hex} wider than {} sites",
            h.num_sites
        )));
    }
    if fields.next().is_some() {
        return Err(Error::Parse("trailing fields".into()));
    }
    Ok(MeasurementRecord {
        state_id,
        time_idx,
        basis_idx,
        bitstring,
    })
}

/// Outcome histograms per `(state, timestamp, basis)`, with `|D|`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    pub num_sites: usize,
    pub timestamps: Vec<f64>,
    pub initial_states: Vec<StateVector>,
    pub bases: Vec<PauliBasis>,
    /// Keyed by `(state_id, time_idx, basis_idx)`; each entry has `2^N` counts.
    pub counts: BTreeMap<(usize, usize, usize), Vec<f64>>,
    pub total: usize,
}

impl CountTable {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let dim = 1usize << ds.num_sites();
        let mut counts: BTreeMap<(usize, usize, usize), Vec<f64>> = BTreeMap::new();
        for r in &ds.records {
            let key = (r.state_id as usize, r.time_idx as usize, r.basis_idx as usize);
            counts.entry(key).or_insert_with(|| vec![0.0; dim])[r.bitstring as usize] += 1.0;
        }
        Ok(Self {
            num_sites: ds.num_sites(),
            timestamps: ds.header.timestamps.clone(),
            initial_states: ds.initial_states()?,
            bases: ds.header.bases.clone(),
            counts,
            total: ds.len(),
        })
    }

    /// Keys for one initial state, in timestamp-then-basis order.
    pub fn keys_for_state(&self, state_id: usize) -> impl Iterator<Item = (&(usize, usize, usize), &Vec<f64>)> {
        self.counts.range((state_id, 0, 0)..(state_id + 1, 0, 0))
    }
}
