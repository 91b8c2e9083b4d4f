//! OD-matrix demand and inference-time demand fluctuation.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_from_seed;
use crate::topology::{NetworkTopology, TazId, TopologyError};

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("invalid window [{start}, {end}) for {origin}->{destination}")]
    InvalidWindow {
        origin: String,
        destination: String,
        start: u32,
        end: u32,
    },
    #[error("window end {end} exceeds the horizon {horizon}")]
    BeyondHorizon { end: u32, horizon: u32 },
    #[error("fluctuation ratio must lie in (0, 1), got {0}")]
    BadRatio(f64),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("OD csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("OD csv: {0}")]
    Io(#[from] std::io::Error),
}

/// A vehicle departure request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trip {
    pub id: String,
    pub origin: TazId,
    pub destination: TazId,
    pub departure_s: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdEntry {
    pub origin: TazId,
    pub destination: TazId,
    pub count: u32,
    pub window_start_s: u32,
    pub window_end_s: u32,
}

/// Trip counts between zones. A pair may appear in several rows with
/// different windows; departures within a row are uniform over its window.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdMatrix {
    pub entries: Vec<OdEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OdRow {
    origin: String,
    destination: String,
    count: u32,
    window_start_s: u32,
    window_end_s: u32,
}

#[derive(Debug, Serialize)]
struct TripRow<'a> {
    id: &'a str,
    origin: &'a str,
    destination: &'a str,
    count: u32,
    window_start_s: u32,
    window_end_s: u32,
}

impl OdMatrix {
    pub fn validate(&self, topology: &NetworkTopology, horizon_s: u32) -> Result<(), DemandError> {
        for e in &self.entries {
            if e.origin.0 >= topology.tazs.len() || e.destination.0 >= topology.tazs.len() {
                return Err(TopologyError::UnknownTaz(format!("#{}/#{}", e.origin.0, e.destination.0)).into());
            }
            if e.window_end_s <= e.window_start_s {
                return Err(DemandError::InvalidWindow {
                    origin: topology.taz(e.origin).name.clone(),
                    destination: topology.taz(e.destination).name.clone(),
                    start: e.window_start_s,
                    end: e.window_end_s,
                });
            }
            if e.window_end_s > horizon_s {
                return Err(DemandError::BeyondHorizon {
                    end: e.window_end_s,
                    horizon: horizon_s,
                });
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.count as u64).sum()
    }

    /// Every OD pair mentioned, sorted.
    pub fn pairs(&self) -> Vec<(TazId, TazId)> {
        let mut pairs: Vec<_> = self.entries.iter().map(|e| (e.origin, e.destination)).collect();
        pairs.sort();
        pairs.dedup();
        pairs
    }

    /// Reads `origin,destination,count,window_start_s,window_end_s` rows with
    /// zone names; lines starting with `#` are ignored.
    pub fn read_csv<R: Read>(reader: R, topology: &NetworkTopology) -> Result<Self, DemandError> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut entries = Vec::new();
        for row in rdr.deserialize::<OdRow>() {
            let row = row?;
            entries.push(OdEntry {
                origin: topology.taz_by_name(&row.origin)?,
                destination: topology.taz_by_name(&row.destination)?,
                count: row.count,
                window_start_s: row.window_start_s,
                window_end_s: row.window_end_s,
            });
        }
        Ok(OdMatrix { entries })
    }

    pub fn write_csv<W: Write>(&self, mut out: W, topology: &NetworkTopology) -> Result<(), DemandError> {
        writeln!(out, "# format_version: 1")?;
        let mut w = csv::Writer::from_writer(out);
        for e in &self.entries {
            w.serialize(OdRow {
                origin: topology.taz(e.origin).name.clone(),
                destination: topology.taz(e.destination).name.clone(),
                count: e.count,
                window_start_s: e.window_start_s,
                window_end_s: e.window_end_s,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws departures for every OD row. Ids are `{origin}-{destination}-{k}`
/// with `k` counting departures of the pair in time order. The result is
/// sorted by departure time, then id.
pub fn generate(od: &OdMatrix, topology: &NetworkTopology, seed: u64) -> Result<Vec<Trip>, DemandError> {
    od.validate(topology, u32::MAX)?;
    let mut rng = rng_from_seed(seed);
    let mut by_pair: BTreeMap<(TazId, TazId), Vec<u32>> = BTreeMap::new();
    for e in &od.entries {
        let times = by_pair.entry((e.origin, e.destination)).or_default();
        for _ in 0..e.count {
            times.push(rng.gen_range(e.window_start_s..e.window_end_s));
        }
    }
    let mut trips = Vec::with_capacity(od.total() as usize);
    for ((o, d), mut times) in by_pair {
        times.sort_unstable();
        let (on, dn) = (&topology.taz(o).name, &topology.taz(d).name);
        for (k, t) in times.into_iter().enumerate() {
            trips.push(Trip {
                id: format!("{on}-{dn}-{k}"),
                origin: o,
                destination: d,
                departure_s: t,
            });
        }
    }
    sort_trips(&mut trips);
    Ok(trips)
}

fn sort_trips(trips: &mut [Trip]) {
    trips.sort_by(|a, b| (a.departure_s, &a.id).cmp(&(b.departure_s, &b.id)));
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationSpec {
    ratio: f64,
    pub seed: u64,
}

impl FluctuationSpec {
    pub fn new(ratio: f64, seed: u64) -> Result<Self, DemandError> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(DemandError::BadRatio(ratio));
        }
        Ok(FluctuationSpec { ratio, seed })
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }
}

/// Direction drawn for one OD pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluctuationDirection {
    Increase,
    Decrease,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFluctuation {
    pub origin: TazId,
    pub destination: TazId,
    pub direction: FluctuationDirection,
    pub original: usize,
    pub resulting: usize,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Perturbs demand per OD pair. For each pair (in sorted order, covering both
/// the matrix's pairs and any present in `trips`) a number in 1..=100 is
/// drawn: above 50 duplicates `round(n * ratio)` sampled vehicles with an `A`
/// suffix and a departure jitter within one second; otherwise keeps
/// `round(n * (1 - ratio))` sampled vehicles.
pub fn fluctuate(
    trips: &[Trip],
    od: &OdMatrix,
    spec: &FluctuationSpec,
) -> (Vec<Trip>, Vec<PairFluctuation>) {
    let mut groups: BTreeMap<(TazId, TazId), Vec<&Trip>> = BTreeMap::new();
    for pair in od.pairs() {
        groups.entry(pair).or_default();
    }
    for t in trips {
        groups.entry((t.origin, t.destination)).or_default().push(t);
    }
    let mut used_ids: HashSet<String> = trips.iter().map(|t| t.id.clone()).collect();
    let mut rng = rng_from_seed(spec.seed);
    let mut out = Vec::with_capacity(trips.len());
    let mut report = Vec::with_capacity(groups.len());

    for ((o, d), group) in groups {
        let draw: u32 = rng.gen_range(1..=100);
        let n = group.len();
        let direction = if draw > 50 {
            FluctuationDirection::Increase
        } else {
            FluctuationDirection::Decrease
        };
        match direction {
            FluctuationDirection::Increase => {
                out.extend(group.iter().map(|&t| t.clone()));
                let k = round_half_up(n as f64 * spec.ratio).min(n);
                if k > 0 {
                    let mut picked = sample(&mut rng, n, k).into_vec();
                    picked.sort_unstable();
                    for idx in picked {
                        let src = group[idx];
                        let shift: f64 = rng.gen_range(-1.0..=1.0);
                        let departure = (src.departure_s as f64 + shift).round().max(0.0) as u32;
                        let mut id = format!("{}A", src.id);
                        while used_ids.contains(&id) {
                            id.push('A');
                        }
                        used_ids.insert(id.clone());
                        out.push(Trip {
                            id,
                            origin: o,
                            destination: d,
                            departure_s: departure,
                        });
                    }
                }
                report.push(PairFluctuation {
                    origin: o,
                    destination: d,
                    direction,
                    original: n,
                    resulting: n + k,
                });
            }
            FluctuationDirection::Decrease => {
                let m = round_half_up(n as f64 * (1.0 - spec.ratio)).min(n);
                let mut keep = if n > 0 { sample(&mut rng, n, m).into_vec() } else { Vec::new() };
                keep.sort_unstable();
                out.extend(keep.into_iter().map(|idx| group[idx].clone()));
                report.push(PairFluctuation {
                    origin: o,
                    destination: d,
                    direction,
                    original: n,
                    resulting: m,
                });
            }
        }
    }
    sort_trips(&mut out);
    (out, report)
}

/// Writes per-vehicle demand in the OD csv layout with a leading id column;
/// each vehicle's window is its one-second departure slot.
pub fn write_trips_csv<W: Write>(
    mut out: W,
    trips: &[Trip],
    topology: &NetworkTopology,
) -> Result<(), DemandError> {
    writeln!(out, "# format_version: 1")?;
    let mut w = csv::Writer::from_writer(out);
    for t in trips {
        w.serialize(TripRow {
            id: &t.id,
            origin: &topology.taz(t.origin).name,
            destination: &topology.taz(t.destination).name,
            count: 1,
            window_start_s: t.departure_s,
            window_end_s: t.departure_s + 1,
        })?;
    }
    w.flush()?;
    Ok(())
}
