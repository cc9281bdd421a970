//! Path-fidelity metrics: PL, NE, SR, SPL, CLS, nDTW and SDTW, plus
//! per-split reports with CSV/JSON output.
//!
//! All metrics are functions of a node-pair distance only, so they work
//! unchanged on generated worlds (graph geodesics) and on imported data with a
//! precomputed distance table.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{NodeId, WorldGraph};

/// Default success radius and CLS/nDTW distance scale, in meters.
pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 3.0;
pub const DEFAULT_DTW_THRESHOLD: f64 = 3.0;

pub const REPORT_COLUMNS: [&str; 8] = ["episode_id", "pl", "ne", "sr", "spl", "cls", "ndtw", "sdtw"];

/// Symmetric node-pair distance, zero on the diagonal.
pub trait Distance {
    fn distance(&self, a: NodeId, b: NodeId) -> f64;
}

impl Distance for WorldGraph {
    fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        self.geodesic(a, b)
    }
}

impl<D: Distance + ?Sized> Distance for &D {
    fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        (**self).distance(a, b)
    }
}

/// Multiplies every distance of the inner metric by a constant.
pub struct Scaled<D> {
    pub inner: D,
    pub factor: f64,
}

impl<D: Distance> Distance for Scaled<D> {
    fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        self.inner.distance(a, b) * self.factor
    }
}

/// Distances for imported data, read from a `node_a,node_b,meters` CSV.
/// Missing pairs are infinitely far apart; call [`DistanceTable::check_path`]
/// before scoring to turn that into an error.
#[derive(Clone, Debug, Default)]
pub struct DistanceTable {
    table: HashMap<(NodeId, NodeId), f64>,
}

impl DistanceTable {
    pub fn insert(&mut self, a: NodeId, b: NodeId, meters: f64) {
        self.table.insert((a.min(b), a.max(b)), meters);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["node_a", "node_b", "meters"] {
            return Err(Error::Schema {
                line: 1,
                message: "expected header node_a,node_b,meters".into(),
            });
        }
        let mut out = DistanceTable::default();
        for (i, record) in rdr.records().enumerate() {
            let line = i + 2;
            let record = record?;
            let field = |k: usize| record.get(k).unwrap_or("").trim().to_string();
            let parse_id = |s: String| {
                s.parse::<NodeId>().map_err(|_| Error::Schema {
                    line,
                    message: format!("bad node id {s:?}"),
                })
            };
            let a = parse_id(field(0))?;
            let b = parse_id(field(1))?;
            let meters: f64 = field(2).parse().map_err(|_| Error::Schema {
                line,
                message: format!("bad distance {:?}", field(2)),
            })?;
            if !(meters >= 0.0) || !meters.is_finite() {
                return Err(Error::Schema {
                    line,
                    message: "distance must be finite and >= 0".into(),
                });
            }
            out.insert(a, b, meters);
        }
        Ok(out)
    }

    pub fn check_path(&self, a: &[NodeId], b: &[NodeId]) -> Result<()> {
        for &x in a.iter().chain(b) {
            for &y in a.iter().chain(b) {
                if !self.distance(x, y).is_finite() {
                    return Err(Error::Empty(format!("distance table has no entry for ({x}, {y})")));
                }
            }
        }
        Ok(())
    }
}

impl Distance for DistanceTable {
    fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        if a == b {
            return 0.0;
        }
        self.table
            .get(&(a.min(b), a.max(b)))
            .copied()
            .unwrap_or(f64::INFINITY)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub success_threshold: f64,
    pub dtw_threshold: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            success_threshold: DEFAULT_SUCCESS_THRESHOLD,
            dtw_threshold: DEFAULT_DTW_THRESHOLD,
        }
    }
}

/// A predicted path scored against a reference under a distance function.
pub struct PathPair<'a, D: Distance + ?Sized> {
    pub predicted: &'a [NodeId],
    pub reference: &'a [NodeId],
    pub distance: &'a D,
}

impl<'a, D: Distance + ?Sized> PathPair<'a, D> {
    pub fn new(predicted: &'a [NodeId], reference: &'a [NodeId], distance: &'a D) -> Self {
        assert!(
            !predicted.is_empty() && !reference.is_empty(),
            "paths must be non-empty"
        );
        PathPair {
            predicted,
            reference,
            distance,
        }
    }
}

pub fn path_length<D: Distance + ?Sized>(path: &[NodeId], distance: &D) -> f64 {
    path.windows(2).map(|w| distance.distance(w[0], w[1])).sum()
}

pub fn navigation_error<D: Distance + ?Sized>(pair: &PathPair<'_, D>) -> f64 {
    let end = *pair.predicted.last().unwrap();
    let goal = *pair.reference.last().unwrap();
    pair.distance.distance(end, goal)
}

/// 1 when the path ends within `threshold` of the goal (inclusive).
pub fn success<D: Distance + ?Sized>(pair: &PathPair<'_, D>, threshold: f64) -> f64 {
    if navigation_error(pair) <= threshold {
        1.0
    } else {
        0.0
    }
}

pub fn spl<D: Distance + ?Sized>(pair: &PathPair<'_, D>, threshold: f64) -> f64 {
    let sr = success(pair, threshold);
    if sr == 0.0 {
        return 0.0;
    }
    let shortest = pair
        .distance
        .distance(pair.reference[0], *pair.reference.last().unwrap());
    let pl = path_length(pair.predicted, pair.distance);
    let denom = shortest.max(pl);
    if denom == 0.0 {
        return sr;
    }
    sr * shortest / denom
}

/// Coverage weighted by length score.
pub fn cls<D: Distance + ?Sized>(pair: &PathPair<'_, D>, dtw_threshold: f64) -> f64 {
    let d = pair.distance;
    let coverage = pair
        .reference
        .iter()
        .map(|&r| {
            let nearest = pair
                .predicted
                .iter()
                .map(|&p| d.distance(r, p))
                .fold(f64::INFINITY, f64::min);
            (-nearest / dtw_threshold).exp()
        })
        .sum::<f64>()
        / pair.reference.len() as f64;
    let expected = coverage * path_length(pair.reference, d);
    let pl = path_length(pair.predicted, d);
    let denom = expected + (expected - pl).abs();
    let length_score = if denom == 0.0 { 1.0 } else { expected / denom };
    coverage * length_score
}

/// Classic DTW over node distances with match/insert/delete moves.
pub fn dtw<D: Distance + ?Sized>(predicted: &[NodeId], reference: &[NodeId], distance: &D) -> f64 {
    let m = reference.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &p in predicted {
        cur[0] = f64::INFINITY;
        for (j, &r) in reference.iter().enumerate() {
            let best = prev[j].min(prev[j + 1]).min(cur[j]);
            cur[j + 1] = distance.distance(p, r) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

pub fn ndtw<D: Distance + ?Sized>(pair: &PathPair<'_, D>, dtw_threshold: f64) -> f64 {
    let cost = dtw(pair.predicted, pair.reference, pair.distance);
    (-cost / (pair.reference.len() as f64 * dtw_threshold)).exp()
}

pub fn sdtw<D: Distance + ?Sized>(pair: &PathPair<'_, D>, threshold: f64, dtw_threshold: f64) -> f64 {
    success(pair, threshold) * ndtw(pair, dtw_threshold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode_id: String,
    pub pl: f64,
    pub ne: f64,
    pub sr: f64,
    pub spl: f64,
    pub cls: f64,
    pub ndtw: f64,
    pub sdtw: f64,
}

impl EpisodeMetrics {
    pub fn compute<D: Distance + ?Sized>(
        episode_id: impl Into<String>,
        pair: &PathPair<'_, D>,
        config: &MetricConfig,
    ) -> Self {
        let sr = success(pair, config.success_threshold);
        let ndtw = ndtw(pair, config.dtw_threshold);
        EpisodeMetrics {
            episode_id: episode_id.into(),
            pl: path_length(pair.predicted, pair.distance),
            ne: navigation_error(pair),
            sr,
            spl: spl(pair, config.success_threshold),
            cls: cls(pair, config.dtw_threshold),
            ndtw,
            sdtw: sr * ndtw,
        }
    }

    fn values(&self) -> [f64; 7] {
        [self.pl, self.ne, self.sr, self.spl, self.cls, self.ndtw, self.sdtw]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub pl: f64,
    pub ne: f64,
    pub sr: f64,
    pub spl: f64,
    pub cls: f64,
    pub ndtw: f64,
    pub sdtw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub episodes: Vec<EpisodeMetrics>,
    pub aggregate: Aggregate,
    pub count: usize,
}

impl MetricReport {
    /// Unweighted means over the rows; aggregate SDTW is the mean of the
    /// per-episode products.
    pub fn from_rows(episodes: Vec<EpisodeMetrics>) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Empty("cannot report on an empty split".into()));
        }
        let n = episodes.len() as f64;
        let mut sums = [0.0; 7];
        for row in &episodes {
            for (s, v) in sums.iter_mut().zip(row.values()) {
                *s += v;
            }
        }
        let [pl, ne, sr, spl, cls, ndtw, sdtw] = sums.map(|s| s / n);
        Ok(MetricReport {
            count: episodes.len(),
            episodes,
            aggregate: Aggregate {
                pl,
                ne,
                sr,
                spl,
                cls,
                ndtw,
                sdtw,
            },
        })
    }

    /// One row per episode followed by a `mean` row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(REPORT_COLUMNS)?;
        for row in &self.episodes {
            let mut rec = vec![row.episode_id.clone()];
            rec.extend(row.values().iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let a = &self.aggregate;
        let mut rec = vec!["mean".to_string()];
        rec.extend([a.pl, a.ne, a.sr, a.spl, a.cls, a.ndtw, a.sdtw].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            if record.get(0) == Some("mean") {
                continue;
            }
            let num = |k: usize| -> Result<f64> {
                record
                    .get(k)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Schema {
                        line: i + 2,
                        message: format!("bad value in column {}", REPORT_COLUMNS[k]),
                    })
            };
            rows.push(EpisodeMetrics {
                episode_id: record.get(0).unwrap_or("").to_string(),
                pl: num(1)?,
                ne: num(2)?,
                sr: num(3)?,
                spl: num(4)?,
                cls: num(5)?,
                ndtw: num(6)?,
                sdtw: num(7)?,
            });
        }
        MetricReport::from_rows(rows)
    }

    /// Aggregate-only JSON document.
    pub fn aggregate_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            count: usize,
            #[serde(flatten)]
            aggregate: &'a Aggregate,
        }
        Ok(serde_json::to_string_pretty(&Doc {
            count: self.count,
            aggregate: &self.aggregate,
        })?)
    }
}

/// One scored item: an episode id, the agent path, the reference path and the
/// distance to measure them with.
pub struct Scored<'a> {
    pub episode_id: &'a str,
    pub predicted: &'a [NodeId],
    pub reference: &'a [NodeId],
    pub distance: &'a (dyn Distance + Sync),
}

/// Per-episode metrics in input order plus means. With the `parallel` feature
/// rows are computed on the current rayon pool; each row is independent and
/// the means are summed sequentially, so the result is bit-identical to the
/// sequential run.
pub fn evaluate_split(items: &[Scored<'_>], config: &MetricConfig) -> Result<MetricReport> {
    if items.is_empty() {
        return Err(Error::Empty("cannot evaluate an empty split".into()));
    }
    for it in items {
        if it.predicted.is_empty() || it.reference.is_empty() {
            return Err(Error::Empty(format!("episode {} has an empty path", it.episode_id)));
        }
    }
    let score = |it: &Scored<'_>| {
        let pair = PathPair::new(it.predicted, it.reference, it.distance);
        EpisodeMetrics::compute(it.episode_id, &pair, config)
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<EpisodeMetrics> = {
        use rayon::prelude::*;
        items.par_iter().map(score).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<EpisodeMetrics> = items.iter().map(score).collect();
    MetricReport::from_rows(rows)
}
