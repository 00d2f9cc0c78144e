//! Deterministic 3D force-directed layout (Fruchterman–Reingold forces with
//! a geometric cooling schedule).

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{AccountId, MutualGraph};

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("cannot lay out an empty graph")]
    EmptyGraph,
    #[error("invalid layout config: {0}")]
    InvalidConfig(&'static str),
    #[error("layout file line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    pub seed: u64,
    pub iterations: usize,
    pub repulsion: f64,
    pub attraction: f64,
    pub initial_temperature: f64,
    pub cooling: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 500,
            repulsion: 1.0,
            attraction: 1.0,
            initial_temperature: 0.1,
            cooling: 0.99,
        }
    }
}

impl LayoutConfig {
    pub fn validate(&self) -> Result<(), LayoutError> {
        if self.iterations == 0 {
            return Err(LayoutError::InvalidConfig("iterations must be at least 1"));
        }
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return Err(LayoutError::InvalidConfig("cooling must lie in (0, 1)"));
        }
        let positive = [self.repulsion, self.attraction, self.initial_temperature];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(LayoutError::InvalidConfig("force constants and temperature must be positive"));
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a digest of every parameter, recorded in layout
    /// exports so cached files can be matched to the config that made them.
    pub fn digest(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                hash ^= u64::from(*b);
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        };
        feed(&self.seed.to_le_bytes());
        feed(&(self.iterations as u64).to_le_bytes());
        for v in [self.repulsion, self.attraction, self.initial_temperature, self.cooling] {
            feed(&v.to_bits().to_le_bytes());
        }
        hash
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutPosition {
    pub node: AccountId,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl LayoutPosition {
    pub fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn distance(&self, other: &LayoutPosition) -> f64 {
        let [a, b, c] = self.coords();
        let [x, y, z] = other.coords();
        ((a - x).powi(2) + (b - y).powi(2) + (c - z).powi(2)).sqrt()
    }
}

/// Positions in the node order of the graph they were computed for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub config: LayoutConfig,
    pub positions: Vec<LayoutPosition>,
}

impl Layout {
    pub fn get(&self, id: &AccountId) -> Option<&LayoutPosition> {
        self.positions
            .binary_search_by(|p| p.node.cmp(id))
            .ok()
            .map(|i| &self.positions[i])
    }

    /// Writes a `# seed=..,config_hash=..` line followed by `id,x,y,z` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), LayoutError> {
        writeln!(out, "# seed={},config_hash={:016x}", self.config.seed, self.config.digest())?;
        writeln!(out, "id,x,y,z")?;
        for p in &self.positions {
            writeln!(out, "{},{},{},{}", p.node, p.x, p.y, p.z)?;
        }
        Ok(())
    }

    /// Reads a file produced by [`Layout::write_csv`]. The stored hash must
    /// match `config`, otherwise the file belongs to a different layout.
    pub fn read_csv<R: BufRead>(input: R, config: LayoutConfig) -> Result<Self, LayoutError> {
        let mut lines = input.lines().enumerate();
        let malformed = |line: usize, reason: &str| LayoutError::Malformed { line, reason: reason.to_string() };
        let header = lines.next().ok_or_else(|| malformed(1, "missing header"))?.1?;
        let expected = format!("# seed={},config_hash={:016x}", config.seed, config.digest());
        if header.trim() != expected {
            return Err(malformed(1, "header does not match layout config"));
        }
        match lines.next() {
            Some((_, Ok(l))) if l.trim() == "id,x,y,z" => {}
            _ => return Err(malformed(2, "expected `id,x,y,z`")),
        }
        let mut positions = Vec::new();
        for (n, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(malformed(n + 1, "expected 4 fields"));
            }
            let node = AccountId::new(fields[0]).map_err(|_| malformed(n + 1, "empty id"))?;
            let mut xyz = [0.0; 3];
            for (slot, raw) in xyz.iter_mut().zip(&fields[1..]) {
                *slot = raw.trim().parse().map_err(|_| malformed(n + 1, "bad coordinate"))?;
            }
            positions.push(LayoutPosition { node, x: xyz[0], y: xyz[1], z: xyz[2] });
        }
        positions.sort_by(|a, b| a.node.cmp(&b.node));
        Ok(Self { config, positions })
    }
}

type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Lays out `graph` in 3D and rescales the result into `[-1, 1]^3`.
///
/// Output is a pure function of `(graph, config)`: each node's displacement
/// is summed sequentially over the other nodes in index order, so the
/// parallel accumulation does not change the floating-point result.
pub fn compute_layout(graph: &MutualGraph, config: &LayoutConfig) -> Result<Layout, LayoutError> {
    config.validate()?;
    let n = graph.node_count();
    if n == 0 {
        return Err(LayoutError::EmptyGraph);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pos: Vec<Vec3> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();

    // ideal spacing for n nodes in a unit volume
    let k = (1.0 / n as f64).cbrt();
    let k2 = k * k;
    let mut temperature = config.initial_temperature;

    for _ in 0..config.iterations {
        let snapshot = &pos;
        let displacement: Vec<Vec3> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut disp = [0.0; 3];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let (delta, dist) = separation(snapshot[i], snapshot[j], i, j);
                    let push = config.repulsion * k2 / dist;
                    for a in 0..3 {
                        disp[a] += delta[a] / dist * push;
                    }
                }
                for &j in graph.neighbor_indices(i) {
                    let (delta, dist) = separation(snapshot[i], snapshot[j], i, j);
                    let pull = config.attraction * dist * dist / k;
                    for a in 0..3 {
                        disp[a] -= delta[a] / dist * pull;
                    }
                }
                disp
            })
            .collect();

        for (p, d) in pos.iter_mut().zip(&displacement) {
            let len = norm(*d);
            if len > 0.0 {
                let step = len.min(temperature) / len;
                for a in 0..3 {
                    p[a] += d[a] * step;
                }
            }
        }
        temperature *= config.cooling;
    }

    rescale(&mut pos);
    let positions = graph
        .ids()
        .iter()
        .zip(&pos)
        .map(|(id, p)| LayoutPosition { node: id.clone(), x: p[0], y: p[1], z: p[2] })
        .collect();
    Ok(Layout { config: *config, positions })
}

/// Vector from `b` to `a` and its length. Coincident points are separated
/// along a fixed axis chosen from the index order so the result stays
/// deterministic.
fn separation(a: Vec3, b: Vec3, i: usize, j: usize) -> (Vec3, f64) {
    let delta = sub(a, b);
    let dist = norm(delta);
    if dist > 1e-9 {
        (delta, dist)
    } else {
        let sign = if i < j { 1.0 } else { -1.0 };
        ([sign * 1e-9, 0.0, 0.0], 1e-9)
    }
}

fn rescale(pos: &mut [Vec3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in pos.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let center: Vec3 = [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a]));
    let half = (0..3).map(|a| 0.5 * (hi[a] - lo[a])).fold(0.0, f64::max);
    for p in pos.iter_mut() {
        for a in 0..3 {
            p[a] = if half > 0.0 { ((p[a] - center[a]) / half).clamp(-1.0, 1.0) } else { 0.0 };
        }
    }
}
