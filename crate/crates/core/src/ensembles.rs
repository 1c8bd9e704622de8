//! Seeded problem suites: USE measurement matrices and k-sparse signals.
//!
//! Randomness comes from ChaCha20 with one independent stream per generated
//! object, so the matrix and the signal drawn from the same seed never share
//! a stream. Trial seeds for grid experiments are derived with [`derive_seed`].

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STREAM_MATRIX: u64 = 0;
const STREAM_SUPPORT: u64 = 1;
const STREAM_VALUES: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    UseRademacher,
    UseGaussian,
}

impl Suite {
    pub fn nonzeros(self) -> NonzeroDist {
        match self {
            Suite::UseRademacher => NonzeroDist::Rademacher,
            Suite::UseGaussian => NonzeroDist::Gaussian,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::UseRademacher => "use-rademacher",
            Suite::UseGaussian => "use-gaussian",
        })
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rademacher" | "use-rademacher" => Ok(Suite::UseRademacher),
            "gaussian" | "use-gaussian" => Ok(Suite::UseGaussian),
            other => Err(Error::InvalidGrid(format!("unknown suite `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NonzeroDist {
    /// ±1 with probability 1/2 each.
    Rademacher,
    /// Zero mean, unit variance.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub a: DMatrix<f64>,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub k: usize,
    pub delta: f64,
    pub rho: f64,
    pub seed: u64,
    pub suite: Suite,
}

impl ProblemInstance {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    #[allow(non_snake_case)]
    pub fn N(&self) -> usize {
        self.a.ncols()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Columns i.i.d. uniform on the unit sphere in Rⁿ.
pub fn generate_use_matrix(n: usize, big_n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 || n > big_n {
        return Err(Error::InvalidDims(format!(
            "USE matrix needs 1 <= n <= N, got n = {n}, N = {big_n}"
        )));
    }
    let mut rng = stream_rng(seed, STREAM_MATRIX);
    let mut a = DMatrix::<f64>::zeros(n, big_n);
    for mut col in a.column_iter_mut() {
        loop {
            for v in col.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let norm = col.norm();
            // A zero draw has probability zero, but redraw rather than divide by it.
            if norm > 0.0 {
                col /= norm;
                break;
            }
        }
    }
    Ok(a)
}

/// A length-`big_n` vector with a uniformly random support of size `k`.
pub fn generate_sparse_signal(
    big_n: usize,
    k: usize,
    dist: NonzeroDist,
    seed: u64,
) -> Result<DVector<f64>> {
    if k > big_n {
        return Err(Error::InvalidSparsity { k, limit: big_n });
    }
    let mut support_rng = stream_rng(seed, STREAM_SUPPORT);
    let mut value_rng = stream_rng(seed, STREAM_VALUES);
    let mut support = index::sample(&mut support_rng, big_n, k).into_vec();
    // Values are assigned in index order so they do not depend on the
    // sampler's internal ordering.
    support.sort_unstable();
    let mut x = DVector::zeros(big_n);
    for i in support {
        x[i] = match dist {
            NonzeroDist::Rademacher => {
                if value_rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            NonzeroDist::Gaussian => value_rng.sample(StandardNormal),
        };
    }
    Ok(x)
}

/// `n = round(δN)` and `k = max(1, round(ρn))`, rounding half away from zero.
pub fn grid_dimensions(big_n: usize, delta: f64, rho: f64) -> Result<(usize, usize)> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidGrid(format!("delta = {delta} outside (0, 1]")));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidGrid(format!("rho = {rho} outside (0, 1]")));
    }
    let n = (delta * big_n as f64).round() as usize;
    if n == 0 {
        return Err(Error::InvalidDims(format!(
            "delta = {delta} gives n = 0 for N = {big_n}"
        )));
    }
    let k = ((rho * n as f64).round() as usize).max(1);
    Ok((n, k))
}

pub fn make_instance(
    big_n: usize,
    delta: f64,
    rho: f64,
    suite: Suite,
    seed: u64,
) -> Result<ProblemInstance> {
    let (n, k) = grid_dimensions(big_n, delta, rho)?;
    let a = generate_use_matrix(n, big_n, seed)?;
    let x = generate_sparse_signal(big_n, k, suite.nonzeros(), seed)?;
    let y = &a * &x;
    Ok(ProblemInstance {
        a,
        x,
        y,
        k,
        delta: n as f64 / big_n as f64,
        rho: k as f64 / n as f64,
        seed,
        suite,
    })
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into a seed. Distinct word sequences give
/// (with overwhelming probability) distinct, uncorrelated seeds.
pub fn derive_seed(base: u64, words: &[u64]) -> u64 {
    words
        .iter()
        .fold(mix64(base), |acc, &w| mix64(acc ^ mix64(w)))
}

/// Grid coordinates are keyed at 1e-9 resolution so that seeds depend on
/// the point, not on its position in a grid.
pub fn grid_key(value: f64) -> u64 {
    (value * 1e9).round() as u64
}

/// Seed of trial `trial` at grid point `(N, δ, ρ)`.
pub fn trial_seed(base: u64, big_n: usize, delta: f64, rho: f64, trial: usize) -> u64 {
    derive_seed(
        base,
        &[big_n as u64, grid_key(delta), grid_key(rho), trial as u64],
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceHeader {
    format: String,
    version: u32,
    n: usize,
    #[serde(rename = "N")]
    big_n: usize,
    k: usize,
    delta: f64,
    rho: f64,
    seed: u64,
    suite: Suite,
}

const INSTANCE_FORMAT: &str = "sl0lab-instance";

/// Text dump of an instance: one JSON header line, then `# A`, `# x` and
/// `# y` blocks of comma-separated values (A row by row).
pub fn write_instance<W: Write>(inst: &ProblemInstance, mut out: W) -> Result<()> {
    let header = InstanceHeader {
        format: INSTANCE_FORMAT.to_string(),
        version: 1,
        n: inst.n(),
        big_n: inst.N(),
        k: inst.k,
        delta: inst.delta,
        rho: inst.rho,
        seed: inst.seed,
        suite: inst.suite,
    };
    let json = serde_json::to_string(&header).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(out, "{json}")?;
    writeln!(out, "# A")?;
    for row in inst.a.row_iter() {
        write_values(&mut out, row.iter())?;
    }
    writeln!(out, "# x")?;
    write_values(&mut out, inst.x.iter())?;
    writeln!(out, "# y")?;
    write_values(&mut out, inst.y.iter())?;
    Ok(())
}

fn write_values<'a, W: Write>(out: &mut W, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    let line: Vec<String> = values.map(|v| v.to_string()).collect();
    writeln!(out, "{}", line.join(","))?;
    Ok(())
}

struct LineReader<R> {
    lines: std::iter::Enumerate<std::io::Lines<R>>,
}

impl<R: BufRead> LineReader<R> {
    fn next(&mut self, expect: &str) -> Result<(u64, String)> {
        match self.lines.next() {
            Some((i, Ok(line))) => Ok((i as u64 + 1, line)),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(Error::Parse {
                line: 0,
                message: format!("unexpected end of input, expected {expect}"),
            }),
        }
    }

    fn marker(&mut self, marker: &str) -> Result<()> {
        let (no, line) = self.next(marker)?;
        if line.trim() != marker {
            return Err(Error::Parse {
                line: no,
                message: format!("expected `{marker}`"),
            });
        }
        Ok(())
    }
}

pub fn read_instance<R: BufRead>(input: R) -> Result<ProblemInstance> {
    let mut reader = LineReader {
        lines: input.lines().enumerate(),
    };

    let (_, header_line) = reader.next("header")?;
    let header: InstanceHeader = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.format != INSTANCE_FORMAT {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected format `{}`", header.format),
        });
    }

    reader.marker("# A")?;
    let mut a = DMatrix::zeros(header.n, header.big_n);
    for i in 0..header.n {
        let (no, line) = reader.next("matrix row")?;
        let row = parse_values(&line, header.big_n, no)?;
        for (j, v) in row.into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    reader.marker("# x")?;
    let (no, line) = reader.next("x")?;
    let x = DVector::from_vec(parse_values(&line, header.big_n, no)?);
    reader.marker("# y")?;
    let (no, line) = reader.next("y")?;
    let y = DVector::from_vec(parse_values(&line, header.n, no)?);

    Ok(ProblemInstance {
        a,
        x,
        y,
        k: header.k,
        delta: header.delta,
        rho: header.rho,
        seed: header.seed,
        suite: header.suite,
    })
}

fn parse_values(line: &str, expected: usize, line_no: u64) -> Result<Vec<f64>> {
    let values = line
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("`{s}`: {e}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected {expected} values, found {}", values.len()),
        });
    }
    Ok(values)
}
