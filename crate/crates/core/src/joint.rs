//! Stacked joint vectors `[x^1, ..., x^N]` laid out player-major.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// A vector of length `players * dim` where player `i` owns
/// entries `[i * dim, (i + 1) * dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointVectorRepr", into = "JointVectorRepr")]
pub struct JointVector {
    entries: Vec<f64>,
    players: usize,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct JointVectorRepr {
    players: usize,
    dim: usize,
    entries: Vec<f64>,
}

impl TryFrom<JointVectorRepr> for JointVector {
    type Error = Error;

    fn try_from(r: JointVectorRepr) -> Result<Self> {
        JointVector::new(r.players, r.dim, r.entries)
    }
}

impl From<JointVector> for JointVectorRepr {
    fn from(v: JointVector) -> Self {
        JointVectorRepr {
            players: v.players,
            dim: v.dim,
            entries: v.entries,
        }
    }
}

impl JointVector {
    pub fn new(players: usize, dim: usize, entries: Vec<f64>) -> Result<Self> {
        if players == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "joint vector needs players >= 1 and dim >= 1, got {players} x {dim}"
            )));
        }
        if entries.len() != players * dim {
            return Err(Error::DimensionMismatch {
                context: "joint vector",
                expected: players * dim,
                found: entries.len(),
            });
        }
        Ok(Self {
            entries,
            players,
            dim,
        })
    }

    pub fn zeros(players: usize, dim: usize) -> Result<Self> {
        Self::new(players, dim, vec![0.0; players * dim])
    }

    /// Stacks per-player slices; every slice must have the same length.
    pub fn from_players<S: AsRef<[f64]>>(slices: &[S]) -> Result<Self> {
        let players = slices.len();
        let dim = slices.first().map(|s| s.as_ref().len()).unwrap_or(0);
        let mut entries = Vec::with_capacity(players * dim);
        for s in slices {
            let s = s.as_ref();
            if s.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "player slice",
                    expected: dim,
                    found: s.len(),
                });
            }
            entries.extend_from_slice(s);
        }
        Self::new(players, dim, entries)
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.entries
    }

    pub fn player(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn player_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.dim;
        &mut self.entries[i * d..(i + 1) * d]
    }

    pub fn iter_players(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks_exact(self.dim)
    }

    /// Copy of `self` with player `i`'s slice replaced by `slice`.
    pub fn with_player(&self, i: usize, slice: &[f64]) -> Result<Self> {
        self.check_player(i)?;
        if slice.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "player slice",
                expected: self.dim,
                found: slice.len(),
            });
        }
        let mut out = self.clone();
        out.player_mut(i).copy_from_slice(slice);
        Ok(out)
    }

    pub fn check_player(&self, i: usize) -> Result<()> {
        if i < self.players {
            Ok(())
        } else {
            Err(Error::PlayerOutOfRange {
                index: i,
                players: self.players,
            })
        }
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        ensure_finite(&self.entries, what)
    }

    pub fn ensure_same_shape(&self, other: &JointVector, context: &'static str) -> Result<()> {
        if self.players != other.players {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.players,
                found: other.players,
            });
        }
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.entries)
    }

    pub fn dot(&self, other: &JointVector) -> f64 {
        dot(&self.entries, &other.entries)
    }

    pub fn distance(&self, other: &JointVector) -> f64 {
        distance(&self.entries, &other.entries)
    }

    /// `self + alpha * other`, shapes must agree.
    pub fn add_scaled(&self, alpha: f64, other: &JointVector) -> JointVector {
        debug_assert_eq!(self.len(), other.len());
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a + alpha * b)
            .collect();
        JointVector {
            entries,
            players: self.players,
            dim: self.dim,
        }
    }

    pub fn sub(&self, other: &JointVector) -> JointVector {
        self.add_scaled(-1.0, other)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
