//! Index arithmetic on the discrete torus Z_N^d.
//!
//! Sites and wavenumbers share the same index set. Arrays over the torus are
//! stored flat in row-major order (last coordinate fastest), and every module
//! that lays out data per site or per wavenumber relies on that order.

use serde::{Deserialize, Serialize};

use crate::error::{CoherenceError, Result};

/// Dimension `d` and side length `N` of the torus Z_N^d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawShape", into = "RawShape")]
pub struct TorusShape {
    dim: usize,
    side: usize,
    sites: usize,
}

#[derive(Serialize, Deserialize)]
struct RawShape {
    d: usize,
    #[serde(rename = "N")]
    n: usize,
}

impl TryFrom<RawShape> for TorusShape {
    type Error = CoherenceError;

    fn try_from(raw: RawShape) -> Result<Self> {
        TorusShape::new(raw.d, raw.n)
    }
}

impl From<TorusShape> for RawShape {
    fn from(shape: TorusShape) -> Self {
        RawShape {
            d: shape.dim,
            n: shape.side,
        }
    }
}

impl TorusShape {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 {
            return Err(CoherenceError::InvalidShape("d must be at least 1".into()));
        }
        if side < 2 {
            return Err(CoherenceError::InvalidShape(format!(
                "N must be at least 2, got {side}"
            )));
        }
        let sites = u32::try_from(dim)
            .ok()
            .and_then(|d| side.checked_pow(d))
            .ok_or_else(|| {
                CoherenceError::InvalidShape(format!("N^d overflows for d = {dim}, N = {side}"))
            })?;
        Ok(Self { dim, side, sites })
    }

    /// Spatial dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Side length `N`.
    pub fn side(&self) -> usize {
        self.side
    }

    /// Number of sites `M = N^d`.
    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn with_side(&self, side: usize) -> Result<Self> {
        Self::new(self.dim, side)
    }

    /// Builds an index, reducing every coordinate modulo `N`.
    pub fn index(&self, coords: &[i64]) -> Result<MultiIndex> {
        if coords.len() != self.dim {
            return Err(CoherenceError::DimensionMismatch {
                expected: self.dim,
                actual: coords.len(),
            });
        }
        let n = self.side as i64;
        Ok(MultiIndex {
            coords: coords.iter().map(|&c| c.rem_euclid(n) as usize).collect(),
        })
    }

    pub fn zero(&self) -> MultiIndex {
        MultiIndex {
            coords: vec![0; self.dim],
        }
    }

    /// Row-major position of `k` in flat arrays.
    pub fn linear(&self, k: &MultiIndex) -> usize {
        k.coords.iter().fold(0, |acc, &c| acc * self.side + c)
    }

    pub fn from_linear(&self, mut pos: usize) -> MultiIndex {
        let mut coords = vec![0; self.dim];
        for c in coords.iter_mut().rev() {
            *c = pos % self.side;
            pos /= self.side;
        }
        MultiIndex { coords }
    }

    /// Componentwise `(a_i + b_i) mod N`.
    pub fn wrap_add(&self, a: &MultiIndex, b: &MultiIndex) -> Result<MultiIndex> {
        self.check(a)?;
        self.check(b)?;
        Ok(MultiIndex {
            coords: a
                .coords
                .iter()
                .zip(&b.coords)
                .map(|(x, y)| (x + y) % self.side)
                .collect(),
        })
    }

    /// Componentwise `(a_i - b_i) mod N`.
    pub fn wrap_sub(&self, a: &MultiIndex, b: &MultiIndex) -> Result<MultiIndex> {
        self.check(a)?;
        self.check(b)?;
        Ok(MultiIndex {
            coords: a
                .coords
                .iter()
                .zip(&b.coords)
                .map(|(x, y)| (x + self.side - y) % self.side)
                .collect(),
        })
    }

    pub fn negate(&self, a: &MultiIndex) -> MultiIndex {
        MultiIndex {
            coords: a.coords.iter().map(|&c| (self.side - c) % self.side).collect(),
        }
    }

    /// Representative of each coordinate in `(-N/2, N/2]`.
    pub fn signed(&self, k: &MultiIndex) -> Vec<i64> {
        let n = self.side as i64;
        k.coords
            .iter()
            .map(|&c| {
                let c = c as i64;
                if 2 * c > n {
                    c - n
                } else {
                    c
                }
            })
            .collect()
    }

    /// All `N^d` indices, row-major.
    pub fn sites_iter(&self) -> Sites {
        Sites {
            shape: *self,
            next: 0,
        }
    }

    pub fn enumerate_sites(&self) -> Vec<MultiIndex> {
        self.sites_iter().collect()
    }

    fn check(&self, k: &MultiIndex) -> Result<()> {
        if k.coords.len() != self.dim {
            return Err(CoherenceError::DimensionMismatch {
                expected: self.dim,
                actual: k.coords.len(),
            });
        }
        if k.coords.iter().any(|&c| c >= self.side) {
            return Err(CoherenceError::InvalidShape(format!(
                "index {:?} out of range for N = {}",
                k.coords, self.side
            )));
        }
        Ok(())
    }
}

/// Point of Z_N^d with canonical coordinates in `[0, N-1]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct MultiIndex {
    coords: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl MultiIndex {
    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|&c| c == 0)
    }

    /// Parity of the plain coordinate sum (no reduction mod N).
    pub fn coordinate_sum_parity(&self) -> Parity {
        if self.coords.iter().sum::<usize>() % 2 == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

pub struct Sites {
    shape: TorusShape,
    next: usize,
}

impl Iterator for Sites {
    type Item = MultiIndex;

    fn next(&mut self) -> Option<MultiIndex> {
        if self.next >= self.shape.sites {
            return None;
        }
        let k = self.shape.from_linear(self.next);
        self.next += 1;
        Some(k)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let rest = self.shape.sites - self.next;
        (rest, Some(rest))
    }
}

impl ExactSizeIterator for Sites {}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn idx(shape: &TorusShape, c: &[i64]) -> MultiIndex {
        shape.index(c).unwrap()
    }

    #[test]
    fn wrap_add_examples() {
        let s1 = TorusShape::new(1, 4).unwrap();
        assert_eq!(
            s1.wrap_add(&idx(&s1, &[3]), &idx(&s1, &[2])).unwrap().coords(),
            &[1]
        );
        let s2 = TorusShape::new(2, 3).unwrap();
        assert_eq!(
            s2.wrap_add(&idx(&s2, &[2, 2]), &idx(&s2, &[1, 1]))
                .unwrap()
                .coords(),
            &[0, 0]
        );
        let k = idx(&s2, &[1, 2]);
        assert_eq!(s2.wrap_add(&k, &s2.zero()).unwrap(), k);
    }

    #[test]
    fn wrap_add_rejects_mismatched_dimension() {
        let s2 = TorusShape::new(2, 3).unwrap();
        let s1 = TorusShape::new(1, 3).unwrap();
        let err = s2.wrap_add(&idx(&s2, &[1, 1]), &idx(&s1, &[1])).unwrap_err();
        assert!(matches!(err, CoherenceError::DimensionMismatch { .. }));
    }

    #[test]
    fn negative_offsets_normalize() {
        let s = TorusShape::new(2, 5).unwrap();
        assert_eq!(idx(&s, &[-1, 6]).coords(), &[4, 1]);
        assert_eq!(s.signed(&idx(&s, &[-1, 2])), vec![-1, 2]);
    }

    #[test]
    fn enumeration_is_row_major() {
        let s = TorusShape::new(1, 3).unwrap();
        let got: Vec<Vec<usize>> = s.sites_iter().map(|k| k.coords().to_vec()).collect();
        assert_eq!(got, vec![vec![0], vec![1], vec![2]]);

        let s = TorusShape::new(2, 2).unwrap();
        let got: Vec<Vec<usize>> = s.sites_iter().map(|k| k.coords().to_vec()).collect();
        assert_eq!(got, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);

        assert_eq!(TorusShape::new(3, 4).unwrap().sites_iter().count(), 64);
    }

    #[test]
    fn parity_examples() {
        let s = TorusShape::new(2, 5).unwrap();
        assert_eq!(idx(&s, &[0, 0]).coordinate_sum_parity(), Parity::Even);
        assert_eq!(idx(&s, &[1, 2]).coordinate_sum_parity(), Parity::Odd);
        assert_eq!(idx(&s, &[3, 3]).coordinate_sum_parity(), Parity::Even);
    }

    #[test]
    fn invalid_shapes() {
        assert!(TorusShape::new(0, 4).is_err());
        assert!(TorusShape::new(1, 1).is_err());
        assert!(TorusShape::new(64, 1 << 20).is_err());
    }

    #[test]
    fn shape_json_uses_capital_n() {
        let s = TorusShape::new(2, 7).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"d":2,"N":7}"#);
        let back: TorusShape = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<TorusShape>(r#"{"d":2,"N":1}"#).is_err());
    }

    proptest! {
        #[test]
        fn group_laws(d in 1usize..4, n in 2usize..9, seed in any::<[i64; 9]>()) {
            let s = TorusShape::new(d, n).unwrap();
            let a = s.index(&seed[0..d]).unwrap();
            let b = s.index(&seed[3..3 + d]).unwrap();
            let c = s.index(&seed[6..6 + d]).unwrap();
            let ab_c = s.wrap_add(&s.wrap_add(&a, &b).unwrap(), &c).unwrap();
            let a_bc = s.wrap_add(&a, &s.wrap_add(&b, &c).unwrap()).unwrap();
            prop_assert_eq!(ab_c, a_bc);
            prop_assert_eq!(s.wrap_add(&a, &b).unwrap(), s.wrap_add(&b, &a).unwrap());
            prop_assert_eq!(s.wrap_add(&a, &s.negate(&a)).unwrap(), s.zero());
            prop_assert_eq!(s.from_linear(s.linear(&a)), a);
        }

        #[test]
        fn enumeration_distinct(d in 1usize..4, n in 2usize..7) {
            let s = TorusShape::new(d, n).unwrap();
            let all = s.enumerate_sites();
            let set: std::collections::BTreeSet<_> = all.iter().cloned().collect();
            prop_assert_eq!(all.len(), s.sites());
            prop_assert_eq!(set.len(), s.sites());
        }
    }
}
