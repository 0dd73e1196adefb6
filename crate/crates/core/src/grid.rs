//! Heisenberg-periodic scalar fields sampled on a uniform grid.
//!
//! Nodes sit at `(i/N1, j/N2, k/N3)` for `0 ≤ i < N1` etc. A lookup at an
//! arbitrary point first projects it onto `[0,1)^3` through the pavage and
//! then interpolates trilinearly. Corners of the interpolation cell that fall
//! on the far faces `x_i = 1` are not grid nodes of the torus: they are
//! identified with points of the near faces whose vertical coordinate is
//! sheared (for instance `(1, x2, x3) ~ (0, x2, x3 - x2)`), so their values
//! are fetched by linear interpolation along the vertical column of the
//! identified point. The resulting interpolant is continuous on the torus.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::group::{project, HPoint};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
}

impl Resolution {
    pub fn new(n1: usize, n2: usize, n3: usize) -> Result<Self> {
        if n1 == 0 || n2 == 0 || n3 == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid resolution must be positive, got {n1}x{n2}x{n3}"
            )));
        }
        Ok(Self { n1, n2, n3 })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n1 * self.n2 * self.n3
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn spacing(&self) -> [f64; 3] {
        [
            1.0 / self.n1 as f64,
            1.0 / self.n2 as f64,
            1.0 / self.n3 as f64,
        ]
    }

    /// Volume of one grid cell.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        1.0 / self.len() as f64
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n2 + j) * self.n3 + k
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let k = idx % self.n3;
        let ij = idx / self.n3;
        (ij / self.n2, ij % self.n2, k)
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize, k: usize) -> HPoint {
        HPoint::new(
            i as f64 / self.n1 as f64,
            j as f64 / self.n2 as f64,
            k as f64 / self.n3 as f64,
        )
    }

    #[inline]
    pub fn node_at(&self, idx: usize) -> HPoint {
        let (i, j, k) = self.unravel(idx);
        self.node(i, j, k)
    }

    pub fn nodes(&self) -> impl Iterator<Item = HPoint> + '_ {
        (0..self.len()).map(move |idx| self.node_at(idx))
    }
}

/// A scalar field on the Heisenberg torus, stored at grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    res: Resolution,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(res: Resolution, values: Vec<f64>) -> Result<Self> {
        if values.len() != res.len() {
            return Err(Error::InvalidParameter(format!(
                "grid field needs {} values, got {}",
                res.len(),
                values.len()
            )));
        }
        Ok(Self { res, values })
    }

    pub fn constant(res: Resolution, value: f64) -> Self {
        Self {
            res,
            values: vec![value; res.len()],
        }
    }

    pub fn zeros(res: Resolution) -> Self {
        Self::constant(res, 0.0)
    }

    /// Samples `f` at every node.
    pub fn from_fn(res: Resolution, f: impl Fn(&HPoint) -> f64) -> Self {
        let values = res.nodes().map(|x| f(&x)).collect();
        Self { res, values }
    }

    #[inline]
    pub fn resolution(&self) -> Resolution {
        self.res
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.res.index(i, j, k)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Midpoint-rule integral over `[0,1)^3`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.res.cell_volume()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            res: self.res,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `self ← a·self + b·other`.
    pub fn axpby(&mut self, a: f64, b: f64, other: &GridField) -> Result<()> {
        if other.res != self.res {
            return Err(Error::InvalidParameter(
                "grid fields have different resolutions".into(),
            ));
        }
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s = a * *s + b * o;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &GridField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Value at a node index that may lie on the far faces (`i == n1`,
    /// `j == n2` or `k == n3`).
    fn virtual_node(&self, i: usize, j: usize, k: usize) -> f64 {
        let r = &self.res;
        if i < r.n1 && j < r.n2 && k < r.n3 {
            return self.values[r.index(i, j, k)];
        }
        if i < r.n1 && j < r.n2 {
            // (x1, x2, 1) ~ (x1, x2, 0)
            return self.values[r.index(i, j, 0)];
        }
        let q = project(&r.node(i, j, k));
        // horizontal coordinates of the identified point stay on grid lines
        let ii = ((q.x1 * r.n1 as f64).round() as usize) % r.n1;
        let jj = ((q.x2 * r.n2 as f64).round() as usize) % r.n2;
        self.column(ii, jj, q.x3)
    }

    /// Linear interpolation along the vertical column `(i, j)` at height
    /// `x3 ∈ [0,1)`.
    #[inline]
    fn column(&self, i: usize, j: usize, x3: f64) -> f64 {
        let n3 = self.res.n3;
        let f = x3 * n3 as f64;
        let mut k0 = f.floor() as usize;
        let mut t = f - k0 as f64;
        if k0 >= n3 {
            k0 = n3 - 1;
            t = 1.0;
        }
        let k1 = if k0 + 1 == n3 { 0 } else { k0 + 1 };
        let base = self.res.index(i, j, 0);
        (1.0 - t) * self.values[base + k0] + t * self.values[base + k1]
    }

    /// Heisenberg-periodic trilinear interpolation at an arbitrary point.
    pub fn lookup(&self, x: &HPoint) -> f64 {
        self.lookup_projected(&project(x))
    }

    /// [`lookup`](Self::lookup) for a point already in `[0,1)^3`.
    #[inline]
    pub fn lookup_projected(&self, q: &HPoint) -> f64 {
        let r = &self.res;
        let (i0, t1) = cell(q.x1, r.n1);
        let (j0, t2) = cell(q.x2, r.n2);
        let (k0, t3) = cell(q.x3, r.n3);
        let w = [
            (1.0 - t1) * (1.0 - t2) * (1.0 - t3),
            (1.0 - t1) * (1.0 - t2) * t3,
            (1.0 - t1) * t2 * (1.0 - t3),
            (1.0 - t1) * t2 * t3,
            t1 * (1.0 - t2) * (1.0 - t3),
            t1 * (1.0 - t2) * t3,
            t1 * t2 * (1.0 - t3),
            t1 * t2 * t3,
        ];
        if i0 + 1 < r.n1 && j0 + 1 < r.n2 {
            let k1 = if k0 + 1 == r.n3 { 0 } else { k0 + 1 };
            let v = &self.values;
            let b00 = r.index(i0, j0, 0);
            let b01 = r.index(i0, j0 + 1, 0);
            let b10 = r.index(i0 + 1, j0, 0);
            let b11 = r.index(i0 + 1, j0 + 1, 0);
            return w[0] * v[b00 + k0]
                + w[1] * v[b00 + k1]
                + w[2] * v[b01 + k0]
                + w[3] * v[b01 + k1]
                + w[4] * v[b10 + k0]
                + w[5] * v[b10 + k1]
                + w[6] * v[b11 + k0]
                + w[7] * v[b11 + k1];
        }
        let mut acc = 0.0;
        let mut c = 0;
        for di in 0..2 {
            for dj in 0..2 {
                for dk in 0..2 {
                    if w[c] != 0.0 {
                        acc += w[c] * self.virtual_node(i0 + di, j0 + dj, k0 + dk);
                    }
                    c += 1;
                }
            }
        }
        acc
    }

    /// Writes the field as `N1,N2,N3` on the first line followed by one
    /// value per line in row-major order (`k` fastest).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{},{},{}", self.res.n1, self.res.n2, self.res.n3)?;
        for v in &self.values {
            writeln!(w, "{v:e}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }

    pub fn read_csv<R: BufRead>(r: R, source_name: &str) -> Result<Self> {
        let parse_err = |row: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            row,
            message,
        };
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing resolution header".into()))??;
        let dims: Vec<usize> = header
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(1, format!("bad resolution header: {e}")))?;
        if dims.len() != 3 {
            return Err(parse_err(1, "header must hold exactly N1,N2,N3".into()));
        }
        let res = Resolution::new(dims[0], dims[1], dims[2])
            .map_err(|e| parse_err(1, e.to_string()))?;
        let mut values = Vec::with_capacity(res.len());
        for (row, line) in lines.enumerate() {
            let line = line?;
            let s = line.trim();
            if s.is_empty() {
                continue;
            }
            let v: f64 = s
                .parse()
                .map_err(|e| parse_err(row + 2, format!("bad value {s:?}: {e}")))?;
            values.push(v);
        }
        if values.len() != res.len() {
            return Err(parse_err(
                values.len() + 1,
                format!("expected {} values, found {}", res.len(), values.len()),
            ));
        }
        GridField::new(res, values)
    }
}

#[inline]
fn cell(x: f64, n: usize) -> (usize, f64) {
    let f = x * n as f64;
    let i = f.floor();
    let idx = i as usize;
    if idx >= n {
        (n - 1, 1.0)
    } else {
        (idx, f - i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::group_mul;
    use crate::testfn::theta;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nodes_are_reproduced() {
        let res = Resolution::new(4, 5, 6).unwrap();
        let f = GridField::from_fn(res, |x| x.x1 + 10.0 * x.x2 + 100.0 * x.x3);
        for idx in 0..res.len() {
            let x = res.node_at(idx);
            assert!((f.lookup(&x) - f.values()[idx]).abs() < 1e-12);
        }
    }

    #[test]
    fn lookup_is_lattice_periodic() {
        let res = Resolution::new(8, 8, 12).unwrap();
        let f = GridField::from_fn(res, |x| theta(x));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = HPoint::new(rng.gen(), rng.gen(), rng.gen());
            let n = [
                rng.gen_range(-2..=2),
                rng.gen_range(-2..=2),
                rng.gen_range(-2..=2),
            ];
            let y = group_mul(&HPoint::lattice(n), &x);
            assert!((f.lookup(&x) - f.lookup(&y)).abs() < 1e-12);
        }
    }

    #[test]
    fn vertical_face_is_continuous() {
        let res = Resolution::new(8, 8, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vals = (0..res.len()).map(|_| rng.gen::<f64>()).collect();
        let f = GridField::new(res, vals).unwrap();
        for _ in 0..500 {
            let (a, b): (f64, f64) = (rng.gen(), rng.gen());
            let inside = f.lookup(&HPoint::new(a, b, 1.0 - 1e-10));
            let across = f.lookup(&HPoint::new(a, b, 1e-10));
            assert!((inside - across).abs() < 1e-7);
        }
    }

    #[test]
    fn twisted_face_jumps_are_second_order() {
        // the far-face neighbours are interpolated in x3 after the twist, so
        // a smooth field jumps by O(h²) across the x1 and x2 faces
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let probes: Vec<(f64, f64)> = (0..300).map(|_| (rng.gen(), rng.gen())).collect();
        let jump = |n: usize| {
            let f = GridField::from_fn(Resolution::cube(n).unwrap(), theta);
            let eps = 1e-10;
            probes
                .iter()
                .map(|&(a, b)| {
                    let j1 = f.lookup(&HPoint::new(1.0 - eps, a, b))
                        - f.lookup(&HPoint::new(1.0 + eps, a, b));
                    let j2 = f.lookup(&HPoint::new(a, 1.0 - eps, b))
                        - f.lookup(&HPoint::new(a, 1.0 + eps, b));
                    j1.abs().max(j2.abs())
                })
                .fold(0.0, f64::max)
        };
        let (j16, j32) = (jump(16), jump(32));
        assert!(j16 / j32 > 3.0, "{j16} {j32}");
    }

    #[test]
    fn smooth_periodic_function_is_interpolated_to_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<HPoint> = (0..400)
            .map(|_| HPoint::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let err = |n: usize| {
            let f = GridField::from_fn(Resolution::cube(n).unwrap(), theta);
            pts.iter()
                .map(|x| (f.lookup(x) - theta(x)).abs())
                .fold(0.0, f64::max)
        };
        let e1 = err(16);
        let e2 = err(32);
        assert!(e1 / e2 > 3.0, "{e1} {e2}");
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let res = Resolution::new(2, 3, 2).unwrap();
        let f = GridField::from_fn(res, |x| x.x1 - 2.0 * x.x3);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let g = GridField::read_csv(buf.as_slice(), "mem").unwrap();
        assert_eq!(f, g);
        let bad = b"2,2,1\n1.0\nnope\n3\n4\n";
        match GridField::read_csv(&bad[..], "bad") {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(GridField::read_csv(&b"2,2\n"[..], "h").is_err());
    }
}
