//! Uniform hash grid over points, used for nets, partitions and nearest-ball queries.

use rustc_hash::FxHashMap;

const KEY_DIMS: usize = 4;
type Key = [i32; KEY_DIMS];

/// Points bucketed by cell. Only the first four coordinates enter the cell
/// key; queries still compare full distances, so higher dimensions are
/// handled correctly, just with coarser filtering.
#[derive(Clone, Debug)]
pub struct PointGrid {
    d: usize,
    cell: f64,
    coords: Vec<f64>,
    map: FxHashMap<Key, Vec<u32>>,
}

impl PointGrid {
    pub fn new(d: usize, cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell must be positive");
        Self {
            d,
            cell,
            coords: Vec::new(),
            map: FxHashMap::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.d.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    fn key(&self, p: &[f64]) -> Key {
        let mut k = [0i32; KEY_DIMS];
        for (j, slot) in k.iter_mut().enumerate().take(self.d.min(KEY_DIMS)) {
            *slot = (p[j] / self.cell).floor().clamp(-2e9, 2e9) as i32;
        }
        k
    }

    /// Insert a point; returns its index.
    pub fn insert(&mut self, p: &[f64]) -> usize {
        let i = self.len();
        self.coords.extend_from_slice(p);
        let k = self.key(p);
        self.map.entry(k).or_default().push(i as u32);
        i
    }

    /// Visit every stored point whose cell lies within `rings` cells of `p`.
    pub fn visit_rings(&self, p: &[f64], rings: i32, mut f: impl FnMut(usize, &[f64]) -> bool) {
        let base = self.key(p);
        let kd = self.d.min(KEY_DIMS);
        let mut off = [-rings; KEY_DIMS];
        for slot in off.iter_mut().skip(kd) {
            *slot = 0;
        }
        loop {
            let mut k = base;
            for j in 0..kd {
                k[j] = base[j].saturating_add(off[j]);
            }
            if let Some(ids) = self.map.get(&k) {
                for &i in ids {
                    if !f(i as usize, self.point(i as usize)) {
                        return;
                    }
                }
            }
            // odometer increment
            let mut j = 0;
            loop {
                if j == kd {
                    return;
                }
                off[j] += 1;
                if off[j] <= rings {
                    break;
                }
                off[j] = -rings;
                j += 1;
            }
        }
    }

    fn rings_for(&self, r: f64) -> i32 {
        (r / self.cell).ceil().min(1e6) as i32
    }

    /// Whether some stored point lies at distance `< r` (or `<= r` when `closed`).
    pub fn any_within(&self, p: &[f64], r: f64, closed: bool) -> bool {
        let mut found = false;
        let r2 = r * r;
        self.visit_rings(p, self.rings_for(r), |_, q| {
            let d2 = dist2(p, q);
            if d2 < r2 || (closed && d2 <= r2) {
                found = true;
                return false;
            }
            true
        });
        found
    }

    /// Nearest stored point within distance `r`.
    pub fn nearest_within(&self, p: &[f64], r: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut b2 = r * r;
        self.visit_rings(p, self.rings_for(r), |i, q| {
            let d2 = dist2(p, q);
            if d2 <= b2 {
                b2 = d2;
                best = Some((i, d2));
            }
            true
        });
        best.map(|(i, d2)| (i, d2.sqrt()))
    }

    /// All stored indices within distance `< r`, with distances.
    pub fn within(&self, p: &[f64], r: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let r2 = r * r;
        self.visit_rings(p, self.rings_for(r), |i, q| {
            let d2 = dist2(p, q);
            if d2 < r2 {
                out.push((i, d2.sqrt()));
            }
            true
        });
        out
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

const DENSE_DIMS: usize = 3;
const DENSE_MAX_CELLS: f64 = 4e6;

/// Static points in a dense cell array over their bounding box, stored in
/// cell order. Faster than [`PointGrid`] for repeated queries; the cell may
/// be enlarged so that the array stays below a few million cells.
#[derive(Clone, Debug)]
pub struct DenseGrid {
    d: usize,
    cell: f64,
    origin: [f64; DENSE_DIMS],
    dims: [usize; DENSE_DIMS],
    start: Vec<u32>,
    /// Original index of each stored point.
    ids: Vec<u32>,
    coords: Vec<f64>,
}

impl DenseGrid {
    pub fn new(d: usize, cell: f64, points: &[&[f64]]) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell must be positive");
        let kd = d.min(DENSE_DIMS);
        let mut lo = [0.0; DENSE_DIMS];
        let mut hi = [0.0; DENSE_DIMS];
        for j in 0..kd {
            lo[j] = points.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
            hi[j] = points
                .iter()
                .map(|p| p[j])
                .fold(f64::NEG_INFINITY, f64::max);
        }
        if points.is_empty() {
            lo = [0.0; DENSE_DIMS];
            hi = [0.0; DENSE_DIMS];
        }
        let count = |c: f64| {
            (0..kd)
                .map(|j| ((hi[j] - lo[j]) / c).floor() + 1.0)
                .product::<f64>()
        };
        let mut cell = cell;
        while count(cell) > DENSE_MAX_CELLS {
            cell *= 1.25;
        }
        let mut dims = [1usize; DENSE_DIMS];
        for j in 0..kd {
            dims[j] = ((hi[j] - lo[j]) / cell).floor() as usize + 1;
        }
        let mut g = Self {
            d,
            cell,
            origin: lo,
            dims,
            start: Vec::new(),
            ids: Vec::new(),
            coords: Vec::new(),
        };
        let total: usize = dims.iter().product();
        let keys: Vec<usize> = points.iter().map(|p| g.flat(&g.index(p))).collect();
        let mut start = vec![0u32; total + 1];
        for &k in &keys {
            start[k + 1] += 1;
        }
        for i in 0..total {
            start[i + 1] += start[i];
        }
        let mut fill = start.clone();
        let mut ids = vec![0u32; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            ids[fill[k] as usize] = i as u32;
            fill[k] += 1;
        }
        g.coords = ids
            .iter()
            .flat_map(|&i| points[i as usize].iter().copied())
            .collect();
        g.start = start;
        g.ids = ids;
        g
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    fn index(&self, p: &[f64]) -> [i64; DENSE_DIMS] {
        let mut k = [0i64; DENSE_DIMS];
        for j in 0..self.d.min(DENSE_DIMS) {
            k[j] = ((p[j] - self.origin[j]) / self.cell)
                .floor()
                .clamp(-1e15, 1e15) as i64;
        }
        k
    }

    fn flat(&self, k: &[i64; DENSE_DIMS]) -> usize {
        let mut f = 0usize;
        for j in 0..DENSE_DIMS {
            f = f * self.dims[j] + k[j] as usize;
        }
        f
    }

    /// Visit every point whose cell lies within `rings` cells of `p`, passing
    /// the original index and the coordinates.
    pub fn visit_rings(&self, p: &[f64], rings: i64, mut f: impl FnMut(usize, &[f64]) -> bool) {
        let base = self.index(p);
        let mut lo = [0i64; DENSE_DIMS];
        let mut hi = [0i64; DENSE_DIMS];
        for j in 0..DENSE_DIMS {
            let n = self.dims[j] as i64;
            lo[j] = (base[j] - rings).max(0);
            hi[j] = (base[j] + rings).min(n - 1);
            if lo[j] > hi[j] {
                return;
            }
        }
        let d = self.d;
        for a in lo[0]..=hi[0] {
            for b in lo[1]..=hi[1] {
                let row = self.flat(&[a, b, lo[2]]);
                let (s, e) = (
                    self.start[row] as usize,
                    self.start[row + (hi[2] - lo[2]) as usize + 1] as usize,
                );
                for m in s..e {
                    if !f(self.ids[m] as usize, &self.coords[m * d..(m + 1) * d]) {
                        return;
                    }
                }
            }
        }
    }
}
