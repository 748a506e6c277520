//! Simple linear iterative clustering over CIELab planes.

use std::collections::VecDeque;

use super::SegmentError;
use crate::imaging::PlaneF32;
use crate::par;

/// Integer superpixel labelling; labels are contiguous in `0..k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    k: usize,
}

impl LabelMap {
    /// Builds a label map, compacting labels to `0..k` in order of first appearance.
    pub fn from_raw(width: usize, height: usize, raw: &[u32]) -> Option<Self> {
        if raw.len() != width * height || raw.is_empty() {
            return None;
        }
        let mut remap = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                let next = remap.len() as u32;
                *remap.entry(*l).or_insert(next)
            })
            .collect();
        Some(Self { width, height, labels, k: remap.len() })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Pixel counts per label.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l as usize] += 1;
        }
        s
    }

    /// Pixels with a 4-neighbour carrying a different label.
    pub fn boundary_pixels(&self) -> Vec<bool> {
        neighbour_differs(self.width, self.height, &self.labels)
    }
}

fn neighbour_differs(w: usize, h: usize, labels: &[u32]) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            out[y * w + x] = (x > 0 && labels[y * w + x - 1] != l)
                || (x + 1 < w && labels[y * w + x + 1] != l)
                || (y > 0 && labels[(y - 1) * w + x] != l)
                || (y + 1 < h && labels[(y + 1) * w + x] != l);
        }
    }
    out
}

/// Fraction of ground-truth boundary pixels with a superpixel boundary within
/// `tolerance` pixels (Chebyshev distance).
pub fn boundary_recall(labels: &LabelMap, truth: &[u32], tolerance: usize) -> f64 {
    let (w, h) = (labels.width, labels.height);
    assert_eq!(truth.len(), w * h, "truth raster size");
    let truth_b = neighbour_differs(w, h, truth);
    let sp_b = labels.boundary_pixels();
    let t = tolerance as isize;
    let mut total = 0usize;
    let mut hit = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !truth_b[y * w + x] {
                continue;
            }
            total += 1;
            let found = (-t..=t).any(|dy| {
                (-t..=t).any(|dx| {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h && sp_b[ny as usize * w + nx as usize]
                })
            });
            if found {
                hit += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

#[derive(Clone, Copy, Debug)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

struct Grid<'a> {
    w: usize,
    h: usize,
    lab: [&'a [f32]; 3],
}

impl Grid<'_> {
    #[inline]
    fn lab(&self, x: usize, y: usize) -> [f64; 3] {
        let i = y * self.w + x;
        [self.lab[0][i] as f64, self.lab[1][i] as f64, self.lab[2][i] as f64]
    }

    fn gradient(&self, x: usize, y: usize) -> f64 {
        let xl = x.saturating_sub(1);
        let xr = (x + 1).min(self.w - 1);
        let yu = y.saturating_sub(1);
        let yd = (y + 1).min(self.h - 1);
        let d = |a: [f64; 3], b: [f64; 3]| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>();
        d(self.lab(xr, y), self.lab(xl, y)) + d(self.lab(x, yd), self.lab(x, yu))
    }
}

fn initial_centers(grid: &Grid, step: f64) -> Vec<Center> {
    let (w, h) = (grid.w, grid.h);
    let nx = ((w as f64 / step).round() as usize).clamp(1, w);
    let ny = ((h as f64 / step).round() as usize).clamp(1, h);
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let mut x = ((i as f64 + 0.5) * w as f64 / nx as f64) as usize;
            let mut y = ((j as f64 + 0.5) * h as f64 / ny as f64) as usize;
            // Nudging seeds off edges only makes sense when cells are wider than the 3x3 probe.
            if step >= 3.0 {
                let (cx, cy) = (x, y);
                let mut best = grid.gradient(cx, cy);
                for ny_ in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                    for nx_ in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                        let g = grid.gradient(nx_, ny_);
                        if g < best {
                            best = g;
                            x = nx_;
                            y = ny_;
                        }
                    }
                }
            }
            centers.push(Center { lab: grid.lab(x, y), x: x as f64, y: y as f64 });
        }
    }
    centers
}

/// One assignment pass. Returns the objective (Σ squared SLIC distance).
fn assign(grid: &Grid, centers: &[Center], step: f64, m: f64, labels: &mut [u32], first: bool) -> f64 {
    let (w, h) = (grid.w, grid.h);
    let spatial = (m / step).powi(2);
    // Bucket centres by row so each image row only scans nearby candidates.
    let mut by_row: Vec<Vec<u32>> = vec![Vec::new(); h];
    for (i, c) in centers.iter().enumerate() {
        by_row[(c.y.round() as usize).min(h - 1)].push(i as u32);
    }
    let reach = step.ceil() as usize + 1;
    let dist = |c: &Center, px: [f64; 3], x: usize, y: usize| {
        let dl = (0..3).map(|k| (px[k] - c.lab[k]).powi(2)).sum::<f64>();
        let dx = x as f64 - c.x;
        let dy = y as f64 - c.y;
        dl + (dx * dx + dy * dy) * spatial
    };
    let prev: &[u32] = labels;
    let rows = par::map_range(h, |y| {
        let mut cand: Vec<u32> = Vec::new();
        for row in by_row.iter().take((y + reach).min(h - 1) + 1).skip(y.saturating_sub(reach)) {
            for &i in row {
                if (centers[i as usize].y - y as f64).abs() <= step {
                    cand.push(i);
                }
            }
        }
        cand.sort_unstable();
        let mut out = Vec::with_capacity(w);
        let mut total = 0.0;
        for x in 0..w {
            let px = grid.lab(x, y);
            let mut best = (f64::INFINITY, u32::MAX);
            for &i in &cand {
                let c = &centers[i as usize];
                if (c.x - x as f64).abs() <= step {
                    let d = dist(c, px, x, y);
                    if d < best.0 || (d == best.0 && i < best.1) {
                        best = (d, i);
                    }
                }
            }
            if !first {
                let cur = prev[y * w + x];
                let d = dist(&centers[cur as usize], px, x, y);
                if d < best.0 || (d == best.0 && cur < best.1) {
                    best = (d, cur);
                }
            }
            if best.1 == u32::MAX {
                for (i, c) in centers.iter().enumerate() {
                    let d = dist(c, px, x, y);
                    if d < best.0 {
                        best = (d, i as u32);
                    }
                }
            }
            total += best.0;
            out.push(best.1);
        }
        (out, total)
    });
    let mut objective = 0.0;
    for (y, (row, total)) in rows.into_iter().enumerate() {
        labels[y * w..(y + 1) * w].copy_from_slice(&row);
        objective += total;
    }
    objective
}

fn update_centers(grid: &Grid, centers: &mut [Center], labels: &[u32]) {
    let mut acc = vec![[0f64; 6]; centers.len()];
    for y in 0..grid.h {
        for x in 0..grid.w {
            let l = labels[y * grid.w + x] as usize;
            let p = grid.lab(x, y);
            let a = &mut acc[l];
            a[0] += p[0];
            a[1] += p[1];
            a[2] += p[2];
            a[3] += x as f64;
            a[4] += y as f64;
            a[5] += 1.0;
        }
    }
    for (c, a) in centers.iter_mut().zip(acc) {
        if a[5] > 0.0 {
            let n = a[5];
            *c = Center { lab: [a[0] / n, a[1] / n, a[2] / n], x: a[3] / n, y: a[4] / n };
        }
    }
}

/// Merges 4-connected fragments smaller than `min_size` into the largest
/// adjacent fragment.
fn enforce_connectivity(w: usize, h: usize, labels: &mut [u32], min_size: f64) {
    let n = w * h;
    let mut comp = vec![u32::MAX; n];
    let mut comp_label = Vec::new();
    let mut comp_pixels: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if comp[start] != u32::MAX {
            continue;
        }
        let id = comp_label.len() as u32;
        let l = labels[start];
        comp[start] = id;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(p) = queue.pop_front() {
            pixels.push(p);
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if comp[q] == u32::MAX && labels[q] == l {
                    comp[q] = id;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        comp_label.push(l);
        comp_pixels.push(pixels);
    }

    let mut parent: Vec<u32> = (0..comp_label.len() as u32).collect();
    let mut size: Vec<usize> = comp_pixels.iter().map(Vec::len).collect();
    fn find(parent: &mut [u32], mut c: u32) -> u32 {
        while parent[c as usize] != c {
            parent[c as usize] = parent[parent[c as usize] as usize];
            c = parent[c as usize];
        }
        c
    }
    for c in 0..comp_label.len() as u32 {
        let root = find(&mut parent, c);
        if root != c || (size[c as usize] as f64) >= min_size {
            continue;
        }
        let mut best: Option<(usize, u32)> = None;
        for &p in &comp_pixels[c as usize] {
            let (x, y) = (p % w, p / w);
            let neighbours = [
                (x > 0).then(|| p - 1),
                (x + 1 < w).then(|| p + 1),
                (y > 0).then(|| p - w),
                (y + 1 < h).then(|| p + w),
            ];
            for q in neighbours.into_iter().flatten() {
                let r = find(&mut parent, comp[q]);
                if r == c {
                    continue;
                }
                let s = size[r as usize];
                if best.is_none_or(|(bs, br)| s > bs || (s == bs && r < br)) {
                    best = Some((s, r));
                }
            }
        }
        if let Some((_, r)) = best {
            parent[c as usize] = r;
            size[r as usize] += size[c as usize];
        }
    }
    for p in 0..n {
        let r = find(&mut parent, comp[p]);
        labels[p] = comp_label[r as usize];
    }
}

/// SLIC with the assignment objective recorded after every assignment pass.
///
/// `iters` counts centre updates; there are `iters + 1` assignment passes.
pub fn slic_traced(
    lab: &[PlaneF32; 3],
    k: usize,
    compactness: f64,
    iters: usize,
) -> Result<(LabelMap, Vec<f64>), SegmentError> {
    let (w, h) = (lab[0].width(), lab[0].height());
    if !lab[0].same_shape(&lab[1]) || !lab[0].same_shape(&lab[2]) {
        return Err(SegmentError::DimensionMismatch("Lab planes differ in size".into()));
    }
    let n = w * h;
    if k == 0 || k > n {
        return Err(SegmentError::TooManySuperpixels { k, pixels: n });
    }
    if !(compactness > 0.0 && compactness.is_finite()) {
        return Err(SegmentError::InvalidParams(format!("compactness {compactness} must be positive")));
    }
    let grid = Grid { w, h, lab: [lab[0].data(), lab[1].data(), lab[2].data()] };
    let step = (n as f64 / k as f64).sqrt();
    let mut centers = initial_centers(&grid, step);
    let mut labels = vec![0u32; n];
    let mut trace = Vec::with_capacity(iters + 1);
    for it in 0..=iters {
        trace.push(assign(&grid, &centers, step, compactness, &mut labels, it == 0));
        if it < iters {
            update_centers(&grid, &mut centers, &labels);
        }
    }
    enforce_connectivity(w, h, &mut labels, (n as f64 / k as f64) / 4.0);
    Ok((LabelMap::from_raw(w, h, &labels).expect("non-empty raster"), trace))
}

pub fn slic(lab: &[PlaneF32; 3], k: usize, compactness: f64, iters: usize) -> Result<LabelMap, SegmentError> {
    slic_traced(lab, k, compactness, iters).map(|(l, _)| l)
}
