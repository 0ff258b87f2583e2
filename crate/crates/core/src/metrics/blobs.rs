use crate::raster::Mask;

/// An 8-connected set of positive pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    /// `(row, col)` pairs in discovery order; the first is the top-left-most.
    pub pixels: Vec<(usize, usize)>,
    /// Mean `(row, col)`.
    pub centroid: (f64, f64),
}

impl Blob {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Centroid rounded to the nearest pixel (halves round away from zero).
    pub fn centroid_pixel(&self) -> (usize, usize) {
        (self.centroid.0.round() as usize, self.centroid.1.round() as usize)
    }

    pub fn to_mask(&self, rows: usize, cols: usize) -> Mask {
        let mut m = Mask::empty(rows, cols);
        for &(r, c) in &self.pixels {
            m.set(r, c, true);
        }
        m
    }
}

/// 8-connected components, ordered by their first pixel in row-major order.
pub fn connected_components(mask: &Mask) -> Vec<Blob> {
    let (rows, cols) = (mask.rows, mask.cols);
    let mut seen = vec![false; rows * cols];
    let mut blobs = Vec::new();
    let mut stack = Vec::new();
    for start in 0..rows * cols {
        if seen[start] || mask.as_bytes()[start] == 0 {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(k) = stack.pop() {
            let (r, c) = (k / cols, k % cols);
            pixels.push((r, c));
            for nr in r.saturating_sub(1)..=(r + 1).min(rows - 1) {
                for nc in c.saturating_sub(1)..=(c + 1).min(cols - 1) {
                    let nk = nr * cols + nc;
                    if !seen[nk] && mask.as_bytes()[nk] != 0 {
                        seen[nk] = true;
                        stack.push(nk);
                    }
                }
            }
        }
        let n = pixels.len() as f64;
        let (sr, sc) = pixels
            .iter()
            .fold((0.0, 0.0), |(a, b), &(r, c)| (a + r as f64, b + c as f64));
        blobs.push(Blob {
            pixels,
            centroid: (sr / n, sc / n),
        });
    }
    blobs
}
