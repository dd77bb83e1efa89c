use crate::starmap::Mask;

/// Union-find with path halving and union by size.
pub(crate) struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] as usize != i {
            let gp = self.parent[self.parent[i] as usize];
            self.parent[i] = gp;
            i = gp as usize;
        }
        i
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra as u32;
        self.size[ra] += self.size[rb];
    }

    /// Groups of member positions, ordered by their smallest position.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut slot = vec![u32::MAX; n];
        let mut out: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let r = self.find(i);
            if slot[r] == u32::MAX {
                slot[r] = out.len() as u32;
                out.push(Vec::new());
            }
            out[slot[r] as usize].push(i);
        }
        out
    }
}

/// Union set pixels of a sorted pixel list whose offsets fall in `reach`.
/// `reach` lists `(dx, dy)` with `dy < 0` or `dy == 0 && dx < 0`.
pub(crate) fn link_pixels(width: usize, height: usize, pixels: &[usize], reach: &[(i64, i64)]) -> DisjointSet {
    let mut ds = DisjointSet::new(pixels.len());
    for (k, &p) in pixels.iter().enumerate() {
        let (x, y) = ((p % width) as i64, (p / width) as i64);
        for &(dx, dy) in reach {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                continue;
            }
            let q = ny as usize * width + nx as usize;
            if let Ok(j) = pixels[..k].binary_search(&q) {
                ds.union(k, j);
            }
        }
    }
    ds
}

/// Maximal 8-connected groups of set pixels. Components are ordered by their
/// first pixel in raster order; pixels within a component are sorted.
pub fn connected_components(mask: &Mask) -> Vec<Vec<usize>> {
    const BACK: [(i64, i64); 4] = [(-1, 0), (-1, -1), (0, -1), (1, -1)];
    let mut ds = link_pixels(mask.width, mask.height, &mask.pixels, &BACK);
    ds.groups()
        .into_iter()
        .map(|g| g.into_iter().map(|k| mask.pixels[k]).collect())
        .collect()
}
