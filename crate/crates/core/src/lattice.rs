//! Square domains, generic multigraph helpers and dyadic squares.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Undirected multigraph seen through its neighbor lists.
pub trait Graph: Sync {
    fn n(&self) -> usize;
    /// Appends `(neighbor, multiplicity)` pairs of `j` to `out`.
    fn neighbors_into(&self, j: usize, out: &mut Vec<(usize, u32)>);
    /// Visits every edge once as `(lo, hi, multiplicity)`.
    fn for_each_edge(&self, f: &mut dyn FnMut(usize, usize, u32));

    fn neighbors(&self, j: usize) -> Vec<(usize, u32)> {
        let mut v = Vec::with_capacity(4);
        self.neighbors_into(j, &mut v);
        v
    }

    fn degree(&self, j: usize) -> u32 {
        self.neighbors(j).iter().map(|p| p.1).sum()
    }

    fn edges(&self) -> Vec<(usize, usize, u32)> {
        let mut e = Vec::new();
        self.for_each_edge(&mut |a, b, m| e.push((a, b, m)));
        e
    }

    fn edge_count(&self) -> usize {
        let mut c = 0;
        self.for_each_edge(&mut |_, _, _| c += 1);
        c
    }

    /// (Δf)(j) = Σ_{ℓ∼j} m_{jℓ}(f_ℓ − f_j).
    fn laplacian_apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n(), f.len())?;
        let mut out = vec![0.0; f.len()];
        self.for_each_edge(&mut |a, b, m| {
            let d = m as f64 * (f[b] - f[a]);
            out[a] += d;
            out[b] -= d;
        });
        Ok(out)
    }

    /// Σ_{j∼ℓ} m (f_j − f_ℓ)².
    fn dirichlet_form(&self, f: &[f64]) -> Result<f64> {
        check_len(self.n(), f.len())?;
        let mut s = 0.0;
        self.for_each_edge(&mut |a, b, m| {
            let d = f[a] - f[b];
            s += m as f64 * d * d;
        });
        Ok(s)
    }

    fn bfs(&self, src: usize) -> Vec<u32> {
        self.bfs_from_set(&[src])
    }

    fn bfs_from_set(&self, srcs: &[usize]) -> Vec<u32> {
        let n = self.n();
        let mut dist = vec![u32::MAX; n];
        let mut q = VecDeque::new();
        for &s in srcs {
            if dist[s] != 0 {
                dist[s] = 0;
                q.push_back(s);
            }
        }
        let mut nb = Vec::with_capacity(8);
        while let Some(u) = q.pop_front() {
            nb.clear();
            self.neighbors_into(u, &mut nb);
            for &(w, _) in &nb {
                if dist[w] == u32::MAX {
                    dist[w] = dist[u] + 1;
                    q.push_back(w);
                }
            }
        }
        dist
    }

    fn is_connected(&self) -> bool {
        self.n() == 0 || self.bfs(0).iter().all(|&d| d != u32::MAX)
    }

    /// Two-coloring by BFS from vertex 0 (vertex 0 lands in part 1).
    fn two_coloring(&self) -> Result<Vec<bool>> {
        let n = self.n();
        let mut color: Vec<Option<bool>> = vec![None; n];
        let mut nb = Vec::new();
        for root in 0..n {
            if color[root].is_some() {
                continue;
            }
            color[root] = Some(true);
            let mut q = VecDeque::from([root]);
            while let Some(u) = q.pop_front() {
                let cu = color[u].unwrap();
                nb.clear();
                self.neighbors_into(u, &mut nb);
                for &(w, _) in &nb {
                    match color[w] {
                        None => {
                            color[w] = Some(!cu);
                            q.push_back(w);
                        }
                        Some(cw) if cw == cu => return Err(Error::NotBipartite),
                        _ => {}
                    }
                }
            }
        }
        Ok(color.into_iter().map(|c| c.unwrap()).collect())
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

/// Explicit multigraph, used for small ad hoc graphs (path of two vertices etc).
#[derive(Clone, Debug)]
pub struct SimpleGraph {
    n: usize,
    edges: Vec<(usize, usize, u32)>,
    adj: Vec<Vec<(usize, u32)>>,
}

impl SimpleGraph {
    pub fn new(n: usize, edges: &[(usize, usize, u32)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        let mut norm = Vec::with_capacity(edges.len());
        for &(a, b, m) in edges {
            assert!(a != b && a < n && b < n && m > 0, "bad edge");
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            norm.push((lo, hi, m));
            adj[a].push((b, m));
            adj[b].push((a, m));
        }
        SimpleGraph { n, edges: norm, adj }
    }

    pub fn path(n: usize) -> Self {
        let e: Vec<_> = (1..n).map(|i| (i - 1, i, 1)).collect();
        Self::new(n, &e)
    }

    pub fn from_graph<G: Graph + ?Sized>(g: &G) -> Self {
        Self::new(g.n(), &g.edges())
    }
}

impl Graph for SimpleGraph {
    fn n(&self) -> usize {
        self.n
    }
    fn neighbors_into(&self, j: usize, out: &mut Vec<(usize, u32)>) {
        out.extend_from_slice(&self.adj[j]);
    }
    fn for_each_edge(&self, f: &mut dyn FnMut(usize, usize, u32)) {
        for &(a, b, m) in &self.edges {
            f(a, b, m);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Free,
    Periodic,
    Zero,
}

/// Square domain of side L. Sites (a,b) have index a·L+b; the wired vertex z comes last.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LatticeDomain {
    kind: Kind,
    l: usize,
}

impl LatticeDomain {
    pub fn new(kind: Kind, l: usize) -> Result<Self> {
        if l <= 1 {
            return Err(Error::SideTooSmall(l));
        }
        if kind == Kind::Periodic && l % 2 == 1 {
            return Err(Error::OddPeriodicSide(l));
        }
        Ok(LatticeDomain { kind, l })
    }

    pub fn free(l: usize) -> Self {
        Self::new(Kind::Free, l).expect("valid free side")
    }
    pub fn periodic(l: usize) -> Self {
        Self::new(Kind::Periodic, l).expect("valid periodic side")
    }
    pub fn zero(l: usize) -> Self {
        Self::new(Kind::Zero, l).expect("valid side")
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }
    pub fn side(&self) -> usize {
        self.l
    }
    pub fn num_sites(&self) -> usize {
        self.l * self.l
    }
    pub fn z(&self) -> Option<usize> {
        (self.kind == Kind::Zero).then_some(self.l * self.l)
    }
    pub fn index(&self, a: usize, b: usize) -> usize {
        debug_assert!(a < self.l && b < self.l);
        a * self.l + b
    }
    /// Coordinates of a site; `None` for z.
    pub fn site(&self, v: usize) -> Option<(usize, usize)> {
        (v < self.l * self.l).then(|| (v / self.l, v % self.l))
    }

    fn check_vertex(&self, v: usize) -> Result<()> {
        if v < self.n() {
            Ok(())
        } else {
            Err(Error::UnknownVertex(v))
        }
    }

    /// Multiplicity of the edge between a site and z (4 minus its free degree).
    pub fn z_multiplicity(&self, a: usize, b: usize) -> u32 {
        let l = self.l;
        let mut deg = 0;
        deg += (a > 0) as u32 + (a + 1 < l) as u32 + (b > 0) as u32 + (b + 1 < l) as u32;
        4 - deg
    }

    /// Distance from a site to z in the zero-b.c. graph.
    fn dz(&self, a: usize, b: usize) -> usize {
        let l = self.l;
        1 + a.min(b).min(l - 1 - a).min(l - 1 - b)
    }

    fn axis_dist(&self, x: usize, y: usize) -> usize {
        let d = x.abs_diff(y);
        if self.kind == Kind::Periodic {
            d.min(self.l - d)
        } else {
            d
        }
    }

    /// Graph distance, closed form per kind.
    pub fn dist(&self, j: usize, k: usize) -> usize {
        match (self.site(j), self.site(k)) {
            (Some((a, b)), Some((c, d))) => {
                let m = self.axis_dist(a, c) + self.axis_dist(b, d);
                if self.kind == Kind::Zero {
                    m.min(self.dz(a, b) + self.dz(c, d))
                } else {
                    m
                }
            }
            (Some((a, b)), None) | (None, Some((a, b))) => self.dz(a, b),
            (None, None) => 0,
        }
    }

    pub fn graph_distance(&self, j: usize, k: usize) -> Result<usize> {
        self.check_vertex(j)?;
        self.check_vertex(k)?;
        Ok(self.dist(j, k))
    }

    /// Minimum distance between two vertex sets.
    pub fn set_dist(&self, a: &[usize], b: &[usize]) -> usize {
        let mut best = usize::MAX;
        for &x in a {
            for &y in b {
                best = best.min(self.dist(x, y));
                if best == 0 {
                    return 0;
                }
            }
        }
        best
    }

    /// Vertices at distance < r from `c`.
    pub fn open_ball(&self, c: usize, r: usize) -> Vec<usize> {
        (0..self.n()).filter(|&v| self.dist(c, v) < r).collect()
    }

    /// Vertices at distance ≤ 1 from the set (the set plus its neighbors).
    pub fn closed_neighborhood(&self, set: &[usize]) -> Vec<usize> {
        let mut mark = vec![false; self.n()];
        let mut nb = Vec::new();
        for &v in set {
            mark[v] = true;
            nb.clear();
            self.neighbors_into(v, &mut nb);
            for &(w, _) in &nb {
                mark[w] = true;
            }
        }
        (0..self.n()).filter(|&v| mark[v]).collect()
    }

    /// Parity bipartition: part 1 holds (a+b) even. Fails for the zero b.c.
    pub fn bipartition(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let col = self.two_coloring()?;
        let mut p1 = Vec::new();
        let mut p2 = Vec::new();
        for (v, &c) in col.iter().enumerate() {
            if c {
                p1.push(v)
            } else {
                p2.push(v)
            }
        }
        Ok((p1, p2))
    }

    pub fn enumerate_squares(&self, k: u32) -> Vec<DyadicSquare> {
        let l = self.l;
        if DyadicSquare::covers_all(l, k) || (self.kind == Kind::Periodic && (1usize << k) >= l) {
            return vec![DyadicSquare::whole(self, k)];
        }
        let mut out = Vec::with_capacity(l * l);
        for a in 0..l {
            for b in 0..l {
                out.push(DyadicSquare::at(self, k, a, b));
            }
        }
        out
    }
}

impl Graph for LatticeDomain {
    fn n(&self) -> usize {
        self.l * self.l + (self.kind == Kind::Zero) as usize
    }

    fn neighbors_into(&self, j: usize, out: &mut Vec<(usize, u32)>) {
        let l = self.l;
        match self.site(j) {
            None => {
                for a in 0..l {
                    for b in 0..l {
                        let m = self.z_multiplicity(a, b);
                        if m > 0 {
                            out.push((a * l + b, m));
                        }
                    }
                }
            }
            Some((a, b)) => match self.kind {
                Kind::Periodic => {
                    let start = out.len();
                    for (c, d) in [
                        ((a + 1) % l, b),
                        ((a + l - 1) % l, b),
                        (a, (b + 1) % l),
                        (a, (b + l - 1) % l),
                    ] {
                        let w = c * l + d;
                        if !out[start..].iter().any(|p| p.0 == w) {
                            out.push((w, 1));
                        }
                    }
                }
                _ => {
                    if a > 0 {
                        out.push((j - l, 1));
                    }
                    if a + 1 < l {
                        out.push((j + l, 1));
                    }
                    if b > 0 {
                        out.push((j - 1, 1));
                    }
                    if b + 1 < l {
                        out.push((j + 1, 1));
                    }
                    if self.kind == Kind::Zero {
                        let m = self.z_multiplicity(a, b);
                        if m > 0 {
                            out.push((l * l, m));
                        }
                    }
                }
            },
        }
    }

    fn for_each_edge(&self, f: &mut dyn FnMut(usize, usize, u32)) {
        let l = self.l;
        for a in 0..l {
            for b in 0..l {
                let j = a * l + b;
                match self.kind {
                    Kind::Periodic => {
                        // at L=2 the wrap pair equals the direct pair and is emitted once
                        if a + 1 < l || l > 2 {
                            let k = ((a + 1) % l) * l + b;
                            f(j.min(k), j.max(k), 1);
                        }
                        if b + 1 < l || l > 2 {
                            let k = a * l + (b + 1) % l;
                            f(j.min(k), j.max(k), 1);
                        }
                    }
                    _ => {
                        if a + 1 < l {
                            f(j, j + l, 1);
                        }
                        if b + 1 < l {
                            f(j, j + 1, 1);
                        }
                    }
                }
            }
        }
        if self.kind == Kind::Zero {
            for a in 0..l {
                for b in 0..l {
                    let m = self.z_multiplicity(a, b);
                    if m > 0 {
                        f(a * l + b, l * l, m);
                    }
                }
            }
        }
    }
}

/// Interval of coordinates: `[start, start+len)` clipped (free) or mod L (periodic).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arc {
    pub start: usize,
    pub len: usize,
}

impl Arc {
    fn contains(&self, x: usize, l: usize, periodic: bool) -> bool {
        if periodic {
            (x + l - self.start) % l < self.len
        } else {
            x >= self.start && x < self.start + self.len
        }
    }

    fn dist_point(&self, x: usize, l: usize, periodic: bool) -> usize {
        if self.contains(x, l, periodic) {
            return 0;
        }
        let end = self.start + self.len - 1;
        if periodic {
            let g1 = (self.start + l - x) % l;
            let g2 = (x + l - end % l) % l;
            g1.min(g2)
        } else if x < self.start {
            self.start - x
        } else {
            x - end
        }
    }

    fn dist_arc(&self, o: &Arc, l: usize, periodic: bool) -> usize {
        if periodic {
            if self.contains(o.start, l, true) || o.contains(self.start, l, true) {
                return 0;
            }
            let e1 = (self.start + self.len - 1) % l;
            let e2 = (o.start + o.len - 1) % l;
            ((o.start + l - e1) % l).min((self.start + l - e2) % l)
        } else {
            let e1 = self.start + self.len - 1;
            let e2 = o.start + o.len - 1;
            if o.start > e1 {
                o.start - e1
            } else if self.start > e2 {
                self.start - e2
            } else {
                0
            }
        }
    }
}

/// 2^k×2^k square; `whole` marks the scale at which the square is the entire vertex set.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicSquare {
    pub k: u32,
    pub anchor: (usize, usize),
    pub x: Arc,
    pub y: Arc,
    pub whole: bool,
}

impl DyadicSquare {
    fn covers_all(l: usize, k: u32) -> bool {
        k >= 63 || (1usize << k) > l
    }

    pub fn whole(dom: &LatticeDomain, k: u32) -> Self {
        let l = dom.side();
        DyadicSquare {
            k,
            anchor: (0, 0),
            x: Arc { start: 0, len: l },
            y: Arc { start: 0, len: l },
            whole: true,
        }
    }

    /// Square with anchor (a,b); the whole set when 2^k > L (or 2^k = L on the torus).
    pub fn at(dom: &LatticeDomain, k: u32, a: usize, b: usize) -> Self {
        let l = dom.side();
        if Self::covers_all(l, k) {
            return Self::whole(dom, k);
        }
        let w = 1usize << k;
        let periodic = dom.kind() == Kind::Periodic;
        if periodic && w >= l {
            return Self::whole(dom, k);
        }
        let (lx, ly) = if periodic {
            (w, w)
        } else {
            (w.min(l - a), w.min(l - b))
        };
        DyadicSquare {
            k,
            anchor: (a, b),
            x: Arc { start: a, len: lx },
            y: Arc { start: b, len: ly },
            whole: false,
        }
    }

    /// The square of twice the side centred at this square's centre (clamped into the box for free b.c.).
    pub fn doubled(&self, dom: &LatticeDomain) -> Self {
        let l = dom.side();
        let k = self.k + 1;
        if self.whole || Self::covers_all(l, k) {
            return Self::whole(dom, k);
        }
        let w = 1usize << self.k;
        let h = w / 2;
        let shift = |c: usize| -> usize {
            match dom.kind() {
                Kind::Periodic => (c + l - h % l) % l,
                _ => {
                    let lo = c as i64 - h as i64;
                    lo.clamp(0, (l - 2 * w) as i64) as usize
                }
            }
        };
        Self::at(dom, k, shift(self.anchor.0), shift(self.anchor.1))
    }

    pub fn side(&self) -> usize {
        1usize << self.k
    }

    pub fn contains(&self, dom: &LatticeDomain, v: usize) -> bool {
        if self.whole {
            return v < dom.n();
        }
        let p = dom.kind() == Kind::Periodic;
        match dom.site(v) {
            Some((a, b)) => self.x.contains(a, dom.side(), p) && self.y.contains(b, dom.side(), p),
            None => false,
        }
    }

    pub fn members(&self, dom: &LatticeDomain) -> Vec<usize> {
        if self.whole {
            return (0..dom.n()).collect();
        }
        let l = dom.side();
        let mut out = Vec::with_capacity(self.x.len * self.y.len);
        for i in 0..self.x.len {
            for j in 0..self.y.len {
                out.push(dom.index((self.x.start + i) % l, (self.y.start + j) % l));
            }
        }
        out.sort_unstable();
        out
    }

    /// Distance from a vertex to the square.
    pub fn dist_to(&self, dom: &LatticeDomain, v: usize) -> usize {
        if self.whole {
            return 0;
        }
        let l = dom.side();
        let p = dom.kind() == Kind::Periodic;
        match dom.site(v) {
            Some((a, b)) => {
                let m = self.x.dist_point(a, l, p) + self.y.dist_point(b, l, p);
                if dom.kind() == Kind::Zero {
                    m.min(dom.dz(a, b) + self.min_dz(dom))
                } else {
                    m
                }
            }
            None => self.min_dz(dom),
        }
    }

    fn min_dz(&self, dom: &LatticeDomain) -> usize {
        let l = dom.side();
        let fx = self.x.start.min(l - self.x.start - self.x.len);
        let fy = self.y.start.min(l - self.y.start - self.y.len);
        1 + fx.min(fy)
    }

    /// Distance between two squares.
    pub fn dist_square(&self, o: &DyadicSquare, dom: &LatticeDomain) -> usize {
        if self.whole || o.whole {
            return 0;
        }
        let l = dom.side();
        let p = dom.kind() == Kind::Periodic;
        let m = self.x.dist_arc(&o.x, l, p) + self.y.dist_arc(&o.y, l, p);
        if dom.kind() == Kind::Zero {
            m.min(self.min_dz(dom) + o.min_dz(dom))
        } else {
            m
        }
    }

    /// Distance from the square to a vertex set.
    pub fn dist_set(&self, dom: &LatticeDomain, set: &[usize]) -> usize {
        set.iter().map(|&v| self.dist_to(dom, v)).min().unwrap_or(usize::MAX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_domains() -> Vec<LatticeDomain> {
        let mut v = Vec::new();
        for l in 2..=6 {
            v.push(LatticeDomain::free(l));
            v.push(LatticeDomain::zero(l));
            if l % 2 == 0 {
                v.push(LatticeDomain::periodic(l));
            }
        }
        v
    }

    #[test]
    fn construction_errors() {
        assert_eq!(LatticeDomain::new(Kind::Periodic, 3), Err(Error::OddPeriodicSide(3)));
        assert_eq!(LatticeDomain::new(Kind::Free, 1), Err(Error::SideTooSmall(1)));
        assert_eq!(LatticeDomain::new(Kind::Zero, 0), Err(Error::SideTooSmall(0)));
    }

    #[test]
    fn vertex_and_edge_counts() {
        let f2 = LatticeDomain::free(2);
        assert_eq!((f2.n(), f2.edge_count()), (4, 4));
        let p4 = LatticeDomain::periodic(4);
        assert_eq!((p4.n(), p4.edge_count()), (16, 32));
        let z2 = LatticeDomain::zero(2);
        assert_eq!(z2.n(), 5);
        let corner = z2.neighbors(0);
        assert!(corner.contains(&(4, 2)));
        for l in 2..9 {
            let f = LatticeDomain::free(l);
            assert_eq!(f.edge_count(), 2 * l * (l - 1));
            assert!(f.edges().iter().all(|e| e.2 == 1));
            let z = LatticeDomain::zero(l);
            assert_eq!(z.n(), l * l + 1);
            for j in 0..l * l {
                assert_eq!(z.degree(j), 4);
            }
            assert_eq!(z.degree(l * l) as usize, 4 * l);
            if l % 2 == 0 && l > 2 {
                let p = LatticeDomain::periodic(l);
                assert_eq!(p.edge_count(), 2 * l * l);
                assert!(p.two_coloring().is_ok());
            }
        }
        // L=2 torus: the wrap pair coincides with the direct pair
        assert_eq!(LatticeDomain::periodic(2).edge_count(), 4);
    }

    #[test]
    fn edges_agree_with_neighbor_lists() {
        for d in all_domains() {
            let mut from_edges = vec![Vec::new(); d.n()];
            for (a, b, m) in d.edges() {
                from_edges[a].push((b, m));
                from_edges[b].push((a, m));
            }
            for j in 0..d.n() {
                let mut x = d.neighbors(j);
                x.sort();
                from_edges[j].sort();
                assert_eq!(x, from_edges[j], "{:?} vertex {}", d, j);
            }
        }
    }

    #[test]
    fn laplacian_examples() {
        let f3 = LatticeDomain::free(3);
        let mut f = vec![0.0; 9];
        f[4] = 1.0;
        let lf = f3.laplacian_apply(&f).unwrap();
        assert_eq!(lf[4], -4.0);
        for j in [1, 3, 5, 7] {
            assert_eq!(lf[j], 1.0);
        }
        for j in [0, 2, 6, 8] {
            assert_eq!(lf[j], 0.0);
        }
        let z2 = LatticeDomain::zero(2);
        let mut g = vec![0.0; 5];
        g[4] = 1.0;
        let lg = z2.laplacian_apply(&g).unwrap();
        assert_eq!(lg[4], -8.0);
        for j in 0..4 {
            assert_eq!(lg[j], 2.0);
        }
        assert!(matches!(
            f3.laplacian_apply(&[1.0; 4]),
            Err(Error::DimensionMismatch { expected: 9, got: 4 })
        ));
        for d in all_domains() {
            let c = vec![3.5; d.n()];
            assert!(d.laplacian_apply(&c).unwrap().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn quadratic_form_matches_dirichlet_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in all_domains() {
            for _ in 0..100 {
                let f: Vec<f64> = (0..d.n()).map(|_| rng.random_range(-2.0..2.0)).collect();
                let lf = d.laplacian_apply(&f).unwrap();
                let q: f64 = -f.iter().zip(&lf).map(|(a, b)| a * b).sum::<f64>();
                let e = d.dirichlet_form(&f).unwrap();
                assert!((q - e).abs() <= 1e-12 * e.max(1.0));
            }
        }
    }

    #[test]
    fn distance_examples_and_bfs_agreement() {
        let p4 = LatticeDomain::periodic(4);
        assert_eq!(p4.dist(p4.index(0, 0), p4.index(3, 0)), 1);
        let z4 = LatticeDomain::zero(4);
        assert_eq!(z4.dist(0, 16), 1);
        assert_eq!(z4.graph_distance(0, 17), Err(Error::UnknownVertex(17)));
        for d in all_domains() {
            for j in 0..d.n() {
                let b = d.bfs(j);
                for k in 0..d.n() {
                    assert_eq!(b[k] as usize, d.dist(j, k), "{:?} {} {}", d, j, k);
                }
            }
            assert!(d.is_connected());
        }
    }

    #[test]
    fn distance_is_a_metric() {
        for d in all_domains() {
            let n = d.n();
            for i in 0..n {
                assert_eq!(d.dist(i, i), 0);
                for j in 0..n {
                    assert_eq!(d.dist(i, j), d.dist(j, i));
                    if i != j {
                        assert!(d.dist(i, j) > 0);
                    }
                    for k in 0..n {
                        assert!(d.dist(i, k) <= d.dist(i, j) + d.dist(j, k));
                    }
                }
            }
        }
    }

    #[test]
    fn bipartitions() {
        let (p1, p2) = LatticeDomain::free(2).bipartition().unwrap();
        assert_eq!(p1, vec![0, 3]);
        assert_eq!(p2, vec![1, 2]);
        let (a, b) = LatticeDomain::periodic(4).bipartition().unwrap();
        assert_eq!((a.len(), b.len()), (8, 8));
        for d in all_domains() {
            match d.bipartition() {
                Ok((p1, _)) => {
                    let mut side = vec![false; d.n()];
                    for v in p1 {
                        side[v] = true;
                    }
                    for (x, y, _) in d.edges() {
                        assert_ne!(side[x], side[y]);
                    }
                    for v in 0..d.num_sites() {
                        let (a, b) = d.site(v).unwrap();
                        assert_eq!(side[v], (a + b) % 2 == 0);
                    }
                }
                Err(e) => {
                    assert_eq!(d.kind(), Kind::Zero);
                    assert_eq!(e, Error::NotBipartite);
                }
            }
        }
    }

    #[test]
    fn square_examples() {
        let f2 = LatticeDomain::free(2);
        let s0 = f2.enumerate_squares(0);
        assert_eq!(s0.len(), 4);
        assert!(s0.iter().all(|s| s.members(&f2).len() == 1));
        let p4 = LatticeDomain::periodic(4);
        let s1 = p4.enumerate_squares(1);
        assert_eq!(s1.len(), 16);
        assert!(s1.iter().all(|s| s.members(&p4).len() == 4));
        let f4 = LatticeDomain::free(4);
        let s3 = f4.enumerate_squares(3);
        assert_eq!(s3.len(), 1);
        assert_eq!(s3[0].members(&f4), (0..16).collect::<Vec<_>>());
        assert_eq!(p4.enumerate_squares(2).len(), 1);
    }

    #[test]
    fn square_membership_matches_definition() {
        for d in all_domains() {
            let l = d.side();
            for k in 0..4u32 {
                let w = 1usize << k;
                for s in d.enumerate_squares(k) {
                    let m = s.members(&d);
                    if w > l {
                        assert_eq!(m.len(), d.n());
                        continue;
                    }
                    let (a, b) = s.anchor;
                    let expect: Vec<usize> = (0..d.num_sites())
                        .filter(|&v| {
                            let (c, e) = d.site(v).unwrap();
                            let (dx, dy) = if d.kind() == Kind::Periodic {
                                ((c + l - a) % l, (e + l - b) % l)
                            } else {
                                (c.wrapping_sub(a), e.wrapping_sub(b))
                            };
                            dx < w && dy < w
                        })
                        .collect();
                    assert_eq!(m, expect);
                    for v in 0..d.n() {
                        assert_eq!(s.contains(&d, v), m.contains(&v));
                        assert_eq!(s.dist_to(&d, v), d.set_dist(&m, &[v]));
                    }
                }
            }
        }
    }

    #[test]
    fn square_distances_match_brute_force() {
        for d in all_domains() {
            for k1 in 0..3u32 {
                let sq1 = d.enumerate_squares(k1);
                for k2 in 0..3u32 {
                    for s in &sq1 {
                        for t in d.enumerate_squares(k2) {
                            let bf = d.set_dist(&s.members(&d), &t.members(&d));
                            assert_eq!(s.dist_square(&t, &d), bf);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn doubled_square_contains_neighborhood() {
        for d in [LatticeDomain::free(16), LatticeDomain::periodic(16)] {
            for k in 1..3u32 {
                for s in d.enumerate_squares(k) {
                    let t = s.doubled(&d);
                    assert_eq!(t.k, k + 1);
                    for v in 0..d.n() {
                        if s.dist_to(&d, v) <= s.side() / 2 - 1 {
                            assert!(t.contains(&d, v));
                        }
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn laplacian_output_sums_to_zero(l in 2usize..7, kind in 0u8..3, seed in any::<u64>()) {
            let kind = [Kind::Free, Kind::Periodic, Kind::Zero][kind as usize];
            let l = if kind == Kind::Periodic { 2 * (l / 2).max(1) } else { l };
            let d = LatticeDomain::new(kind, l).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut f: Vec<f64> = (0..d.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = f.iter().sum::<f64>() / f.len() as f64;
            f.iter_mut().for_each(|x| *x -= m);
            let s: f64 = d.laplacian_apply(&f).unwrap().iter().sum();
            prop_assert!(s.abs() < 1e-12);
        }
    }
}
