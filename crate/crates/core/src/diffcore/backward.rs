use super::graph::{Graph, Op};
use super::{GradVector, Result, Shape, Var};

impl Graph {
    /// Marks nodes in `0..end` that depend on any of `wrt`.
    fn dependency_mask(&self, end: usize, wrt: &[Var]) -> Vec<bool> {
        let mut mask = vec![false; end];
        for w in wrt {
            if w.index() < end {
                mask[w.index()] = true;
            }
        }
        for i in 0..end {
            if mask[i] {
                continue;
            }
            mask[i] = match &self.nodes[i].op {
                Op::Input | Op::Const => false,
                op => op.operands().iter().any(|o| mask[o.index()]),
            };
        }
        mask
    }

    /// Reverse-mode gradient of the scalar `output`, appended to the graph.
    ///
    /// The returned nodes have the shapes of `wrt` and are differentiable
    /// themselves. Parameters the output does not depend on get constant
    /// zero nodes.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        self.expect_scalar(output)?;
        let end = output.index() + 1;
        let mask = self.dependency_mask(end, wrt);
        let mut adj: Vec<Option<Var>> = vec![None; end];
        if mask[output.index()] {
            adj[output.index()] = Some(self.scalar_const(1.0));
        }

        for i in (0..end).rev() {
            if !mask[i] {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            let out = Var(i as u32);
            let op = self.nodes[i].op.clone();
            let mut contrib: Vec<(Var, Var)> = Vec::with_capacity(2);
            match op {
                Op::Input | Op::Const => {}
                Op::Add(a, b) => {
                    contrib.push((a, g));
                    contrib.push((b, g));
                }
                Op::Sub(a, b) => {
                    contrib.push((a, g));
                    if mask[b.index()] {
                        let nb = self.neg(g);
                        contrib.push((b, nb));
                    }
                }
                Op::Mul(a, b) => {
                    if mask[a.index()] {
                        let ga = self.mul(g, b);
                        contrib.push((a, ga));
                    }
                    if mask[b.index()] {
                        let gb = self.mul(g, a);
                        contrib.push((b, gb));
                    }
                }
                Op::Div(a, b) => {
                    if mask[a.index()] {
                        let ga = self.div(g, b);
                        contrib.push((a, ga));
                    }
                    if mask[b.index()] {
                        let q = self.div(out, b);
                        let t = self.mul(g, q);
                        let gb = self.neg(t);
                        contrib.push((b, gb));
                    }
                }
                Op::Neg(x) => {
                    let gx = self.neg(g);
                    contrib.push((x, gx));
                }
                Op::PowI(x, p) => match p {
                    0 => {}
                    1 => contrib.push((x, g)),
                    _ => {
                        let lower = self.powi(x, p - 1);
                        let d = self.scale(lower, p as f64);
                        let gx = self.mul(g, d);
                        contrib.push((x, gx));
                    }
                },
                Op::Exp(x) | Op::ExpNeg(x) => {
                    let gx = self.mul(g, out);
                    contrib.push((x, gx));
                }
                Op::Log(x) => {
                    let gx = self.div(g, x);
                    contrib.push((x, gx));
                }
                Op::Tanh(x) => {
                    let sq = self.mul(out, out);
                    let one = self.scalar_const(1.0);
                    let d = self.sub(one, sq);
                    let gx = self.mul(g, d);
                    contrib.push((x, gx));
                }
                Op::Elu(x) => {
                    let d = self.elu_deriv(x);
                    let gx = self.mul(g, d);
                    contrib.push((x, gx));
                }
                Op::EluDeriv(x) => {
                    let d = self.exp_neg(x);
                    let gx = self.mul(g, d);
                    contrib.push((x, gx));
                }
                Op::Relu(x) => {
                    let d = self.step(x);
                    let gx = self.mul(g, d);
                    contrib.push((x, gx));
                }
                Op::Sin(x) => {
                    let d = self.cos(x);
                    let gx = self.mul(g, d);
                    contrib.push((x, gx));
                }
                Op::Cos(x) => {
                    let d = self.sin(x);
                    let t = self.mul(g, d);
                    let gx = self.neg(t);
                    contrib.push((x, gx));
                }
                Op::Step(_) | Op::ClampMask(..) => {}
                Op::Clamp(x, lo, hi) => {
                    let d = self.clamp_mask(x, lo, hi);
                    let gx = self.mul(g, d);
                    contrib.push((x, gx));
                }
                Op::Sum(x) => {
                    let sx = self.shape(x);
                    let gx = if sx.is_scalar() {
                        g
                    } else {
                        self.broadcast(g, sx)
                    };
                    contrib.push((x, gx));
                }
                Op::Dot(a, b) => {
                    if mask[a.index()] {
                        let t = self.mul(b, g);
                        let ga = self.reshape_to(t, self.shape(a));
                        contrib.push((a, ga));
                    }
                    if mask[b.index()] {
                        let t = self.mul(a, g);
                        let gb = self.reshape_to(t, self.shape(b));
                        contrib.push((b, gb));
                    }
                }
                Op::MatVec(w, x) => {
                    if mask[w.index()] {
                        let gw = self.outer(g, x);
                        contrib.push((w, gw));
                    }
                    if mask[x.index()] {
                        let gx = self.matvec_t(w, g);
                        contrib.push((x, gx));
                    }
                }
                Op::MatTVec(w, v) => {
                    if mask[w.index()] {
                        let gw = self.outer(v, g);
                        contrib.push((w, gw));
                    }
                    if mask[v.index()] {
                        let gv = self.matvec(w, g);
                        contrib.push((v, gv));
                    }
                }
                Op::Outer(u, v) => {
                    if mask[u.index()] {
                        let gu = self.matvec(g, v);
                        contrib.push((u, gu));
                    }
                    if mask[v.index()] {
                        let gv = self.matvec_t(g, u);
                        contrib.push((v, gv));
                    }
                }
                Op::Broadcast(x) => {
                    let gx = self.sum(g);
                    contrib.push((x, gx));
                }
                Op::Slice(x, start) => {
                    let sx = self.shape(x);
                    let gx = self.pad(g, start, sx);
                    contrib.push((x, gx));
                }
                Op::Pad(x, start) => {
                    let sx = self.shape(x);
                    let gx = self.slice(g, start, sx);
                    contrib.push((x, gx));
                }
                Op::Concat(parts) => {
                    let mut at = 0;
                    for &p in parts.iter() {
                        let sp = self.shape(p);
                        if mask[p.index()] {
                            let gp = self.slice(g, at, sp);
                            contrib.push((p, gp));
                        }
                        at += sp.len();
                    }
                }
                Op::Reshape(x) => {
                    let gx = self.reshape(g, self.shape(x));
                    contrib.push((x, gx));
                }
            }
            for (target, c) in contrib {
                if !mask[target.index()] {
                    continue;
                }
                let c = if self.shape(target).is_scalar() && !self.shape(c).is_scalar() {
                    self.sum(c)
                } else {
                    c
                };
                adj[target.index()] = Some(match adj[target.index()] {
                    None => c,
                    Some(prev) => self.add(prev, c),
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|&w| match adj.get(w.index()).copied().flatten() {
                Some(g) => g,
                None => {
                    let s = self.shape(w);
                    self.zeros(s)
                }
            })
            .collect())
    }

    fn reshape_to(&mut self, x: Var, shape: Shape) -> Var {
        if self.shape(x) == shape {
            x
        } else {
            self.reshape(x, shape)
        }
    }

    /// Reverse-mode gradient of the scalar `output` computed numerically,
    /// without adding nodes.
    pub fn grad_values(&self, output: Var, wrt: &[Var]) -> Result<GradVector> {
        self.expect_scalar(output)?;
        self.check(output)?;
        let end = output.index() + 1;
        let mask = self.dependency_mask(end, wrt);
        let last = &self.nodes[end - 1];
        let mut adj = vec![0.0; last.offset + last.shape.len()];
        let mut seeded = vec![false; end];
        if mask[output.index()] {
            adj[self.nodes[output.index()].offset] = 1.0;
            seeded[output.index()] = true;
        }

        for i in (0..end).rev() {
            if !mask[i] || !seeded[i] {
                continue;
            }
            let node = &self.nodes[i];
            let (lower, upper) = adj.split_at_mut(node.offset);
            let g = &upper[..node.shape.len()];
            let vals = &self.values;
            let at = |v: Var| self.nodes[v.index()].offset;
            let len = |v: Var| self.nodes[v.index()].shape.len();
            let val = |v: Var| {
                let n = &self.nodes[v.index()];
                &vals[n.offset..n.offset + n.shape.len()]
            };
            let out_v = &vals[node.offset..node.offset + node.shape.len()];
            let touch = |v: Var, seeded: &mut Vec<bool>| -> bool {
                if mask[v.index()] {
                    seeded[v.index()] = true;
                    true
                } else {
                    false
                }
            };
            // Elementwise unary: x_adj[k] += g[k] * d(k).
            macro_rules! unary_rule {
                ($x:expr, $d:expr) => {{
                    let x = $x;
                    if touch(x, &mut seeded) {
                        let ox = at(x);
                        let xv = val(x);
                        for kk in 0..g.len() {
                            let d: f64 = $d(xv[kk], out_v[kk]);
                            lower[ox + kk] += g[kk] * d;
                        }
                    }
                }};
            }
            match &node.op {
                Op::Input | Op::Const | Op::Step(_) | Op::ClampMask(..) => {}
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) {
                        -1.0
                    } else {
                        1.0
                    };
                    for (v, s) in [(*a, 1.0), (*b, sign)] {
                        if touch(v, &mut seeded) {
                            let (o, l) = (at(v), len(v));
                            for (kk, gk) in g.iter().enumerate() {
                                lower[o + idx(l, kk)] += s * gk;
                            }
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (la, lb) = (av.len(), bv.len());
                    if touch(*a, &mut seeded) {
                        let o = at(*a);
                        for (kk, gk) in g.iter().enumerate() {
                            lower[o + idx(la, kk)] += gk * bv[idx(lb, kk)];
                        }
                    }
                    if touch(*b, &mut seeded) {
                        let o = at(*b);
                        for (kk, gk) in g.iter().enumerate() {
                            lower[o + idx(lb, kk)] += gk * av[idx(la, kk)];
                        }
                    }
                }
                Op::Div(a, b) => {
                    let bv = val(*b);
                    let (la, lb) = (len(*a), bv.len());
                    if touch(*a, &mut seeded) {
                        let o = at(*a);
                        for (kk, gk) in g.iter().enumerate() {
                            lower[o + idx(la, kk)] += gk / bv[idx(lb, kk)];
                        }
                    }
                    if touch(*b, &mut seeded) {
                        let o = at(*b);
                        for (kk, gk) in g.iter().enumerate() {
                            let bk = bv[idx(lb, kk)];
                            lower[o + idx(lb, kk)] -= gk * (out_v[kk] / bk);
                        }
                    }
                }
                Op::Neg(x) => unary_rule!(*x, |_, _| -1.0),
                Op::PowI(x, p) => {
                    let p = *p;
                    if p != 0 {
                        unary_rule!(*x, |xv: f64, _| p as f64 * xv.powi(p - 1))
                    }
                }
                Op::Exp(x) | Op::ExpNeg(x) => unary_rule!(*x, |_, o| o),
                Op::Log(x) => unary_rule!(*x, |xv: f64, _| 1.0 / xv),
                Op::Tanh(x) => unary_rule!(*x, |_, o: f64| 1.0 - o * o),
                Op::Elu(x) => unary_rule!(*x, |xv, _| super::kernels::elu_deriv(xv)),
                Op::EluDeriv(x) => unary_rule!(*x, |xv, _| super::kernels::exp_neg(xv)),
                Op::Relu(x) => unary_rule!(*x, |xv, _| super::kernels::step(xv)),
                Op::Sin(x) => unary_rule!(*x, |xv: f64, _| xv.cos()),
                Op::Cos(x) => unary_rule!(*x, |xv: f64, _| -xv.sin()),
                Op::Clamp(x, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    unary_rule!(*x, |xv, _| super::kernels::clamp_mask(xv, lo, hi))
                }
                Op::Sum(x) | Op::Broadcast(x) => {
                    if touch(*x, &mut seeded) {
                        let (o, l) = (at(*x), len(*x));
                        if l == g.len() {
                            for kk in 0..l {
                                lower[o + kk] += g[kk];
                            }
                        } else if l == 1 {
                            lower[o] += g.iter().sum::<f64>();
                        } else {
                            for kk in 0..l {
                                lower[o + kk] += g[0];
                            }
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if touch(*a, &mut seeded) {
                        let o = at(*a);
                        for kk in 0..av.len() {
                            lower[o + kk] += g[0] * bv[kk];
                        }
                    }
                    if touch(*b, &mut seeded) {
                        let o = at(*b);
                        for kk in 0..bv.len() {
                            lower[o + kk] += g[0] * av[kk];
                        }
                    }
                }
                Op::MatVec(w, x) => {
                    let sw = self.nodes[w.index()].shape;
                    let (wv, xv) = (val(*w), val(*x));
                    if touch(*w, &mut seeded) {
                        let o = at(*w);
                        for r in 0..sw.rows {
                            for c in 0..sw.cols {
                                lower[o + r * sw.cols + c] += g[r] * xv[c];
                            }
                        }
                    }
                    if touch(*x, &mut seeded) {
                        let o = at(*x);
                        for r in 0..sw.rows {
                            for c in 0..sw.cols {
                                lower[o + c] += wv[r * sw.cols + c] * g[r];
                            }
                        }
                    }
                }
                Op::MatTVec(w, v) => {
                    let sw = self.nodes[w.index()].shape;
                    let (wv, vv) = (val(*w), val(*v));
                    if touch(*w, &mut seeded) {
                        let o = at(*w);
                        for r in 0..sw.rows {
                            for c in 0..sw.cols {
                                lower[o + r * sw.cols + c] += vv[r] * g[c];
                            }
                        }
                    }
                    if touch(*v, &mut seeded) {
                        let o = at(*v);
                        for r in 0..sw.rows {
                            let mut acc = 0.0;
                            for c in 0..sw.cols {
                                acc += wv[r * sw.cols + c] * g[c];
                            }
                            lower[o + r] += acc;
                        }
                    }
                }
                Op::Outer(u, v) => {
                    let (uv, vv) = (val(*u), val(*v));
                    let cols = vv.len();
                    if touch(*u, &mut seeded) {
                        let o = at(*u);
                        for r in 0..uv.len() {
                            let mut acc = 0.0;
                            for c in 0..cols {
                                acc += g[r * cols + c] * vv[c];
                            }
                            lower[o + r] += acc;
                        }
                    }
                    if touch(*v, &mut seeded) {
                        let o = at(*v);
                        for r in 0..uv.len() {
                            for c in 0..cols {
                                lower[o + c] += g[r * cols + c] * uv[r];
                            }
                        }
                    }
                }
                Op::Slice(x, start) => {
                    if touch(*x, &mut seeded) {
                        let o = at(*x) + start;
                        for (kk, gk) in g.iter().enumerate() {
                            lower[o + kk] += gk;
                        }
                    }
                }
                Op::Pad(x, start) => {
                    if touch(*x, &mut seeded) {
                        let (o, l) = (at(*x), len(*x));
                        for kk in 0..l {
                            lower[o + kk] += g[start + kk];
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut pos = 0;
                    for &p in parts.iter() {
                        let l = len(p);
                        if touch(p, &mut seeded) {
                            let o = at(p);
                            for kk in 0..l {
                                lower[o + kk] += g[pos + kk];
                            }
                        }
                        pos += l;
                    }
                }
                Op::Reshape(x) => {
                    if touch(*x, &mut seeded) {
                        let o = at(*x);
                        for (kk, gk) in g.iter().enumerate() {
                            lower[o + kk] += gk;
                        }
                    }
                }
            }
        }

        let partials = wrt
            .iter()
            .map(|&w| {
                let n = &self.nodes[w.index()];
                if w.index() < end && seeded[w.index()] {
                    adj[n.offset..n.offset + n.shape.len()].to_vec()
                } else {
                    vec![0.0; n.shape.len()]
                }
            })
            .collect();
        Ok(GradVector {
            wrt: wrt.to_vec(),
            partials,
        })
    }

    /// Numeric gradient with the given input bindings applied first.
    pub fn gradient(
        &mut self,
        output: Var,
        wrt: &[Var],
        bindings: &[(Var, &[f64])],
    ) -> Result<GradVector> {
        if !bindings.is_empty() {
            for (var, values) in bindings {
                self.bind(*var, values)?;
            }
            self.recompute()?;
        }
        self.grad_values(output, wrt)
    }

    /// Second-order partials: differentiates `sum_i <weights_i, d output / d inner_i>`
    /// with respect to `outer`.
    ///
    /// With a single scalar inner parameter and weight 1 this is the mixed
    /// partial `d^2 output / (d outer d inner)`.
    pub fn second_gradient(
        &mut self,
        output: Var,
        inner: &[Var],
        weights: &[&[f64]],
        outer: &[Var],
    ) -> Result<GradVector> {
        assert_eq!(
            inner.len(),
            weights.len(),
            "one weight vector per inner parameter"
        );
        self.check(output)?;
        let first = self.grad(output, inner)?;
        let mut terms = Vec::with_capacity(first.len());
        for (gv, w) in first.iter().zip(weights) {
            let shape = self.shape(*gv);
            let wv = self.constant(shape, w);
            terms.push(self.dot(*gv, wv));
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = self.add(total, t);
        }
        self.grad_values(total, outer)
    }
}

#[inline]
fn idx(len: usize, k: usize) -> usize {
    if len == 1 {
        0
    } else {
        k
    }
}
