//! Dense two-phase primal simplex with Bland's rule.

const PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
enum RowKind {
    Le,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
struct Row {
    coef: Vec<f64>,
    rhs: f64,
    kind: RowKind,
}

/// maximize c'x subject to linear rows and per-variable bounds.
/// Variables are free unless bounded with [`LinearProgram::bound`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    objective: Vec<f64>,
    rows: Vec<Row>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    minimize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

impl LinearProgram {
    pub fn maximize(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram {
            objective,
            rows: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            minimize: false,
        }
    }

    pub fn minimize(objective: Vec<f64>) -> Self {
        let mut lp = Self::maximize(objective.into_iter().map(|c| -c).collect());
        lp.minimize = true;
        lp
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    /// Adds the row coef'x <= rhs.
    pub fn leq(&mut self, coef: Vec<f64>, rhs: f64) -> &mut Self {
        assert_eq!(coef.len(), self.n_vars(), "row length");
        self.rows.push(Row { coef, rhs, kind: RowKind::Le });
        self
    }

    /// Adds the row coef'x = rhs.
    pub fn equal(&mut self, coef: Vec<f64>, rhs: f64) -> &mut Self {
        assert_eq!(coef.len(), self.n_vars(), "row length");
        self.rows.push(Row { coef, rhs, kind: RowKind::Eq });
        self
    }

    pub fn bound(&mut self, j: usize, lower: f64, upper: f64) -> &mut Self {
        self.lower[j] = lower;
        self.upper[j] = upper;
        self
    }

    pub fn solve(&self) -> LpOutcome {
        solve_lp(self)
    }
}

/// How an original variable maps onto non-negative standard-form columns.
#[derive(Clone, Copy)]
enum VarMap {
    Shift { col: usize, lo: f64 },
    Reflect { col: usize, hi: f64 },
    Split { pos: usize, neg: usize },
}

pub fn solve_lp(lp: &LinearProgram) -> LpOutcome {
    let n = lp.n_vars();
    if lp.lower.iter().zip(&lp.upper).any(|(l, u)| l > u) {
        return LpOutcome::Infeasible;
    }

    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0;
    let mut extra_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (lo, hi) = (lp.lower[j], lp.upper[j]);
        if lo.is_finite() {
            maps.push(VarMap::Shift { col: ncols, lo });
            if hi.is_finite() {
                extra_rows.push((ncols, hi - lo));
            }
            ncols += 1;
        } else if hi.is_finite() {
            maps.push(VarMap::Reflect { col: ncols, hi });
            ncols += 1;
        } else {
            maps.push(VarMap::Split { pos: ncols, neg: ncols + 1 });
            ncols += 2;
        }
    }

    let translate = |coef: &[f64], rhs: f64| -> (Vec<f64>, f64) {
        let mut out = vec![0.0; ncols];
        let mut r = rhs;
        for (j, m) in maps.iter().enumerate() {
            let a = coef[j];
            if a == 0.0 {
                continue;
            }
            match *m {
                VarMap::Shift { col, lo } => {
                    out[col] += a;
                    r -= a * lo;
                }
                VarMap::Reflect { col, hi } => {
                    out[col] -= a;
                    r -= a * hi;
                }
                VarMap::Split { pos, neg } => {
                    out[pos] += a;
                    out[neg] -= a;
                }
            }
        }
        (out, r)
    };

    let mut std_rows: Vec<(Vec<f64>, f64, RowKind)> = lp
        .rows
        .iter()
        .map(|row| {
            let (c, r) = translate(&row.coef, row.rhs);
            (c, r, row.kind)
        })
        .collect();
    for (col, ub) in extra_rows {
        let mut c = vec![0.0; ncols];
        c[col] = 1.0;
        std_rows.push((c, ub, RowKind::Le));
    }
    let (cost, offset) = {
        let (c, r) = translate(&lp.objective, 0.0);
        (c, -r)
    };

    let m = std_rows.len();
    let n_slack = std_rows.iter().filter(|r| r.2 == RowKind::Le).count();
    let n_art = std_rows.iter().filter(|r| r.2 == RowKind::Eq || r.1 < 0.0).count();
    let width = ncols + n_slack + n_art;
    let mut t = Tableau::new(m, width);
    let mut slack = ncols;
    let mut art = ncols + n_slack;
    for (i, (coef, rhs, kind)) in std_rows.iter().enumerate() {
        let sign = if *rhs < 0.0 { -1.0 } else { 1.0 };
        for (j, &v) in coef.iter().enumerate() {
            t.a[i * t.w + j] = sign * v;
        }
        t.rhs[i] = sign * rhs;
        if *kind == RowKind::Le {
            t.a[i * t.w + slack] = sign;
            if sign > 0.0 {
                t.basis[i] = slack;
            }
            slack += 1;
        }
        if *kind == RowKind::Eq || sign < 0.0 {
            t.a[i * t.w + art] = 1.0;
            t.basis[i] = art;
            art += 1;
        }
    }
    let art_start = ncols + n_slack;

    if n_art > 0 {
        let mut c1 = vec![0.0; width];
        for c in c1.iter_mut().skip(art_start) {
            *c = -1.0;
        }
        t.set_objective(&c1);
        match t.run(width) {
            Phase::Optimal => {}
            Phase::Unbounded => unreachable!("phase one is bounded"),
        }
        let scale = 1.0 + t.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if t.value < -1e-9 * scale {
            return LpOutcome::Infeasible;
        }
        // pivot zero-level artificials out of the basis; drop redundant rows
        let mut i = 0;
        while i < t.m {
            if t.basis[i] >= art_start {
                let q = (0..art_start).find(|&j| t.a[i * t.w + j].abs() > PIVOT_TOL);
                match q {
                    Some(q) => {
                        t.pivot(i, q);
                        i += 1;
                    }
                    None => t.remove_row(i),
                }
            } else {
                i += 1;
            }
        }
    }

    let mut c2 = vec![0.0; width];
    c2[..ncols].copy_from_slice(&cost);
    t.set_objective(&c2);
    match t.run(art_start) {
        Phase::Unbounded => LpOutcome::Unbounded,
        Phase::Optimal => {
            let mut y = vec![0.0; width];
            for i in 0..t.m {
                y[t.basis[i]] = t.rhs[i];
            }
            let x: Vec<f64> = maps
                .iter()
                .map(|m| match *m {
                    VarMap::Shift { col, lo } => lo + y[col],
                    VarMap::Reflect { col, hi } => hi - y[col],
                    VarMap::Split { pos, neg } => y[pos] - y[neg],
                })
                .collect();
            let value = lp.objective.iter().zip(&x).map(|(c, x)| c * x).sum::<f64>();
            debug_assert!((value - (t.value + offset)).abs() <= 1e-6 * (1.0 + value.abs()));
            let value = if lp.minimize { -value } else { value };
            LpOutcome::Optimal { value, x }
        }
    }
}

enum Phase {
    Optimal,
    Unbounded,
}

struct Tableau {
    m: usize,
    w: usize,
    a: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    /// reduced gains: objective increases by d[j] per unit of column j
    d: Vec<f64>,
    value: f64,
}

impl Tableau {
    fn new(m: usize, w: usize) -> Self {
        Tableau { m, w, a: vec![0.0; m * w], rhs: vec![0.0; m], basis: vec![usize::MAX; m], d: vec![0.0; w], value: 0.0 }
    }

    fn set_objective(&mut self, c: &[f64]) {
        self.d.copy_from_slice(c);
        self.value = 0.0;
        for i in 0..self.m {
            let cb = c[self.basis[i]];
            if cb != 0.0 {
                let row = &self.a[i * self.w..(i + 1) * self.w];
                for (d, a) in self.d.iter_mut().zip(row) {
                    *d -= cb * a;
                }
                self.value += cb * self.rhs[i];
            }
        }
    }

    /// Bland's rule iterations over the first `allowed` columns.
    fn run(&mut self, allowed: usize) -> Phase {
        loop {
            let Some(q) = (0..allowed).find(|&j| self.d[j] > PIVOT_TOL) else {
                return Phase::Optimal;
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let aiq = self.a[i * self.w + q];
                if aiq > PIVOT_TOL {
                    let ratio = self.rhs[i] / aiq;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((r, br)) => {
                            if ratio < br - 1e-12 || (ratio <= br + 1e-12 && self.basis[i] < self.basis[r]) {
                                Some((i, ratio))
                            } else {
                                Some((r, br))
                            }
                        }
                    };
                }
            }
            match best {
                None => return Phase::Unbounded,
                Some((r, _)) => self.pivot(r, q),
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.w;
        let p = self.a[r * w + q];
        for v in &mut self.a[r * w..(r + 1) * w] {
            *v /= p;
        }
        self.rhs[r] /= p;
        self.rhs[r] = self.rhs[r].max(0.0);
        let pivot_row: Vec<f64> = self.a[r * w..(r + 1) * w].to_vec();
        let pr = self.rhs[r];
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.a[i * w + q];
            if f != 0.0 {
                for (v, pv) in self.a[i * w..(i + 1) * w].iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                self.a[i * w + q] = 0.0;
                self.rhs[i] = (self.rhs[i] - f * pr).max(0.0);
            }
        }
        let f = self.d[q];
        if f != 0.0 {
            for (d, pv) in self.d.iter_mut().zip(&pivot_row) {
                *d -= f * pv;
            }
            self.d[q] = 0.0;
            self.value += f * pr;
        }
        self.basis[r] = q;
    }

    fn remove_row(&mut self, i: usize) {
        let w = self.w;
        self.a.drain(i * w..(i + 1) * w);
        self.rhs.remove(i);
        self.basis.remove(i);
        self.m -= 1;
    }
}
