//! Small dense strictly convex QP solver (Goldfarb–Idnani dual active set)
//! for diagonal Hessians. Used by the enumeration oracle so that its
//! answers do not depend on the branch-and-bound relaxation code.

/// `min 1/2 sum g_k x_k^2 + c.x` s.t. `a.x = b` for `eq` rows and
/// `a.x >= b` for `ineq` rows. Every `g_k` must be positive.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DenseQp {
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub eq: Vec<(Vec<f64>, f64)>,
    pub ineq: Vec<(Vec<f64>, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DenseQpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    /// Iteration cap hit; only possible under severe degeneracy.
    Stalled,
}

const FEAS_TOL: f64 = 1e-10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct State {
    n: usize,
    /// `J = L^-T Q`, column-major access via `j[row][col]`.
    j: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    r_norm: f64,
    active: Vec<usize>,
    u: Vec<f64>,
    iq: usize,
}

impl State {
    fn compute_d(&self, np: &[f64], d: &mut [f64]) {
        for (i, di) in d.iter_mut().enumerate() {
            *di = (0..self.n).map(|k| self.j[k][i] * np[k]).sum();
        }
    }

    fn update_z(&self, d: &[f64], z: &mut [f64]) {
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = (self.iq..self.n).map(|c| self.j[i][c] * d[c]).sum();
        }
    }

    fn update_r(&self, d: &[f64], r: &mut [f64]) {
        for i in (0..self.iq).rev() {
            let s: f64 = (i + 1..self.iq).map(|c| self.r[i][c] * r[c]).sum();
            r[i] = (d[i] - s) / self.r[i][i];
        }
    }

    /// Appends the constraint whose transformed normal is `d`. Returns
    /// `false` when it is linearly dependent on the active set.
    fn add_constraint(&mut self, d: &mut [f64]) -> bool {
        let n = self.n;
        for c in (self.iq + 1..n).rev() {
            let (mut cc, mut ss) = (d[c - 1], d[c]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[c] = 0.0;
            ss /= h;
            cc /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[c - 1] = -h;
            } else {
                d[c - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in 0..n {
                let t1 = self.j[k][c - 1];
                let t2 = self.j[k][c];
                self.j[k][c - 1] = t1 * cc + t2 * ss;
                self.j[k][c] = xny * (t1 + self.j[k][c - 1]) - t2;
            }
        }
        self.iq += 1;
        for i in 0..self.iq {
            self.r[i][self.iq - 1] = d[i];
        }
        let diag = d[self.iq - 1].abs();
        if diag <= f64::EPSILON * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(diag);
        true
    }

    fn delete_constraint(&mut self, constraint: usize) {
        let n = self.n;
        let Some(qq) = self.active[..self.iq].iter().position(|&a| a == constraint) else {
            return;
        };
        for i in qq..self.iq - 1 {
            self.active[i] = self.active[i + 1];
            self.u[i] = self.u[i + 1];
            for row in self.r.iter_mut() {
                row[i] = row[i + 1];
            }
        }
        self.active[self.iq - 1] = self.active[self.iq];
        self.u[self.iq - 1] = self.u[self.iq];
        self.active[self.iq] = usize::MAX;
        self.u[self.iq] = 0.0;
        for row in self.r.iter_mut().take(self.iq) {
            row[self.iq - 1] = 0.0;
        }
        self.iq -= 1;
        if self.iq == 0 {
            return;
        }
        for c in qq..self.iq {
            let (mut cc, mut ss) = (self.r[c][c], self.r[c + 1][c]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[c + 1][c] = 0.0;
            if cc < 0.0 {
                self.r[c][c] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[c][c] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in c + 1..self.iq {
                let t1 = self.r[c][k];
                let t2 = self.r[c + 1][k];
                self.r[c][k] = t1 * cc + t2 * ss;
                self.r[c + 1][k] = xny * (t1 + self.r[c][k]) - t2;
            }
            for k in 0..n {
                let t1 = self.j[k][c];
                let t2 = self.j[k][c + 1];
                self.j[k][c] = t1 * cc + t2 * ss;
                self.j[k][c + 1] = xny * (self.j[k][c] + t1) - t2;
            }
        }
    }
}

pub fn solve_dense_qp(qp: &DenseQp) -> DenseQpOutcome {
    let n = qp.g.len();
    assert_eq!(qp.c.len(), n, "linear term length");
    assert!(qp.g.iter().all(|&g| g > 0.0), "Hessian must be positive definite");
    let (p, m) = (qp.eq.len(), qp.ineq.len());

    let mut x: Vec<f64> = qp.c.iter().zip(&qp.g).map(|(c, g)| -c / g).collect();
    if n == 0 {
        let ok = qp.eq.iter().all(|(_, b)| b.abs() <= FEAS_TOL) && qp.ineq.iter().all(|(_, b)| *b <= FEAS_TOL);
        return if ok {
            DenseQpOutcome::Optimal { x, value: 0.0 }
        } else {
            DenseQpOutcome::Infeasible
        };
    }
    let mut j = vec![vec![0.0; n]; n];
    for (k, row) in j.iter_mut().enumerate() {
        row[k] = 1.0 / qp.g[k].sqrt();
    }
    let mut st = State {
        n,
        j,
        r: vec![vec![0.0; n + 1]; n + 1],
        r_norm: 1.0,
        active: vec![usize::MAX; n + p + m + 1],
        u: vec![0.0; n + p + m + 1],
        iq: 0,
    };
    let (mut d, mut z, mut r) = (vec![0.0; n], vec![0.0; n], vec![0.0; n + 1]);

    // Equalities are ids 0..p, inequalities p..p+m.
    for (i, (a, b)) in qp.eq.iter().enumerate() {
        st.compute_d(a, &mut d);
        st.update_z(&d, &mut z);
        st.update_r(&d, &mut r);
        let resid = b - dot(a, &x);
        let zn = dot(&z, a);
        if zn.abs() <= f64::EPSILON * 1e3 {
            if resid.abs() > 1e-8 * (1.0 + b.abs()) {
                return DenseQpOutcome::Infeasible;
            }
            continue;
        }
        let t = resid / zn;
        for k in 0..n {
            x[k] += t * z[k];
        }
        st.u[st.iq] = t;
        for k in 0..st.iq {
            st.u[k] -= t * r[k];
        }
        st.active[st.iq] = i;
        if !st.add_constraint(&mut d) {
            return DenseQpOutcome::Infeasible;
        }
    }
    let eq_active = st.iq;

    let mut is_active = vec![false; m];
    let slack = |x: &[f64], i: usize| dot(&qp.ineq[i].0, x) - qp.ineq[i].1;
    let max_iter = 50 * (n + m + p + 10);
    let mut iters = 0;
    'outer: loop {
        iters += 1;
        if iters > max_iter {
            return DenseQpOutcome::Stalled;
        }
        let mut ip = None;
        let mut worst = 0.0;
        for i in 0..m {
            if is_active[i] {
                continue;
            }
            let s = slack(&x, i) / (1.0 + qp.ineq[i].1.abs());
            if s < -FEAS_TOL && s < worst {
                worst = s;
                ip = Some(i);
            }
        }
        let Some(ip) = ip else { break };
        let np = &qp.ineq[ip].0;
        st.u[st.iq] = 0.0;
        st.active[st.iq] = p + ip;
        let mut s_ip = slack(&x, ip);
        loop {
            iters += 1;
            if iters > max_iter {
                return DenseQpOutcome::Stalled;
            }
            st.compute_d(np, &mut d);
            st.update_z(&d, &mut z);
            st.update_r(&d, &mut r);
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for k in eq_active..st.iq {
                if r[k] > 0.0 {
                    let ratio = st.u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(st.active[k]);
                    }
                }
            }
            let zn = dot(&z, np);
            let t2 = if dot(&z, &z).sqrt() > 1e-12 && zn.abs() > 1e-14 {
                -s_ip / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return DenseQpOutcome::Infeasible;
            }
            if !t2.is_finite() {
                for k in 0..st.iq {
                    st.u[k] -= t * r[k];
                }
                st.u[st.iq] += t;
                let l = drop.expect("finite partial step has a blocking constraint");
                is_active[l - p] = false;
                st.delete_constraint(l);
                continue;
            }
            for k in 0..n {
                x[k] += t * z[k];
            }
            for k in 0..st.iq {
                st.u[k] -= t * r[k];
            }
            st.u[st.iq] += t;
            if t == t2 {
                if !st.add_constraint(&mut d) {
                    return DenseQpOutcome::Infeasible;
                }
                is_active[ip] = true;
                continue 'outer;
            }
            let l = drop.expect("partial step has a blocking constraint");
            is_active[l - p] = false;
            st.delete_constraint(l);
            s_ip = slack(&x, ip);
        }
    }
    let value = 0.5 * x.iter().zip(&qp.g).map(|(v, g)| g * v * v).sum::<f64>() + dot(&qp.c, &x);
    DenseQpOutcome::Optimal { x, value }
}
