use super::{cg_solve, CgParams, FnMap};
use crate::error::{Error, Result};

/// Weighted least squares on a graph:
/// `F(u) = sum_i l_i (u_i - d_i)^2 + sum_(i,j) w_ij (u_i - u_j)^2`.
///
/// Edges are directed pairs; listing both `(i, j)` and `(j, i)` counts the
/// pair twice, exactly like the double sum over all node pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphLs {
    pub data_weight: Vec<f64>,
    pub data: Vec<f64>,
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphLsSolution {
    pub u: Vec<f64>,
    /// Nodes in components without any data weight; pinned to 0.
    pub unanchored: Vec<usize>,
    pub iterations: usize,
    pub rel_residual: f64,
}

impl GraphLs {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        let data: f64 = self
            .data_weight
            .iter()
            .zip(&self.data)
            .zip(u)
            .map(|((l, d), x)| l * (x - d) * (x - d))
            .sum();
        let smooth: f64 = self
            .edges
            .iter()
            .map(|&(i, j, w)| w * (u[i] - u[j]) * (u[i] - u[j]))
            .sum();
        data + smooth
    }

    /// Normal-system product `l_i x_i + sum_k (w_ik + w_ki)(x_i - x_k)`.
    pub fn apply_normal(&self, x: &[f64], y: &mut [f64]) {
        for ((yi, l), xi) in y.iter_mut().zip(&self.data_weight).zip(x) {
            *yi = l * xi;
        }
        for &(i, j, w) in &self.edges {
            let diff = w * (x[i] - x[j]);
            y[i] += diff;
            y[j] -= diff;
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.data.len();
        if self.data_weight.len() != n {
            return Err(Error::mismatch(n, self.data_weight.len()));
        }
        if self.data_weight.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config("data weights must be finite and >= 0".into()));
        }
        if self.data.iter().any(|d| !d.is_finite()) {
            return Err(Error::Config("data values must be finite".into()));
        }
        for &(i, j, w) in &self.edges {
            if i >= n || j >= n {
                return Err(Error::Config(format!("edge ({i}, {j}) outside 0..{n}")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config("pair weights must be finite and >= 0".into()));
            }
        }
        Ok(())
    }

    /// Marks nodes whose connected component has some positive data weight.
    fn anchored(&self) -> Vec<bool> {
        let n = self.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut a: usize) -> usize {
            while parent[a] != a {
                parent[a] = parent[parent[a]];
                a = parent[a];
            }
            a
        }
        for &(i, j, w) in &self.edges {
            if w > 0.0 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
        let mut root_anchored = vec![false; n];
        for i in 0..n {
            if self.data_weight[i] > 0.0 {
                let r = find(&mut parent, i);
                root_anchored[r] = true;
            }
        }
        (0..n).map(|i| root_anchored[find(&mut parent, i)]).collect()
    }
}

/// Solves the normal system of a [`GraphLs`] problem by conjugate gradients.
///
/// Components without data weight are singular; their nodes are set to 0 and
/// reported in [`GraphLsSolution::unanchored`]. When no node carries data
/// weight at all the whole system is singular and an error is returned.
pub fn graph_ls_solve(problem: &GraphLs, tol: f64, max_iter: usize) -> Result<GraphLsSolution> {
    problem.validate()?;
    let n = problem.len();
    let anchored = problem.anchored();
    let unanchored: Vec<usize> = (0..n).filter(|&i| !anchored[i]).collect();
    if unanchored.len() == n {
        return Err(Error::SingularSystem { nodes: n });
    }

    // Unanchored nodes only connect to each other, so masking them out leaves
    // the anchored block of the system intact.
    let mask = |v: &mut [f64]| {
        for &i in &unanchored {
            v[i] = 0.0;
        }
    };
    let map = FnMap {
        n,
        f: |x: &[f64], y: &mut [f64]| {
            problem.apply_normal(x, y);
            for &i in &unanchored {
                y[i] = 0.0;
            }
        },
    };
    let mut rhs: Vec<f64> = problem
        .data_weight
        .iter()
        .zip(&problem.data)
        .map(|(l, d)| l * d)
        .collect();
    mask(&mut rhs);
    let mut x0 = problem.data.clone();
    mask(&mut x0);
    let res = cg_solve(
        &map,
        &rhs,
        Some(&x0),
        &CgParams {
            max_iter,
            rel_tol: tol,
        },
    )?;
    let mut u = res.x;
    mask(&mut u);
    Ok(GraphLsSolution {
        u,
        unanchored,
        iterations: res.iterations,
        rel_residual: *res.residuals.last().unwrap_or(&0.0),
    })
}
