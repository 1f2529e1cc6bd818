use nalgebra::{DMatrix, DVector};

/// Orthonormal DCT-II analysis matrix `C[k][i] = a_k cos(pi (2i + 1) k / 2n)`.
pub fn dct_matrix(n: usize) -> DMatrix<f64> {
    assert!(n > 0);
    let nf = n as f64;
    DMatrix::from_fn(n, n, |k, i| {
        let a = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        a * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos()
    })
}

/// Kronecker product `factors[0] (x) factors[1] (x) ...`; the last factor acts
/// on the fastest index of the vectorization.
pub fn kron_all(factors: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let mut out = DMatrix::from_element(1, 1, 1.0);
    for f in factors {
        out = out.kronecker(f);
    }
    out
}

/// Separable dictionary `D = Dq (x) Dy (x) Dx` for patches vectorized with x
/// fastest, then y, then q. Each factor is a DCT synthesis matrix, so
/// `D^T` is the 3D DCT-II.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalDictionary {
    /// Patch edge lengths `(r_x, r_y, r_q)`.
    pub shape: [usize; 3],
    /// Synthesis factors in x, y, q order.
    pub factors: [DMatrix<f64>; 3],
}

impl SignalDictionary {
    pub fn dct(shape: [usize; 3]) -> Self {
        SignalDictionary {
            shape,
            factors: shape.map(|n| dct_matrix(n).transpose()),
        }
    }

    pub fn atom_len(&self) -> usize {
        self.shape.iter().product()
    }

    /// `D c`.
    pub fn synthesis(&self, c: &[f64]) -> Vec<f64> {
        self.separable(c, false)
    }

    /// `D^T m`.
    pub fn analysis(&self, m: &[f64]) -> Vec<f64> {
        self.separable(m, true)
    }

    /// The full `n x n` matrix, for tests on small shapes.
    pub fn matrix(&self) -> DMatrix<f64> {
        kron_all(&[&self.factors[2], &self.factors[1], &self.factors[0]])
    }

    fn separable(&self, v: &[f64], transpose: bool) -> Vec<f64> {
        let [nx, ny, nq] = self.shape;
        assert_eq!(v.len(), nx * ny * nq);
        let mut cur = v.to_vec();
        let strides = [1, nx, nx * ny];
        for axis in 0..3 {
            let m = if transpose {
                self.factors[axis].transpose()
            } else {
                self.factors[axis].clone()
            };
            let n = self.shape[axis];
            let stride = strides[axis];
            let mut line = DVector::zeros(n);
            let mut next = cur.clone();
            for base in 0..cur.len() {
                // `base` must be the first element of a line along `axis`
                if (base / stride) % n != 0 {
                    continue;
                }
                for t in 0..n {
                    line[t] = cur[base + t * stride];
                }
                let out = &m * &line;
                for t in 0..n {
                    next[base + t * stride] = out[t];
                }
            }
            cur = next;
        }
        cur
    }
}
