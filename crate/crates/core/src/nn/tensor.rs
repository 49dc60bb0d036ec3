use crate::error::{Error, Result};
use crate::par;

/// Dense row-major tensor of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Tensor {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension of a matrix (1 for vectors).
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Trailing dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn check_same(&self, o: &Tensor) -> Result<()> {
        if self.shape != o.shape {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape, o.shape)));
        }
        Ok(())
    }

    pub fn add(&self, o: &Tensor) -> Result<Tensor> {
        self.check_same(o)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&o.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, o: &Tensor) -> Result<Tensor> {
        self.check_same(o)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&o.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// `self += s · o`.
    pub fn axpy(&mut self, s: f64, o: &Tensor) {
        assert_eq!(self.shape, o.shape, "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += s * b;
        }
    }

    pub fn add_assign(&mut self, o: &Tensor) {
        self.axpy(1.0, o);
    }

    /// Adds `bias` (length = cols) to every row.
    pub fn add_row(&mut self, bias: &[f64]) {
        let c = self.cols();
        assert_eq!(bias.len(), c);
        for row in self.data.chunks_mut(c) {
            for (a, b) in row.iter_mut().zip(bias) {
                *a += b;
            }
        }
    }

    /// Column sums, accumulated in row order.
    pub fn col_sums(&self) -> Vec<f64> {
        let c = self.cols();
        let mut out = vec![0.0; c];
        for row in self.data.chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Stacks matrices with equal column counts along rows.
    pub fn vstack(parts: &[&Tensor]) -> Result<Tensor> {
        let c = parts.first().map_or(0, |p| p.cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != c {
                return Err(Error::ShapeMismatch("vstack column mismatch".into()));
            }
            data.extend_from_slice(&p.data);
            rows += p.rows();
        }
        Ok(Tensor {
            shape: vec![rows, c],
            data,
        })
    }

    /// Rows `[lo, hi)` as a new matrix.
    pub fn slice_rows(&self, lo: usize, hi: usize) -> Tensor {
        let c = self.cols();
        Tensor {
            shape: vec![hi - lo, c],
            data: self.data[lo * c..hi * c].to_vec(),
        }
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        Tensor::from_fn(c, r, |i, j| self.at(j, i))
    }
}

fn dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    if t.shape.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "{what}: expected a matrix, got {:?}",
            t.shape
        )));
    }
    Ok((t.shape[0], t.shape[1]))
}

/// `a · b` for `a: m×k`, `b: k×n`. Each output row accumulates over `k` in
/// ascending order regardless of threading.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims(a, "matmul lhs")?;
    let (k2, n) = dims(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::ShapeMismatch(format!("matmul {m}x{k} · {k2}x{n}")));
    }
    let mut out = Tensor::zeros(&[m, n]);
    if n == 0 {
        return Ok(out);
    }
    par::for_each_row(&mut out.data, n, |i, row| {
        let ar = &a.data[i * k..(i + 1) * k];
        for (p, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let br = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    });
    Ok(out)
}

/// `a · bᵀ` for `a: m×k`, `b: n×k`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims(a, "matmul_nt lhs")?;
    let (n, k2) = dims(b, "matmul_nt rhs")?;
    if k != k2 {
        return Err(Error::ShapeMismatch(format!("matmul_nt {m}x{k} · ({n}x{k2})ᵀ")));
    }
    let mut out = Tensor::zeros(&[m, n]);
    if n == 0 {
        return Ok(out);
    }
    par::for_each_row(&mut out.data, n, |i, row| {
        let ar = &a.data[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let br = &b.data[j * k..(j + 1) * k];
            *o = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    });
    Ok(out)
}

/// `aᵀ · b` for `a: k×m`, `b: k×n`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = dims(a, "matmul_tn lhs")?;
    let (k2, n) = dims(b, "matmul_tn rhs")?;
    if k != k2 {
        return Err(Error::ShapeMismatch(format!("matmul_tn ({k}x{m})ᵀ · {k2}x{n}")));
    }
    let mut out = Tensor::zeros(&[m, n]);
    if n == 0 {
        return Ok(out);
    }
    par::for_each_row(&mut out.data, n, |i, row| {
        for p in 0..k {
            let av = a.data[p * m + i];
            if av == 0.0 {
                continue;
            }
            let br = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        Tensor::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.at(i, k) * b.at(k, j)).sum()
        })
    }

    #[test]
    fn products_agree_with_naive() {
        let a = random(5, 7, 1);
        let b = random(7, 3, 2);
        let want = naive(&a, &b);
        let close = |x: &Tensor| x.data().iter().zip(want.data()).all(|(p, q)| (p - q).abs() < 1e-12);
        assert!(close(&matmul(&a, &b).unwrap()));
        assert!(close(&matmul_nt(&a, &b.transpose()).unwrap()));
        assert!(close(&matmul_tn(&a.transpose(), &b).unwrap()));
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            matmul(&random(2, 3, 0), &random(2, 3, 0)),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(Tensor::new(&[2, 2], vec![0.0; 3]).is_err());
    }
}
