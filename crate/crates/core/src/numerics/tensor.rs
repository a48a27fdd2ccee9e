use super::Real;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<R> {
    pub shape: Vec<usize>,
    pub data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![R::zero(); n] }
    }

    pub fn filled(shape: &[usize], value: R) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<R>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape/data mismatch");
        Self { shape: shape.to_vec(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[R] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v.f64() * v.f64()).sum()
    }

    pub fn cast<S: Real>(&self) -> Tensor<S> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| S::c(v.f64())).collect() }
    }
}

/// `out_j = Σ_i m[i, j] · q_i` for a `dk × dv` head: the value a key retrieves.
pub fn contract_keys<R: Real>(m: &[R], q: &[R], dv: usize, out: &mut [R]) {
    out.fill(R::zero());
    for (i, qi) in q.iter().enumerate() {
        if *qi == R::zero() {
            continue;
        }
        let row = &m[i * dv..(i + 1) * dv];
        for (o, mij) in out.iter_mut().zip(row) {
            *o += *mij * *qi;
        }
    }
}

/// Gated delta-rule write on one `dk × dv` head:
/// `m ← α·m + β·k ⊗ (v − mᵀk)`. The prediction error `v − mᵀk`, taken
/// against the pre-write memory, is left in `err`.
pub fn delta_update<R: Real>(m: &mut [R], k: &[R], v: &[R], alpha: R, beta: R, err: &mut [R]) {
    let dv = v.len();
    contract_keys(m, k, dv, err);
    for (e, vj) in err.iter_mut().zip(v) {
        *e = *vj - *e;
    }
    for (i, ki) in k.iter().enumerate() {
        let bk = beta * *ki;
        let row = &mut m[i * dv..(i + 1) * dv];
        for (mij, ej) in row.iter_mut().zip(err.iter()) {
            *mij = alpha * *mij + bk * *ej;
        }
    }
}

/// Multi-head matrix memory, `heads × dk × dv`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTensor<R> {
    pub heads: usize,
    pub dk: usize,
    pub dv: usize,
    pub data: Vec<R>,
}

impl<R: Real> HeadTensor<R> {
    pub fn zeros(heads: usize, dk: usize, dv: usize) -> Self {
        Self { heads, dk, dv, data: vec![R::zero(); heads * dk * dv] }
    }

    pub fn head(&self, h: usize) -> &[R] {
        let n = self.dk * self.dv;
        &self.data[h * n..(h + 1) * n]
    }

    pub fn head_mut(&mut self, h: usize) -> &mut [R] {
        let n = self.dk * self.dv;
        &mut self.data[h * n..(h + 1) * n]
    }

    /// Contraction of head `h` with a key/query over the key axis.
    pub fn read(&self, h: usize, q: &[R]) -> Vec<R> {
        let mut out = vec![R::zero(); self.dv];
        contract_keys(self.head(h), q, self.dv, &mut out);
        out
    }

    /// Delta-rule write into head `h`; returns the prediction error.
    pub fn write(&mut self, h: usize, k: &[R], v: &[R], alpha: R, beta: R) -> Vec<R> {
        let mut err = vec![R::zero(); self.dv];
        delta_update(self.head_mut(h), k, v, alpha, beta, &mut err);
        err
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
