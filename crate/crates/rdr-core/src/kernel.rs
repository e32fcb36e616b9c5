//! Base kernels, empirical distributions, mean-embedding inner products, and
//! Gram assembly for two-stage distribution regression.
//!
//! An empirical distribution with atoms `x_1, .., x_d` embeds as the average
//! of kernel sections:
//!
//! ```text
//! mu = (1/d) * sum_s k(., x_s)
//! ```
//!
//! so inner products between embeddings reduce to exact finite double sums
//! over atom pairs, and a second-level kernel applied to embedding geometry
//! yields the regression Gram matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tol;

/// Families of base kernels on atom space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKernelFamily {
    /// `k(u, v) = exp(-|u - v|^2 / (2 gamma^2))` with the Euclidean norm.
    Gaussian,
    /// `k(u, v) = exp(-|u - v|_1 / gamma)` with the Manhattan norm.
    Laplacian,
}

/// A bounded, positive-definite kernel on atom vectors.
///
/// Both families are normalized so that `k(u, u) = 1`, hence every kernel
/// value lies in `(0, 1]` and the embedding norm of any distribution is at
/// most [`BaseKernel::BOUND`].
///
/// # Example
///
/// ```
/// use rdr_core::kernel::BaseKernel;
///
/// let k = BaseKernel::gaussian(1.0).unwrap();
/// assert_eq!(k.eval(&[0.3, -0.7], &[0.3, -0.7]).unwrap(), 1.0);
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseKernel {
    family: BaseKernelFamily,
    bandwidth: f64,
}

impl BaseKernel {
    /// Uniform bound on kernel values and embedding norms.
    pub const BOUND: f64 = 1.0;

    /// Builds a kernel of the given family.
    ///
    /// Errors if `bandwidth` is not finite and strictly positive.
    pub fn new(family: BaseKernelFamily, bandwidth: f64) -> Result<Self> {
        if !bandwidth.is_finite() || bandwidth <= 0.0 {
            return Err(Error::input(format!(
                "base kernel bandwidth must be finite and positive, got {bandwidth}"
            )));
        }
        Ok(BaseKernel { family, bandwidth })
    }

    /// Gaussian kernel `exp(-|u - v|^2 / (2 bandwidth^2))`.
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::new(BaseKernelFamily::Gaussian, bandwidth)
    }

    /// Laplacian kernel `exp(-|u - v|_1 / bandwidth)`.
    pub fn laplacian(bandwidth: f64) -> Result<Self> {
        Self::new(BaseKernelFamily::Laplacian, bandwidth)
    }

    /// The kernel family.
    pub fn family(&self) -> BaseKernelFamily {
        self.family
    }

    /// The bandwidth parameter.
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Evaluates the kernel on two atom vectors of equal dimension.
    pub fn eval(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        if u.len() != v.len() {
            return Err(Error::input(format!(
                "kernel arguments have dimensions {} and {}",
                u.len(),
                v.len()
            )));
        }
        if u.is_empty() {
            return Err(Error::input("kernel arguments must be nonempty"));
        }
        Ok(self.eval_unchecked(u, v))
    }

    #[inline]
    fn eval_unchecked(&self, u: &[f64], v: &[f64]) -> f64 {
        match self.family {
            BaseKernelFamily::Gaussian => {
                let mut sq = 0.0;
                for (a, b) in u.iter().zip(v) {
                    let diff = a - b;
                    sq += diff * diff;
                }
                (-sq / (2.0 * self.bandwidth * self.bandwidth)).exp()
            }
            BaseKernelFamily::Laplacian => {
                let mut l1 = 0.0;
                for (a, b) in u.iter().zip(v) {
                    l1 += (a - b).abs();
                }
                (-l1 / self.bandwidth).exp()
            }
        }
    }
}

/// Serialized form of an empirical distribution.
#[derive(Serialize, Deserialize)]
struct DistributionDoc {
    dim: usize,
    atoms: Vec<Vec<f64>>,
}

/// A finitely supported distribution given by equally weighted atoms.
///
/// Atoms are stored in one flat buffer of length `len * dim`. The JSON form
/// is `{"dim": m, "atoms": [[..], ..]}`.
///
/// # Example
///
/// ```
/// use rdr_core::kernel::EmpiricalDistribution;
///
/// let d = EmpiricalDistribution::new(vec![vec![0.0, 1.0], vec![2.0, 3.0]]).unwrap();
/// assert_eq!(d.len(), 2);
/// assert_eq!(d.dim(), 2);
/// assert_eq!(d.atom(1), &[2.0, 3.0]);
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionDoc", into = "DistributionDoc")]
pub struct EmpiricalDistribution {
    flat: Vec<f64>,
    dim: usize,
}

impl EmpiricalDistribution {
    /// Builds a distribution from per-atom vectors.
    ///
    /// Errors if there are no atoms, the atoms disagree in dimension, the
    /// dimension is zero, or any coordinate is not finite.
    pub fn new(atoms: Vec<Vec<f64>>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::input("distribution needs at least one atom"));
        }
        let dim = atoms[0].len();
        let mut flat = Vec::with_capacity(atoms.len() * dim);
        for (i, atom) in atoms.iter().enumerate() {
            if atom.len() != dim {
                return Err(Error::input(format!(
                    "atom {i} has dimension {}, expected {dim}",
                    atom.len()
                )));
            }
            flat.extend_from_slice(atom);
        }
        Self::from_flat(flat, dim)
    }

    /// Builds a distribution from a flat row-major atom buffer.
    ///
    /// `flat.len()` must be a positive multiple of `dim`.
    pub fn from_flat(flat: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("atom dimension must be positive"));
        }
        if flat.is_empty() || flat.len() % dim != 0 {
            return Err(Error::input(format!(
                "flat atom buffer of length {} is not a positive multiple of dim {dim}",
                flat.len()
            )));
        }
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("atom coordinates must be finite"));
        }
        Ok(EmpiricalDistribution { flat, dim })
    }

    /// Number of atoms.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.flat.len() / self.dim
    }

    /// Atom dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The `i`-th atom as a coordinate slice.
    pub fn atom(&self, i: usize) -> &[f64] {
        &self.flat[i * self.dim..(i + 1) * self.dim]
    }

    /// All atoms as one flat row-major slice.
    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    fn atoms_vec(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.atom(i).to_vec()).collect()
    }
}

impl TryFrom<DistributionDoc> for EmpiricalDistribution {
    type Error = Error;

    fn try_from(doc: DistributionDoc) -> Result<Self> {
        let dist = EmpiricalDistribution::new(doc.atoms)?;
        if dist.dim != doc.dim {
            return Err(Error::input(format!(
                "declared dim {} does not match atom dim {}",
                doc.dim, dist.dim
            )));
        }
        Ok(dist)
    }
}

impl From<EmpiricalDistribution> for DistributionDoc {
    fn from(dist: EmpiricalDistribution) -> Self {
        DistributionDoc {
            dim: dist.dim,
            atoms: dist.atoms_vec(),
        }
    }
}

/// Sorted-atom profile for the one-dimensional Laplacian fast path.
///
/// With atoms sorted and `c = max(atoms)`, the running sums
///
/// ```text
/// prefix_up[k]   = sum_{s < k}  exp((a_s - c) / gamma)
/// suffix_down[k] = sum_{s >= k} exp((c - a_s) / gamma)
/// ```
///
/// let the double sum over `exp(-|a_s - b_t| / gamma)` split at each `b_t`
/// into two factored pieces, giving an exact `O(d log d)` evaluation.
struct LaplacianProfile {
    atoms: Vec<f64>,
    shift: f64,
    prefix_up: Vec<f64>,
    suffix_down: Vec<f64>,
}

/// Exponent span above which the factored fast path risks overflow and the
/// evaluation falls back to the direct double sum.
const LAPLACIAN_SAFE_EXPONENT: f64 = 600.0;

impl LaplacianProfile {
    fn build(dist: &EmpiricalDistribution, gamma: f64) -> Self {
        let mut atoms: Vec<f64> = dist.flat.clone();
        atoms.sort_by(f64::total_cmp);
        let d = atoms.len();
        let shift = atoms[d - 1];
        let mut prefix_up = vec![0.0; d + 1];
        for k in 0..d {
            prefix_up[k + 1] = prefix_up[k] + ((atoms[k] - shift) / gamma).exp();
        }
        let mut suffix_down = vec![0.0; d + 1];
        for k in (0..d).rev() {
            suffix_down[k] = suffix_down[k + 1] + ((shift - atoms[k]) / gamma).exp();
        }
        LaplacianProfile {
            atoms,
            shift,
            prefix_up,
            suffix_down,
        }
    }

    /// Whether the factored form stays within safe exponent range for the
    /// other profile's atoms.
    fn safe_with(&self, other: &LaplacianProfile, gamma: f64) -> bool {
        let span = (self.shift - other.atoms[0]).abs() / gamma;
        span <= LAPLACIAN_SAFE_EXPONENT
    }

    /// Unnormalized double sum `sum_{s,t} exp(-|a_s - b_t| / gamma)`.
    fn double_sum(&self, other: &LaplacianProfile, gamma: f64) -> f64 {
        let d = self.atoms.len();
        let mut total = 0.0;
        // Merge walk: idx counts atoms of self that are <= b_t.
        let mut idx = 0;
        for &b in &other.atoms {
            while idx < d && self.atoms[idx] <= b {
                idx += 1;
            }
            if idx > 0 {
                total += ((self.shift - b) / gamma).exp() * self.prefix_up[idx];
            }
            if idx < d {
                total += ((b - self.shift) / gamma).exp() * self.suffix_down[idx];
            }
        }
        total
    }
}

fn brute_double_sum(kernel: &BaseKernel, a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> f64 {
    let mut total = 0.0;
    for s in 0..a.len() {
        let u = a.atom(s);
        for t in 0..b.len() {
            total += kernel.eval_unchecked(u, b.atom(t));
        }
    }
    total
}

fn check_pair_dims(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::input(format!(
            "distributions have atom dimensions {} and {}",
            a.dim, b.dim
        )));
    }
    Ok(())
}

/// Whether the pair must be swapped into canonical order (shorter bag first,
/// ties broken by lexicographic atom comparison). Evaluating every pair in
/// canonical order makes the inner product exactly symmetric and keeps Gram
/// assembly, cross Grams, and standalone calls bitwise consistent.
fn canonical_swap(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> bool {
    let ord = a.flat.len().cmp(&b.flat.len()).then_with(|| {
        for (x, y) in a.flat.iter().zip(&b.flat) {
            let c = x.total_cmp(y);
            if c != std::cmp::Ordering::Equal {
                return c;
            }
        }
        std::cmp::Ordering::Equal
    });
    ord == std::cmp::Ordering::Greater
}

/// Inner product of a canonically ordered pair, with prebuilt Laplacian
/// profiles when the fast path applies.
fn pair_inner(
    kernel: &BaseKernel,
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
    profiles: Option<(&LaplacianProfile, &LaplacianProfile)>,
) -> f64 {
    let raw = match profiles {
        Some((pa, pb)) => {
            if pa.safe_with(pb, kernel.bandwidth) && pb.safe_with(pa, kernel.bandwidth) {
                pa.double_sum(pb, kernel.bandwidth)
            } else {
                brute_double_sum(kernel, a, b)
            }
        }
        None => brute_double_sum(kernel, a, b),
    };
    raw / (a.len() as f64 * b.len() as f64)
}

fn uses_fast_path(kernel: &BaseKernel, dim: usize) -> bool {
    kernel.family == BaseKernelFamily::Laplacian && dim == 1
}

/// Canonicalizes the pair, builds profiles on demand, and evaluates.
fn inner_from_parts(
    kernel: &BaseKernel,
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
) -> f64 {
    let (first, second) = if canonical_swap(a, b) { (b, a) } else { (a, b) };
    if uses_fast_path(kernel, first.dim) {
        let pa = LaplacianProfile::build(first, kernel.bandwidth);
        let pb = LaplacianProfile::build(second, kernel.bandwidth);
        pair_inner(kernel, first, second, Some((&pa, &pb)))
    } else {
        pair_inner(kernel, first, second, None)
    }
}

/// Inner product of the mean embeddings of two empirical distributions:
///
/// ```text
/// <mu_a, mu_b> = (1/(d_a d_b)) * sum_{s,t} k(a_s, b_t)
/// ```
///
/// The sum is evaluated exactly (one-dimensional Laplacian pairs use an
/// algebraically equivalent sorted-prefix factorization) and the arguments
/// are canonically ordered first, so the result is exactly symmetric.
///
/// # Example
///
/// ```
/// use rdr_core::kernel::{BaseKernel, EmpiricalDistribution, embedding_inner};
///
/// let k = BaseKernel::gaussian(1.0).unwrap();
/// let a = EmpiricalDistribution::new(vec![vec![0.0]]).unwrap();
/// let b = EmpiricalDistribution::new(vec![vec![2.0]]).unwrap();
/// let v = embedding_inner(&k, &a, &b).unwrap();
/// assert!((v - (-2.0f64).exp()).abs() < 1e-15);
/// ```
pub fn embedding_inner(
    kernel: &BaseKernel,
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
) -> Result<f64> {
    check_pair_dims(a, b)?;
    Ok(inner_from_parts(kernel, a, b))
}

/// Squared embedding distance `|mu_a - mu_b|^2` by polarization:
///
/// ```text
/// |mu_a - mu_b|^2 = <mu_a, mu_a> + <mu_b, mu_b> - 2 <mu_a, mu_b>
/// ```
///
/// Round-off can push the result slightly negative; values no lower than
/// `-tol::DISTANCE_NEG_TOL` are clamped to zero and anything lower is a
/// numerical error.
pub fn embedding_distance_sq(
    kernel: &BaseKernel,
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
) -> Result<f64> {
    check_pair_dims(a, b)?;
    let aa = inner_from_parts(kernel, a, a);
    let bb = inner_from_parts(kernel, b, b);
    let ab = embedding_inner(kernel, a, b)?;
    clamp_distance_sq(aa + bb - 2.0 * ab)
}

fn clamp_distance_sq(raw: f64) -> Result<f64> {
    if raw < -tol::DISTANCE_NEG_TOL {
        return Err(Error::numerics(format!(
            "squared embedding distance {raw:e} is negative beyond round-off tolerance"
        )));
    }
    Ok(raw.max(0.0))
}

/// Pairwise embedding inner products for a set of empirical distributions,
/// validated for symmetry, diagonal range, and positive semidefiniteness.
///
/// The matrix entry `(i, j)` is `<mu_i, mu_j>`. Construction rejects inputs
/// whose spectrum dips below `-tol::PSD_REL_TOL` times the top eigenvalue.
pub struct EmbeddingGram {
    inner: DMatrix<f64>,
    distributions: Vec<EmpiricalDistribution>,
    base_kernel: BaseKernel,
}

impl EmbeddingGram {
    /// Computes all pairwise embedding inner products.
    ///
    /// One-dimensional Laplacian inputs reuse per-distribution sorted
    /// profiles, so assembly costs `O(n^2 d log d)` instead of `O(n^2 d^2)`.
    pub fn compute(kernel: &BaseKernel, distributions: Vec<EmpiricalDistribution>) -> Result<Self> {
        let n = distributions.len();
        if n == 0 {
            return Err(Error::input("embedding Gram needs at least one distribution"));
        }
        let dim = distributions[0].dim;
        for (i, d) in distributions.iter().enumerate() {
            if d.dim != dim {
                return Err(Error::input(format!(
                    "distribution {i} has atom dimension {}, expected {dim}",
                    d.dim
                )));
            }
        }

        let fast = uses_fast_path(kernel, dim);
        let profiles: Vec<LaplacianProfile> = if fast {
            distributions
                .iter()
                .map(|d| LaplacianProfile::build(d, kernel.bandwidth))
                .collect()
        } else {
            Vec::new()
        };

        let mut inner = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let (x, y) = if canonical_swap(&distributions[i], &distributions[j]) {
                    (j, i)
                } else {
                    (i, j)
                };
                let pair_profiles = fast.then(|| (&profiles[x], &profiles[y]));
                let value = pair_inner(kernel, &distributions[x], &distributions[y], pair_profiles);
                inner[(i, j)] = value;
                inner[(j, i)] = value;
            }
        }

        for i in 0..n {
            let diag = inner[(i, i)];
            if !(diag > 0.0 && diag <= BaseKernel::BOUND + 1e-12) {
                return Err(Error::numerics(format!(
                    "embedding Gram diagonal entry {i} is {diag}, outside (0, 1]"
                )));
            }
        }
        check_psd(&inner, "embedding Gram")?;

        Ok(EmbeddingGram {
            inner,
            distributions,
            base_kernel: *kernel,
        })
    }

    /// The inner-product matrix.
    pub fn inner(&self) -> &DMatrix<f64> {
        &self.inner
    }

    /// Number of distributions.
    pub fn n(&self) -> usize {
        self.distributions.len()
    }

    /// The distributions the Gram was computed from.
    pub fn distributions(&self) -> &[EmpiricalDistribution] {
        &self.distributions
    }

    /// The base kernel the Gram was computed with.
    pub fn base_kernel(&self) -> &BaseKernel {
        &self.base_kernel
    }

    /// Squared embedding distance between entries `i` and `j`, by
    /// polarization of the stored inner products.
    pub fn distance_sq(&self, i: usize, j: usize) -> Result<f64> {
        let n = self.n();
        if i >= n || j >= n {
            return Err(Error::input(format!(
                "index pair ({i}, {j}) out of range for {n} distributions"
            )));
        }
        clamp_distance_sq(self.inner[(i, i)] + self.inner[(j, j)] - 2.0 * self.inner[(i, j)])
    }
}

fn check_psd(matrix: &DMatrix<f64>, label: &str) -> Result<()> {
    let eigen = matrix.clone().symmetric_eigen();
    let max = eigen.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let min = eigen
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min < -tol::PSD_REL_TOL * max.max(1e-300) {
        return Err(Error::numerics(format!(
            "{label} has eigenvalue {min:e} below the positive semidefinite tolerance"
        )));
    }
    Ok(())
}

/// Families of second-level kernels on embedding space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondLevelFamily {
    /// `K(mu, nu) = exp(-|mu - nu|^2 / (2 gamma^2))` on embedding distance.
    GaussianOnEmbeddings,
    /// `K(mu, nu) = <mu, nu>`, the embedding inner product verbatim.
    LinearOnEmbeddings,
}

/// A second-level kernel acting on mean embeddings through their inner
/// products, with declared boundedness and smoothness certificates.
///
/// `kappa()` bounds `sqrt(K(mu, mu))`; `holder_alpha()` and `holder_l()`
/// certify that the induced feature map is Hoelder:
///
/// ```text
/// |Phi(mu) - Phi(nu)| <= L * |mu - nu|^alpha
/// ```
///
/// # Example
///
/// ```
/// use rdr_core::kernel::SecondLevelKernel;
///
/// let k = SecondLevelKernel::gaussian_on_embeddings(0.5).unwrap();
/// assert_eq!(k.kappa(), 1.0);
/// assert_eq!(k.holder_alpha(), 1.0);
/// assert_eq!(k.holder_l(), 2.0);
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondLevelKernel {
    family: SecondLevelFamily,
    bandwidth: f64,
}

impl SecondLevelKernel {
    /// Gaussian kernel on embedding distance with the given bandwidth.
    pub fn gaussian_on_embeddings(bandwidth: f64) -> Result<Self> {
        if !bandwidth.is_finite() || bandwidth <= 0.0 {
            return Err(Error::input(format!(
                "second-level bandwidth must be finite and positive, got {bandwidth}"
            )));
        }
        Ok(SecondLevelKernel {
            family: SecondLevelFamily::GaussianOnEmbeddings,
            bandwidth,
        })
    }

    /// Linear kernel: the embedding inner product itself.
    ///
    /// Valid because base kernels are bounded by one, so embeddings live in
    /// the unit ball and the inner product is itself a bounded kernel.
    pub fn linear_on_embeddings() -> Self {
        SecondLevelKernel {
            family: SecondLevelFamily::LinearOnEmbeddings,
            bandwidth: 1.0,
        }
    }

    /// The kernel family.
    pub fn family(&self) -> SecondLevelFamily {
        self.family
    }

    /// The bandwidth (1 for the linear family).
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Uniform bound on `sqrt(K(mu, mu))` over the embedding ball.
    pub fn kappa(&self) -> f64 {
        1.0
    }

    /// Hoelder exponent of the induced feature map.
    pub fn holder_alpha(&self) -> f64 {
        1.0
    }

    /// Hoelder constant of the induced feature map.
    ///
    /// For the Gaussian family `1/bandwidth` (from `1 - exp(-t) <= t` applied
    /// to half the squared feature distance); for the linear family `1`
    /// (embeddings sit in the unit ball).
    pub fn holder_l(&self) -> f64 {
        match self.family {
            SecondLevelFamily::GaussianOnEmbeddings => 1.0 / self.bandwidth,
            SecondLevelFamily::LinearOnEmbeddings => 1.0,
        }
    }

    /// Evaluates the kernel from embedding inner products
    /// `<mu_a, mu_b>`, `<mu_a, mu_a>`, `<mu_b, mu_b>`.
    ///
    /// The Gaussian family polarizes the inner products into a squared
    /// distance first and applies the same round-off clamp as
    /// [`embedding_distance_sq`].
    pub fn eval_from_inners(&self, inner_ab: f64, inner_aa: f64, inner_bb: f64) -> Result<f64> {
        match self.family {
            SecondLevelFamily::GaussianOnEmbeddings => {
                let dist_sq = clamp_distance_sq(inner_aa + inner_bb - 2.0 * inner_ab)?;
                Ok((-dist_sq / (2.0 * self.bandwidth * self.bandwidth)).exp())
            }
            SecondLevelFamily::LinearOnEmbeddings => Ok(inner_ab),
        }
    }
}

/// Applies a second-level kernel entrywise to an embedding Gram, producing
/// the regression Gram matrix, and validates its positive semidefiniteness.
///
/// For the Gaussian family the diagonal is exactly one; for the linear
/// family the embedding Gram is returned verbatim.
pub fn second_level_gram(
    kernel: &SecondLevelKernel,
    embedding: &EmbeddingGram,
) -> Result<DMatrix<f64>> {
    let n = embedding.n();
    let inner = embedding.inner();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let value = kernel.eval_from_inners(inner[(i, j)], inner[(i, i)], inner[(j, j)])?;
            gram[(i, j)] = value;
            gram[(j, i)] = value;
        }
    }
    check_psd(&gram, "second-level Gram")?;
    Ok(gram)
}

/// Cross Gram between held-out and training distributions.
///
/// Returns the `n_test x n_train` matrix with entry `(t, i)` equal to
/// `K(mu_test_t, mu_train_i)`; self inner products for the Gaussian family
/// are computed internally.
pub fn cross_gram(
    kernel: &SecondLevelKernel,
    base: &BaseKernel,
    train: &[EmpiricalDistribution],
    test: &[EmpiricalDistribution],
) -> Result<DMatrix<f64>> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::input("cross Gram needs nonempty train and test sets"));
    }
    let dim = train[0].dim;
    for d in train.iter().chain(test) {
        if d.dim != dim {
            return Err(Error::input(format!(
                "distributions have mixed atom dimensions {} and {dim}",
                d.dim
            )));
        }
    }

    let fast = uses_fast_path(base, dim);
    let train_profiles: Vec<LaplacianProfile> = if fast {
        train
            .iter()
            .map(|d| LaplacianProfile::build(d, base.bandwidth))
            .collect()
    } else {
        Vec::new()
    };
    let test_profiles: Vec<LaplacianProfile> = if fast {
        test.iter()
            .map(|d| LaplacianProfile::build(d, base.bandwidth))
            .collect()
    } else {
        Vec::new()
    };
    let self_inner = |d: &EmpiricalDistribution, profile: Option<&LaplacianProfile>| {
        pair_inner(base, d, d, profile.map(|p| (p, p)))
    };

    let needs_self = kernel.family == SecondLevelFamily::GaussianOnEmbeddings;
    let train_self: Vec<f64> = if needs_self {
        train
            .iter()
            .enumerate()
            .map(|(i, d)| self_inner(d, fast.then(|| &train_profiles[i])))
            .collect()
    } else {
        vec![0.0; train.len()]
    };
    let test_self: Vec<f64> = if needs_self {
        test.iter()
            .enumerate()
            .map(|(t, d)| self_inner(d, fast.then(|| &test_profiles[t])))
            .collect()
    } else {
        vec![0.0; test.len()]
    };

    let mut gram = DMatrix::<f64>::zeros(test.len(), train.len());
    for (t, dt) in test.iter().enumerate() {
        for (i, di) in train.iter().enumerate() {
            let swap = canonical_swap(dt, di);
            let (first, second) = if swap { (di, dt) } else { (dt, di) };
            let pair_profiles = fast.then(|| {
                if swap {
                    (&train_profiles[i], &test_profiles[t])
                } else {
                    (&test_profiles[t], &train_profiles[i])
                }
            });
            let inner_ti = pair_inner(base, first, second, pair_profiles);
            gram[(t, i)] = kernel.eval_from_inners(inner_ti, test_self[t], train_self[i])?;
        }
    }
    Ok(gram)
}

/// Serializes a matrix to CSV with 17 significant digits per entry, enough
/// to reproduce each double exactly on parse.
pub fn matrix_to_csv(matrix: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..matrix.nrows() {
        for j in 0..matrix.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{:.16e}", matrix[(i, j)]));
        }
        out.push('\n');
    }
    out
}

/// Parses a matrix from the CSV form produced by [`matrix_to_csv`].
///
/// Errors on empty input, ragged rows, or unparseable entries.
pub fn matrix_from_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let value: f64 = field.trim().parse().map_err(|_| {
                Error::input(format!(
                    "line {}: cannot parse {field:?} as a number",
                    lineno + 1
                ))
            })?;
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::input("matrix CSV has no rows"));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::input("matrix CSV rows have unequal lengths"));
    }
    let nrows = rows.len();
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}
