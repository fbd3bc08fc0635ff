use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub fn rbf_kernel(x: ArrayView1<f64>, y: ArrayView1<f64>, sigma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// `(x·y / d + 1)^3`.
pub fn poly_kernel(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    let d = x.len() as f64;
    (x.dot(&y) / d + 1.0).powi(3)
}

fn check_sets(a: ArrayView2<f64>, b: ArrayView2<f64>, min: usize) -> Result<()> {
    if a.ncols() != b.ncols() {
        return Err(Error::shape(a.ncols(), b.ncols()));
    }
    if a.nrows() < min || b.nrows() < min {
        return Err(Error::config(format!("each set needs at least {min} vectors")));
    }
    Ok(())
}

fn within(a: ArrayView2<f64>, k: &impl Fn(ArrayView1<f64>, ArrayView1<f64>) -> f64, diagonal: bool) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if diagonal || i != j {
                s += k(a.row(i), a.row(j));
            }
        }
    }
    s
}

fn across(a: ArrayView2<f64>, b: ArrayView2<f64>, k: &impl Fn(ArrayView1<f64>, ArrayView1<f64>) -> f64) -> f64 {
    let mut s = 0.0;
    for x in a.rows() {
        for y in b.rows() {
            s += k(x, y);
        }
    }
    s
}

/// Unbiased MMD² with an RBF kernel; rows are embeddings. May be slightly negative.
pub fn mmd_rbf(a: ArrayView2<f64>, b: ArrayView2<f64>, sigma: f64) -> Result<f64> {
    check_sets(a, b, 2)?;
    if !(sigma > 0.0) {
        return Err(Error::config("sigma must be positive"));
    }
    let k = |x: ArrayView1<f64>, y: ArrayView1<f64>| rbf_kernel(x, y, sigma);
    let (m, n) = (a.nrows() as f64, b.nrows() as f64);
    Ok(within(a, &k, false) / (m * (m - 1.0)) + within(b, &k, false) / (n * (n - 1.0))
        - 2.0 * across(a, b, &k) / (m * n))
}

/// Biased (V-statistic) MMD² with an RBF kernel; zero for identical sets.
pub fn mmd_rbf_biased(a: ArrayView2<f64>, b: ArrayView2<f64>, sigma: f64) -> Result<f64> {
    check_sets(a, b, 1)?;
    if !(sigma > 0.0) {
        return Err(Error::config("sigma must be positive"));
    }
    let k = |x: ArrayView1<f64>, y: ArrayView1<f64>| rbf_kernel(x, y, sigma);
    let (m, n) = (a.nrows() as f64, b.nrows() as f64);
    Ok(within(a, &k, true) / (m * m) + within(b, &k, true) / (n * n) - 2.0 * across(a, b, &k) / (m * n))
}

/// Paired U-statistic `1/(m(m-1)) Σ_{i≠j} k(x_i,x_j) + k(y_i,y_j) - k(x_i,y_j) - k(x_j,y_i)`.
fn paired_mmd(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let m = a.nrows();
    let mut s = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                s += poly_kernel(a.row(i), a.row(j)) + poly_kernel(b.row(i), b.row(j))
                    - poly_kernel(a.row(i), b.row(j))
                    - poly_kernel(a.row(j), b.row(i));
            }
        }
    }
    s / (m * (m - 1)) as f64
}

/// Kernel inception distance: mean over seeded subsets of the unbiased MMD²
/// under the cubic polynomial kernel. Subset members keep their original order.
pub fn kid_poly(a: ArrayView2<f64>, b: ArrayView2<f64>, subset_size: usize, n_subsets: usize, seed: u64) -> Result<f64> {
    check_sets(a, b, 2)?;
    if subset_size < 2 || subset_size > a.nrows().min(b.nrows()) {
        return Err(Error::config(format!(
            "subset size {subset_size} must be in 2..={}",
            a.nrows().min(b.nrows())
        )));
    }
    if n_subsets == 0 {
        return Err(Error::config("need at least one subset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n_subsets {
        let mut ia = sample(&mut rng, a.nrows(), subset_size).into_vec();
        let mut ib = sample(&mut rng, b.nrows(), subset_size).into_vec();
        ia.sort_unstable();
        ib.sort_unstable();
        let sa = a.select(ndarray::Axis(0), &ia);
        let sb = b.select(ndarray::Axis(0), &ib);
        total += paired_mmd(sa.view(), sb.view());
    }
    Ok(total / n_subsets as f64)
}
