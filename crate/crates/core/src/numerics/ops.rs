use crate::error::{check_len, LabError, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`], i.e. the logistic function.
pub fn softplus_grad(x: f64) -> f64 {
    sigmoid(x)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Turns logits into probabilities in place and returns the log-normalizer.
pub fn softmax_in_place(xs: &mut [f64]) -> f64 {
    let lse = log_sum_exp(xs);
    for x in xs.iter_mut() {
        *x = (*x - lse).exp();
    }
    lse
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(LabError::Validation("entropy of an empty vector".into()));
    }
    let mut sum = 0.0;
    for &x in p {
        if !(x >= 0.0) {
            return Err(LabError::Validation(format!("probability entry {x} is negative or NaN")));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(LabError::Validation(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(p.iter().filter(|&&x| x > 0.0).fold(0.0, |acc, &x| acc - x * x.ln()))
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    check_len("cosine operands", v.len(), u.len())?;
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(LabError::Validation("cosine similarity of a zero vector".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(LabError::Validation(format!("step h = {h} must be positive")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let orig = probe[j];
        probe[j] = orig + h;
        let fp = f(&probe);
        probe[j] = orig - h;
        let fm = f(&probe);
        probe[j] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(LabError::Numeric(format!(
                "non-finite function value while differencing coordinate {j}"
            )));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn entropy_examples() {
        assert!((entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((entropy(&[0.25; 4]).unwrap() - 1.386294).abs() < 1e-6);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.5, 0.5, 0.0, 0.0]).unwrap() - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn entropy_rejects_bad_input() {
        assert!(entropy(&[-0.1, 1.1]).is_err());
        assert!(entropy(&[0.3, 0.3]).is_err());
        assert!(entropy(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn entropy_uniform_is_ln_n() {
        for n in 1..=64 {
            let p = vec![1.0 / n as f64; n];
            assert!((entropy(&p).unwrap() - (n as f64).ln()).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - 0.707107).abs() < 1e-6);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-4).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);
        let g = finite_diff_grad(|_| 3.0, &[1.0, 2.0, 3.0], 1e-4).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        let g = finite_diff_grad(|x| x[0].sin(), &[0.0], 1e-4).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-7);
        assert!(finite_diff_grad(|_| f64::NAN, &[0.0], 1e-4).is_err());
        assert!(finite_diff_grad(|_| 0.0, &[0.0], 0.0).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((sigmoid(-800.0)).is_finite());
    }

    proptest! {
        #[test]
        fn entropy_is_permutation_invariant(raw in prop::collection::vec(0.0f64..1.0, 2..12), shift in 0usize..12) {
            let total: f64 = raw.iter().sum::<f64>() + 1e-3;
            let p: Vec<f64> = raw.iter().map(|x| (x + 1e-3 / raw.len() as f64) / total).collect();
            let mut q = p.clone();
            q.rotate_left(shift % p.len());
            q.reverse();
            let hp = entropy(&p).unwrap();
            let hq = entropy(&q).unwrap();
            prop_assert!((hp - hq).abs() < 1e-12);
            prop_assert!(hp >= 0.0 && hp <= (p.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn cosine_bounded(u in prop::collection::vec(-5.0f64..5.0, 3), v in prop::collection::vec(-5.0f64..5.0, 3)) {
            prop_assume!(norm(&u) > 1e-6 && norm(&v) > 1e-6);
            let c = cosine_similarity(&u, &v).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c));
        }
    }
}
