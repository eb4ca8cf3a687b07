//! Central-difference verification of analytic gradients.
//!
//! [`finite_diff_check`] takes a graph builder that maps parameter leaves to a
//! scalar node, runs one backward pass for the analytic gradients, and then
//! re-evaluates the forward pass under `+/- eps` perturbations of every
//! parameter coordinate. The builder is re-invoked per evaluation, so the
//! oracle path shares no state with the backward implementation it checks.

use crate::graph::{Graph, NodeId};
use crate::tensor::{Tensor, TensorError};

/// Max over parameter coordinates of
/// `|analytic - central_difference| / max(1, |analytic|)`.
///
/// `eps` must lie in `[1e-7, 1e-3]`.
pub fn finite_diff_check<F>(build: F, params: &[Tensor], eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, TensorError>,
{
    assert!((1e-7..=1e-3).contains(&eps), "eps {eps} outside [1e-7, 1e-3]");

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params
        .iter()
        .map(|p| g.leaf(p.clone(), true))
        .collect::<Result<_, _>>()?;
    let out = build(&mut g, &ids)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(params)
        .map(|(&id, p)| grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
        .collect();

    let eval = |ps: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ps
            .iter()
            .map(|p| g.leaf(p.clone(), false))
            .collect::<Result<_, _>>()?;
        let out = build(&mut g, &ids)?;
        Ok(g.value(out).item())
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel = 0.0_f64;
    for pi in 0..params.len() {
        for j in 0..params[pi].numel() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + eps;
            let fp = eval(&work)?;
            work[pi].data_mut()[j] = orig - eps;
            let fm = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let fd = (fp - fm) / (2.0 * eps);
            let an = analytic[pi].data()[j];
            let rel = (an - fd).abs() / an.abs().max(1.0);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SoftmaxAxis;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn quadratic_is_nearly_exact() {
        // f(x) = x0^2 + 2 x1^2 + 3 x2^2; central differences are exact for
        // quadratics up to rounding.
        let params = [Tensor::vector(vec![1.5, -0.7, 2.2])];
        let err = finite_diff_check(
            |g, ids| {
                let sq = g.mul(ids[0], ids[0])?;
                let w = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]), false)?;
                let weighted = g.mul(sq, w)?;
                g.sum(weighted)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "err {err}");
    }

    #[test]
    fn dense_relu_dense_network() {
        let mut rng = StdRng::seed_from_u64(42);
        let w1 = Tensor::fan_in_init(vec![4, 6], 4, &mut rng);
        let b1 = Tensor::fan_in_init(vec![6], 4, &mut rng);
        let w2 = Tensor::fan_in_init(vec![6, 2], 6, &mut rng);
        let x = Tensor::uniform(vec![3, 4], -1.0, 1.0, &mut rng);
        let err = finite_diff_check(
            |g, ids| {
                let xb = g.leaf(x.clone(), false)?;
                let h = g.matmul(xb, ids[0])?;
                let h = g.add_row_vec(h, ids[1])?;
                let h = g.relu(h)?;
                let y = g.matmul(h, ids[2])?;
                g.sum(y)
            },
            &[w1, b1, w2],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "err {err}");
    }

    #[test]
    fn softmax_and_logsumexp_gradients() {
        let mut rng = StdRng::seed_from_u64(9);
        let w = Tensor::uniform(vec![3, 4], -1.0, 1.0, &mut rng);
        let probe = Tensor::uniform(vec![3, 4], -1.0, 1.0, &mut rng);
        let err = finite_diff_check(
            |g, ids| {
                let s = g.softmax(ids[0], SoftmaxAxis::Columns)?;
                let p = g.leaf(probe.clone(), false)?;
                let weighted = g.mul(s, p)?;
                let l = g.logsumexp_rows(weighted)?;
                let lm = g.reshape(l, vec![3, 1])?;
                g.sum(lm)
            },
            &[w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn conv_gradients() {
        let mut rng = StdRng::seed_from_u64(21);
        let input = Tensor::uniform(vec![5, 5, 2], -1.0, 1.0, &mut rng);
        let kernels = Tensor::fan_in_init(vec![3, 3, 2, 3], 18, &mut rng);
        let bias = Tensor::zeros(vec![3]);
        let probe = Tensor::uniform(vec![3, 3, 3], -1.0, 1.0, &mut rng);
        let err = finite_diff_check(
            |g, ids| {
                let x = g.leaf(input.clone(), false)?;
                let y = g.conv2d(x, ids[0], 1, crate::graph::Padding::Valid)?;
                let y = g.add_channel_bias(y, ids[1])?;
                let p = g.leaf(probe.clone(), false)?;
                let weighted = g.mul(y, p)?;
                g.sum(weighted)
            },
            &[kernels, bias],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn cv_squared_gradient() {
        let v = Tensor::vector(vec![1.0, 2.0, 4.0, 3.0]);
        let err = finite_diff_check(|g, ids| g.cv_squared(ids[0]), &[v], 1e-5).unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn l2_normalize_gradients() {
        let mut rng = StdRng::seed_from_u64(33);
        let x = Tensor::uniform(vec![3, 4], 0.2, 1.5, &mut rng);
        let probe = Tensor::uniform(vec![3, 4], -1.0, 1.0, &mut rng);
        let err = finite_diff_check(
            |g, ids| {
                let rn = g.l2_normalize_rows(ids[0])?;
                let cn = g.l2_normalize_cols(rn)?;
                let p = g.leaf(probe.clone(), false)?;
                let weighted = g.mul(cn, p)?;
                g.sum(weighted)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err {err}");
    }
}
