use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{lit, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub temperature: f64,
    /// Weight of the salient term in the local loss; the non-salient term
    /// gets `1 - mu`.
    pub mu: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { temperature: 0.2, mu: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!("temperature {} must be > 0", self.temperature)));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::InvalidConfig(format!("mu {} must lie in (0, 1)", self.mu)));
        }
        Ok(())
    }
}

/// Which parts of the local objective are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocalSwitches {
    /// Use the other local query as an extra negative.
    pub negative_pair: bool,
    /// Include the non-salient loss; without it the local loss is the
    /// salient loss alone.
    pub non_salient: bool,
}

impl Default for LocalSwitches {
    fn default() -> Self {
        Self { negative_pair: true, non_salient: true }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LocalLosses {
    pub salient: Var,
    pub non_salient: Var,
    pub local: Var,
}

fn check_pair<T: Scalar>(g: &Graph<T>, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    match (sa.as_slice(), sb.as_slice()) {
        (&[n, d], &[m, e]) if n == m && d == e && n > 0 => Ok((n, d)),
        _ => Err(Error::ShapeMismatch(format!("{what}: {sa:?} vs {sb:?}"))),
    }
}

fn check_bank<T: Scalar>(g: &Graph<T>, bank: Var, dim: usize) -> Result<()> {
    match g.shape(bank).as_slice() {
        &[0, _] => Err(Error::EmptyBank),
        &[_, d] if d == dim => Ok(()),
        s => Err(Error::ShapeMismatch(format!("bank {s:?} vs embedding width {dim}"))),
    }
}

fn row_dot<T: Scalar>(g: &Graph<T>, a: Var, b: Var) -> Var {
    let n = g.shape(a)[0];
    g.reshape(g.sum_axis(g.mul(a, b), 1), &[n, 1])
}

/// Batch mean of `-log softmax` of the positive logit against the given
/// negatives, all divided by the temperature.
fn contrast<T: Scalar>(g: &Graph<T>, anchor: Var, positive: Var, extra: Option<Var>, bank: Var, tau: f64) -> Var {
    let n = g.shape(anchor)[0];
    let pos = row_dot(g, anchor, positive);
    let mut columns = vec![pos];
    if let Some(e) = extra {
        columns.push(row_dot(g, anchor, e));
    }
    columns.push(g.matmul(anchor, g.transpose(bank)));
    let logits = g.scale(g.concat(&columns, 1), lit(1.0 / tau));
    let per_sample = g.sub(g.logsumexp(logits), g.reshape(g.scale(pos, lit(1.0 / tau)), &[n]));
    g.mean(per_sample)
}

/// Global InfoNCE of queries against their keys and the bank. Keys and
/// bank are detached.
pub fn info_nce<T: Scalar>(g: &Graph<T>, z_q: Var, z_k: Var, bank: Var, temperature: f64) -> Result<Var> {
    let (_, d) = check_pair(g, z_q, z_k, "query vs key embeddings")?;
    check_bank(g, bank, d)?;
    let (z_k, bank) = (g.detach(z_k), g.detach(bank));
    Ok(contrast(g, z_q, z_k, None, bank, temperature))
}

/// Salient and non-salient losses and their weighted sum. Each local query
/// is contrasted against its key, optionally the other local query, and
/// the bank.
#[allow(clippy::too_many_arguments)]
pub fn local_losses<T: Scalar>(
    g: &Graph<T>,
    q_s: Var,
    k_s: Var,
    q_ns: Var,
    k_ns: Var,
    bank: Var,
    weights: &LossWeights,
    switches: LocalSwitches,
) -> Result<LocalLosses> {
    let (_, d) = check_pair(g, q_s, k_s, "salient pair")?;
    check_pair(g, q_ns, k_ns, "non-salient pair")?;
    check_pair(g, q_s, q_ns, "salient vs non-salient")?;
    check_bank(g, bank, d)?;
    let (k_s, k_ns, bank) = (g.detach(k_s), g.detach(k_ns), g.detach(bank));
    let tau = weights.temperature;
    let salient = contrast(g, q_s, k_s, switches.negative_pair.then_some(q_ns), bank, tau);
    let non_salient = contrast(g, q_ns, k_ns, switches.negative_pair.then_some(q_s), bank, tau);
    let local = if switches.non_salient {
        g.add(g.scale(salient, lit(weights.mu)), g.scale(non_salient, lit(1.0 - weights.mu)))
    } else {
        salient
    };
    Ok(LocalLosses { salient, non_salient, local })
}

/// Unweighted sum of the global and (optional) local losses.
pub fn total_loss<T: Scalar>(g: &Graph<T>, info: Var, local: Option<Var>) -> Result<Var> {
    let total = match local {
        Some(l) => g.add(info, l),
        None => info,
    };
    if !g.scalar(total).is_finite() {
        return Err(Error::NonFinite { op: "total_loss", node: total.id() });
    }
    Ok(total)
}
