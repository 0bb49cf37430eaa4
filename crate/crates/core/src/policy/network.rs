//! Forward and reverse passes.
//!
//! Local node ids are in breadth-first order from the agent (local 0), so the
//! nodes within `h` hops form a prefix. Layer `l` only needs outputs for nodes
//! within `K - 1 - l` hops of the agent, which keeps the work per step small.

use rand::seq::index::sample;
use rand::RngCore;

use super::{ParamLayout, PolicyParameters};
use crate::graph::{NodeId, WeightedGraph};
use crate::{Error, Result};

/// The agent's view: neighbourhood structure plus one attribute row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphObservation {
    /// Aggregation neighbours of each local node.
    pub neighbors: Vec<Vec<usize>>,
    /// Hop distance from the agent, non-decreasing.
    pub hops: Vec<usize>,
    /// Row-major `node_count x input_dim`.
    pub features: Vec<f64>,
    pub input_dim: usize,
    /// Local ids of the agent's neighbours, ordered by global id.
    pub actions: Vec<usize>,
    /// Global ids matching `actions`.
    pub action_nodes: Vec<NodeId>,
    /// Feature column holding the distance to the true goal.
    pub true_goal_feature: usize,
    /// Global id of the agent's node.
    pub agent: NodeId,
}

impl GraphObservation {
    /// Collects the `radius`-hop neighbourhood of `agent` and asks `attributes`
    /// to append the feature row of each global node.
    #[allow(clippy::too_many_arguments)]
    pub fn build<F>(
        graph: &WeightedGraph,
        agent: NodeId,
        radius: usize,
        neighbor_cap: Option<usize>,
        rng: &mut dyn RngCore,
        input_dim: usize,
        true_goal_feature: usize,
        mut attributes: F,
    ) -> Result<Self>
    where
        F: FnMut(NodeId, &mut Vec<f64>) -> Result<()>,
    {
        if !graph.contains(agent) {
            return Err(Error::InvalidArgument(format!("agent node {agent} not in graph")));
        }
        if radius == 0 {
            return Err(Error::InvalidConfiguration("perception radius must be at least 1".into()));
        }
        let mut local_of = vec![usize::MAX; graph.node_count()];
        let mut order = vec![agent];
        let mut hops = vec![0];
        local_of[agent] = 0;
        let mut head = 0;
        while head < order.len() {
            let (u, h) = (order[head], hops[head]);
            head += 1;
            if h == radius {
                continue;
            }
            for &(v, _) in graph.neighbors(u) {
                if local_of[v] == usize::MAX {
                    local_of[v] = order.len();
                    order.push(v);
                    hops.push(h + 1);
                }
            }
        }
        let mut neighbors = Vec::with_capacity(order.len());
        for &u in &order {
            let mut list: Vec<usize> = graph
                .neighbors(u)
                .iter()
                .map(|&(v, _)| local_of[v])
                .filter(|&l| l != usize::MAX)
                .collect();
            if let Some(cap) = neighbor_cap {
                if list.len() > cap {
                    let mut kept: Vec<usize> =
                        sample(rng, list.len(), cap).into_iter().map(|i| list[i]).collect();
                    kept.sort_unstable();
                    list = kept;
                }
            }
            neighbors.push(list);
        }
        let mut features = Vec::with_capacity(order.len() * input_dim);
        for &u in &order {
            let before = features.len();
            attributes(u, &mut features)?;
            if features.len() - before != input_dim {
                return Err(Error::InvalidConfiguration(format!(
                    "attribute row of length {} but input_dim is {input_dim}",
                    features.len() - before
                )));
            }
        }
        let action_nodes: Vec<NodeId> = graph.neighbors(agent).iter().map(|&(v, _)| v).collect();
        let actions = action_nodes.iter().map(|&v| local_of[v]).collect();
        Ok(Self {
            neighbors,
            hops,
            features,
            input_dim,
            actions,
            action_nodes,
            true_goal_feature,
            agent,
        })
    }

    pub fn node_count(&self) -> usize {
        self.hops.len()
    }

    pub fn feature(&self, node: usize, column: usize) -> f64 {
        self.features[node * self.input_dim + column]
    }

    fn row(&self, node: usize) -> &[f64] {
        &self.features[node * self.input_dim..(node + 1) * self.input_dim]
    }

    /// Number of nodes within `h` hops.
    fn within(&self, h: usize) -> usize {
        self.hops.partition_point(|&x| x <= h)
    }

    fn validate(&self, input_dim: usize) -> Result<()> {
        let n = self.node_count();
        if self.input_dim != input_dim || self.features.len() != n * input_dim {
            return Err(Error::InvalidConfiguration(format!(
                "observation has {} features of width {}, network expects width {input_dim}",
                self.features.len(),
                self.input_dim
            )));
        }
        if n == 0 || self.hops[0] != 0 || self.neighbors.len() != n {
            return Err(Error::InvalidConfiguration("malformed observation".into()));
        }
        if self.hops.windows(2).any(|w| w[1] < w[0] || w[1] > w[0] + 1) {
            return Err(Error::InvalidConfiguration(
                "observation nodes are not in breadth-first order".into(),
            ));
        }
        for (v, list) in self.neighbors.iter().enumerate() {
            if list.iter().any(|&u| u >= n || self.hops[u].abs_diff(self.hops[v]) > 1) {
                return Err(Error::InvalidConfiguration(format!(
                    "neighbour list of local node {v} is inconsistent with hop order"
                )));
            }
        }
        if self.actions.is_empty() {
            return Err(Error::NoAction);
        }
        if self.actions.iter().any(|&a| a >= n || self.hops[a] != 1) {
            return Err(Error::InvalidConfiguration("action targets must be one hop away".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    /// One logit per incident edge, in `GraphObservation::actions` order.
    pub logits: Vec<f64>,
    pub value: f64,
}

/// Intermediate values kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `h[l]` has `rows[l]` rows.
    h: Vec<Vec<f64>>,
    rows: Vec<usize>,
    /// Rectified pooling transform of `h[l]`, same rows as `h[l]`.
    pool: Vec<Vec<f64>>,
    /// Max-pooled neighbour message, `rows[l + 1]` rows.
    agg: Vec<Vec<f64>>,
    /// Winning neighbour per output entry, `usize::MAX` if none.
    arg: Vec<Vec<usize>>,
    pub output: PolicyOutput,
}

pub fn forward(params: &PolicyParameters, obs: &GraphObservation) -> Result<PolicyOutput> {
    Ok(forward_traced(params, obs)?.output)
}

pub fn forward_traced(params: &PolicyParameters, obs: &GraphObservation) -> Result<ForwardTrace> {
    let cfg = params.config();
    obs.validate(cfg.input_dim)?;
    let lay = params.layout();
    let p = &params.values;
    let hd = cfg.hidden_dim;
    let k = cfg.num_layers;
    let n = obs.node_count();
    let rows: Vec<usize> = (0..=k).map(|l| if l == 0 { n } else { obs.within(k + 1 - l) }).collect();

    let mut h0 = vec![0.0; n * hd];
    let in_w = &p[lay.in_w..lay.in_w + cfg.input_dim * hd];
    let in_b = &p[lay.in_b..lay.in_b + hd];
    for v in 0..n {
        let out = &mut h0[v * hd..(v + 1) * hd];
        out.copy_from_slice(in_b);
        vec_mat_acc(obs.row(v), in_w, hd, out);
    }

    let mut h = vec![h0];
    let mut pool = Vec::with_capacity(k);
    let mut agg = Vec::with_capacity(k);
    let mut arg = Vec::with_capacity(k);
    for (l, off) in lay.layers.iter().enumerate() {
        let (n_in, n_out) = (rows[l], rows[l + 1]);
        let hl = &h[l];
        let pool_w = &p[off.pool_w..off.pool_w + hd * hd];
        let pool_b = &p[off.pool_b..off.pool_b + hd];
        let mut pl = vec![0.0; n_in * hd];
        for u in 0..n_in {
            let out = &mut pl[u * hd..(u + 1) * hd];
            out.copy_from_slice(pool_b);
            vec_mat_acc(&hl[u * hd..(u + 1) * hd], pool_w, hd, out);
            relu_in_place(out);
        }
        let mut al = vec![0.0; n_out * hd];
        let mut gl = vec![usize::MAX; n_out * hd];
        for v in 0..n_out {
            let a = &mut al[v * hd..(v + 1) * hd];
            let g = &mut gl[v * hd..(v + 1) * hd];
            for &u in &obs.neighbors[v] {
                let pu = &pl[u * hd..(u + 1) * hd];
                for j in 0..hd {
                    if g[j] == usize::MAX || pu[j] > a[j] || (pu[j] == a[j] && u < g[j]) {
                        a[j] = pu[j];
                        g[j] = u;
                    }
                }
            }
        }
        let self_w = &p[off.self_w..off.self_w + hd * hd];
        let neigh_w = &p[off.neigh_w..off.neigh_w + hd * hd];
        let bias = &p[off.bias..off.bias + hd];
        let mut next = vec![0.0; n_out * hd];
        for v in 0..n_out {
            let out = &mut next[v * hd..(v + 1) * hd];
            out.copy_from_slice(bias);
            vec_mat_acc(&hl[v * hd..(v + 1) * hd], self_w, hd, out);
            vec_mat_acc(&al[v * hd..(v + 1) * hd], neigh_w, hd, out);
            relu_in_place(out);
        }
        pool.push(pl);
        agg.push(al);
        arg.push(gl);
        h.push(next);
    }

    let hk = &h[k];
    let act_w = &p[lay.act_w..lay.act_w + hd];
    let val_w = &p[lay.val_w..lay.val_w + hd];
    let logits = obs
        .actions
        .iter()
        .map(|&u| dot(&hk[u * hd..(u + 1) * hd], act_w) + p[lay.act_b])
        .collect::<Vec<_>>();
    let value = dot(&hk[..hd], val_w) + p[lay.val_b];
    if logits.iter().any(|l| !l.is_finite()) || !value.is_finite() {
        return Err(Error::Numeric("network produced a non-finite output".into()));
    }
    Ok(ForwardTrace {
        h,
        rows,
        pool,
        agg,
        arg,
        output: PolicyOutput { logits, value },
    })
}

/// Gradient of `sum_a dlogits[a] * logit_a + dvalue * value`.
pub fn backward(
    params: &PolicyParameters,
    obs: &GraphObservation,
    dlogits: &[f64],
    dvalue: f64,
) -> Result<Vec<f64>> {
    let trace = forward_traced(params, obs)?;
    let mut grad = vec![0.0; params.layout().total()];
    accumulate_gradient(params, obs, &trace, dlogits, dvalue, &mut grad)?;
    params.layout().check_finite(&grad, "gradient")?;
    Ok(grad)
}

/// Adds the gradient for one observation into `grad` using a recorded trace.
pub fn accumulate_gradient(
    params: &PolicyParameters,
    obs: &GraphObservation,
    trace: &ForwardTrace,
    dlogits: &[f64],
    dvalue: f64,
    grad: &mut [f64],
) -> Result<()> {
    let cfg = params.config();
    let lay: &ParamLayout = params.layout();
    let p = &params.values;
    let hd = cfg.hidden_dim;
    let k = cfg.num_layers;
    if dlogits.len() != obs.actions.len() || grad.len() != lay.total() {
        return Err(Error::InvalidConfiguration(
            "gradient seed or buffer has the wrong length".into(),
        ));
    }

    let hk = &trace.h[k];
    let mut dh = vec![0.0; trace.rows[k] * hd];
    let act_w = &p[lay.act_w..lay.act_w + hd];
    for (&u, &d) in obs.actions.iter().zip(dlogits) {
        if d == 0.0 {
            continue;
        }
        axpy(d, act_w, &mut dh[u * hd..(u + 1) * hd]);
        axpy(d, &hk[u * hd..(u + 1) * hd], &mut grad[lay.act_w..lay.act_w + hd]);
        grad[lay.act_b] += d;
    }
    if dvalue != 0.0 {
        let val_w = &p[lay.val_w..lay.val_w + hd];
        axpy(dvalue, val_w, &mut dh[..hd]);
        axpy(dvalue, &hk[..hd], &mut grad[lay.val_w..lay.val_w + hd]);
        grad[lay.val_b] += dvalue;
    }

    for l in (0..k).rev() {
        let off = lay.layers[l];
        let (n_in, n_out) = (trace.rows[l], trace.rows[l + 1]);
        let hl = &trace.h[l];
        let out = &trace.h[l + 1];
        let mut dz = dh;
        for (d, &o) in dz.iter_mut().zip(out) {
            if o <= 0.0 {
                *d = 0.0;
            }
        }
        let mut dh_in = vec![0.0; n_in * hd];
        let mut dpool = vec![0.0; n_in * hd];
        let self_w = &p[off.self_w..off.self_w + hd * hd];
        let neigh_w = &p[off.neigh_w..off.neigh_w + hd * hd];
        let agg = &trace.agg[l];
        let arg = &trace.arg[l];
        let mut dagg = vec![0.0; hd];
        for v in 0..n_out {
            let dzv = &dz[v * hd..(v + 1) * hd];
            if dzv.iter().all(|&x| x == 0.0) {
                continue;
            }
            add_assign(&mut grad[off.bias..off.bias + hd], dzv);
            outer_acc(&hl[v * hd..(v + 1) * hd], dzv, &mut grad[off.self_w..off.self_w + hd * hd]);
            mat_vec_acc(self_w, hd, dzv, &mut dh_in[v * hd..(v + 1) * hd]);
            outer_acc(&agg[v * hd..(v + 1) * hd], dzv, &mut grad[off.neigh_w..off.neigh_w + hd * hd]);
            dagg.iter_mut().for_each(|x| *x = 0.0);
            mat_vec_acc(neigh_w, hd, dzv, &mut dagg);
            for j in 0..hd {
                let u = arg[v * hd + j];
                if u != usize::MAX {
                    dpool[u * hd + j] += dagg[j];
                }
            }
        }
        let pool = &trace.pool[l];
        let pool_w = &p[off.pool_w..off.pool_w + hd * hd];
        for u in 0..n_in {
            let dq = &mut dpool[u * hd..(u + 1) * hd];
            for (d, &q) in dq.iter_mut().zip(&pool[u * hd..(u + 1) * hd]) {
                if q <= 0.0 {
                    *d = 0.0;
                }
            }
            if dq.iter().all(|&x| x == 0.0) {
                continue;
            }
            add_assign(&mut grad[off.pool_b..off.pool_b + hd], dq);
            outer_acc(&hl[u * hd..(u + 1) * hd], dq, &mut grad[off.pool_w..off.pool_w + hd * hd]);
            mat_vec_acc(pool_w, hd, dq, &mut dh_in[u * hd..(u + 1) * hd]);
        }
        dh = dh_in;
    }

    let d_in = cfg.input_dim;
    for v in 0..trace.rows[0] {
        let dv = &dh[v * hd..(v + 1) * hd];
        add_assign(&mut grad[lay.in_b..lay.in_b + hd], dv);
        outer_acc(obs.row(v), dv, &mut grad[lay.in_w..lay.in_w + d_in * hd]);
    }
    Ok(())
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn add_assign(y: &mut [f64], x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4 * 4;
    for i in (0..chunks).step_by(4) {
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `out += x W` for row-major `W` with `cols` columns.
#[inline]
fn vec_mat_acc(x: &[f64], w: &[f64], cols: usize, out: &mut [f64]) {
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            axpy(xi, &w[i * cols..(i + 1) * cols], out);
        }
    }
}

/// `out += W y`, i.e. `y W^T`.
#[inline]
fn mat_vec_acc(w: &[f64], cols: usize, y: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o += dot(&w[i * cols..(i + 1) * cols], y);
    }
}

/// `G += x^T y`.
#[inline]
fn outer_acc(x: &[f64], y: &[f64], g: &mut [f64]) {
    let cols = y.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            axpy(xi, y, &mut g[i * cols..(i + 1) * cols]);
        }
    }
}

#[inline]
fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}
